use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::loss::{bce_loss, LossNormalization};
use super::sgd::sgd_step;
use crate::autograd::Tape;
use crate::error::{Error, Result};
use crate::io::image::{load_mask, load_rgb, rgb_to_tensor};
use crate::io::Manifest;
use crate::metrics::{miou, BinaryMask};
use crate::net::Network;
use crate::tensor::{Scalar, Tensor};

/// Stop as soon as a train-set evaluation reaches both targets.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StopTarget {
    pub miou: f64,
    pub data_loss: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: Option<usize>,
    pub max_steps: Option<usize>,
    pub loss_normalization: LossNormalization,
    /// Weights of auxiliary losses on the coarse and fine maps.
    pub aux_loss_weights: [f64; 2],
    pub seed: u64,
    /// Checkpoint interval in steps; 0 writes only the initial and final ones.
    pub checkpoint_every: usize,
    /// Evaluate train mIoU at the end of every epoch.
    pub eval_train: bool,
    /// Also evaluate every this many steps; 0 disables.
    pub eval_every: usize,
    pub stop_at: Option<StopTarget>,
    /// Record elapsed seconds in the history; when false the column is 0 so
    /// same-seed histories compare equal byte for byte.
    pub wall_clock: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.001,
            momentum: 0.9,
            weight_decay: 1e-5,
            batch_size: 8,
            epochs: None,
            max_steps: Some(1000),
            loss_normalization: LossNormalization::MeanPerPixel,
            aux_loss_weights: [0.0, 0.0],
            seed: 0,
            checkpoint_every: 0,
            eval_train: false,
            eval_every: 0,
            stop_at: None,
            wall_clock: true,
        }
    }
}

impl TrainConfig {
    /// Every violated constraint, not just the first.
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            out.push(format!(
                "learning_rate must be > 0, got {}",
                self.learning_rate
            ));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            out.push(format!(
                "momentum must lie in [0, 1), got {}",
                self.momentum
            ));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            out.push(format!(
                "weight_decay must be >= 0, got {}",
                self.weight_decay
            ));
        }
        if self.batch_size == 0 {
            out.push("batch_size must be >= 1".into());
        }
        if self.epochs.is_none() && self.max_steps.is_none() {
            out.push("one of epochs or max_steps must be set".into());
        }
        if self
            .aux_loss_weights
            .iter()
            .any(|w| !(*w >= 0.0 && w.is_finite()))
        {
            out.push(format!(
                "aux_loss_weights must be >= 0, got {:?}",
                self.aux_loss_weights
            ));
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.problems();
        if p.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(p.join("; ")))
        }
    }

    fn total_steps(&self, n_samples: usize) -> usize {
        let per_epoch = n_samples.div_ceil(self.batch_size);
        let by_epochs = self.epochs.map(|e| e * per_epoch);
        match (by_epochs, self.max_steps) {
            (Some(a), Some(b)) => a.min(b),
            (Some(a), None) => a,
            (None, Some(b)) => b,
            (None, None) => 0,
        }
    }
}

/// One training image and its ground truth.
#[derive(Clone, Debug)]
pub struct Sample {
    pub name: String,
    /// `(1, 3, h, w)` with values in `[0, 1]`.
    pub image: Tensor<f32>,
    pub mask: BinaryMask,
}

impl Sample {
    pub fn new(name: impl Into<String>, image: Tensor<f32>, mask: BinaryMask) -> Result<Self> {
        let name = name.into();
        let s = image.shape();
        if s.n != 1 || s.c != 3 || (s.w, s.h) != (mask.width(), mask.height()) {
            return Err(Error::Dimension(format!(
                "{name}: image {s} does not match mask {}x{}",
                mask.width(),
                mask.height()
            )));
        }
        Ok(Sample { name, image, mask })
    }
}

pub fn load_samples(manifest: &Manifest) -> Result<Vec<Sample>> {
    manifest
        .records()
        .map(|r| {
            let image = rgb_to_tensor(&load_rgb(manifest.resolve(&r.composite))?);
            let mask = load_mask(manifest.resolve(&r.mask))?;
            Sample::new(&r.composite, image, mask)
        })
        .collect()
}

/// Strictly greater than 0.5 is smoke.
pub fn binarize<T: Scalar>(pred: &Tensor<T>, n: usize) -> BinaryMask {
    let s = pred.shape();
    let plane = pred.plane(n, 0);
    let half = T::of(0.5);
    BinaryMask::from_fn(s.w, s.h, |x, y| plane[y * s.w + x] > half)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct StepRecord {
    pub step: usize,
    pub data_loss: f64,
    pub full_loss: f64,
    pub seconds: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct EvalRecord {
    /// Number of completed steps when the evaluation ran.
    pub step: usize,
    pub epoch: usize,
    pub train_miou: f64,
    pub data_loss: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct TrainHistory {
    pub steps: Vec<StepRecord>,
    pub evals: Vec<EvalRecord>,
}

impl TrainHistory {
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["step", "data_loss", "full_loss", "seconds"])?;
        for r in &self.steps {
            w.write_record([
                r.step.to_string(),
                r.data_loss.to_string(),
                r.full_loss.to_string(),
                r.seconds.to_string(),
            ])?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(self.to_csv()?.as_bytes())?;
        Ok(())
    }

    pub fn final_eval(&self) -> Option<&EvalRecord> {
        self.evals.last()
    }
}

fn batch<T: Scalar>(samples: &[Sample], idx: &[usize]) -> Result<(Tensor<T>, Tensor<T>)> {
    let images: Vec<Tensor<T>> = idx.iter().map(|&i| samples[i].image.cast()).collect();
    let masks: Vec<Tensor<T>> = idx.iter().map(|&i| samples[i].mask.to_tensor()).collect();
    Ok((
        Tensor::stack(&images.iter().collect::<Vec<_>>())?,
        Tensor::stack(&masks.iter().collect::<Vec<_>>())?,
    ))
}

/// Train-set mIoU of the binarized fused map and its mean per-pixel loss.
pub fn evaluate<T: Scalar>(
    net: &Network<T>,
    samples: &[Sample],
    batch_size: usize,
) -> Result<(f64, f64)> {
    if samples.is_empty() {
        return Err(Error::Invalid(
            "cannot evaluate on an empty sample set".into(),
        ));
    }
    let idx: Vec<usize> = (0..samples.len()).collect();
    let mut preds = Vec::with_capacity(samples.len());
    let mut loss_sum = 0.0;
    for chunk in idx.chunks(batch_size.max(1)) {
        let (x, gt) = batch::<T>(samples, chunk)?;
        let out = net.forward(&x)?;
        let (l, _) = bce_loss(
            &out.fused,
            &gt,
            net.params(),
            0.0,
            LossNormalization::MeanPerPixel,
        )?;
        loss_sum += l.data * chunk.len() as f64;
        preds.extend((0..chunk.len()).map(|n| binarize(&out.fused, n)));
    }
    let m = miou(preds.iter().zip(samples).map(|(p, s)| (p, &s.mask)))?;
    Ok((m, loss_sum / samples.len() as f64))
}

/// Trains `net` on `samples`. `checkpoint` is called with the number of
/// completed steps before the first step, every `checkpoint_every` steps and
/// after the last one.
pub fn train<T: Scalar>(
    net: &mut Network<T>,
    samples: &[Sample],
    cfg: &TrainConfig,
    mut checkpoint: impl FnMut(usize, &Network<T>) -> Result<()>,
) -> Result<TrainHistory> {
    cfg.validate()?;
    if let Some(first) = samples.first() {
        let shape = first.image.shape();
        for s in samples {
            Network::<T>::check_input(s.image.shape())
                .map_err(|e| Error::Invalid(format!("{}: {e}", s.name)))?;
            if s.image.shape() != shape {
                return Err(Error::Dimension(format!(
                    "{}: image {} differs from {} of {}",
                    s.name,
                    s.image.shape(),
                    shape,
                    first.name
                )));
            }
        }
    }
    let total = if samples.is_empty() {
        0
    } else {
        cfg.total_steps(samples.len())
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let per_epoch = samples.len().div_ceil(cfg.batch_size).max(1);
    let start = Instant::now();
    let mut history = TrainHistory::default();
    let [aux_coarse, aux_fine] = cfg.aux_loss_weights;
    checkpoint(0, net)?;
    let mut step = 0;
    while step < total {
        let in_epoch = step % per_epoch;
        if in_epoch == 0 {
            order.shuffle(&mut rng);
        }
        let lo = in_epoch * cfg.batch_size;
        let idx = &order[lo..(lo + cfg.batch_size).min(samples.len())];
        let (x, gt) = batch::<T>(samples, idx)?;
        let penalty = cfg.weight_decay * net.params().weight_norm_sq();

        let mut tape = Tape::new();
        let xv = tape.leaf(x);
        let vars = net.forward_tape(&mut tape, xv)?;
        let (l, g) = bce_loss(
            tape.value(vars.fused),
            &gt,
            net.params(),
            0.0,
            cfg.loss_normalization,
        )?;
        let mut data_loss = l.data;
        let mut seeds = vec![(vars.fused, g)];
        let aux = [(Some(vars.coarse), aux_coarse), (vars.fine, aux_fine)];
        for (var, weight) in aux {
            if let (Some(v), true) = (var, weight > 0.0) {
                let (l, mut g) = bce_loss(
                    tape.value(v),
                    &gt,
                    net.params(),
                    0.0,
                    cfg.loss_normalization,
                )?;
                data_loss += weight * l.data;
                g.scale(T::of(weight));
                seeds.push((v, g));
            }
        }
        tape.backward(&seeds, net.params_mut())?;
        sgd_step(
            net.params_mut(),
            cfg.learning_rate,
            cfg.momentum,
            cfg.weight_decay,
        )?;
        step += 1;

        history.steps.push(StepRecord {
            step,
            data_loss,
            full_loss: data_loss + penalty,
            seconds: if cfg.wall_clock {
                start.elapsed().as_secs_f64()
            } else {
                0.0
            },
        });
        if !data_loss.is_finite() {
            return Err(Error::NonFinite(format!("loss at step {step}")));
        }
        if cfg.checkpoint_every > 0 && step % cfg.checkpoint_every == 0 && step < total {
            checkpoint(step, net)?;
        }
        let epoch_end = step % per_epoch == 0 && cfg.eval_train;
        let periodic = cfg.eval_every > 0 && step % cfg.eval_every == 0;
        if epoch_end || periodic {
            let (m, loss) = evaluate(net, samples, cfg.batch_size)?;
            history.evals.push(EvalRecord {
                step,
                epoch: step.div_ceil(per_epoch),
                train_miou: m,
                data_loss: loss,
            });
            log::info!("step {step}: train mIoU {m:.4}, loss {loss:.5}");
            if let Some(t) = cfg.stop_at {
                if m >= t.miou && loss <= t.data_loss {
                    break;
                }
            }
        }
    }
    if step > 0 {
        checkpoint(step, net)?;
    }
    Ok(history)
}
