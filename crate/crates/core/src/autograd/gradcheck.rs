//! Finite-difference verification of the adjoints.
//!
//! The checked computation is reduced to the scalar `J = Σ r·f(x)` with a
//! fixed random projection `r`; the analytic gradient of `J` comes from one
//! backward pass seeded with `r`, the numeric one from central differences.
//! Coordinates whose ±step evaluations switch a piecewise branch (ReLU sign,
//! pooling winner, sigmoid clamp) are skipped and counted, since the function
//! is not differentiable across them.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::param::{Param, ParamId, ParamKind, ParamSet};
use super::tape::{OpKind, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

pub const DEFAULT_STEP: f64 = 1e-5;
pub const DEFAULT_TOLERANCE: f64 = 1e-4;

#[derive(Clone, Debug)]
pub struct GradCheckConfig {
    pub step: f64,
    pub tolerance: f64,
    /// Coordinates sampled per input or parameter tensor; `None` checks all.
    pub max_coords_per_tensor: Option<usize>,
    pub seed: u64,
    pub mutation: Option<OpKind>,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            step: DEFAULT_STEP,
            tolerance: DEFAULT_TOLERANCE,
            max_coords_per_tensor: None,
            seed: 0,
            mutation: None,
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    pub checked: usize,
    pub skipped_kinks: usize,
    /// Tensor and flat index of the worst coordinate.
    pub worst: Option<(String, usize)>,
    /// Analytic and numeric derivative at the worst coordinate.
    pub worst_values: Option<(f64, f64)>,
    /// Every coordinate above the configured tolerance.
    pub failures: Vec<CoordFailure>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CoordFailure {
    pub tensor: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

impl GradCheckReport {
    pub fn passed(&self, tolerance: f64) -> bool {
        self.checked > 0 && self.max_rel_error <= tolerance
    }
}

/// `|a − n| / max(|a|, |n|, 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Checks the gradient of `f` with respect to every input tensor and every
/// parameter in `params`. `f` records its computation on the given tape and
/// returns the output handle.
pub fn grad_check<F>(
    f: F,
    inputs: &[Tensor<f64>],
    params: &mut ParamSet<f64>,
    cfg: &GradCheckConfig,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<f64>, &[Var], &ParamSet<f64>) -> Result<Var>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let mut tape = Tape::with_mutation(cfg.mutation);
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = f(&mut tape, &vars, params)?;
    let out_value = tape.value(out).clone();
    if !out_value.all_finite() {
        return Err(Error::NonFinite("gradient-check forward pass".into()));
    }
    let projection = Tensor::<f64>::randn(out_value.shape(), 1.0, &mut rng);
    let base_signature = tape.branch_signature();

    params.zero_grads();
    let grads = tape.backward(&[(out, projection.clone())], params)?;
    let mut analytic: Vec<(String, Tensor<f64>)> = Vec::new();
    for (i, v) in vars.iter().enumerate() {
        let g = grads
            .wrt(*v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(inputs[i].shape()));
        analytic.push((format!("input{i}"), g));
    }
    for p in params.iter() {
        analytic.push((p.name.clone(), p.grad.clone()));
    }
    params.zero_grads();

    let eval = |inputs: &[Tensor<f64>], params: &ParamSet<f64>| -> Result<(Tensor<f64>, u64)> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
        let out = f(&mut tape, &vars, params)?;
        let sig = tape.branch_signature();
        let v = tape.take_value(out);
        if !v.all_finite() {
            return Err(Error::NonFinite(
                "gradient-check perturbed forward pass".into(),
            ));
        }
        Ok((v, sig))
    };

    let mut report = GradCheckReport::default();
    let mut inputs = inputs.to_vec();
    let n_inputs = inputs.len();
    for (t_idx, (name, grad)) in analytic.iter().enumerate() {
        let len = grad.len();
        let coords: Vec<usize> = match cfg.max_coords_per_tensor {
            Some(m) if m < len => {
                let mut c = sample(&mut rng, len, m).into_vec();
                c.sort_unstable();
                c
            }
            _ => (0..len).collect(),
        };
        for i in coords {
            let orig = *coord(&mut inputs, params, n_inputs, t_idx, i);
            *coord(&mut inputs, params, n_inputs, t_idx, i) = orig + cfg.step;
            let (jp, sp) = eval(&inputs, params)?;
            *coord(&mut inputs, params, n_inputs, t_idx, i) = orig - cfg.step;
            let (jm, sm) = eval(&inputs, params)?;
            *coord(&mut inputs, params, n_inputs, t_idx, i) = orig;
            if sp != base_signature || sm != base_signature {
                report.skipped_kinks += 1;
                continue;
            }
            // Differencing per output element before projecting keeps the
            // rounding of the large sum out of the quotient.
            let dj: f64 = jp
                .data()
                .iter()
                .zip(jm.data())
                .zip(projection.data())
                .map(|((p, m), r)| (p - m) * r)
                .sum();
            let numeric = dj / (2.0 * cfg.step);
            let err = relative_error(grad.data()[i], numeric);
            report.checked += 1;
            report.max_abs_error = report.max_abs_error.max((grad.data()[i] - numeric).abs());
            if err > cfg.tolerance {
                report.failures.push(CoordFailure {
                    tensor: name.clone(),
                    index: i,
                    analytic: grad.data()[i],
                    numeric,
                });
            }
            if report.worst.is_none() || err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst = Some((name.clone(), i));
                report.worst_values = Some((grad.data()[i], numeric));
            }
        }
    }
    Ok(report)
}

fn coord<'a>(
    inputs: &'a mut [Tensor<f64>],
    params: &'a mut ParamSet<f64>,
    n_inputs: usize,
    tensor: usize,
    i: usize,
) -> &'a mut f64 {
    if tensor < n_inputs {
        &mut inputs[tensor].data_mut()[i]
    } else {
        &mut params.get_mut(ParamId(tensor - n_inputs)).value.data_mut()[i]
    }
}

/// Result of checking one kernel in isolation.
#[derive(Clone, Debug)]
pub struct OpCheck {
    pub op: OpKind,
    pub case: String,
    pub report: GradCheckReport,
}

fn conv_params(
    rng: &mut ChaCha8Rng,
    name: &str,
    k: usize,
    cin: usize,
    cout: usize,
) -> ParamSet<f64> {
    let mut ps = ParamSet::new();
    ps.push(Param::new(
        format!("{name}.weight"),
        ParamKind::Weight,
        Tensor::randn(Shape::new(k, k, cin, cout), 0.5, rng),
    ))
    .expect("fresh set");
    ps.push(Param::new(
        format!("{name}.bias"),
        ParamKind::Bias,
        Tensor::randn(Shape::new(cout, 1, 1, 1), 0.5, rng),
    ))
    .expect("fresh set");
    ps
}

/// Checks every op of the tape on small random tensors.
type GraphFn = dyn Fn(&mut Tape<f64>, &[Var], &ParamSet<f64>) -> Result<Var>;

pub fn check_ops(cfg: &GradCheckConfig) -> Result<Vec<OpCheck>> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed);
    let mut results = Vec::new();
    let mut run = |op: OpKind,
                   case: &str,
                   inputs: Vec<Tensor<f64>>,
                   mut params: ParamSet<f64>,
                   f: &GraphFn|
     -> Result<()> {
        let report = grad_check(f, &inputs, &mut params, cfg)?;
        results.push(OpCheck {
            op,
            case: case.to_string(),
            report,
        });
        Ok(())
    };

    let x = Tensor::randn(Shape::new(2, 3, 5, 5), 1.0, &mut rng);
    let ps = conv_params(&mut rng, "k3", 3, 3, 4);
    run(
        OpKind::Conv2d,
        "3x3, 2x3x5x5 -> 4 channels",
        vec![x],
        ps,
        &|t, v, p| {
            t.conv2d(
                p,
                v[0],
                p.id("k3.weight").unwrap(),
                p.id("k3.bias").unwrap(),
            )
        },
    )?;

    let x = Tensor::randn(Shape::new(2, 3, 4, 4), 1.0, &mut rng);
    let ps = conv_params(&mut rng, "k1", 1, 3, 2);
    run(
        OpKind::Conv2d,
        "1x1, 2x3x4x4 -> 2 channels",
        vec![x],
        ps,
        &|t, v, p| {
            t.conv2d(
                p,
                v[0],
                p.id("k1.weight").unwrap(),
                p.id("k1.bias").unwrap(),
            )
        },
    )?;

    let x = Tensor::randn(Shape::new(1, 2, 3, 3), 1.0, &mut rng);
    let ps = conv_params(&mut rng, "dc", 2, 2, 3);
    run(
        OpKind::ConvTranspose2d,
        "2x2 stride 2, 1x2x3x3 -> 3 channels",
        vec![x],
        ps,
        &|t, v, p| {
            t.conv_transpose2d(
                p,
                v[0],
                p.id("dc.weight").unwrap(),
                p.id("dc.bias").unwrap(),
            )
        },
    )?;

    let x = Tensor::randn(Shape::new(1, 2, 6, 6), 1.0, &mut rng);
    run(
        OpKind::MaxPool2x2,
        "1x2x6x6",
        vec![x],
        ParamSet::new(),
        &|t, v, _| t.maxpool2x2("pool", v[0]),
    )?;

    let x = Tensor::randn(Shape::new(1, 2, 3, 3), 1.0, &mut rng);
    run(
        OpKind::UpsampleNearest2x,
        "1x2x3x3",
        vec![x],
        ParamSet::new(),
        &|t, v, _| t.upsample_nearest2x(v[0]),
    )?;

    let x = Tensor::randn(Shape::new(2, 2, 3, 3), 1.0, &mut rng);
    run(
        OpKind::Relu,
        "2x2x3x3",
        vec![x],
        ParamSet::new(),
        &|t, v, _| t.relu(v[0]),
    )?;

    let x = Tensor::randn(Shape::new(2, 2, 3, 3), 3.0, &mut rng);
    run(
        OpKind::Sigmoid,
        "2x2x3x3",
        vec![x],
        ParamSet::new(),
        &|t, v, _| t.sigmoid(v[0]),
    )?;

    let a = Tensor::randn(Shape::new(1, 3, 4, 4), 1.0, &mut rng);
    let b = Tensor::randn(Shape::new(1, 2, 4, 4), 1.0, &mut rng);
    run(
        OpKind::ConcatChannels,
        "(1,3,4,4) + (1,2,4,4)",
        vec![a, b],
        ParamSet::new(),
        &|t, v, _| t.concat_channels("cat", v[0], v[1]),
    )?;

    let a = Tensor::randn(Shape::new(1, 2, 3, 3), 1.0, &mut rng);
    let b = Tensor::randn(Shape::new(1, 2, 3, 3), 1.0, &mut rng);
    run(
        OpKind::Add,
        "(1,2,3,3) + (1,2,3,3)",
        vec![a, b],
        ParamSet::new(),
        &|t, v, _| t.add("add", v[0], v[1]),
    )?;

    Ok(results)
}
