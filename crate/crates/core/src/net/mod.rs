//! The two-path segmentation network.
//!
//! Path 1 is a deep encoder-decoder producing a coarse map, path 2 a shallow
//! one producing a fine map; the two sigmoid maps are summed and passed
//! through a 1×1 convolution with sigmoid to give the fused prediction.

mod config;
mod plan;
mod trace;

use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub use config::{FusionMode, NetConfig, Variant};
pub use plan::{plan, Activation, ConvSpec, LayerSpec, NetPlan, PathPlan};
pub use trace::{format_trace, spatial_trace, TraceRow};

use crate::autograd::gradcheck::{grad_check, GradCheckConfig, GradCheckReport};
use crate::autograd::{Param, ParamId, ParamKind, ParamSet, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Shape, Tensor};

/// Input height and width must be multiples of this (four 2×2 pools).
pub const SPATIAL_MULTIPLE: usize = 16;

#[derive(Clone, Debug)]
pub struct PredictionBundle<T> {
    pub coarse: Tensor<T>,
    pub fine: Option<Tensor<T>>,
    pub fused: Tensor<T>,
}

/// Tape handles of the three prediction maps.
#[derive(Clone, Copy, Debug)]
pub struct BundleVars {
    pub coarse: Var,
    pub fine: Option<Var>,
    pub fused: Var,
}

#[derive(Clone, Debug)]
pub struct Network<T> {
    config: NetConfig,
    plan: NetPlan,
    params: ParamSet<T>,
    conv_ids: HashMap<String, (ParamId, ParamId)>,
}

/// Truncated normal: resample until within ±2 standard deviations.
fn truncated_normal(rng: &mut ChaCha8Rng, std: f64) -> f64 {
    loop {
        let z: f64 = StandardNormal.sample(rng);
        if z.abs() <= 2.0 {
            return z * std;
        }
    }
}

impl<T: Scalar> Network<T> {
    /// Builds the network and initializes weights from `config.seed` with a
    /// fan-in scaled truncated normal (std `√(2/fan_in)`); biases start at zero.
    /// The same seed yields the same weights in every precision.
    pub fn build(config: &NetConfig) -> Result<Self> {
        config.validate()?;
        let plan = plan::plan(config);
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut params = ParamSet::new();
        let mut conv_ids = HashMap::new();
        for (spec, transposed) in plan.convs() {
            let std = (2.0 / spec.fan_in(transposed) as f64).sqrt();
            let shape = Shape::new(spec.kernel, spec.kernel, spec.cin, spec.cout);
            let data = (0..shape.len())
                .map(|_| T::of(truncated_normal(&mut rng, std)))
                .collect();
            let w = params.push(Param::new(
                format!("{}.weight", spec.name),
                ParamKind::Weight,
                Tensor::from_vec(shape, data)?,
            ))?;
            let b = params.push(Param::new(
                format!("{}.bias", spec.name),
                ParamKind::Bias,
                Tensor::zeros(Shape::new(spec.cout, 1, 1, 1)),
            ))?;
            conv_ids.insert(spec.name.clone(), (w, b));
        }
        Ok(Network {
            config: config.clone(),
            plan,
            params,
            conv_ids,
        })
    }

    pub fn config(&self) -> &NetConfig {
        &self.config
    }

    pub fn plan(&self) -> &NetPlan {
        &self.plan
    }

    pub fn params(&self) -> &ParamSet<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet<T> {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.scalar_count()
    }

    /// Same architecture and values in another precision.
    pub fn cast<U: Scalar>(&self) -> Network<U> {
        Network {
            config: self.config.clone(),
            plan: self.plan.clone(),
            params: self.params.cast(),
            conv_ids: self.conv_ids.clone(),
        }
    }

    pub fn check_input(shape: Shape) -> Result<()> {
        if shape.c != 3 {
            return Err(Error::shape("network input", "(n, 3, h, w)", shape));
        }
        if !shape.h.is_multiple_of(SPATIAL_MULTIPLE) || !shape.w.is_multiple_of(SPATIAL_MULTIPLE) {
            return Err(Error::shape(
                "network input",
                format!("height and width multiples of {SPATIAL_MULTIPLE}"),
                shape,
            ));
        }
        Ok(())
    }

    pub fn forward(&self, input: &Tensor<T>) -> Result<PredictionBundle<T>> {
        let mut tape = Tape::new();
        let x = tape.leaf(input.clone());
        let vars = self.forward_tape(&mut tape, x)?;
        Ok(PredictionBundle {
            coarse: tape.take_value(vars.coarse),
            fine: vars.fine.map(|v| tape.take_value(v)),
            fused: tape.take_value(vars.fused),
        })
    }

    pub fn forward_tape(&self, tape: &mut Tape<T>, input: Var) -> Result<BundleVars> {
        self.forward_with(tape, &self.params, input)
    }

    /// Forward pass reading parameter values from `params`, which must have
    /// been produced by this network (possibly perturbed).
    pub fn forward_with(
        &self,
        tape: &mut Tape<T>,
        params: &ParamSet<T>,
        input: Var,
    ) -> Result<BundleVars> {
        Self::check_input(tape.value(input).shape())?;
        let coarse = self.run_path(tape, params, &self.plan.coarse, input)?;
        let fine = match &self.plan.fine {
            Some(p) => Some(self.run_path(tape, params, p, input)?),
            None => None,
        };
        let merged = match fine {
            Some(f) => tape.add("fuse.add", coarse, f)?,
            None => coarse,
        };
        let fused = self.conv(tape, params, &self.plan.fusion, merged)?;
        Ok(BundleVars {
            coarse,
            fine,
            fused,
        })
    }

    fn ids(&self, name: &str) -> (ParamId, ParamId) {
        self.conv_ids[name]
    }

    fn conv(
        &self,
        tape: &mut Tape<T>,
        params: &ParamSet<T>,
        spec: &ConvSpec,
        x: Var,
    ) -> Result<Var> {
        let (w, b) = self.ids(&spec.name);
        let y = tape.conv2d(params, x, w, b)?;
        match spec.activation {
            Activation::Relu => tape.relu(y),
            Activation::Sigmoid => tape.sigmoid(y),
            Activation::Identity => Ok(y),
        }
    }

    fn run_path(
        &self,
        tape: &mut Tape<T>,
        params: &ParamSet<T>,
        path: &PathPlan,
        input: Var,
    ) -> Result<Var> {
        let mut cur = input;
        let mut taps: HashMap<usize, Var> = HashMap::new();
        let skip = |taps: &HashMap<usize, Var>, slot: usize, name: &str| {
            taps.get(&slot)
                .copied()
                .ok_or_else(|| Error::Graph(format!("{name}: skip slot {slot} was never tapped")))
        };
        for layer in &path.layers {
            cur = match layer {
                LayerSpec::Conv(spec) => self.conv(tape, params, spec, cur)?,
                LayerSpec::Deconv(spec) => {
                    let (w, b) = self.ids(&spec.name);
                    tape.conv_transpose2d(params, cur, w, b)?
                }
                LayerSpec::MaxPool { name } => tape.maxpool2x2(name, cur)?,
                LayerSpec::Upsample { .. } => tape.upsample_nearest2x(cur)?,
                LayerSpec::Tap { slot, .. } => {
                    taps.insert(*slot, cur);
                    cur
                }
                LayerSpec::Concat { name, slot } => {
                    let s = skip(&taps, *slot, name)?;
                    tape.concat_channels(name, cur, s)?
                }
                LayerSpec::AddSkip {
                    name,
                    slot,
                    projection,
                } => {
                    let mut s = skip(&taps, *slot, name)?;
                    if let Some(p) = projection {
                        s = self.conv(tape, params, p, s)?;
                    }
                    tape.add(name, cur, s)?
                }
            };
        }
        Ok(cur)
    }
}

/// Gradient check of the whole network (fused output) in 64-bit precision on
/// a uniform-random `1×3×h×w` input.
pub fn check_network(
    config: &NetConfig,
    h: usize,
    w: usize,
    cfg: &GradCheckConfig,
) -> Result<GradCheckReport> {
    let net = Network::<f64>::build(config)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x1d);
    let input = Tensor::<f64>::from_vec(
        Shape::new(1, 3, h, w),
        (0..3 * h * w)
            .map(|_| rand::Rng::random::<f64>(&mut rng))
            .collect(),
    )?;
    let mut params = net.params().clone();
    grad_check(
        |tape, vars, params| Ok(net.forward_with(tape, params, vars[0])?.fused),
        &[input],
        &mut params,
        cfg,
    )
}
