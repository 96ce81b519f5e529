//! Layer lists for the two paths and the fusion head.
//!
//! The plan is the single description of the architecture: the network
//! builder allocates parameters from it, the forward pass interprets it, and
//! [`spatial_trace`](super::spatial_trace) walks it symbolically.

use super::config::{FusionMode, NetConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Sigmoid,
    Identity,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConvSpec {
    pub name: String,
    pub kernel: usize,
    pub cin: usize,
    pub cout: usize,
    pub activation: Activation,
}

impl ConvSpec {
    /// Scalar parameter count: `k²·cin·cout + cout`.
    pub fn param_count(&self) -> usize {
        self.kernel * self.kernel * self.cin * self.cout + self.cout
    }

    /// Number of inputs feeding one output value.
    pub fn fan_in(&self, transposed: bool) -> usize {
        if transposed {
            self.cin
        } else {
            self.kernel * self.kernel * self.cin
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum LayerSpec {
    Conv(ConvSpec),
    /// 2×2 stride-2 transposed convolution.
    Deconv(ConvSpec),
    MaxPool {
        name: String,
    },
    Upsample {
        name: String,
    },
    /// Remembers the current feature map as skip source `slot`.
    Tap {
        name: String,
        slot: usize,
    },
    Concat {
        name: String,
        slot: usize,
    },
    /// Adds skip `slot` to the trunk, first projecting it with a 1×1
    /// convolution when channel counts differ.
    AddSkip {
        name: String,
        slot: usize,
        projection: Option<ConvSpec>,
    },
}

impl LayerSpec {
    pub fn name(&self) -> &str {
        match self {
            LayerSpec::Conv(c) | LayerSpec::Deconv(c) => &c.name,
            LayerSpec::MaxPool { name }
            | LayerSpec::Upsample { name }
            | LayerSpec::Tap { name, .. }
            | LayerSpec::Concat { name, .. }
            | LayerSpec::AddSkip { name, .. } => name,
        }
    }

    /// Convolutions owning parameters, with a flag for transposed ones.
    pub fn convs(&self) -> Vec<(&ConvSpec, bool)> {
        match self {
            LayerSpec::Conv(c) => vec![(c, false)],
            LayerSpec::Deconv(c) => vec![(c, true)],
            LayerSpec::AddSkip {
                projection: Some(p),
                ..
            } => vec![(p, false)],
            _ => Vec::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PathPlan {
    pub name: &'static str,
    pub layers: Vec<LayerSpec>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NetPlan {
    pub coarse: PathPlan,
    pub fine: Option<PathPlan>,
    /// 1×1 convolution + sigmoid applied to the (summed) path predictions.
    pub fusion: ConvSpec,
}

impl NetPlan {
    pub fn paths(&self) -> impl Iterator<Item = &PathPlan> {
        std::iter::once(&self.coarse).chain(self.fine.as_ref())
    }

    /// Every parameterized convolution in allocation order.
    pub fn convs(&self) -> Vec<(&ConvSpec, bool)> {
        let mut out: Vec<(&ConvSpec, bool)> = self
            .paths()
            .flat_map(|p| p.layers.iter().flat_map(LayerSpec::convs))
            .collect();
        out.push((&self.fusion, false));
        out
    }

    pub fn param_count(&self) -> usize {
        self.convs().iter().map(|(c, _)| c.param_count()).sum()
    }
}

struct PathBuilder<'a> {
    prefix: &'static str,
    config: &'a NetConfig,
    skips: bool,
    layers: Vec<LayerSpec>,
    channels: usize,
    taps: Vec<(usize, usize)>,
    block: usize,
    conv_in_block: usize,
}

impl<'a> PathBuilder<'a> {
    fn new(prefix: &'static str, config: &'a NetConfig, skips: bool) -> Self {
        PathBuilder {
            prefix,
            config,
            skips,
            layers: Vec::new(),
            channels: 3,
            taps: Vec::new(),
            block: 0,
            conv_in_block: 0,
        }
    }

    fn block(&mut self, b: usize) -> &mut Self {
        self.block = b;
        self.conv_in_block = 0;
        self
    }

    fn name(&self, what: &str) -> String {
        format!("{}.b{}.{}", self.prefix, self.block, what)
    }

    fn convs(&mut self, count: usize, base: usize) -> &mut Self {
        for _ in 0..count {
            self.conv_in_block += 1;
            let cout = self.config.channels(base);
            let spec = ConvSpec {
                name: self.name(&format!("conv{}", self.conv_in_block)),
                kernel: 3,
                cin: self.channels,
                cout,
                activation: Activation::Relu,
            };
            self.layers.push(LayerSpec::Conv(spec));
            self.channels = cout;
        }
        self
    }

    fn pool(&mut self) -> &mut Self {
        let name = self.name("pool");
        self.layers.push(LayerSpec::MaxPool { name });
        self
    }

    fn tap(&mut self) -> &mut Self {
        if self.skips {
            let slot = self.block;
            self.taps.push((slot, self.channels));
            let name = self.name("skip");
            self.layers.push(LayerSpec::Tap { name, slot });
        }
        self
    }

    fn up(&mut self) -> &mut Self {
        match self.config.fusion_mode {
            FusionMode::UpsampleConcat => {
                let name = self.name("up");
                self.layers.push(LayerSpec::Upsample { name });
            }
            FusionMode::DeconvAdd => {
                let spec = ConvSpec {
                    name: self.name("deconv"),
                    kernel: 2,
                    cin: self.channels,
                    cout: self.channels,
                    activation: Activation::Identity,
                };
                self.layers.push(LayerSpec::Deconv(spec));
            }
        }
        self
    }

    fn merge(&mut self, from_block: usize) -> &mut Self {
        if !self.skips {
            return self;
        }
        let skip_channels = self
            .taps
            .iter()
            .find(|(slot, _)| *slot == from_block)
            .map(|&(_, c)| c)
            .expect("skip tapped before merge");
        match self.config.fusion_mode {
            FusionMode::UpsampleConcat => {
                let name = self.name("concat");
                self.layers.push(LayerSpec::Concat {
                    name,
                    slot: from_block,
                });
                self.channels += skip_channels;
            }
            FusionMode::DeconvAdd => {
                let projection = (skip_channels != self.channels).then(|| ConvSpec {
                    name: self.name("proj"),
                    kernel: 1,
                    cin: skip_channels,
                    cout: self.channels,
                    activation: Activation::Identity,
                });
                let name = self.name("add");
                self.layers.push(LayerSpec::AddSkip {
                    name,
                    slot: from_block,
                    projection,
                });
            }
        }
        self
    }

    fn predict(mut self) -> PathPlan {
        self.layers.push(LayerSpec::Conv(ConvSpec {
            name: format!("{}.pred", self.prefix),
            kernel: 1,
            cin: self.channels,
            cout: 1,
            activation: Activation::Sigmoid,
        }));
        PathPlan {
            name: self.prefix,
            layers: self.layers,
        }
    }
}

/// Deep coarse path: VGG16 blocks 1–5 (2, 2, 3, 3, 3 convolutions, four
/// pools) and a five-block asymmetric decoder with skips from blocks 4 and 3.
fn coarse_path(config: &NetConfig) -> PathPlan {
    let mut b = PathBuilder::new("p1", config, config.skips_path1);
    b.block(1).convs(2, 64).pool();
    b.block(2).convs(2, 128).pool();
    b.block(3).convs(3, 256).tap().pool();
    b.block(4).convs(3, 512).tap().pool();
    b.block(5).convs(3, 512);
    b.block(6).up().convs(1, 512).merge(4);
    b.block(7).up().convs(1, 512).merge(3);
    b.block(8).convs(3, 256);
    b.block(9).up().convs(2, 128);
    b.block(10).up().convs(2, 64);
    b.predict()
}

/// Shallow fine path: VGG16 blocks 1–3 with two pools, skips from blocks 2 and 1.
fn fine_path(config: &NetConfig) -> PathPlan {
    let mut b = PathBuilder::new("p2", config, config.skips_path2);
    b.block(1).convs(2, 64).tap().pool();
    b.block(2).convs(2, 128).tap().pool();
    b.block(3).convs(3, 256);
    b.block(4).up().convs(1, 256).merge(2);
    b.block(5).up().convs(1, 256).merge(1);
    b.block(6).convs(2, 64);
    b.predict()
}

pub fn plan(config: &NetConfig) -> NetPlan {
    NetPlan {
        coarse: coarse_path(config),
        fine: config.use_path2.then(|| fine_path(config)),
        fusion: ConvSpec {
            name: "fuse.conv".into(),
            kernel: 1,
            cin: 1,
            cout: 1,
            activation: Activation::Sigmoid,
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn count(p: &PathPlan, f: impl Fn(&LayerSpec) -> bool) -> usize {
        p.layers.iter().filter(|l| f(l)).count()
    }

    fn is_conv3(l: &LayerSpec) -> bool {
        matches!(l, LayerSpec::Conv(c) if c.kernel == 3)
    }

    #[test]
    fn layer_counts_at_full_width() {
        let p = plan(&NetConfig::default());
        let split = |path: &PathPlan| {
            let first_up = path
                .layers
                .iter()
                .position(|l| matches!(l, LayerSpec::Upsample { .. }))
                .unwrap();
            (
                path.layers[..first_up].to_vec(),
                path.layers[first_up..].to_vec(),
            )
        };
        let (enc, dec) = split(&p.coarse);
        let enc = PathPlan {
            name: "e",
            layers: enc,
        };
        let dec = PathPlan {
            name: "d",
            layers: dec,
        };
        assert_eq!(count(&enc, is_conv3), 13);
        assert_eq!(count(&enc, |l| matches!(l, LayerSpec::MaxPool { .. })), 4);
        assert_eq!(count(&dec, is_conv3), 9);
        assert_eq!(count(&dec, |l| matches!(l, LayerSpec::Upsample { .. })), 4);
        assert_eq!(count(&dec, |l| matches!(l, LayerSpec::Concat { .. })), 2);

        let fine = p.fine.unwrap();
        let (enc, dec) = split(&fine);
        let enc = PathPlan {
            name: "e",
            layers: enc,
        };
        let dec = PathPlan {
            name: "d",
            layers: dec,
        };
        assert_eq!(count(&enc, is_conv3), 7);
        assert_eq!(count(&enc, |l| matches!(l, LayerSpec::MaxPool { .. })), 2);
        assert_eq!(count(&dec, is_conv3), 4);
        assert_eq!(count(&dec, |l| matches!(l, LayerSpec::Upsample { .. })), 2);
        assert_eq!(count(&dec, |l| matches!(l, LayerSpec::Concat { .. })), 2);
    }

    #[test]
    fn first_conv_parameter_count() {
        let p = plan(&NetConfig::default());
        let LayerSpec::Conv(c) = &p.coarse.layers[0] else {
            panic!("first layer is a convolution")
        };
        assert_eq!(c.param_count(), 1792);
    }

    #[test]
    fn deconv_add_projects_mismatched_skips() {
        let p = plan(&NetConfig {
            fusion_mode: FusionMode::DeconvAdd,
            ..Default::default()
        });
        let projections: Vec<_> = p
            .paths()
            .flat_map(|path| path.layers.iter())
            .filter_map(|l| match l {
                LayerSpec::AddSkip { projection, .. } => {
                    Some(projection.as_ref().map(|c| (c.cin, c.cout)))
                }
                _ => None,
            })
            .collect();
        // p1.b6 adds 512 to 512; p1.b7 projects 256 -> 512; p2.b4 128 -> 256; p2.b5 64 -> 256.
        assert_eq!(
            projections,
            vec![None, Some((256, 512)), Some((128, 256)), Some((64, 256))]
        );
    }
}
