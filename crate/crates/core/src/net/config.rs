use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How decoder blocks bring the trunk back up and merge skip features.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionMode {
    /// Nearest-neighbor 2× upsampling, channel concatenation of skips.
    UpsampleConcat,
    /// 2×2 stride-2 transposed convolution, elementwise addition of skips.
    DeconvAdd,
}

/// Named architecture variants used in the ablation study.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Variant {
    Full,
    /// Path-2 skip connections removed (−Rs).
    NoFineSkips,
    /// Path 2 removed entirely (−R).
    NoFinePath,
    /// Path 2 and the path-1 skip connections removed (−R−Cs).
    NoFinePathNoSkips,
    /// Upsampling + concatenation replaced by deconvolution + addition.
    DeconvAdd,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::Full,
        Variant::NoFineSkips,
        Variant::NoFinePath,
        Variant::NoFinePathNoSkips,
        Variant::DeconvAdd,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoFineSkips => "-Rs",
            Variant::NoFinePath => "-R",
            Variant::NoFinePathNoSkips => "-R-Cs",
            Variant::DeconvAdd => "deconv+add",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetConfig {
    /// Multiplies every channel count; results round half up with a floor of 1.
    pub width_scale: f64,
    pub use_path2: bool,
    pub skips_path1: bool,
    pub skips_path2: bool,
    pub fusion_mode: FusionMode,
    pub seed: u64,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig {
            width_scale: 1.0,
            use_path2: true,
            skips_path1: true,
            skips_path2: true,
            fusion_mode: FusionMode::UpsampleConcat,
            seed: 0,
        }
    }
}

impl NetConfig {
    pub fn variant(variant: Variant, width_scale: f64, seed: u64) -> Self {
        let base = NetConfig {
            width_scale,
            seed,
            ..Default::default()
        };
        match variant {
            Variant::Full => base,
            Variant::NoFineSkips => NetConfig {
                skips_path2: false,
                ..base
            },
            Variant::NoFinePath => NetConfig {
                use_path2: false,
                ..base
            },
            Variant::NoFinePathNoSkips => NetConfig {
                use_path2: false,
                skips_path1: false,
                ..base
            },
            Variant::DeconvAdd => NetConfig {
                fusion_mode: FusionMode::DeconvAdd,
                ..base
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        let s = self.width_scale;
        if !s.is_finite() || s <= 0.0 || s > 1.0 {
            return Err(Error::Config(format!(
                "width_scale must lie in (0, 1], got {s}"
            )));
        }
        if round_half_up(64.0 * s) < 1 {
            return Err(Error::Config(format!(
                "width_scale {s} leaves the 64-channel layers with no channels"
            )));
        }
        Ok(())
    }

    /// Channel count for a layer that has `base` channels at full width.
    pub fn channels(&self, base: usize) -> usize {
        round_half_up(base as f64 * self.width_scale).max(1)
    }
}

fn round_half_up(v: f64) -> usize {
    (v + 0.5).floor() as usize
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn channel_rounding() {
        let c = NetConfig {
            width_scale: 1.0 / 16.0,
            ..Default::default()
        };
        assert_eq!(
            (c.channels(64), c.channels(128), c.channels(512)),
            (4, 8, 32)
        );
        let c = NetConfig {
            width_scale: 0.3,
            ..Default::default()
        };
        // 64 * 0.3 = 19.2, 128 * 0.3 = 38.4, 1 * 0.3 floors at 1
        assert_eq!(
            (c.channels(64), c.channels(128), c.channels(1)),
            (19, 38, 1)
        );
        let c = NetConfig {
            width_scale: 1.0 / 128.0,
            ..Default::default()
        };
        assert_eq!(c.channels(64), 1);
        c.validate().unwrap();
    }

    #[test]
    fn invalid_scales() {
        for s in [0.0, -0.5, 1.5, f64::NAN, 1.0 / 200.0] {
            let c = NetConfig {
                width_scale: s,
                ..Default::default()
            };
            assert!(c.validate().is_err(), "{s}");
        }
    }

    #[test]
    fn variant_flags() {
        let v = |v| NetConfig::variant(v, 1.0, 0);
        assert!(
            v(Variant::Full).use_path2
                && v(Variant::Full).skips_path1
                && v(Variant::Full).skips_path2
        );
        assert!(!v(Variant::NoFineSkips).skips_path2);
        assert!(!v(Variant::NoFinePath).use_path2);
        let rcs = v(Variant::NoFinePathNoSkips);
        assert!(!rcs.use_path2 && !rcs.skips_path1);
        assert_eq!(v(Variant::DeconvAdd).fusion_mode, FusionMode::DeconvAdd);
    }

    #[test]
    fn rejects_unknown_keys() {
        assert!(serde_json::from_str::<NetConfig>(r#"{"width_scal": 0.5}"#).is_err());
        let c: NetConfig =
            serde_json::from_str(r#"{"width_scale": 0.125, "fusion_mode": "deconv_add"}"#).unwrap();
        assert_eq!(c.fusion_mode, FusionMode::DeconvAdd);
        assert!(c.use_path2);
    }
}
