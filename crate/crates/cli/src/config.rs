use std::path::Path;

use serde::{Deserialize, Serialize};
use smokeseg::compositor::{SmokeGenParams, DEFAULT_BETA_MIN, DEFAULT_GT_THRESHOLD};
use smokeseg::metrics::DEFAULT_PIXEL_THRESHOLD;
use smokeseg::trainer::TrainConfig;
use smokeseg::NetConfig;

use crate::Failure;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub beta_min: f64,
    pub gt_threshold: f64,
    /// Template for procedural smoke; placement and gray level are redrawn
    /// per image from its seed.
    pub smoke: SmokeGenParams,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            beta_min: DEFAULT_BETA_MIN,
            gt_threshold: DEFAULT_GT_THRESHOLD,
            smoke: SmokeGenParams::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    /// A frame is smoke when more pixels than this are predicted smoke.
    pub pixel_threshold: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            pixel_threshold: DEFAULT_PIXEL_THRESHOLD,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CliConfig {
    pub net: NetConfig,
    pub train: TrainConfig,
    pub data: DataConfig,
    pub eval: EvalConfig,
}

impl CliConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, Failure> {
        let cfg = match path {
            None => CliConfig::default(),
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| {
                    Failure::Validation(format!("cannot read config {}: {e}", p.display()))
                })?;
                serde_json::from_str(&text)
                    .map_err(|e| Failure::Validation(format!("{}: {e}", p.display())))?
            }
        };
        let problems = cfg.problems();
        if problems.is_empty() {
            Ok(cfg)
        } else {
            Err(Failure::Validation(format!(
                "invalid configuration:\n  {}",
                problems.join("\n  ")
            )))
        }
    }

    /// Every violated constraint across all sections.
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if let Err(e) = self.net.validate() {
            out.push(format!("net: {e}"));
        }
        out.extend(
            self.train
                .problems()
                .into_iter()
                .map(|p| format!("train: {p}")),
        );
        if !(self.data.beta_min > 0.0 && self.data.beta_min <= 1.0) {
            out.push(format!(
                "data: beta_min must lie in (0, 1], got {}",
                self.data.beta_min
            ));
        }
        if !(self.data.gt_threshold > 0.0 && self.data.gt_threshold < 1.0) {
            out.push(format!(
                "data: gt_threshold must lie in (0, 1), got {}",
                self.data.gt_threshold
            ));
        }
        if let Err(e) = self.data.smoke.validate() {
            out.push(format!("data.smoke: {e}"));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_gives_defaults() {
        let cfg: CliConfig = serde_json::from_str("{}").unwrap();
        assert_eq!(cfg, CliConfig::default());
        assert!(cfg.problems().is_empty());
    }

    #[test]
    fn unknown_keys_are_rejected_in_every_section() {
        for doc in [
            r#"{"nett": {}}"#,
            r#"{"net": {"width": 0.5}}"#,
            r#"{"train": {"lr": 0.1}}"#,
            r#"{"data": {"beta": 0.5}}"#,
            r#"{"data": {"smoke": {"octave": 3}}}"#,
            r#"{"eval": {"threshold": 3}}"#,
        ] {
            assert!(serde_json::from_str::<CliConfig>(doc).is_err(), "{doc}");
        }
    }

    #[test]
    fn all_problems_are_listed() {
        let cfg: CliConfig = serde_json::from_str(
            r#"{"net": {"width_scale": 2.0}, "train": {"learning_rate": -1, "batch_size": 0}, "data": {"beta_min": 0}}"#,
        )
        .unwrap();
        assert_eq!(cfg.problems().len(), 4, "{:?}", cfg.problems());
    }
}
