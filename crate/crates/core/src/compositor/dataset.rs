use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{
    check_beta, check_threshold, gen_pure_smoke, synthesize, SmokeGenParams, DEFAULT_BETA_MIN,
    DEFAULT_GT_THRESHOLD,
};
use crate::error::{Error, Result};
use crate::io::image::{load_rgb, load_rgba, save_mask, save_rgb, save_rgba};
use crate::io::manifest::{relative_to, Manifest, ManifestLine, ManifestRecord, SkippedRecord};
use crate::par;

/// One composite to build. A missing smoke image is generated procedurally
/// from the record seed; a missing beta is drawn from the same seed.
#[derive(Clone, Debug, PartialEq)]
pub struct CompositeRecord {
    pub background: PathBuf,
    pub smoke: Option<PathBuf>,
    pub beta: Option<f64>,
    pub gt_threshold: f64,
    pub seed: u64,
}

impl CompositeRecord {
    /// Record `index` of a run seeded with `global_seed`.
    pub fn new(
        background: impl Into<PathBuf>,
        smoke: Option<PathBuf>,
        index: usize,
        global_seed: u64,
    ) -> Self {
        CompositeRecord {
            background: background.into(),
            smoke,
            beta: None,
            gt_threshold: DEFAULT_GT_THRESHOLD,
            seed: global_seed ^ index as u64,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetOptions {
    pub beta_min: f64,
    pub smoke_template: SmokeGenParams,
    /// Width and height of procedurally generated smoke.
    pub smoke_size: (u32, u32),
}

impl Default for DatasetOptions {
    fn default() -> Self {
        DatasetOptions {
            beta_min: DEFAULT_BETA_MIN,
            smoke_template: SmokeGenParams::default(),
            smoke_size: (256, 256),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct DatasetSummary {
    pub manifest: PathBuf,
    pub written: usize,
    /// Record index and reason for each skipped record.
    pub skipped: Vec<(usize, String)>,
}

enum Outcome {
    Written(ManifestRecord),
    Skipped(SkippedRecord),
}

fn draw_beta(seed: u64, beta_min: f64) -> f64 {
    ChaCha8Rng::seed_from_u64(seed).random_range(beta_min..=1.0)
}

fn build_one(
    index: usize,
    rec: &CompositeRecord,
    out_dir: &Path,
    opts: &DatasetOptions,
) -> Result<Outcome> {
    let beta = rec
        .beta
        .unwrap_or_else(|| draw_beta(rec.seed, opts.beta_min));
    check_beta(beta)?;
    check_threshold(rec.gt_threshold)?;
    let skip = |reason: String| {
        log::warn!(
            "skipping record {index} ({}): {reason}",
            rec.background.display()
        );
        Ok(Outcome::Skipped(SkippedRecord {
            skipped: index,
            background: rec.background.display().to_string(),
            reason,
        }))
    };
    let bg = match load_rgb(&rec.background) {
        Ok(img) => img,
        Err(e) => return skip(e.to_string()),
    };
    let name = format!("{index:05}.png");
    let smoke_path = match &rec.smoke {
        Some(p) => p.clone(),
        None => out_dir.join("smokes").join(&name),
    };
    let smoke = match &rec.smoke {
        Some(p) => match load_rgba(p) {
            Ok(img) => img,
            Err(e) => return skip(e.to_string()),
        },
        None => {
            let (w, h) = opts.smoke_size;
            let img = gen_pure_smoke(&opts.smoke_template.randomized(rec.seed), w, h)?;
            std::fs::create_dir_all(out_dir.join("smokes"))?;
            save_rgba(&img, &smoke_path)?;
            img
        }
    };
    let (image, mask) = synthesize(&bg, &smoke, beta, rec.gt_threshold)?;
    let composite = out_dir.join("images").join(&name);
    let mask_path = out_dir.join("masks").join(&name);
    std::fs::create_dir_all(out_dir.join("images"))?;
    std::fs::create_dir_all(out_dir.join("masks"))?;
    save_rgb(&image, &composite)?;
    save_mask(&mask, &mask_path)?;
    Ok(Outcome::Written(ManifestRecord {
        background: relative_to(&rec.background, out_dir)?,
        smoke: relative_to(&smoke_path, out_dir)?,
        beta,
        gt_threshold: rec.gt_threshold,
        seed: rec.seed,
        composite: relative_to(&composite, out_dir)?,
        mask: relative_to(&mask_path, out_dir)?,
    }))
}

/// Builds composites and masks under `out_dir` (`images/`, `masks/`, and
/// `smokes/` for generated smoke) and writes `out_dir/manifest.jsonl`.
/// Records are processed in parallel; each is fully determined by its own
/// fields, so output does not depend on scheduling.
pub fn build_dataset(
    records: &[CompositeRecord],
    out_dir: impl AsRef<Path>,
    opts: &DatasetOptions,
) -> Result<DatasetSummary> {
    let out_dir = out_dir.as_ref();
    if !(opts.beta_min > 0.0 && opts.beta_min <= 1.0) {
        return Err(Error::Config(format!(
            "beta_min must lie in (0, 1], got {}",
            opts.beta_min
        )));
    }
    opts.smoke_template.validate()?;
    std::fs::create_dir_all(out_dir)?;
    let outcomes = par::map_range(records.len(), |i| build_one(i, &records[i], out_dir, opts));
    let mut manifest = Manifest {
        dir: out_dir.to_path_buf(),
        lines: Vec::with_capacity(records.len()),
    };
    let mut summary = DatasetSummary {
        manifest: out_dir.join("manifest.jsonl"),
        ..Default::default()
    };
    for outcome in outcomes {
        match outcome? {
            Outcome::Written(r) => {
                summary.written += 1;
                manifest.lines.push(ManifestLine::Record(r));
            }
            Outcome::Skipped(s) => {
                summary.skipped.push((s.skipped, s.reason.clone()));
                manifest.lines.push(ManifestLine::Skipped(s));
            }
        }
    }
    manifest.write(&summary.manifest)?;
    Ok(summary)
}

/// Records that reproduce a manifest's composites exactly.
pub fn records_from_manifest(manifest: &Manifest) -> Vec<CompositeRecord> {
    manifest
        .records()
        .map(|r| CompositeRecord {
            background: manifest.resolve(&r.background),
            smoke: Some(manifest.resolve(&r.smoke)),
            beta: Some(r.beta),
            gt_threshold: r.gt_threshold,
            seed: r.seed,
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::compositor::gen_background;

    #[test]
    fn empty_records_give_empty_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let s = build_dataset(&[], dir.path(), &DatasetOptions::default()).unwrap();
        assert_eq!(std::fs::read_to_string(&s.manifest).unwrap(), "");
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
    }

    #[test]
    fn unreadable_background_is_skipped() {
        let dir = tempfile::tempdir().unwrap();
        let good = dir.path().join("good.png");
        save_rgb(&gen_background(1, 20, 20).unwrap(), &good).unwrap();
        let bad = dir.path().join("bad.png");
        std::fs::write(&bad, b"garbage").unwrap();
        let opts = DatasetOptions {
            smoke_size: (16, 16),
            ..Default::default()
        };
        let recs = vec![
            CompositeRecord::new(&good, None, 0, 4),
            CompositeRecord::new(&bad, None, 1, 4),
        ];
        let out = dir.path().join("out");
        let s = build_dataset(&recs, &out, &opts).unwrap();
        assert_eq!(s.written, 1);
        assert_eq!(s.skipped.len(), 1);
        assert_eq!(s.skipped[0].0, 1);
        let m = Manifest::read(&s.manifest).unwrap();
        assert_eq!(m.lines.len(), 2);
        let r = m.records().next().unwrap();
        assert!((DEFAULT_BETA_MIN..=1.0).contains(&r.beta));
        assert_eq!(r.background, "../good.png");
        assert!(m.resolve(&r.composite).exists());
    }

    #[test]
    fn beta_draw_is_seeded() {
        assert_eq!(draw_beta(3, 0.25), draw_beta(3, 0.25));
        assert_ne!(draw_beta(3, 0.25), draw_beta(4, 0.25));
    }
}
