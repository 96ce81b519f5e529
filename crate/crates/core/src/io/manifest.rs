//! JSON-lines dataset manifests. Paths are stored relative to the directory
//! holding the manifest.

use std::io::{BufRead, BufReader, Write};
use std::path::{Component, Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestRecord {
    pub background: String,
    pub smoke: String,
    pub beta: f64,
    pub gt_threshold: f64,
    pub seed: u64,
    pub composite: String,
    pub mask: String,
}

/// A record that could not be built, kept so the manifest accounts for every
/// input.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SkippedRecord {
    pub skipped: usize,
    pub background: String,
    pub reason: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ManifestLine {
    Record(ManifestRecord),
    Skipped(SkippedRecord),
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Manifest {
    pub dir: PathBuf,
    pub lines: Vec<ManifestLine>,
}

impl Manifest {
    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path)?;
        let mut lines = Vec::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let parsed = serde_json::from_str(&line)
                .map_err(|e| Error::Invalid(format!("{}:{}: {e}", path.display(), i + 1)))?;
            lines.push(parsed);
        }
        Ok(Manifest {
            dir: path.parent().map(Path::to_path_buf).unwrap_or_default(),
            lines,
        })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        for line in &self.lines {
            serde_json::to_writer(&mut out, line)?;
            out.write_all(b"\n")?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn records(&self) -> impl Iterator<Item = &ManifestRecord> {
        self.lines.iter().filter_map(|l| match l {
            ManifestLine::Record(r) => Some(r),
            ManifestLine::Skipped(_) => None,
        })
    }

    pub fn resolve(&self, rel: &str) -> PathBuf {
        self.dir.join(rel)
    }
}

fn absolute(path: &Path) -> Result<PathBuf> {
    let abs = match path.canonicalize() {
        Ok(p) => p,
        Err(_) => std::path::absolute(path)?,
    };
    Ok(abs)
}

/// `path` expressed relative to `base`, with `/` separators.
pub fn relative_to(path: &Path, base: &Path) -> Result<String> {
    let path = absolute(path)?;
    let base = absolute(base)?;
    let p: Vec<Component> = path.components().collect();
    let b: Vec<Component> = base.components().collect();
    let common = p.iter().zip(&b).take_while(|(x, y)| x == y).count();
    let mut parts: Vec<String> = vec!["..".to_string(); b.len() - common];
    parts.extend(
        p[common..]
            .iter()
            .map(|c| c.as_os_str().to_string_lossy().into_owned()),
    );
    Ok(parts.join("/"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relative_paths() {
        let dir = tempfile::tempdir().unwrap();
        let base = dir.path().join("out");
        std::fs::create_dir_all(base.join("images")).unwrap();
        std::fs::create_dir_all(dir.path().join("bg")).unwrap();
        assert_eq!(
            relative_to(&base.join("images/a.png"), &base).unwrap(),
            "images/a.png"
        );
        assert_eq!(
            relative_to(&dir.path().join("bg/x.png"), &base).unwrap(),
            "../bg/x.png"
        );
    }

    #[test]
    fn round_trip_with_skips() {
        let dir = tempfile::tempdir().unwrap();
        let m = Manifest {
            dir: dir.path().to_path_buf(),
            lines: vec![
                ManifestLine::Record(ManifestRecord {
                    background: "../bg/a.png".into(),
                    smoke: "smokes/00000.png".into(),
                    beta: 0.123456789,
                    gt_threshold: 0.1,
                    seed: 7,
                    composite: "images/00000.png".into(),
                    mask: "masks/00000.png".into(),
                }),
                ManifestLine::Skipped(SkippedRecord {
                    skipped: 1,
                    background: "bad.png".into(),
                    reason: "unreadable".into(),
                }),
            ],
        };
        let path = dir.path().join("manifest.jsonl");
        m.write(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("{\"background\":\"../bg/a.png\",\"smoke\""));
        let back = Manifest::read(&path).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.records().count(), 1);
    }

    #[test]
    fn rejects_unknown_keys() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.jsonl");
        std::fs::write(&path, "{\"bogus\": 1}\n").unwrap();
        assert!(Manifest::read(&path).is_err());
    }
}
