//! Segmentation metrics over binary masks and the pixel-count frame detector.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Default smoke-pixel count above which a 256×256 frame is flagged.
pub const DEFAULT_PIXEL_THRESHOLD: usize = 50;

/// Per-pixel {0, 1} labels, row-major.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct BinaryMask {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl BinaryMask {
    pub fn zeros(width: usize, height: usize) -> Self {
        BinaryMask {
            width,
            height,
            data: vec![0; width * height],
        }
    }

    pub fn from_vec(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Invalid("mask dimensions must be >= 1".into()));
        }
        if data.len() != width * height {
            return Err(Error::Invalid(format!(
                "mask {width}x{height} needs {} labels, got {}",
                width * height,
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|&v| v > 1) {
            return Err(Error::NonBinaryTarget {
                value: data[i] as f64,
                index: i,
            });
        }
        Ok(BinaryMask {
            width,
            height,
            data,
        })
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let data = (0..height)
            .flat_map(|y| (0..width).map(move |x| (x, y)))
            .map(|(x, y)| f(x, y) as u8)
            .collect();
        BinaryMask {
            width,
            height,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x] == 1
    }

    pub fn set(&mut self, x: usize, y: usize, v: bool) {
        self.data[y * self.width + x] = v as u8;
    }

    pub fn count_ones(&self) -> usize {
        self.data.iter().filter(|&&v| v == 1).count()
    }

    pub fn complement(&self) -> Self {
        BinaryMask {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| 1 - v).collect(),
        }
    }

    /// Mask as a `(1, 1, h, w)` tensor of 0.0 / 1.0.
    pub fn to_tensor<T: Scalar>(&self) -> Tensor<T> {
        Tensor::from_vec(
            crate::tensor::Shape::new(1, 1, self.height, self.width),
            self.data
                .iter()
                .map(|&v| if v == 1 { T::one() } else { T::zero() })
                .collect(),
        )
        .expect("mask dimensions are >= 1")
    }

    fn check_same(&self, other: &BinaryMask) -> Result<()> {
        if (self.width, self.height) != (other.width, other.height) {
            return Err(Error::Dimension(format!(
                "masks are {}x{} and {}x{}",
                self.width, self.height, other.width, other.height
            )));
        }
        Ok(())
    }
}

/// Intersection over union of the smoke pixels. Two empty masks score 1.
pub fn iou(pr: &BinaryMask, gt: &BinaryMask) -> Result<f64> {
    pr.check_same(gt)?;
    let (mut inter, mut union) = (0usize, 0usize);
    for (&p, &g) in pr.data.iter().zip(&gt.data) {
        inter += (p & g) as usize;
        union += (p | g) as usize;
    }
    Ok(if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    })
}

/// Mean per-pixel squared difference; on binary masks this is the fraction
/// of disagreeing pixels.
pub fn mse_image(pr: &BinaryMask, gt: &BinaryMask) -> Result<f64> {
    pr.check_same(gt)?;
    let diff = pr.data.iter().zip(&gt.data).filter(|(p, g)| p != g).count();
    Ok(diff as f64 / pr.data.len() as f64)
}

fn mean_over<'a>(
    pairs: impl IntoIterator<Item = (&'a BinaryMask, &'a BinaryMask)>,
    f: fn(&BinaryMask, &BinaryMask) -> Result<f64>,
) -> Result<f64> {
    let mut sum = 0.0;
    let mut n = 0usize;
    for (p, g) in pairs {
        sum += f(p, g)?;
        n += 1;
    }
    if n == 0 {
        return Err(Error::Invalid(
            "metric over an empty list of mask pairs".into(),
        ));
    }
    Ok(sum / n as f64)
}

pub fn miou<'a>(pairs: impl IntoIterator<Item = (&'a BinaryMask, &'a BinaryMask)>) -> Result<f64> {
    mean_over(pairs, iou)
}

pub fn mmse<'a>(pairs: impl IntoIterator<Item = (&'a BinaryMask, &'a BinaryMask)>) -> Result<f64> {
    mean_over(pairs, mse_image)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageScore {
    pub name: String,
    pub iou: f64,
    pub mse: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n: usize,
    pub miou: f64,
    pub mmse: f64,
    pub images: Vec<ImageScore>,
}

impl EvalReport {
    pub fn from_pairs<'a>(
        pairs: impl IntoIterator<Item = (String, &'a BinaryMask, &'a BinaryMask)>,
    ) -> Result<Self> {
        let mut images = Vec::new();
        for (name, pr, gt) in pairs {
            images.push(ImageScore {
                name,
                iou: iou(pr, gt)?,
                mse: mse_image(pr, gt)?,
            });
        }
        if images.is_empty() {
            return Err(Error::Invalid(
                "evaluation over an empty list of mask pairs".into(),
            ));
        }
        let n = images.len();
        Ok(EvalReport {
            n,
            miou: images.iter().map(|s| s.iou).sum::<f64>() / n as f64,
            mmse: images.iter().map(|s| s.mse).sum::<f64>() / n as f64,
            images,
        })
    }

    /// Aligned text table: a method row with mIoU (percent) and mMse, then
    /// the per-image scores.
    pub fn to_table(&self, method: &str) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{:<28} {:>10} {:>10}", "Method", "mIoU(%)", "mMse");
        let _ = writeln!(
            s,
            "{:<28} {:>10.2} {:>10.4}",
            method,
            100.0 * self.miou,
            self.mmse
        );
        let _ = writeln!(s);
        let _ = writeln!(s, "{:<28} {:>10} {:>10}", "Image", "IoU", "Mse");
        for img in &self.images {
            let _ = writeln!(s, "{:<28} {:>10.4} {:>10.4}", img.name, img.iou, img.mse);
        }
        s
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrameClass {
    Smoke,
    NonSmoke,
}

/// A frame is smoke when its smoke-pixel count strictly exceeds the threshold.
pub fn detect_frame(pr: &BinaryMask, pixel_threshold: usize) -> FrameClass {
    if pr.count_ones() > pixel_threshold {
        FrameClass::Smoke
    } else {
        FrameClass::NonSmoke
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SequenceReport {
    /// 1-based index of the first frame classified as smoke.
    pub first_smoke_frame: Option<usize>,
    pub classes: Vec<FrameClass>,
    /// Frames classified smoke whose label says non-smoke; only with labels.
    pub false_alarms: Option<usize>,
}

pub fn detect_sequence(
    frames: &[BinaryMask],
    pixel_threshold: usize,
    labels: Option<&[FrameClass]>,
) -> Result<SequenceReport> {
    let classes: Vec<FrameClass> = frames
        .iter()
        .map(|m| detect_frame(m, pixel_threshold))
        .collect();
    let first_smoke_frame = classes
        .iter()
        .position(|&c| c == FrameClass::Smoke)
        .map(|i| i + 1);
    let false_alarms = match labels {
        Some(l) if l.len() != classes.len() => {
            return Err(Error::Invalid(format!(
                "{} labels for {} frames",
                l.len(),
                classes.len()
            )))
        }
        Some(l) => Some(
            classes
                .iter()
                .zip(l)
                .filter(|(&c, &lab)| c == FrameClass::Smoke && lab == FrameClass::NonSmoke)
                .count(),
        ),
        None => None,
    };
    Ok(SequenceReport {
        first_smoke_frame,
        classes,
        false_alarms,
    })
}
