//! Synthetic training data: pure RGBA smoke blended over RGB backgrounds with
//! a concentration factor, and ground truth taken from the smoke alpha.
//!
//! Per pixel and channel, `I = (1 − αβ)·B + αβ·S`, evaluated on `[0, 1]`
//! values and quantized once, rounding half up.

mod dataset;
mod noise;

pub use dataset::{
    build_dataset, records_from_manifest, CompositeRecord, DatasetOptions, DatasetSummary,
};
pub use noise::{fractal_noise, gen_background, gen_pure_smoke, to_u8, SmokeGenParams};

use image::imageops::{self, FilterType};
use image::{Rgb, RgbImage, RgbaImage};

use crate::error::{Error, Result};
use crate::metrics::BinaryMask;

pub const DEFAULT_GT_THRESHOLD: f64 = 0.1;
pub const DEFAULT_BETA_MIN: f64 = 0.25;

/// Blends one 8-bit channel with effective opacity `a = α·β`.
pub fn blend_channel(background: u8, smoke: u8, a: f64) -> u8 {
    let b = background as f64 / 255.0;
    let s = smoke as f64 / 255.0;
    to_u8((1.0 - a) * b + a * s)
}

pub fn check_beta(beta: f64) -> Result<()> {
    if !(beta > 0.0 && beta <= 1.0) {
        return Err(Error::Invalid(format!(
            "beta must lie in (0, 1], got {beta}"
        )));
    }
    Ok(())
}

pub fn check_threshold(t: f64) -> Result<()> {
    if !(t > 0.0 && t < 1.0) {
        return Err(Error::Invalid(format!(
            "gt_threshold must lie in (0, 1), got {t}"
        )));
    }
    Ok(())
}

pub fn composite(bg: &RgbImage, smoke: &RgbaImage, beta: f64) -> Result<RgbImage> {
    check_beta(beta)?;
    if bg.dimensions() != smoke.dimensions() {
        return Err(Error::Dimension(format!(
            "background is {:?}, smoke is {:?}",
            bg.dimensions(),
            smoke.dimensions()
        )));
    }
    if bg.width() == 0 || bg.height() == 0 {
        return Err(Error::Invalid("images must be at least 1x1".into()));
    }
    Ok(RgbImage::from_fn(bg.width(), bg.height(), |x, y| {
        let b = bg.get_pixel(x, y);
        let s = smoke.get_pixel(x, y);
        let a = s[3] as f64 / 255.0 * beta;
        Rgb([
            blend_channel(b[0], s[0], a),
            blend_channel(b[1], s[1], a),
            blend_channel(b[2], s[2], a),
        ])
    }))
}

/// Smoke where `α > threshold`. Depends only on the smoke image, so one mask
/// serves every composite made from it.
pub fn ground_truth(smoke: &RgbaImage, gt_threshold: f64) -> Result<BinaryMask> {
    check_threshold(gt_threshold)?;
    let (w, h) = smoke.dimensions();
    Ok(BinaryMask::from_fn(w as usize, h as usize, |x, y| {
        smoke.get_pixel(x as u32, y as u32)[3] as f64 / 255.0 > gt_threshold
    }))
}

/// Center-crops `bg` to the aspect ratio of `width × height`, then resizes
/// with linear interpolation.
pub fn fit_background(bg: &RgbImage, width: u32, height: u32) -> RgbImage {
    if bg.dimensions() == (width, height) {
        return bg.clone();
    }
    let (bw, bh) = bg.dimensions();
    let target = width as f64 / height as f64;
    let (cw, ch) = if bw as f64 / bh as f64 > target {
        (((bh as f64 * target).round() as u32).clamp(1, bw), bh)
    } else {
        (bw, ((bw as f64 / target).round() as u32).clamp(1, bh))
    };
    let cropped = imageops::crop_imm(bg, (bw - cw) / 2, (bh - ch) / 2, cw, ch).to_image();
    imageops::resize(&cropped, width, height, FilterType::Triangle)
}

/// Composite image and ground-truth mask for one background/smoke pair.
pub fn synthesize(
    bg: &RgbImage,
    smoke: &RgbaImage,
    beta: f64,
    gt_threshold: f64,
) -> Result<(RgbImage, BinaryMask)> {
    let fitted = fit_background(bg, smoke.width(), smoke.height());
    Ok((
        composite(&fitted, smoke, beta)?,
        ground_truth(smoke, gt_threshold)?,
    ))
}
