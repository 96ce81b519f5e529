//! Procedural stand-ins for rendered smoke and natural backgrounds, built on
//! seeded fractal value noise.

use image::{Rgb, RgbImage, Rgba, RgbaImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SmokeGenParams {
    pub octaves: u32,
    pub lacunarity: f64,
    pub gain: f64,
    /// Lattice cells across the image at the first octave.
    pub base_frequency: f64,
    /// Plume center in normalized `[0, 1]²` image coordinates.
    pub plume_center: [f64; 2],
    /// Plume radius in normalized units.
    pub plume_radius: f64,
    pub base_gray: f64,
    pub seed: u64,
}

impl Default for SmokeGenParams {
    fn default() -> Self {
        SmokeGenParams {
            octaves: 5,
            lacunarity: 2.0,
            gain: 0.5,
            base_frequency: 4.0,
            plume_center: [0.5, 0.5],
            plume_radius: 0.4,
            base_gray: 0.8,
            seed: 0,
        }
    }
}

impl SmokeGenParams {
    pub fn validate(&self) -> Result<()> {
        let finite = [
            self.lacunarity,
            self.gain,
            self.base_frequency,
            self.plume_center[0],
            self.plume_center[1],
            self.plume_radius,
            self.base_gray,
        ]
        .iter()
        .all(|v| v.is_finite());
        if !finite {
            return Err(Error::Config("smoke parameters must be finite".into()));
        }
        if self.octaves < 1 {
            return Err(Error::Config("smoke octaves must be >= 1".into()));
        }
        if self.plume_radius <= 0.0 {
            return Err(Error::Config("plume radius must be > 0".into()));
        }
        if self.base_frequency <= 0.0 || self.gain <= 0.0 || self.lacunarity <= 0.0 {
            return Err(Error::Config(
                "noise frequency, gain and lacunarity must be > 0".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.base_gray) {
            return Err(Error::Config("base_gray must lie in [0, 1]".into()));
        }
        Ok(())
    }

    /// Draws plume placement, size and gray level from `seed`, keeping the
    /// noise shape parameters of `self`.
    pub fn randomized(&self, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        SmokeGenParams {
            plume_center: [rng.random_range(0.3..0.7), rng.random_range(0.3..0.7)],
            plume_radius: rng.random_range(0.25..0.5),
            base_gray: rng.random_range(0.35..0.95),
            seed,
            ..self.clone()
        }
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Lattice value in `[0, 1)`.
fn lattice(seed: u64, layer: u64, ix: i64, iy: i64) -> f64 {
    let h = splitmix64(seed ^ splitmix64(layer ^ splitmix64(ix as u64 ^ splitmix64(iy as u64))));
    (h >> 11) as f64 / (1u64 << 53) as f64
}

fn smoothstep(t: f64) -> f64 {
    t * t * (3.0 - 2.0 * t)
}

fn value_noise(seed: u64, layer: u64, x: f64, y: f64) -> f64 {
    let (x0, y0) = (x.floor(), y.floor());
    let (u, v) = (smoothstep(x - x0), smoothstep(y - y0));
    let (ix, iy) = (x0 as i64, y0 as i64);
    let a = lattice(seed, layer, ix, iy);
    let b = lattice(seed, layer, ix + 1, iy);
    let c = lattice(seed, layer, ix, iy + 1);
    let d = lattice(seed, layer, ix + 1, iy + 1);
    let top = a + (b - a) * u;
    let bottom = c + (d - c) * u;
    top + (bottom - top) * v
}

/// Octave-summed value noise normalized to `[0, 1]`; `(x, y)` in normalized
/// image coordinates.
#[allow(clippy::too_many_arguments)]
pub fn fractal_noise(
    seed: u64,
    layer: u64,
    octaves: u32,
    base_frequency: f64,
    lacunarity: f64,
    gain: f64,
    x: f64,
    y: f64,
) -> f64 {
    let (mut freq, mut amp) = (base_frequency, 1.0);
    let (mut sum, mut norm) = (0.0, 0.0);
    for o in 0..octaves {
        sum += amp * value_noise(seed, layer * 64 + o as u64, x * freq, y * freq);
        norm += amp;
        freq *= lacunarity;
        amp *= gain;
    }
    (sum / norm).clamp(0.0, 1.0)
}

/// Grayscale RGBA smoke: alpha is fractal noise times a smooth radial falloff
/// around the plume center; color is `base_gray` modulated by the same noise.
pub fn gen_pure_smoke(params: &SmokeGenParams, width: u32, height: u32) -> Result<RgbaImage> {
    params.validate()?;
    if width == 0 || height == 0 {
        return Err(Error::Invalid("smoke image dimensions must be >= 1".into()));
    }
    let p = params;
    Ok(RgbaImage::from_fn(width, height, |x, y| {
        let u = (x as f64 + 0.5) / width as f64;
        let v = (y as f64 + 0.5) / height as f64;
        let n = fractal_noise(
            p.seed,
            0,
            p.octaves,
            p.base_frequency,
            p.lacunarity,
            p.gain,
            u,
            v,
        );
        let d = ((u - p.plume_center[0]).powi(2) + (v - p.plume_center[1]).powi(2)).sqrt();
        let falloff = 1.0 - smoothstep((d / p.plume_radius).min(1.0));
        let alpha = (n * falloff).clamp(0.0, 1.0);
        let gray = (p.base_gray * (0.7 + 0.6 * n)).clamp(0.0, 1.0);
        let g = to_u8(gray);
        Rgba([g, g, g, to_u8(alpha)])
    }))
}

/// Colored fractal-noise background with a soft vertical gradient.
pub fn gen_background(seed: u64, width: u32, height: u32) -> Result<RgbImage> {
    if width == 0 || height == 0 {
        return Err(Error::Invalid("background dimensions must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tint: [f64; 3] = [
        rng.random_range(0.1..0.9),
        rng.random_range(0.1..0.9),
        rng.random_range(0.1..0.9),
    ];
    let sky: [f64; 3] = [
        rng.random_range(0.0..1.0),
        rng.random_range(0.0..1.0),
        rng.random_range(0.0..1.0),
    ];
    Ok(RgbImage::from_fn(width, height, |x, y| {
        let u = (x as f64 + 0.5) / width as f64;
        let v = (y as f64 + 0.5) / height as f64;
        let mut px = [0u8; 3];
        for (c, out) in px.iter_mut().enumerate() {
            let n = fractal_noise(seed, 1 + c as u64, 4, 3.0, 2.0, 0.6, u, v);
            let val = (1.0 - v) * sky[c] * 0.5 + v * tint[c] * 0.5 + 0.5 * n;
            *out = to_u8(val.clamp(0.0, 1.0));
        }
        Rgb(px)
    }))
}

/// `[0, 1]` to 8-bit, rounding half up.
pub fn to_u8(v: f64) -> u8 {
    (v * 255.0 + 0.5).floor().clamp(0.0, 255.0) as u8
}
