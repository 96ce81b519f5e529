//! Independent oracles shared by the integration tests and the acceptance
//! harness. Nothing here calls into the code under test except for types.
#![allow(dead_code)]

use std::path::Path;

use smokeseg::compositor::{build_dataset, gen_background, CompositeRecord, DatasetOptions};
use smokeseg::io::image::save_rgb;
use smokeseg::io::Manifest;
use smokeseg::net::Variant;
use smokeseg::trainer::{load_samples, Sample};

pub type TraceEntry = (
    &'static str,
    &'static str,
    usize,
    usize,
    Option<(usize, usize, usize)>,
);

/// (layer, op, channels, side, skip) at full width for a 256×256 input,
/// written out by hand from the block tables.
pub const TRACE_256: &[TraceEntry] = &[
    ("p1.b1.conv1", "conv3x3x64+relu", 64, 256, None),
    ("p1.b1.conv2", "conv3x3x64+relu", 64, 256, None),
    ("p1.b1.pool", "maxpool2x2", 64, 128, None),
    ("p1.b2.conv1", "conv3x3x128+relu", 128, 128, None),
    ("p1.b2.conv2", "conv3x3x128+relu", 128, 128, None),
    ("p1.b2.pool", "maxpool2x2", 128, 64, None),
    ("p1.b3.conv1", "conv3x3x256+relu", 256, 64, None),
    ("p1.b3.conv2", "conv3x3x256+relu", 256, 64, None),
    ("p1.b3.conv3", "conv3x3x256+relu", 256, 64, None),
    ("p1.b3.skip", "skip-source", 256, 64, None),
    ("p1.b3.pool", "maxpool2x2", 256, 32, None),
    ("p1.b4.conv1", "conv3x3x512+relu", 512, 32, None),
    ("p1.b4.conv2", "conv3x3x512+relu", 512, 32, None),
    ("p1.b4.conv3", "conv3x3x512+relu", 512, 32, None),
    ("p1.b4.skip", "skip-source", 512, 32, None),
    ("p1.b4.pool", "maxpool2x2", 512, 16, None),
    ("p1.b5.conv1", "conv3x3x512+relu", 512, 16, None),
    ("p1.b5.conv2", "conv3x3x512+relu", 512, 16, None),
    ("p1.b5.conv3", "conv3x3x512+relu", 512, 16, None),
    ("p1.b6.up", "upsample2x2", 512, 32, None),
    ("p1.b6.conv1", "conv3x3x512+relu", 512, 32, None),
    ("p1.b6.concat", "concat", 1024, 32, Some((512, 32, 32))),
    ("p1.b7.up", "upsample2x2", 1024, 64, None),
    ("p1.b7.conv1", "conv3x3x512+relu", 512, 64, None),
    ("p1.b7.concat", "concat", 768, 64, Some((256, 64, 64))),
    ("p1.b8.conv1", "conv3x3x256+relu", 256, 64, None),
    ("p1.b8.conv2", "conv3x3x256+relu", 256, 64, None),
    ("p1.b8.conv3", "conv3x3x256+relu", 256, 64, None),
    ("p1.b9.up", "upsample2x2", 256, 128, None),
    ("p1.b9.conv1", "conv3x3x128+relu", 128, 128, None),
    ("p1.b9.conv2", "conv3x3x128+relu", 128, 128, None),
    ("p1.b10.up", "upsample2x2", 128, 256, None),
    ("p1.b10.conv1", "conv3x3x64+relu", 64, 256, None),
    ("p1.b10.conv2", "conv3x3x64+relu", 64, 256, None),
    ("p1.pred", "conv1x1x1+sigmoid", 1, 256, None),
    ("p2.b1.conv1", "conv3x3x64+relu", 64, 256, None),
    ("p2.b1.conv2", "conv3x3x64+relu", 64, 256, None),
    ("p2.b1.skip", "skip-source", 64, 256, None),
    ("p2.b1.pool", "maxpool2x2", 64, 128, None),
    ("p2.b2.conv1", "conv3x3x128+relu", 128, 128, None),
    ("p2.b2.conv2", "conv3x3x128+relu", 128, 128, None),
    ("p2.b2.skip", "skip-source", 128, 128, None),
    ("p2.b2.pool", "maxpool2x2", 128, 64, None),
    ("p2.b3.conv1", "conv3x3x256+relu", 256, 64, None),
    ("p2.b3.conv2", "conv3x3x256+relu", 256, 64, None),
    ("p2.b3.conv3", "conv3x3x256+relu", 256, 64, None),
    ("p2.b4.up", "upsample2x2", 256, 128, None),
    ("p2.b4.conv1", "conv3x3x256+relu", 256, 128, None),
    ("p2.b4.concat", "concat", 384, 128, Some((128, 128, 128))),
    ("p2.b5.up", "upsample2x2", 384, 256, None),
    ("p2.b5.conv1", "conv3x3x256+relu", 256, 256, None),
    ("p2.b5.concat", "concat", 320, 256, Some((64, 256, 256))),
    ("p2.b6.conv1", "conv3x3x64+relu", 64, 256, None),
    ("p2.b6.conv2", "conv3x3x64+relu", 64, 256, None),
    ("p2.pred", "conv1x1x1+sigmoid", 1, 256, None),
    ("fuse.add", "add", 1, 256, None),
    ("fuse.conv", "conv1x1x1+sigmoid", 1, 256, None),
];

fn scaled(base: usize, s: f64) -> usize {
    ((base as f64 * s + 0.5).floor() as usize).max(1)
}

fn conv(k: usize, cin: usize, cout: usize) -> usize {
    k * k * cin * cout + cout
}

/// Parameter count from the layer tables, summed conv by conv.
pub fn param_count_oracle(variant: Variant, s: f64) -> usize {
    let c = |b| scaled(b, s);
    let (c64, c128, c256, c512) = (c(64), c(128), c(256), c(512));
    let p1_skips = !matches!(variant, Variant::NoFinePathNoSkips);
    let p2 = !matches!(variant, Variant::NoFinePath | Variant::NoFinePathNoSkips);
    let p2_skips = matches!(variant, Variant::Full);

    let mut n = conv(3, 3, c64) + conv(3, c64, c64);
    n += conv(3, c64, c128) + conv(3, c128, c128);
    n += conv(3, c128, c256) + 2 * conv(3, c256, c256);
    n += conv(3, c256, c512) + 2 * conv(3, c512, c512);
    n += 3 * conv(3, c512, c512);
    // b6: up, conv, concat with the b4 tap
    n += conv(3, c512, c512);
    let b7_in = if p1_skips { c512 + c512 } else { c512 };
    n += conv(3, b7_in, c512);
    let b8_in = if p1_skips { c512 + c256 } else { c512 };
    n += conv(3, b8_in, c256) + 2 * conv(3, c256, c256);
    n += conv(3, c256, c128) + conv(3, c128, c128);
    n += conv(3, c128, c64) + conv(3, c64, c64);
    n += conv(1, c64, 1);
    if p2 {
        n += conv(3, 3, c64) + conv(3, c64, c64);
        n += conv(3, c64, c128) + conv(3, c128, c128);
        n += conv(3, c128, c256) + 2 * conv(3, c256, c256);
        n += conv(3, c256, c256);
        let b5_in = if p2_skips { c256 + c128 } else { c256 };
        n += conv(3, b5_in, c256);
        let b6_in = if p2_skips { c256 + c64 } else { c256 };
        n += conv(3, b6_in, c64) + conv(3, c64, c64);
        n += conv(1, c64, 1);
    }
    n + conv(1, 1, 1)
}

/// `I = (1 − αβ)·B + αβ·S` on one 8-bit channel, rounded half up.
pub fn blend_oracle(b: u8, s: u8, alpha: u8, beta: f64) -> u8 {
    let a = alpha as f64 / 255.0 * beta;
    let v = (1.0 - a) * (b as f64 / 255.0) + a * (s as f64 / 255.0);
    (v * 255.0 + 0.5).floor() as u8
}

/// Brute-force IoU and MSE of two masks given as flat 0/1 slices.
pub fn brute_iou_mse(pr: &[u8], gt: &[u8]) -> (f64, f64) {
    let (mut inter, mut union, mut diff) = (0usize, 0usize, 0usize);
    for i in 0..pr.len() {
        let (p, g) = (pr[i] == 1, gt[i] == 1);
        if p && g {
            inter += 1;
        }
        if p || g {
            union += 1;
        }
        if p != g {
            diff += 1;
        }
    }
    let iou = if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    };
    (iou, diff as f64 / pr.len() as f64)
}

/// Eight 32×32 composites over procedural backgrounds, built through the
/// dataset pipeline and loaded back from disk.
pub fn overfit_samples(dir: &Path) -> Vec<Sample> {
    let bg_dir = dir.join("backgrounds");
    std::fs::create_dir_all(&bg_dir).unwrap();
    let records: Vec<CompositeRecord> = (0..8)
        .map(|i| {
            let p = bg_dir.join(format!("bg{i}.png"));
            save_rgb(&gen_background(100 + i as u64, 48, 40).unwrap(), &p).unwrap();
            CompositeRecord::new(&p, None, i, 7)
        })
        .collect();
    let opts = DatasetOptions {
        smoke_size: (32, 32),
        ..Default::default()
    };
    let summary = build_dataset(&records, dir.join("dataset"), &opts).unwrap();
    load_samples(&Manifest::read(&summary.manifest).unwrap()).unwrap()
}
