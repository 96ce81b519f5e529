mod common;

use image::{Rgb, RgbImage, Rgba, RgbaImage};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use smokeseg::compositor::*;
use smokeseg::io::image::{load_mask, load_rgb, save_rgb, save_rgba};
use smokeseg::io::Manifest;

fn random_rgb(rng: &mut ChaCha8Rng, w: u32, h: u32) -> RgbImage {
    RgbImage::from_fn(w, h, |_, _| Rgb(rng.random()))
}

fn random_rgba(rng: &mut ChaCha8Rng, w: u32, h: u32) -> RgbaImage {
    RgbaImage::from_fn(w, h, |_, _| Rgba(rng.random()))
}

#[test]
fn blend_matches_oracle_on_random_pixels() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..500 {
        let (b, s, a): (u8, u8, u8) = rng.random();
        let beta = rng.random_range(0.01..=1.0);
        let got = blend_channel(b, s, a as f64 / 255.0 * beta);
        let want = common::blend_oracle(b, s, a, beta);
        assert!(
            (got as i32 - want as i32).abs() <= 1,
            "b={b} s={s} a={a} beta={beta}"
        );
    }
}

#[test]
fn opaque_smoke_at_full_beta_is_the_smoke() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let bg = random_rgb(&mut rng, 9, 7);
    let mut smoke = random_rgba(&mut rng, 9, 7);
    smoke.pixels_mut().for_each(|p| p[3] = 255);
    let out = composite(&bg, &smoke, 1.0).unwrap();
    for (o, s) in out.pixels().zip(smoke.pixels()) {
        assert_eq!(o.0, [s[0], s[1], s[2]]);
    }
}

#[test]
fn transparent_smoke_is_the_background() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let bg = random_rgb(&mut rng, 9, 7);
    let mut smoke = random_rgba(&mut rng, 9, 7);
    smoke.pixels_mut().for_each(|p| p[3] = 0);
    for beta in [0.1, 0.5, 1.0] {
        assert_eq!(composite(&bg, &smoke, beta).unwrap(), bg);
    }
}

#[test]
fn only_the_product_of_alpha_and_beta_matters() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let bg = random_rgb(&mut rng, 6, 6);
    let mut smoke = random_rgba(&mut rng, 6, 6);
    let mut half = smoke.clone();
    smoke.pixels_mut().for_each(|p| p[3] = 102);
    half.pixels_mut().for_each(|p| p[3] = 204);
    assert_eq!(
        composite(&bg, &smoke, 1.0).unwrap(),
        composite(&bg, &half, 0.5).unwrap()
    );
}

#[test]
fn mismatched_sizes_and_bad_parameters_are_rejected() {
    let bg = RgbImage::new(4, 4);
    let smoke = RgbaImage::new(4, 5);
    assert!(composite(&bg, &smoke, 0.5).is_err());
    let smoke = RgbaImage::new(4, 4);
    for beta in [0.0, -0.1, 1.01, f64::NAN] {
        assert!(composite(&bg, &smoke, beta).is_err(), "beta {beta}");
    }
    for t in [0.0, 1.0, -1.0] {
        assert!(ground_truth(&smoke, t).is_err(), "threshold {t}");
    }
}

proptest! {
    #[test]
    fn composite_lies_between_inputs(b: u8, s: u8, a: u8, beta in 0.001f64..=1.0) {
        let v = blend_channel(b, s, a as f64 / 255.0 * beta);
        prop_assert!(v >= b.min(s) && v <= b.max(s));
    }

    #[test]
    fn larger_beta_moves_toward_the_smoke(b: u8, s: u8, a: u8, lo in 0.001f64..=1.0, hi in 0.001f64..=1.0) {
        let (lo, hi) = (lo.min(hi), lo.max(hi));
        let at = |beta: f64| blend_channel(b, s, a as f64 / 255.0 * beta) as i32;
        prop_assert!((at(hi) - s as i32).abs() <= (at(lo) - s as i32).abs());
    }

    #[test]
    fn mask_is_alpha_above_threshold(alphas in prop::collection::vec(any::<u8>(), 12), t in 0.01f64..0.99) {
        let smoke = RgbaImage::from_fn(4, 3, |x, y| Rgba([0, 0, 0, alphas[(y * 4 + x) as usize]]));
        let m = ground_truth(&smoke, t).unwrap();
        for (i, &a) in alphas.iter().enumerate() {
            prop_assert_eq!(m.data()[i] == 1, a as f64 / 255.0 > t);
        }
    }
}

/// Ten backgrounds crossed with ten smokes, read back from disk and spot
/// checked pixel by pixel.
#[test]
fn hundred_record_dataset_matches_oracle() {
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("src");
    std::fs::create_dir_all(&src).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (w, h) = (24u32, 20u32);
    let mut records = Vec::new();
    let mut smokes = Vec::new();
    for j in 0..10 {
        let p = src.join(format!("smoke{j}.png"));
        save_rgba(&random_rgba(&mut rng, w, h), &p).unwrap();
        smokes.push(p);
    }
    for i in 0..10 {
        let bg = src.join(format!("bg{i}.png"));
        save_rgb(&random_rgb(&mut rng, w, h), &bg).unwrap();
        for s in &smokes {
            let idx = records.len();
            let mut r = CompositeRecord::new(&bg, Some(s.clone()), idx, 99);
            if idx % 2 == 0 {
                r.beta = Some(0.3 + 0.007 * idx as f64);
            }
            records.push(r);
        }
    }
    let summary =
        build_dataset(&records, dir.path().join("out"), &DatasetOptions::default()).unwrap();
    assert_eq!((summary.written, summary.skipped.len()), (100, 0));

    let manifest = Manifest::read(&summary.manifest).unwrap();
    let lines: Vec<_> = manifest.records().cloned().collect();
    assert_eq!(lines.len(), 100);
    for (k, rec) in lines.iter().enumerate() {
        if let Some(beta) = records[k].beta {
            assert_eq!(rec.beta, beta);
        } else {
            assert!((DEFAULT_BETA_MIN..=1.0).contains(&rec.beta));
        }
        let bg = load_rgb(manifest.resolve(&rec.background)).unwrap();
        let smoke = image::open(manifest.resolve(&rec.smoke))
            .unwrap()
            .to_rgba8();
        let comp = load_rgb(manifest.resolve(&rec.composite)).unwrap();
        let mask = load_mask(manifest.resolve(&rec.mask)).unwrap();
        for _ in 0..5 {
            let (x, y) = (rng.random_range(0..w), rng.random_range(0..h));
            let (b, s, c) = (
                bg.get_pixel(x, y),
                smoke.get_pixel(x, y),
                comp.get_pixel(x, y),
            );
            for ch in 0..3 {
                let want = common::blend_oracle(b[ch], s[ch], s[3], rec.beta);
                assert!(
                    (c[ch] as i32 - want as i32).abs() <= 1,
                    "record {k} at ({x},{y})"
                );
            }
            assert_eq!(
                mask.get(x as usize, y as usize),
                s[3] as f64 / 255.0 > rec.gt_threshold
            );
        }
    }
}

#[test]
fn rebuilding_from_manifest_is_bitwise_identical() {
    let dir = tempfile::tempdir().unwrap();
    let bg = dir.path().join("bg.png");
    save_rgb(&gen_background(3, 40, 30).unwrap(), &bg).unwrap();
    let records: Vec<_> = (0..4)
        .map(|i| CompositeRecord::new(&bg, None, i, 21))
        .collect();
    let opts = DatasetOptions {
        smoke_size: (32, 16),
        ..Default::default()
    };
    let first = build_dataset(&records, dir.path().join("a"), &opts).unwrap();
    let again = records_from_manifest(&Manifest::read(&first.manifest).unwrap());
    let second = build_dataset(&again, dir.path().join("b"), &opts).unwrap();
    let (ma, mb) = (
        Manifest::read(&first.manifest).unwrap(),
        Manifest::read(&second.manifest).unwrap(),
    );
    for (ra, rb) in ma.records().zip(mb.records()) {
        assert_eq!((ra.beta, ra.seed), (rb.beta, rb.seed));
        for (a, b) in [(&ra.composite, &rb.composite), (&ra.mask, &rb.mask)] {
            let fa = std::fs::read(ma.resolve(a)).unwrap();
            let fb = std::fs::read(mb.resolve(b)).unwrap();
            assert_eq!(fa, fb);
        }
    }
}

#[test]
fn saved_composite_equals_in_memory_composite() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let bg = random_rgb(&mut rng, 30, 20);
    let smoke = random_rgba(&mut rng, 16, 16);
    let (comp, mask) = synthesize(&bg, &smoke, 0.7, 0.1).unwrap();
    let p = dir.path().join("c.png");
    save_rgb(&comp, &p).unwrap();
    assert_eq!(load_rgb(&p).unwrap(), comp);
    assert_eq!(mask.width(), 16);
    assert_eq!(mask.height(), 16);
}

#[test]
fn unreadable_background_becomes_a_skip_line() {
    let dir = tempfile::tempdir().unwrap();
    let good = dir.path().join("good.png");
    save_rgb(&gen_background(1, 16, 16).unwrap(), &good).unwrap();
    let bad = dir.path().join("bad.png");
    std::fs::write(&bad, b"not an image").unwrap();
    let records = vec![
        CompositeRecord::new(&good, None, 0, 1),
        CompositeRecord::new(&bad, None, 1, 1),
    ];
    let opts = DatasetOptions {
        smoke_size: (16, 16),
        ..Default::default()
    };
    let summary = build_dataset(&records, dir.path().join("out"), &opts).unwrap();
    assert_eq!(summary.written, 1);
    assert_eq!(
        summary.skipped.iter().map(|s| s.0).collect::<Vec<_>>(),
        vec![1]
    );
    let manifest = Manifest::read(&summary.manifest).unwrap();
    assert_eq!((manifest.lines.len(), manifest.records().count()), (2, 1));
}
