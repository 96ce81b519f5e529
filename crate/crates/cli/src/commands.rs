use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::Context;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::json;
use smokeseg::autograd::OpKind;
use smokeseg::compositor::{
    build_dataset, gen_background as make_background, gen_pure_smoke, CompositeRecord,
    DatasetOptions,
};
use smokeseg::diagnostics::{format_lines, gradcheck_suite, SuiteOptions};
use smokeseg::io::image::{
    load_mask, load_rgb, mask_to_gray, probability_to_gray, rgb_to_tensor, save_gray, save_rgb,
    save_rgba,
};
use smokeseg::io::{load_checkpoint, save_checkpoint, Manifest};
use smokeseg::metrics::{detect_sequence, BinaryMask, EvalReport, FrameClass};
use smokeseg::net::{format_trace, spatial_trace};
use smokeseg::trainer::{binarize, load_samples, train as run_training};
use smokeseg::Network;

use crate::config::CliConfig;
use crate::{
    CompositeArgs, DetectArgs, EvalArgs, Failure, GenBackgroundArgs, GenSmokeArgs, GradcheckArgs,
    SegmentArgs, TraceArgs, TrainArgs,
};

/// Prints the command, its arguments and the effective configuration.
fn echo(command: &str, args: &impl Serialize, config: Option<&CliConfig>) -> Result<(), Failure> {
    let mut doc = json!({ "command": command, "args": args });
    if let Some(c) = config {
        doc["config"] = serde_json::to_value(c)?;
    }
    println!("{}", serde_json::to_string_pretty(&doc)?);
    Ok(())
}

fn runtime(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Runtime(e.into())
}

/// PNG files directly inside `dir`, sorted by name.
fn png_files(dir: &Path) -> Result<Vec<PathBuf>, Failure> {
    let entries = std::fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))
        .map_err(runtime)?;
    let mut files = Vec::new();
    for e in entries {
        let p = e?.path();
        if p.is_file() && p.extension().is_some_and(|x| x.eq_ignore_ascii_case("png")) {
            files.push(p);
        }
    }
    files.sort();
    Ok(files)
}

fn file_name(p: &Path) -> String {
    p.file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

fn stem(p: &Path) -> String {
    p.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

pub fn gen_smoke(a: &GenSmokeArgs) -> Result<(), Failure> {
    let cfg = CliConfig::load(a.config.as_deref())?;
    echo("gen-smoke", a, Some(&cfg))?;
    std::fs::create_dir_all(&a.out)?;
    let mut sidecar = Vec::with_capacity(a.count);
    for i in 0..a.count {
        let params = cfg.data.smoke.randomized(a.seed ^ i as u64);
        let img = gen_pure_smoke(&params, a.size.width, a.size.height)?;
        let name = format!("smoke_{i:05}.png");
        save_rgba(&img, a.out.join(&name))?;
        sidecar.push(json!({ "file": name, "params": params }));
    }
    let doc =
        json!({ "seed": a.seed, "size": a.size, "template": cfg.data.smoke, "smokes": sidecar });
    std::fs::write(
        a.out.join("params.json"),
        serde_json::to_string_pretty(&doc)?,
    )?;
    println!("wrote {} smoke images to {}", a.count, a.out.display());
    Ok(())
}

pub fn gen_background(a: &GenBackgroundArgs) -> Result<(), Failure> {
    echo("gen-background", a, None)?;
    std::fs::create_dir_all(&a.out)?;
    for i in 0..a.count {
        let img = make_background(a.seed ^ i as u64, a.size.width, a.size.height)?;
        save_rgb(&img, a.out.join(format!("bg_{i:05}.png")))?;
    }
    println!("wrote {} backgrounds to {}", a.count, a.out.display());
    Ok(())
}

pub fn composite(a: &CompositeArgs) -> Result<(), Failure> {
    let cfg = CliConfig::load(a.config.as_deref())?;
    echo("composite", a, Some(&cfg))?;
    let backgrounds = png_files(&a.backgrounds)?;
    if backgrounds.is_empty() {
        return Err(Failure::Validation(format!(
            "no PNG backgrounds in {}",
            a.backgrounds.display()
        )));
    }
    let smokes = match &a.smokes {
        Some(dir) => {
            let s = png_files(dir)?;
            if s.is_empty() {
                return Err(Failure::Validation(format!(
                    "no PNG smokes in {}",
                    dir.display()
                )));
            }
            Some(s)
        }
        None => None,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let records: Vec<CompositeRecord> = (0..a.count)
        .map(|i| {
            let bg = &backgrounds[rng.random_range(0..backgrounds.len())];
            let smoke = smokes
                .as_ref()
                .map(|s| s[rng.random_range(0..s.len())].clone());
            CompositeRecord {
                gt_threshold: cfg.data.gt_threshold,
                ..CompositeRecord::new(bg, smoke, i, a.seed)
            }
        })
        .collect();
    let opts = DatasetOptions {
        beta_min: cfg.data.beta_min,
        smoke_template: cfg.data.smoke.clone(),
        smoke_size: (a.smoke_size.width, a.smoke_size.height),
    };
    let summary = build_dataset(&records, &a.out, &opts)?;
    for (i, reason) in &summary.skipped {
        eprintln!("skipped record {i}: {reason}");
    }
    println!(
        "wrote {} composites ({} skipped); manifest {}",
        summary.written,
        summary.skipped.len(),
        summary.manifest.display()
    );
    Ok(())
}

pub fn train(a: &TrainArgs) -> Result<(), Failure> {
    let cfg = CliConfig::load(a.config.as_deref())?;
    echo("train", a, Some(&cfg))?;
    let manifest = Manifest::read(&a.data)?;
    let samples = load_samples(&manifest)?;
    if samples.is_empty() {
        return Err(Failure::Validation(format!(
            "{} lists no usable records",
            a.data.display()
        )));
    }
    let ckpt_dir = a.out.join("checkpoints");
    std::fs::create_dir_all(&ckpt_dir)?;
    std::fs::write(
        a.out.join("config.json"),
        serde_json::to_string_pretty(&cfg)?,
    )?;
    let mut net = Network::<f32>::build(&cfg.net)?;
    println!(
        "{} samples, {} parameters",
        samples.len(),
        net.param_count()
    );
    let mut last = None;
    let history = run_training(&mut net, &samples, &cfg.train, |step, n| {
        let p = ckpt_dir.join(format!("step_{step:06}.ckpt"));
        save_checkpoint(n, &p)?;
        last = Some(p);
        Ok(())
    })?;
    if let Some(p) = &last {
        std::fs::copy(p, a.out.join("final.ckpt"))?;
    }
    history.write_csv(a.out.join("history.csv"))?;
    if !history.evals.is_empty() {
        std::fs::write(
            a.out.join("evals.json"),
            serde_json::to_string_pretty(&history.evals)?,
        )?;
    }
    if let Some(s) = history.steps.last() {
        println!("{} steps, final data loss {:.5}", s.step, s.data_loss);
    }
    if let Some(e) = history.final_eval() {
        println!("train mIoU {:.4} at step {}", e.train_miou, e.step);
    }
    println!("checkpoint {}", a.out.join("final.ckpt").display());
    Ok(())
}

/// Expands directories into their PNG files.
fn expand_inputs(inputs: &[PathBuf]) -> Result<Vec<PathBuf>, Failure> {
    let mut out = Vec::new();
    for p in inputs {
        if p.is_dir() {
            out.extend(png_files(p)?);
        } else {
            out.push(p.clone());
        }
    }
    Ok(out)
}

fn predict(
    net: &Network<f32>,
    path: &Path,
) -> anyhow::Result<smokeseg::net::PredictionBundle<f32>> {
    let img = load_rgb(path)?;
    let out = net
        .forward(&rgb_to_tensor(&img))
        .with_context(|| path.display().to_string())?;
    Ok(out)
}

pub fn segment(a: &SegmentArgs) -> Result<(), Failure> {
    echo("segment", a, None)?;
    let net: Network<f32> = load_checkpoint(&a.checkpoint)?;
    let inputs = expand_inputs(&a.input)?;
    std::fs::create_dir_all(&a.out)?;
    if a.maps {
        std::fs::create_dir_all(a.out.join("maps"))?;
    }
    let mut failed = 0;
    for path in &inputs {
        let out = match predict(&net, path) {
            Ok(o) => o,
            Err(e) => {
                eprintln!("error: {e:#}");
                failed += 1;
                continue;
            }
        };
        let name = format!("{}.png", stem(path));
        let gray = if a.raw {
            probability_to_gray(&out.fused, 0)
        } else {
            mask_to_gray(&binarize(&out.fused, 0))
        };
        save_gray(&gray, a.out.join(&name))?;
        if a.maps {
            let maps = a.out.join("maps");
            save_gray(
                &probability_to_gray(&out.coarse, 0),
                maps.join(format!("{}_coarse.png", stem(path))),
            )?;
            if let Some(fine) = &out.fine {
                save_gray(
                    &probability_to_gray(fine, 0),
                    maps.join(format!("{}_fine.png", stem(path))),
                )?;
            }
        }
    }
    println!(
        "segmented {} of {} images into {}",
        inputs.len() - failed,
        inputs.len(),
        a.out.display()
    );
    if failed > 0 {
        return Err(runtime(anyhow::anyhow!("{failed} image(s) failed")));
    }
    Ok(())
}

pub fn eval(a: &EvalArgs) -> Result<(), Failure> {
    echo("eval", a, None)?;
    let pred: BTreeMap<String, PathBuf> = png_files(&a.pred)?
        .into_iter()
        .map(|p| (file_name(&p), p))
        .collect();
    let gt: BTreeMap<String, PathBuf> = png_files(&a.gt)?
        .into_iter()
        .map(|p| (file_name(&p), p))
        .collect();
    let unmatched: Vec<String> = pred
        .keys()
        .filter(|k| !gt.contains_key(*k))
        .map(|k| format!("{k} (prediction only)"))
        .chain(
            gt.keys()
                .filter(|k| !pred.contains_key(*k))
                .map(|k| format!("{k} (ground truth only)")),
        )
        .collect();
    if !unmatched.is_empty() {
        return Err(Failure::Validation(format!(
            "unmatched files:\n  {}",
            unmatched.join("\n  ")
        )));
    }
    if pred.is_empty() {
        return Err(Failure::Validation(format!(
            "no PNG masks in {}",
            a.pred.display()
        )));
    }
    let mut pairs: Vec<(String, BinaryMask, BinaryMask)> = Vec::with_capacity(pred.len());
    for (name, p) in &pred {
        pairs.push((name.clone(), load_mask(p)?, load_mask(&gt[name])?));
    }
    let report = EvalReport::from_pairs(pairs.iter().map(|(n, p, g)| (n.clone(), p, g)))?;
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(&a.out, serde_json::to_string_pretty(&report)?)?;
    print!("{}", report.to_table(&a.method));
    Ok(())
}

fn read_labels(path: &Path) -> Result<Vec<FrameClass>, Failure> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading {}", path.display()))
        .map_err(runtime)?;
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .enumerate()
        .map(|(i, l)| match l {
            "1" | "smoke" => Ok(FrameClass::Smoke),
            "0" | "non_smoke" => Ok(FrameClass::NonSmoke),
            other => Err(Failure::Validation(format!(
                "{} label {}: expected smoke, non_smoke, 1 or 0, got {other:?}",
                path.display(),
                i + 1
            ))),
        })
        .collect()
}

pub fn detect(a: &DetectArgs) -> Result<(), Failure> {
    let cfg = CliConfig::load(a.config.as_deref())?;
    echo("detect", a, Some(&cfg))?;
    let threshold = a.pixel_threshold.unwrap_or(cfg.eval.pixel_threshold);
    let frames = png_files(&a.frames)?;
    if frames.is_empty() {
        return Err(Failure::Validation(format!(
            "no PNG frames in {}",
            a.frames.display()
        )));
    }
    let labels = a.labels.as_deref().map(read_labels).transpose()?;
    if let Some(l) = &labels {
        if l.len() != frames.len() {
            return Err(Failure::Validation(format!(
                "{} labels for {} frames",
                l.len(),
                frames.len()
            )));
        }
    }
    let net: Network<f32> = load_checkpoint(&a.checkpoint)?;
    let mut masks = Vec::with_capacity(frames.len());
    for f in &frames {
        masks.push(binarize(&predict(&net, f).map_err(runtime)?.fused, 0));
    }
    let report = detect_sequence(&masks, threshold, labels.as_deref())?;
    for (i, (f, c)) in frames.iter().zip(&report.classes).enumerate() {
        let label = if *c == FrameClass::Smoke {
            "smoke"
        } else {
            "non_smoke"
        };
        println!(
            "frame {:>5}  {:<28} {:>7} px  {label}",
            i + 1,
            file_name(f),
            masks[i].count_ones()
        );
    }
    match report.first_smoke_frame {
        Some(k) => println!("Smoke detected at frame #{k}"),
        None => println!("No smoke detected"),
    }
    if let Some(n) = report.false_alarms {
        println!("Number of false alarms: {n}");
    }
    if let Some(out) = &a.out {
        let files: Vec<String> = frames.iter().map(|f| file_name(f)).collect();
        let doc = json!({ "pixel_threshold": threshold, "frames": files, "report": report });
        std::fs::write(out, serde_json::to_string_pretty(&doc)?)?;
    }
    Ok(())
}

pub fn gradcheck(a: &GradcheckArgs) -> Result<(), Failure> {
    echo("gradcheck", a, None)?;
    let mutation = match &a.mutate {
        None => None,
        Some(name) => Some(OpKind::parse(name).ok_or_else(|| {
            let known: Vec<&str> = OpKind::ALL.iter().map(|k| k.name()).collect();
            Failure::Validation(format!(
                "unknown op {name:?}; expected one of {}",
                known.join(", ")
            ))
        })?),
    };
    let opts = SuiteOptions {
        full: a.full,
        mutation,
        network_coords: a.coords,
        seed: a.seed,
    };
    let lines = gradcheck_suite(&opts)?;
    print!("{}", format_lines(&lines));
    let failed: Vec<&str> = lines
        .iter()
        .filter(|l| !l.passed)
        .map(|l| l.name.as_str())
        .collect();
    if failed.is_empty() {
        println!("all {} checks passed", lines.len());
        Ok(())
    } else {
        Err(Failure::Check(format!(
            "{} of {} checks failed: {}",
            failed.len(),
            lines.len(),
            failed.join(", ")
        )))
    }
}

pub fn trace(a: &TraceArgs) -> Result<(), Failure> {
    let cfg = CliConfig::load(a.config.as_deref())?;
    echo("trace", a, Some(&cfg))?;
    let rows = spatial_trace(&cfg.net, a.size.height as usize, a.size.width as usize)
        .map_err(|e| Failure::Validation(e.to_string()))?;
    print!("{}", format_trace(&rows));
    let net = Network::<f32>::build(&cfg.net)?;
    println!("parameters: {}", net.param_count());
    Ok(())
}
