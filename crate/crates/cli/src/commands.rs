use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use ulmv_core::arch::{calibrate, checkpoint, Model, PUBLISHED_PARAM_COUNT};
use ulmv_core::data::{
    check_files, make_synthetic_dataset, read_manifest, samples, InputSpec, Normalization, PreprocessConfig, RoiThresholds,
    Split, SynthConfig, MANIFEST_FILE, NORMALIZATION_FILE,
};
use ulmv_core::eval::{evaluate_split, write_predictions, write_report};
use ulmv_core::gradcheck::{check_model, check_ops, CheckResult};
use ulmv_core::ssm::{selective_scan_parallel, selective_scan_sequential, ScanInputs};
use ulmv_core::train::{train_loop, TrainData};
use ulmv_core::{Error, Result, Tensor};

use crate::config::{RunConfig, RUN_CONFIG_FILE};
use crate::{BenchArgs, CountArgs, EvalArgs, GradcheckArgs, PreprocessArgs, SynthArgs, TrainArgs};

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingFiles(vec![path.to_path_buf()]),
        _ => Error::InvalidArgument(format!("cannot read {}: {e}", path.display())),
    })
}

fn floats<const N: usize>(what: &str, s: &str) -> Result<[f64; N]> {
    let v: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::InvalidArgument(format!("{what}: {s:?} is not a comma-separated list of numbers")))?;
    v.try_into().map_err(|_| Error::InvalidArgument(format!("{what}: expected {N} values, got {s:?}")))
}

fn split_counts(records: &[ulmv_core::data::TileRecord]) -> String {
    Split::ASSIGNED
        .iter()
        .map(|&s| format!("{s} {}", records.iter().filter(|r| r.split == s).count()))
        .collect::<Vec<_>>()
        .join(", ")
}

pub fn synth(a: &SynthArgs) -> Result<ExitCode> {
    let cfg = SynthConfig { n_per_class: a.per_class, seed: a.seed, size: a.size, ..SynthConfig::default() };
    let m = make_synthetic_dataset(&a.out, &cfg)?;
    println!("wrote {} tiles to {} ({})", m.records.len(), a.out.display(), split_counts(&m.records));
    Ok(ExitCode::SUCCESS)
}

pub fn preprocess(a: &PreprocessArgs) -> Result<ExitCode> {
    let [white, saturation, min_tissue] = floats::<3>("--roi-thresholds", &a.roi_thresholds)?;
    if !(0.0..=255.0).contains(&white) || white.fract() != 0.0 {
        return Err(Error::InvalidArgument(format!("white threshold {white} must be an integer in 0..=255")));
    }
    let cfg = PreprocessConfig {
        tile: a.tile,
        resize: a.resize,
        roi: RoiThresholds { white: white as u8, saturation, min_tissue },
        ratios: floats::<3>("--ratios", &a.ratios)?,
        seed: a.seed,
        grouping: a.grouping,
    };
    let s = ulmv_core::data::preprocess(&a.input, &a.out, &cfg)?;
    println!("sources {}, kept {}, discarded {}", s.sources, s.kept, s.discarded);
    println!("{}", split_counts(&s.manifest.records));
    println!("manifest {}", a.out.join(MANIFEST_FILE).display());
    Ok(ExitCode::SUCCESS)
}

fn input_spec(data: &Path, size: [usize; 2]) -> Result<InputSpec> {
    let path = data.join(NORMALIZATION_FILE);
    if !path.is_file() {
        return Err(Error::MissingFiles(vec![path]));
    }
    Ok(InputSpec { norm: Normalization::load(&path)?, size })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or("-".into(), |v| format!("{v:.6}"))
}

pub fn train(a: &TrainArgs) -> Result<ExitCode> {
    let text = a.config.as_deref().map(read_text).transpose()?;
    let mut cfg = RunConfig::resolve(a.preset.as_deref(), text.as_deref())?;
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(d) = &a.data {
        cfg.data = Some(d.clone());
    }
    if let Some(o) = &a.out {
        cfg.out = Some(o.clone());
    }
    let data = cfg
        .data
        .clone()
        .ok_or_else(|| Error::InvalidArgument("no data directory: pass --data or set data= in the config".into()))?;
    let out = cfg.out.clone().unwrap_or_else(|| PathBuf::from("runs").join(&cfg.preset));
    cfg.out = Some(out.clone());
    let train_cfg = cfg.train_config()?;
    cfg.model.validate()?;

    let manifest = data.join(MANIFEST_FILE);
    if !manifest.is_file() {
        return Err(Error::MissingFiles(vec![manifest]));
    }
    let records = read_manifest(&manifest)?;
    let spec = input_spec(&data, cfg.model.input_size)?;
    let td = TrainData { train: samples(&data, &records, Split::Train), val: samples(&data, &records, Split::Val), spec };
    check_files(&[td.train.clone(), td.val.clone()].concat())?;

    std::fs::create_dir_all(&out).map_err(|e| Error::InvalidArgument(format!("cannot create {}: {e}", out.display())))?;
    let echo = cfg.to_text();
    let echo_path = out.join(RUN_CONFIG_FILE);
    std::fs::write(&echo_path, &echo).map_err(|e| Error::InvalidArgument(format!("cannot write {}: {e}", echo_path.display())))?;
    print!("{echo}");
    println!("train {} tiles, val {} tiles", td.train.len(), td.val.len());

    let mut model = Model::new(cfg.model.clone(), cfg.seed)?;
    let outcome = train_loop(&mut model, &td, &train_cfg, Some(&out))?;
    println!("{:>5} {:>10} {:>10} {:>8} {:>10}", "epoch", "train_loss", "val_loss", "val_acc", "lr");
    for r in &outcome.history {
        println!("{:>5} {:>10.6} {:>10} {:>8} {:>10.3e}", r.epoch, r.train_loss, fmt_opt(r.val_loss), fmt_opt(r.val_acc), r.lr);
    }
    println!("best epoch {}; checkpoints in {}", outcome.best_epoch, out.display());
    Ok(ExitCode::SUCCESS)
}

pub fn eval(a: &EvalArgs) -> Result<ExitCode> {
    let split: Split = a.split.parse()?;
    if split == Split::Unassigned {
        return Err(Error::InvalidArgument("choose one of train, val, test".into()));
    }
    if !a.checkpoint.is_file() {
        return Err(Error::MissingFiles(vec![a.checkpoint.clone()]));
    }
    let model = checkpoint::load(&a.checkpoint)?;
    let manifest = a.data.join(MANIFEST_FILE);
    if !manifest.is_file() {
        return Err(Error::MissingFiles(vec![manifest]));
    }
    let records = read_manifest(&manifest)?;
    let spec = input_spec(&a.data, model.config.input_size)?;
    let (report, preds) = evaluate_split(&model, &a.data, &records, split, &spec, a.threshold, a.batch_size)?;
    let out = match &a.out {
        Some(o) => o.clone(),
        None => a.checkpoint.parent().map(Path::to_path_buf).unwrap_or_default(),
    };
    if !out.as_os_str().is_empty() {
        std::fs::create_dir_all(&out).map_err(|e| Error::InvalidArgument(format!("cannot create {}: {e}", out.display())))?;
    }
    write_report(&out.join(format!("{split}_report.json")), &report)?;
    write_predictions(&out.join(format!("{split}_predictions.csv")), &preds)?;
    println!("{}", report.to_json());
    Ok(ExitCode::SUCCESS)
}

pub fn count_params(a: &CountArgs) -> Result<ExitCode> {
    let text = a.config.as_deref().map(read_text).transpose()?;
    let cfg = RunConfig::resolve(None, text.as_deref())?;
    let model = Model::new(cfg.model.clone(), 0)?;
    let b = model.count_parameters();
    if a.breakdown {
        for (name, n) in &b.rows {
            println!("{name:<8} {n:>8}");
        }
    }
    let delta = b.total as i64 - PUBLISHED_PARAM_COUNT as i64;
    println!("total {}", b.total);
    println!("published {PUBLISHED_PARAM_COUNT} delta {delta:+}");
    if a.calibrate {
        let mut grid = calibrate::grid(&cfg.model)?;
        grid.sort_by_key(|c| c.delta().abs());
        println!("closest configurations:");
        for c in grid.iter().take(8) {
            let m = &c.config;
            println!(
                "{:>7} {:+6}  scab={:?} bidirectional={} d_state={} expand={} conv_k={} dt_rank={} head_hidden={}",
                c.params,
                c.delta(),
                m.scab_shared,
                m.bidirectional,
                m.d_state,
                m.expand,
                m.conv_k,
                m.dt_rank.map_or("auto".into(), |r| r.to_string()),
                m.head_hidden
            );
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn parse_perturb(s: &str) -> Result<(String, f64)> {
    let (op, f) = s.split_once('=').unwrap_or((s, "1.01"));
    let f = f.parse::<f64>().map_err(|_| Error::InvalidArgument(format!("--perturb {s:?}: expected OP=FACTOR")))?;
    Ok((op.to_string(), f))
}

fn print_check(r: &CheckResult) {
    println!(
        "{} {:<22} rel {:.2e}  tol {:.0e}  entries {}{}",
        if r.passed { "PASS" } else { "FAIL" },
        r.name,
        r.rel_error,
        r.tolerance,
        r.entries,
        if r.skipped > 0 { format!(" (skipped {} at kinks)", r.skipped) } else { String::new() }
    );
}

pub fn gradcheck(a: &GradcheckArgs) -> Result<ExitCode> {
    let perturb = a.perturb.as_deref().map(parse_perturb).transpose()?;
    let p = perturb.as_ref().map(|(op, f)| (op.as_str(), *f));
    let mut results = check_ops(a.seed, p)?;
    for r in &results {
        print_check(r);
    }
    if !a.ops_only {
        let r = check_model(a.seed, p)?;
        print_check(&r);
        results.push(r);
    }
    let passed = results.iter().filter(|r| r.passed).count();
    println!("{passed}/{} checks passed", results.len());
    if let Some(path) = &a.json {
        let text = serde_json::to_string_pretty(&results).map_err(Error::from)?;
        std::fs::write(path, text + "\n").map_err(|e| Error::InvalidArgument(format!("cannot write {}: {e}", path.display())))?;
    }
    Ok(if passed == results.len() { ExitCode::SUCCESS } else { ExitCode::from(1) })
}

/// Largest elementwise difference tolerated between the two scans.
const BENCH_TOLERANCE: f64 = 1e-10;

pub fn scan_bench(a: &BenchArgs) -> Result<ExitCode> {
    if a.lengths.is_empty() || a.lengths.contains(&0) || a.d_inner == 0 || a.d_state == 0 {
        return Err(Error::InvalidArgument("lengths and widths must be positive".into()));
    }
    let (d, n) = (a.d_inner, a.d_state);
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let a_mat = Tensor::rand_uniform(vec![d, n], -2.0, -0.05, &mut rng);
    let skip = Tensor::rand_uniform(vec![d], -1.0, 1.0, &mut rng);
    let best = |f: &dyn Fn() -> Result<Tensor>| -> Result<(f64, Tensor)> {
        let mut out = None;
        let mut t_best = f64::INFINITY;
        for _ in 0..a.repeats.max(1) {
            let t0 = Instant::now();
            let y = f()?;
            t_best = t_best.min(t0.elapsed().as_secs_f64() * 1e3);
            out = Some(y);
        }
        Ok((t_best, out.expect("at least one repeat")))
    };
    println!("{:>8} {:>12} {:>12} {:>14}", "L", "seq_ms", "par_ms", "max_abs_diff");
    let mut ok = true;
    for &l in &a.lengths {
        let inputs = ScanInputs {
            x: Tensor::rand_uniform(vec![1, l, d], -1.0, 1.0, &mut rng),
            delta: Tensor::rand_uniform(vec![1, l, d], 0.01, 1.0, &mut rng),
            b: Tensor::rand_uniform(vec![1, l, n], -1.0, 1.0, &mut rng),
            c: Tensor::rand_uniform(vec![1, l, n], -1.0, 1.0, &mut rng),
        };
        let (ts, ys) = best(&|| selective_scan_sequential(&inputs, &a_mat, &skip))?;
        let (tp, yp) = best(&|| selective_scan_parallel(&inputs, &a_mat, &skip))?;
        let diff = ys.max_abs_diff(&yp);
        ok &= diff < BENCH_TOLERANCE;
        println!("{l:>8} {ts:>12.3} {tp:>12.3} {diff:>14.3e}");
    }
    if !ok {
        eprintln!("parallel and sequential scans disagree beyond {BENCH_TOLERANCE:e}");
    }
    Ok(if ok { ExitCode::SUCCESS } else { ExitCode::from(1) })
}
