use std::path::Path;
use std::process::{Command, Output};

use ulmv_core::data::{write_png, Image};

fn ulmv(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ulmv")).args(args).output().expect("spawn ulmv")
}

fn s(p: &Path) -> String {
    p.display().to_string()
}

fn text(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn err(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write_source(dir: &Path, class: &str, name: &str, tissue: [bool; 4]) {
    let mut img = Image::filled(128, 128, [255, 255, 255]);
    for (i, &t) in tissue.iter().enumerate() {
        if !t {
            continue;
        }
        for y in 0..64 {
            for x in 0..64 {
                let v = ((x * 7 + y * 3 + i * 11) % 40) as u8;
                img.set_pixel((i % 2) * 64 + x, (i / 2) * 64 + y, [170 + v, 50 + v, 140 + v]);
            }
        }
    }
    std::fs::create_dir_all(dir.join(class)).unwrap();
    write_png(&dir.join(class).join(format!("{name}.png")), &img).unwrap();
}

#[test]
fn preprocess_writes_one_row_per_tile() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("in");
    write_source(&input, "control", "a", [true, false, true, true]);
    write_source(&input, "control", "b", [true, true, true, true]);
    write_source(&input, "case", "c", [false, false, true, true]);
    let mut manifests = Vec::new();
    for run in ["o1", "o2"] {
        let out = dir.path().join(run);
        let o = ulmv(&["preprocess", "--input", &s(&input), "--out", &s(&out), "--tile", "64", "--resize", "32", "--grouping", "tile"]);
        assert!(o.status.success(), "{}", err(&o));
        assert!(text(&o).contains("kept 9, discarded 3"), "{}", text(&o));
        let m = std::fs::read_to_string(out.join("manifest.csv")).unwrap();
        let kept = m.lines().skip(1).filter(|l| l.split(',').nth(6) == Some("true")).count();
        assert_eq!(kept, 9);
        assert_eq!(m.lines().count(), 13);
        manifests.push(m);
    }
    assert_eq!(manifests[0], manifests[1]);
}

#[test]
fn preprocess_rejects_bad_input() {
    let dir = tempfile::tempdir().unwrap();
    let o = ulmv(&["preprocess", "--input", &s(dir.path()), "--out", &s(&dir.path().join("o"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(err(&o).contains("no PNG images"), "{}", err(&o));
    let o = ulmv(&["preprocess", "--input", &s(dir.path()), "--out", "x", "--roi-thresholds", "1,2"]);
    assert_eq!(o.status.code(), Some(2));
    let o = ulmv(&["preprocess", "--input", &s(dir.path()), "--out", "x", "--grouping", "slide"]);
    assert_eq!(o.status.code(), Some(2));
}

fn tiny_run(data: &Path, out: &Path, seed: &str) -> Output {
    let cfg = out.with_extension("cfg");
    std::fs::write(&cfg, "# short run\nepochs=2\nbatch_size=4\n").unwrap();
    ulmv(&["train", "--preset", "smoke", "--config", &s(&cfg), "--data", &s(data), "--out", &s(out), "--seed", seed])
}

#[test]
fn train_then_eval() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let o = ulmv(&["synth", "--out", &s(&data), "--per-class", "4", "--seed", "1"]);
    assert!(o.status.success(), "{}", err(&o));

    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for run in [&a, &b] {
        let o = tiny_run(&data, run, "5");
        assert!(o.status.success(), "{}", err(&o));
    }
    let history = std::fs::read(a.join("history.jsonl")).unwrap();
    assert_eq!(history, std::fs::read(b.join("history.jsonl")).unwrap());
    assert_eq!(String::from_utf8(history).unwrap().lines().count(), 2);
    let echo = std::fs::read_to_string(a.join("run_config.txt")).unwrap();
    for line in ["preset=smoke", "epochs=2", "batch_size=4", "seed=5", "input_size=64,64", "d_state=16"] {
        assert!(echo.lines().any(|l| l == line), "{line} missing from\n{echo}");
    }

    let ckpt = a.join("swa.ckpt");
    let out = dir.path().join("eval");
    let o = ulmv(&["eval", "--checkpoint", &s(&ckpt), "--data", &s(&data), "--split", "train", "--out", &s(&out)]);
    assert!(o.status.success(), "{}", err(&o));
    let report: serde_json::Value = serde_json::from_str(&text(&o)).unwrap();
    let mut keys: Vec<&str> = report.as_object().unwrap().keys().map(String::as_str).collect();
    keys.sort_unstable();
    assert_eq!(keys, ["accuracy", "degenerate_flags", "f1", "fn", "fp", "n", "precision", "recall", "split", "threshold", "tn", "tp"]);
    let written: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("train_report.json")).unwrap()).unwrap();
    assert_eq!(written, report);
    let preds = std::fs::read_to_string(out.join("train_predictions.csv")).unwrap();
    assert_eq!(preds.lines().count() as u64, report["n"].as_u64().unwrap() + 1);

    let mut bytes = std::fs::read(&ckpt).unwrap();
    bytes[..4].copy_from_slice(b"JUNK");
    let bad = dir.path().join("bad.ckpt");
    std::fs::write(&bad, bytes).unwrap();
    let o = ulmv(&["eval", "--checkpoint", &s(&bad), "--data", &s(&data)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(err(&o).contains("bad magic"), "{}", err(&o));
}

#[test]
fn train_input_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let o = ulmv(&["train", "--preset", "smoke", "--data", &s(dir.path()), "--out", &s(&dir.path().join("r"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(err(&o).contains("manifest.csv"), "{}", err(&o));
    let cfg = dir.path().join("c.txt");
    std::fs::write(&cfg, "epochs=3\nlearning_rate=0.1\n").unwrap();
    let o = ulmv(&["train", "--config", &s(&cfg), "--data", &s(dir.path())]);
    assert_eq!(o.status.code(), Some(2));
    assert!(err(&o).contains("learning_rate"), "{}", err(&o));
    let o = ulmv(&["train", "--preset", "huge", "--data", &s(dir.path())]);
    assert_eq!(o.status.code(), Some(2));
    let o = ulmv(&["train", "--config", &s(&dir.path().join("absent.txt"))]);
    assert_eq!(o.status.code(), Some(2));
}

fn rows(out: &str) -> Vec<(String, usize)> {
    out.lines()
        .filter_map(|l| {
            let mut p = l.split_whitespace();
            let (name, v) = (p.next()?, p.next()?.parse().ok()?);
            p.next().is_none().then(|| (name.to_string(), v))
        })
        .collect()
}

#[test]
fn count_params_reports_rows_and_delta() {
    let o = ulmv(&["count-params", "--breakdown"]);
    assert!(o.status.success());
    let r = rows(&text(&o));
    let total = r.iter().find(|(n, _)| n == "total").unwrap().1;
    assert_eq!(total, 49_227);
    assert_eq!(r.iter().filter(|(n, _)| n != "total").map(|(_, v)| v).sum::<usize>(), total);
    assert!(text(&o).contains("published 49641 delta -414"));

    let dir = tempfile::tempdir().unwrap();
    let mut by_width = Vec::new();
    for w in [8, 16] {
        let cfg = dir.path().join(format!("h{w}.txt"));
        std::fs::write(&cfg, format!("head_hidden={w}\n")).unwrap();
        let o = ulmv(&["count-params", "--breakdown", "--config", &s(&cfg)]);
        assert!(o.status.success());
        by_width.push(rows(&text(&o)));
    }
    for (a, b) in by_width[0].iter().zip(&by_width[1]) {
        assert_eq!(a.0, b.0);
        assert_eq!(a.1 == b.1, a.0 != "head" && a.0 != "total", "{a:?} {b:?}");
    }

    let o = ulmv(&["count-params", "--calibrate"]);
    assert!(o.status.success());
    assert!(text(&o).lines().any(|l| l.trim_start().starts_with("49227   -414")), "{}", text(&o));
}

#[test]
fn gradcheck_lists_every_op_and_catches_perturbation() {
    let o = ulmv(&["gradcheck", "--ops-only", "--seed", "2"]);
    assert!(o.status.success(), "{}", text(&o));
    let out = text(&o);
    let names: Vec<&str> = out.lines().filter_map(|l| l.strip_prefix("PASS ")).filter_map(|l| l.split_whitespace().next()).collect();
    assert_eq!(names, ulmv_core::gradcheck::registered_ops());

    let o = ulmv(&["gradcheck", "--ops-only", "--perturb", "sigmoid=1.01"]);
    assert_eq!(o.status.code(), Some(1));
    let out = text(&o);
    let fails: Vec<&str> = out.lines().filter(|l| l.starts_with("FAIL")).map(|l| l.split_whitespace().nth(1).unwrap()).collect();
    assert_eq!(fails, ["sigmoid"]);
}

#[test]
fn scan_bench_one_row_per_length() {
    let o = ulmv(&["scan-bench", "--lengths", "1,17,256", "--repeats", "1"]);
    assert!(o.status.success(), "{}", err(&o));
    let out = text(&o);
    let body: Vec<Vec<&str>> = out.lines().skip(1).map(|l| l.split_whitespace().collect()).collect();
    assert_eq!(body.iter().map(|r| r[0]).collect::<Vec<_>>(), ["1", "17", "256"]);
    for r in &body {
        assert!(r[3].parse::<f64>().unwrap() < 1e-10);
    }
    assert_eq!(ulmv(&["scan-bench", "--lengths", "0"]).status.code(), Some(2));
}

#[test]
fn usage_errors_exit_two() {
    assert_eq!(ulmv(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(ulmv(&["eval"]).status.code(), Some(2));
    assert_eq!(ulmv(&["--help"]).status.code(), Some(0));
}
