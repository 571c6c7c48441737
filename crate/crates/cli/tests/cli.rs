use std::path::Path;
use std::process::{Command, Output};

fn scate(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_scate")).args(args).output().expect("binary runs")
}

fn small_run_flags(out: &Path) -> Vec<String> {
    [
        "--output-dir",
        out.to_str().unwrap(),
        "--friedman-n",
        "160",
        "--n-trees",
        "12",
        "--max-depth",
        "5",
        "--p",
        "6",
        "--arch",
        "4x1",
        "--epochs",
        "5",
        "--seeds",
        "3",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect()
}

fn run_with(cmd: &str, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec![cmd.to_string()];
    args.extend(small_run_flags(out));
    args.extend(extra.iter().map(|s| s.to_string()));
    let refs: Vec<&str> = args.iter().map(|s| s.as_str()).collect();
    scate(&refs)
}

#[test]
fn pipeline_writes_artifacts_and_is_repeatable() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let out = run_with("pipeline", a.path(), &[]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(run_with("pipeline", b.path(), &[]).status.success());
    for f in ["report.json", "timing.json", "spectrum_seed3.csv", "loss_seed3.csv", "model_seed3.scte"] {
        let x = std::fs::read(a.path().join(f)).unwrap();
        assert!(!x.is_empty(), "{f}");
        if f != "timing.json" {
            assert_eq!(x, std::fs::read(b.path().join(f)).unwrap(), "{f} differs between runs");
        }
    }
    let report: serde_json::Value =
        serde_json::from_slice(&std::fs::read(a.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(report["metric"], "r2");
    let run = &report["runs"][0];
    for key in ["base_metric", "distilled_metric", "oracle_metric_at_p"] {
        assert!(run[key].as_f64().unwrap().is_finite(), "{key}");
    }
    assert!(run["sizes"]["distilled_bytes"].as_u64().unwrap() > 0);

    let inspect = scate(&["inspect-model", a.path().join("model_seed3.scte").to_str().unwrap()]);
    assert!(inspect.status.success());
    let info: serde_json::Value = serde_json::from_slice(&inspect.stdout).unwrap();
    assert_eq!(info["format"], "scte");
    assert_eq!(info["layer_dims"], serde_json::json!([10, 4, 6]));
}

#[test]
fn classification_reports_accuracy() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("cls.csv");
    let mut text = String::from("a,b,label\n");
    for i in 0..150 {
        let a = (i * 37 % 101) as f64 / 101.0;
        let b = (i * 53 % 97) as f64 / 97.0;
        text.push_str(&format!("{a},{b},{}\n", u8::from(a + b > 1.0)));
    }
    std::fs::write(&csv, text).unwrap();
    let out_dir = dir.path().join("out");
    let out = scate(&[
        "pipeline",
        "--data",
        csv.to_str().unwrap(),
        "--target",
        "label",
        "--task",
        "classification",
        "--output-dir",
        out_dir.to_str().unwrap(),
        "--n-trees",
        "10",
        "--p",
        "4",
        "--arch",
        "4x1",
        "--epochs",
        "5",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value =
        serde_json::from_slice(&std::fs::read(out_dir.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["metric"], "accuracy");
    let acc = report["runs"][0]["distilled_metric"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&acc));
}

#[test]
fn sweep_single_cell_and_na_budget() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_with(
        "sweep",
        dir.path(),
        &["--widths", "4", "--depths", "1", "--methods", "scate", "--budgets", "10,102400"],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let records = std::fs::read_to_string(dir.path().join("sweep_records.csv")).unwrap();
    assert_eq!(records.lines().count(), 2);
    let best = std::fs::read_to_string(dir.path().join("best_under_budget.csv")).unwrap();
    let rows: Vec<&str> = best.lines().skip(1).collect();
    assert_eq!(rows.len(), 2);
    assert!(rows[0].starts_with("10,scate,NA,"));
    assert!(rows[1].starts_with("102400,scate,w4_d1,"));
    assert!(dir.path().join("pareto.csv").exists());
    assert!(dir.path().join("best_per_seed.csv").exists());
}

#[test]
fn spectrum_and_bench() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_with("spectrum", dir.path(), &["--top", "20"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(dir.path().join("spectrum.csv")).unwrap();
    let data_rows = csv.lines().filter(|l| l.chars().next().is_some_and(|c| c.is_ascii_digit())).count();
    assert!(data_rows <= 20 && data_rows > 0);
    let fit: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("spectrum_fit.json")).unwrap()).unwrap();
    assert!(fit["fit"]["c2_satisfied"].is_boolean());

    let out = run_with(
        "bench-time",
        dir.path(),
        &["--widths", "4", "--depths", "1", "--methods", "base,scate", "--repetitions", "3"],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let timing = std::fs::read_to_string(dir.path().join("timing.csv")).unwrap();
    let lines: Vec<&str> = timing.lines().collect();
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("base,") && lines[2].starts_with("scate,"));
    for l in &lines[1..] {
        let infer: f64 = l.split(',').nth(5).unwrap().parse().unwrap();
        assert!(infer.is_finite() && infer > 0.0);
    }
}

#[test]
fn gen_data_then_csv_pipeline_input() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("f.csv");
    let out = scate(&["gen-data", "--n", "50", "--d", "6", "--seed", "2", "--out", csv.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(&csv).unwrap();
    assert_eq!(text.lines().count(), 51);
    assert_eq!(text.lines().next().unwrap().split(',').count(), 7);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = scate(&["pipeline", "--output-dir", dir.path().to_str().unwrap(), "--budgets", "200,100"]);
    assert_eq!(out.status.code(), Some(2));
    let out = scate(&["pipeline", "--p", "0"]);
    assert_eq!(out.status.code(), Some(2));
    let cfg = dir.path().join("bad.json");
    std::fs::write(&cfg, "{ not json").unwrap();
    let out = scate(&["sweep", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let missing = dir.path().join("missing.csv");
    let out = scate(&[
        "pipeline",
        "--data",
        missing.to_str().unwrap(),
        "--target",
        "y",
        "--output-dir",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1));
    let junk = dir.path().join("junk.bin");
    std::fs::write(&junk, b"nope").unwrap();
    assert_eq!(scate(&["inspect-model", junk.to_str().unwrap()]).status.code(), Some(1));
}

#[test]
fn config_file_with_flag_override() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    let out_dir = dir.path().join("out");
    std::fs::write(
        &cfg,
        serde_json::json!({
            "dataset": {"kind": "friedman1", "n": 150, "d": 10, "noise_sd": 1.0, "seed": null},
            "base": {"kind": "gbm", "n_trees": 8, "max_depth": 3},
            "p": 5,
            "arch": [4, 1],
            "epochs": 3,
            "seeds": [1],
            "output_dir": out_dir,
        })
        .to_string(),
    )
    .unwrap();
    let out = scate(&["pipeline", "--config", cfg.to_str().unwrap(), "--p", "4"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value =
        serde_json::from_slice(&std::fs::read(out_dir.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["p"], 4);
    assert!(report["base_model"].as_str().unwrap().starts_with("gbm"));
    let echo: serde_json::Value =
        serde_json::from_slice(&std::fs::read(out_dir.join("config.json")).unwrap()).unwrap();
    assert_eq!(echo["p"], 4);
}
