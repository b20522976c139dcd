//! End-to-end tests of the `adaptmix` binary.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};

fn adaptmix(args: &[&str], envs: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_adaptmix"));
    cmd.args(args).env_remove("ADAPTMIX_SEED");
    for (k, v) in envs {
        cmd.env(k, v);
    }
    cmd.output().unwrap()
}

fn quad_config() -> Value {
    json!({
        "schema_version": 1,
        "suite": { "quadratic": {
            "name": "quad-small", "dim": 4, "hard": [true, false, false],
            "easy_center_scale": 0.3, "hard_center_scale": 2.0,
            "easy_eigen_range": [1.0, 2.0], "hard_eigen_range": [0.2, 0.6],
            "noise_scale": 0.05, "tokens_per_example": 8, "train_size": 50, "seed": 1
        }},
        "methods": ["adapt", "sft_uniform", "sft_proportional"],
        "budget_fractions": [0.5],
        "seeds": [0],
        "overrides": { "tasks_per_step": 3, "warmup_steps": 2, "peak_lr": 0.05 }
    })
}

fn lm_config() -> Value {
    json!({
        "schema_version": 1,
        "suite": { "synthetic": {
            "name": "lm-small", "sizes": [60, 60, 30], "difficulties": ["easy", "easy", "hard"],
            "vocab_size": 40, "min_len": 8, "max_len": 12, "seed": 0
        }},
        "model": { "vocab_size": 40, "embed_dim": 4, "hidden_dim": 4, "context_len": 16, "seed": 0 },
        "methods": ["adapt", "sft_uniform"],
        "budget_fractions": [0.2],
        "seeds": [0],
        "eval_examples": 4,
        "overrides": { "tasks_per_step": 3, "warmup_steps": 2 }
    })
}

fn write_config(dir: &Path, name: &str, cfg: &Value) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, serde_json::to_string_pretty(cfg).unwrap()).unwrap();
    p
}

fn files_with_ext(dir: &Path, ext: &str) -> Vec<PathBuf> {
    let mut acc = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else if p.extension().is_some_and(|e| e == ext) {
                acc.push(p);
            }
        }
    }
    acc.sort();
    acc
}

fn run_ok(args: &[&str]) -> Output {
    let out = adaptmix(args, &[]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    out
}

fn csv_rows(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let mut rdr = csv::Reader::from_path(path).unwrap();
    let headers = rdr.headers().unwrap().iter().map(String::from).collect();
    let rows = rdr
        .records()
        .map(|r| r.unwrap().iter().map(String::from).collect())
        .collect();
    (headers, rows)
}

#[test]
fn run_writes_one_record_per_cell_and_a_summary() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "quad.json", &quad_config());
    let out = dir.path().join("out");
    run_ok(&["--out", out.to_str().unwrap(), "run", cfg.to_str().unwrap()]);
    let records = files_with_ext(&out, "runlog");
    assert_eq!(records.len(), 3);
    assert!(records.iter().any(|p| p.ends_with("quad-small/0.5/adapt-seed0.runlog")));
    let (headers, rows) = csv_rows(&out.join("summary.csv"));
    assert_eq!(
        headers,
        [
            "suite",
            "method",
            "budget_fraction",
            "seed",
            "total_tokens",
            "final_mean_val_loss",
            "auc",
            "tokens_to_match",
            "mid_budget_loss",
            "final_n_eff",
            "final_entropy"
        ]
    );
    assert_eq!(rows.len(), 3);
    for line in fs::read_to_string(&records[0]).unwrap().lines() {
        serde_json::from_str::<Value>(line).unwrap();
    }
}

#[test]
fn unknown_method_names_the_field_and_fails() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = quad_config();
    cfg["methods"] = json!(["adapt", "sft_random"]);
    let path = write_config(dir.path(), "bad.json", &cfg);
    let out = adaptmix(
        &["--out", dir.path().to_str().unwrap(), "run", path.to_str().unwrap()],
        &[],
    );
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("/methods/1"), "{err}");
    assert!(files_with_ext(dir.path(), "runlog").is_empty());
}

#[test]
fn unknown_config_field_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = quad_config();
    cfg["overrides"]["meta"] = json!({ "temperature": 0.3 });
    let path = write_config(dir.path(), "bad.json", &cfg);
    let out = adaptmix(
        &["--out", dir.path().to_str().unwrap(), "run", path.to_str().unwrap()],
        &[],
    );
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("/overrides/meta"));
}

#[test]
fn bad_arguments_exit_with_usage_status() {
    let out = adaptmix(&["frobnicate"], &[]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn seed_environment_variable_overrides_the_grid() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "quad.json", &quad_config());
    let out = dir.path().join("out");
    let o = adaptmix(
        &["--out", out.to_str().unwrap(), "run", cfg.to_str().unwrap()],
        &[("ADAPTMIX_SEED", "7")],
    );
    assert!(o.status.success());
    let records = files_with_ext(&out, "runlog");
    assert_eq!(records.len(), 3);
    assert!(records.iter().all(|p| p.to_string_lossy().ends_with("-seed7.runlog")));
}

#[test]
fn repeated_runs_write_identical_records() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "lm.json", &lm_config());
    let strip = |p: &Path| {
        let text = fs::read_to_string(p).unwrap();
        let mut lines: Vec<String> = text.lines().map(String::from).collect();
        let mut h: Value = serde_json::from_str(&lines[0]).unwrap();
        h.as_object_mut().unwrap().remove("wall_clock_seconds");
        lines[0] = h.to_string();
        lines
    };
    let mut outputs = Vec::new();
    for (i, workers) in ["1", "3"].iter().enumerate() {
        let out = dir.path().join(format!("out{i}"));
        run_ok(&[
            "--workers",
            workers,
            "--out",
            out.to_str().unwrap(),
            "run",
            cfg.to_str().unwrap(),
        ]);
        outputs.push(
            files_with_ext(&out, "runlog")
                .iter()
                .map(|p| strip(p))
                .collect::<Vec<_>>(),
        );
    }
    assert_eq!(outputs[0].len(), 2);
    assert_eq!(outputs[0], outputs[1]);
}

#[test]
fn report_writes_tables_and_parseable_figures() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "quad.json", &quad_config());
    let runs = dir.path().join("runs");
    run_ok(&["--out", runs.to_str().unwrap(), "run", cfg.to_str().unwrap()]);
    let scores = dir.path().join("scores.csv");
    fs::write(&scores, "method,a,b,c\nadapt,1,2,3\nsft_uniform,1,3,2\n").unwrap();
    let o = run_ok(&["report", runs.to_str().unwrap(), "--scores", scores.to_str().unwrap()]);
    let listed = String::from_utf8_lossy(&o.stdout).lines().count();

    let report = runs.join("report").join("quad-small");
    let svgs = files_with_ext(&report, "svg");
    let csvs = files_with_ext(&report, "csv");
    assert_eq!(svgs.len(), 2);
    assert_eq!(csvs.len(), 2);
    assert_eq!(listed, 5);
    for svg in &svgs {
        let text = fs::read_to_string(svg).unwrap();
        let doc = roxmltree::Document::parse(&text).unwrap();
        assert_eq!(doc.root_element().tag_name().name(), "svg");
        let lines = doc.descendants().filter(|n| n.has_tag_name("polyline")).count();
        let name = svg.file_name().unwrap().to_string_lossy();
        if name.starts_with("loss-") {
            assert_eq!(lines, 3);
        } else {
            assert!(name.starts_with("mixture-"));
            assert_eq!(lines, 3);
        }
    }
    let (headers, rows) = csv_rows(&report.join("metrics_summary.csv"));
    assert_eq!(headers[0], "run_id");
    assert_eq!(rows.len(), 3);
    let (_, wins) = csv_rows(&runs.join("report").join("win_rates.csv"));
    assert_eq!(wins.len(), 2);
    let adapt_vs_sft = wins.iter().find(|r| r[0] == "adapt").unwrap();
    assert!((adapt_vs_sft[3].parse::<f64>().unwrap() - 2.0 / 3.0).abs() < 1e-12);
}

#[test]
fn report_separates_suites() {
    let dir = tempfile::tempdir().unwrap();
    let runs = dir.path().join("runs");
    for (name, cfg) in [("quad.json", quad_config()), ("lm.json", lm_config())] {
        let path = write_config(dir.path(), name, &cfg);
        run_ok(&["--out", runs.to_str().unwrap(), "run", path.to_str().unwrap()]);
    }
    let o = adaptmix(&["report", runs.to_str().unwrap()], &[]);
    assert!(o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("2 suites"));
    for suite in ["quad-small", "lm-small"] {
        let (_, rows) = csv_rows(&runs.join("report").join(suite).join("metrics_summary.csv"));
        assert_eq!(rows.len(), if suite == "lm-small" { 2 } else { 3 });
    }
}

#[test]
fn report_on_empty_directory_fails() {
    let dir = tempfile::tempdir().unwrap();
    let out = adaptmix(&["report", dir.path().to_str().unwrap()], &[]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("no .runlog"));
}

#[test]
fn entropy_ablation_writes_one_row_per_weight() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = lm_config();
    cfg["entropy_weights"] = json!([0.001, 0.0, 0.001]);
    cfg["overrides"]["meta"] = json!({ "probe_lr": 0.1, "meta_lr": 3.0 });
    let path = write_config(dir.path(), "lm.json", &cfg);
    let out = dir.path().join("out");
    run_ok(&["--out", out.to_str().unwrap(), "ablate-entropy", path.to_str().unwrap()]);
    let ablation = out.join("lm-small").join("ablate-entropy");
    let (headers, rows) = csv_rows(&ablation.join("entropy_ablation.csv"));
    assert_eq!(
        headers,
        ["lambda", "n_eff", "tokens_used_pct", "entropy", "final_mean_val_loss"]
    );
    assert_eq!(rows.len(), 3);
    assert_eq!(rows[0], rows[2]);
    assert_ne!(rows[0], rows[1]);
    assert_eq!(files_with_ext(&ablation, "runlog").len(), 3);
    let svg = fs::read_to_string(ablation.join("validation_loss.svg")).unwrap();
    let doc = roxmltree::Document::parse(&svg).unwrap();
    assert_eq!(doc.descendants().filter(|n| n.has_tag_name("polyline")).count(), 3);
}
