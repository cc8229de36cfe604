//! Command-line contract: exit codes, dry runs, idempotent metrics.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use polyforget::config::ExperimentConfig;
use polyforget_core::tasks::SplitSizes;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_polyforget"))
}

fn run(args: &[&str], paths: &[(&str, &Path)]) -> Output {
    let mut c = bin();
    c.args(args);
    for (flag, p) in paths {
        c.arg(flag).arg(p);
    }
    c.output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn tiny_config(dir: &Path) -> PathBuf {
    let mut cfg = ExperimentConfig::default();
    cfg.num_orders = 2;
    cfg.model.hidden_dim = 8;
    cfg.data.synthetic.num_languages = 3;
    cfg.data.sizes = SplitSizes {
        train: 30,
        valid: 8,
        test: 8,
    };
    cfg.full.max_epochs = 2;
    cfg.lora.max_epochs = 2;
    cfg.full.patience = 1;
    cfg.lora.patience = 1;
    let path = dir.join("tiny.toml");
    std::fs::write(&path, cfg.to_toml()).unwrap();
    path
}

fn files(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    if !root.exists() {
        return out;
    }
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(code(&run(&["frobnicate"], &[])), 2);
    assert_eq!(code(&run(&["train", "--no-such-flag"], &[])), 2);
}

#[test]
fn bad_config_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "no_such_key = 1\n").unwrap();
    let o = run(&["generate"], &[("--config", &cfg), ("--out", &dir.path().join("g"))]);
    assert_eq!(code(&o), 3, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn missing_artifacts_exit_4() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&run(&["metrics"], &[("--dir", dir.path())])), 4);
    let absent = dir.path().join("absent.csv");
    assert_eq!(
        code(&run(
            &["heatmap"],
            &[("--input", &absent), ("--out", &dir.path().join("x.svg"))]
        )),
        4
    );
    assert_eq!(
        code(&run(&["generate"], &[("--config", &absent), ("--out", dir.path())])),
        4
    );
}

#[test]
fn ragged_csv_exits_5() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("m.csv");
    std::fs::write(&csv, ",a,b\nx,0.1,0.2\ny,0.3\n").unwrap();
    let o = run(&["heatmap"], &[("--input", &csv), ("--out", &dir.path().join("m.svg"))]);
    assert_eq!(code(&o), 5);
    assert!(!dir.path().join("m.svg").exists());
}

#[test]
fn params_on_incomplete_sweep_exits_6() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let o = run(&["params"], &[("--config", &cfg), ("--dir", dir.path())]);
    assert_eq!(code(&o), 6);
    assert!(String::from_utf8_lossy(&o.stdout).contains("missing runs"));
}

#[test]
fn dry_runs_write_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let out = dir.path().join("out");
    for args in [
        &["sweep", "--dry-run"][..],
        &["train", "--regime", "vanilla", "--dry-run"],
        &["generate", "--dry-run"],
        &["params", "--dry-run"],
    ] {
        let o = run(args, &[("--config", &cfg), ("--out", &out)]);
        assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
        assert!(!out.exists(), "{args:?} wrote output");
    }
    let plan = String::from_utf8_lossy(&run(&["sweep", "--dry-run"], &[("--config", &cfg), ("--out", &out)]).stdout)
        .into_owned();
    assert_eq!(plan.lines().count(), 2 * 5);
}

#[test]
fn heatmap_of_three_by_three() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("d.csv");
    std::fs::write(&csv, ",a,b,c\na,0.1,-0.2,0.3\nb,0.0,0.5,-0.4\nc,0.2,0.1,0.9\n").unwrap();
    let svg = dir.path().join("d.svg");
    assert!(run(&["heatmap"], &[("--input", &csv), ("--out", &svg)])
        .status
        .success());
    let text = std::fs::read_to_string(&svg).unwrap();
    assert_eq!(text.matches(r#"class="cell""#).count(), 9);
    assert!(text.contains("linearGradient"));
}

#[test]
fn sweep_metrics_params_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let out = dir.path().join("sweep");
    let o = run(&["sweep", "--workers", "2"], &[("--config", &cfg), ("--out", &out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let runs = files(&out);

    let metrics = dir.path().join("metrics");
    assert!(run(&["metrics"], &[("--dir", &out), ("--out", &metrics)])
        .status
        .success());
    let first = files(&metrics);
    assert!(first.contains_key(Path::new("vanilla/report.json")));
    assert!(first.contains_key(Path::new("vanilla/order1_seed1_R.csv")));
    assert!(first.contains_key(Path::new("multi/final.json")));
    assert!(run(&["metrics"], &[("--dir", &out), ("--out", &metrics)])
        .status
        .success());
    assert_eq!(first, files(&metrics), "metrics output changed on rerun");
    assert_eq!(runs, files(&out), "metrics touched the sweep directory");

    let r = metrics.join("vanilla/order0_seed0_R.csv");
    let svg = dir.path().join("r.svg");
    assert!(run(&["heatmap"], &[("--input", &r), ("--out", &svg)]).status.success());

    let table = dir.path().join("table");
    let o = run(&["params"], &[("--dir", &out), ("--out", &table)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(table.join("params.csv")).unwrap();
    let vanilla = csv.lines().find(|l| l.starts_with("VANILLA,")).unwrap();
    let cells: Vec<&str> = vanilla.split(',').collect();
    assert!(!cells[8].is_empty(), "trained regime has no mean F1: {vanilla}");
    // Every synthetic language is mid-vitality, so the other groups are empty.
    assert_eq!((cells[9], cells[11]), ("", ""));
}
