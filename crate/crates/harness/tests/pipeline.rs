//! Library-level pipeline: persisted reports against live runs, and the
//! reading of a VANILLA score heatmap.

use polyforget::config::ExperimentConfig;
use polyforget::heatmap::{scale_position, Midpoint};
use polyforget::matrix::LabeledMatrix;
use polyforget::orders::experiment_orders;
use polyforget::report::{compute_metrics, write_languages};
use polyforget::runner::{execute, RunSpec};
use polyforget::workload::Workload;
use polyforget_core::metrics::transfer_report;
use polyforget_core::regimes::Regime;
use polyforget_core::tasks::SplitSizes;

fn small() -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.num_orders = 2;
    cfg.model.hidden_dim = 8;
    cfg.data.synthetic.num_languages = 4;
    cfg.data.sizes = SplitSizes {
        train: 40,
        valid: 10,
        test: 10,
    };
    cfg.full.max_epochs = 2;
    cfg.lora.max_epochs = 2;
    cfg.full.patience = 1;
    cfg.lora.patience = 1;
    cfg
}

#[test]
fn persisted_report_matches_live_runs() {
    let cfg = small();
    let work = Workload::build(&cfg).unwrap();
    let orders = experiment_orders(&cfg, &work).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().join("sweep");
    write_languages(&root_created(&root), &work.languages()).unwrap();
    let mut live = Vec::new();
    for (k, order) in orders.iter().enumerate() {
        let spec = RunSpec {
            regime: Regime::SharedLora,
            order: order.clone(),
            seed: cfg.run_seed(k),
        };
        let out = execute(&cfg, &work, &spec, 1, Some(&spec.dir(&root))).unwrap();
        live.push(out.log.r_matrix().unwrap());
    }
    let want = transfer_report("SHARED_LORA", &live, cfg.max_hop, &work.vitality()).unwrap();
    let overview = compute_metrics(&root, &dir.path().join("m"), cfg.max_hop).unwrap();
    assert_eq!(overview.transfer["SHARED_LORA"], want);
}

fn root_created(p: &std::path::Path) -> std::path::PathBuf {
    std::fs::create_dir_all(p).unwrap();
    p.to_path_buf()
}

fn triangle_means(m: &LabeledMatrix) -> (f64, f64) {
    let present: Vec<f64> = m.present().collect();
    let lo = present.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = present.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let n = m.rows.len();
    let col_mean = |j: usize| (0..n).filter_map(|i| m.values[i][j]).sum::<f64>() / n as f64;
    let (mut lower, mut upper) = (Vec::new(), Vec::new());
    for i in 0..n {
        for j in 0..n {
            let t = scale_position(m.values[i][j].unwrap(), lo, col_mean(j), hi);
            match i.cmp(&j) {
                std::cmp::Ordering::Greater => lower.push(t),
                std::cmp::Ordering::Less => upper.push(t),
                std::cmp::Ordering::Equal => {}
            }
        }
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    (mean(&lower), mean(&upper))
}

/// Desk-default VANILLA run: scores on already-seen languages (below the
/// diagonal) sit closer to the top of the scale than zero-shot scores.
#[test]
fn vanilla_heatmap_lower_left_is_cooler() {
    let cfg = ExperimentConfig::default();
    assert_eq!("column-mean".parse::<Midpoint>().unwrap(), Midpoint::ColumnMean);
    let work = Workload::build(&cfg).unwrap();
    let order = experiment_orders(&cfg, &work).unwrap().remove(0);
    let spec = RunSpec {
        regime: Regime::Vanilla,
        order: order.clone(),
        seed: cfg.run_seed(0),
    };
    let out = execute(&cfg, &work, &spec, 1, None).unwrap();
    let r = out.log.r_matrix().unwrap();
    let m = LabeledMatrix::dense(r.langs().to_vec(), r.langs().to_vec(), r.rows()).unwrap();
    let (lower, upper) = triangle_means(&m);
    assert!(lower > upper, "lower-left {lower:.3} vs upper-right {upper:.3}");
}
