//! Training runs and their on-disk layout.
//!
//! A run is one (regime, order, seed) triple and owns the directory
//! `{root}/{regime}/order{k}_seed{s}/`:
//!
//! ```text
//! runlog.jsonl   one step record per line
//! R.csv          test F1, rows = training steps (or per-language models)
//! summary.json   final scores and trainable-parameter counts
//! checkpoints/   model tensors and adapter sets
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use polyforget_core::lora::AdapterSet;
use polyforget_core::model::{count_trainable, ModelParams, ParamCount};
use polyforget_core::regimes::{
    run_mono, train_multi, train_nonshared_lora, train_shared_lora, train_vanilla, LanguageOrder, Regime, RunLog,
};
use polyforget_core::tasks::TaskDataset;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::error::{HarnessError, Result};
use crate::matrix::LabeledMatrix;
use crate::workload::Workload;

pub const RUNLOG: &str = "runlog.jsonl";
pub const MATRIX: &str = "R.csv";
pub const SUMMARY: &str = "summary.json";

#[derive(Clone, Debug, PartialEq)]
pub struct RunSpec {
    pub regime: Regime,
    pub order: LanguageOrder,
    pub seed: u64,
}

pub fn regime_dir(regime: Regime) -> String {
    regime.as_str().to_ascii_lowercase()
}

impl RunSpec {
    pub fn dir(&self, root: &Path) -> PathBuf {
        root.join(regime_dir(self.regime))
            .join(format!("order{}_seed{}", self.order.order_id, self.seed))
    }

    pub fn label(&self) -> String {
        format!("{} order {} seed {}", self.regime, self.order.order_id, self.seed)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub regime: Regime,
    pub order_id: usize,
    pub seed: u64,
    pub order: Vec<String>,
    /// Each language scored by the model that is final for it: the last
    /// step's model for sequential regimes, its own model for MONO and
    /// NON_SHARED_LORA, the pooled model for MULTI.
    pub final_f1: BTreeMap<String, f64>,
    pub final_mean_f1: f64,
    /// Separately trained models or adapter sets.
    pub units: usize,
    pub trainable_per_unit: ParamCount,
    pub base_fingerprint: String,
}

#[derive(Clone, Debug)]
pub struct RunOutput {
    pub log: RunLog,
    pub summary: RunSummary,
}

fn final_scores(regime: Regime, log: &RunLog) -> BTreeMap<String, f64> {
    match regime {
        Regime::Mono | Regime::NonSharedLora => log
            .records
            .iter()
            .map(|r| (r.lang.clone(), r.test_f1.get(&r.lang).copied().unwrap_or(0.0)))
            .collect(),
        _ => log.records.last().map(|r| r.test_f1.clone()).unwrap_or_default(),
    }
}

fn save_model(p: &ModelParams, dir: &Path, regime: Regime, seed: u64) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    p.save(dir, regime.as_str(), seed)?;
    Ok(())
}

fn save_adapters(set: &AdapterSet, dir: &Path, task: &str) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    set.save(dir, Some(task))?;
    Ok(())
}

/// Trains one run; writes its artifacts under `out` when given.
pub fn execute(
    cfg: &ExperimentConfig,
    work: &Workload,
    spec: &RunSpec,
    workers: usize,
    out: Option<&Path>,
) -> Result<RunOutput> {
    let rc = cfg.regime_config(spec.regime, spec.seed);
    let arranged: Vec<TaskDataset> = spec.order.arrange(&work.datasets)?.into_iter().cloned().collect();
    let ckpt = out.map(|d| d.join("checkpoints"));
    let (mut log, units, count, fingerprint) = match spec.regime {
        Regime::Multi => {
            // Pooled training ignores the order.
            let r = train_multi(&work.datasets, &work.model, &rc)?;
            if let Some(c) = &ckpt {
                save_model(&r.params, &c.join("model"), spec.regime, spec.seed)?;
                if let Some(a) = &r.adapters {
                    save_adapters(a, &c.join("adapters"), "all")?;
                }
            }
            let mut log = RunLog::default();
            log.push(r.record);
            let count = count_trainable(&r.params, r.adapters.as_ref(), spec.regime);
            (log, 1, count, r.params.fingerprint())
        }
        Regime::Mono => {
            let r = run_mono(&arranged, &work.model, &rc, workers)?;
            if let Some(c) = &ckpt {
                for (lang, p) in &r.models {
                    save_model(p, &c.join("models").join(lang), spec.regime, spec.seed)?;
                }
            }
            let first = r.models.values().next().expect("at least one language");
            let count = count_trainable(first, None, spec.regime);
            let fp = r.models.values().map(|m| m.fingerprint()).collect::<Vec<_>>().join(",");
            (r.log, r.models.len(), count, fp)
        }
        Regime::Vanilla | Regime::SharedLora => {
            let r = if spec.regime == Regime::Vanilla {
                train_vanilla(&arranged, &spec.order, &work.model, &rc)?
            } else {
                train_shared_lora(&arranged, &spec.order, &work.model, &rc)?
            };
            if let Some(c) = &ckpt {
                let name = if r.adapters.is_some() { "base" } else { "model" };
                save_model(&r.params, &c.join(name), spec.regime, spec.seed)?;
                if let Some(a) = &r.adapters {
                    save_adapters(a, &c.join("adapters"), "shared")?;
                }
            }
            let count = count_trainable(&r.params, r.adapters.as_ref(), spec.regime);
            (r.log, 1, count, r.base_fingerprint_after)
        }
        Regime::NonSharedLora => {
            let r = train_nonshared_lora(&arranged, &work.model, &rc, workers)?;
            if let Some(c) = &ckpt {
                save_model(&r.base, &c.join("base"), spec.regime, spec.seed)?;
                for (lang, set) in &r.sets {
                    save_adapters(set, &c.join("adapters").join(lang), lang)?;
                }
            }
            let first = r.sets.values().next().expect("at least one language");
            let count = count_trainable(&r.base, Some(first), spec.regime);
            (r.log, r.sets.len(), count, r.base_fingerprint_after)
        }
    };
    for r in &mut log.records {
        r.order_id = spec.order.order_id;
    }
    let final_f1 = final_scores(spec.regime, &log);
    let summary = RunSummary {
        regime: spec.regime,
        order_id: spec.order.order_id,
        seed: spec.seed,
        order: spec.order.langs.clone(),
        final_mean_f1: final_f1.values().sum::<f64>() / final_f1.len() as f64,
        final_f1,
        units,
        trainable_per_unit: count,
        base_fingerprint: fingerprint,
    };
    if let Some(dir) = out {
        persist(dir, &spec.order, &log, &summary)?;
    }
    Ok(RunOutput { log, summary })
}

/// Scores as a grid: one row per record, columns in training order.
pub fn score_matrix(order: &LanguageOrder, log: &RunLog) -> Result<LabeledMatrix> {
    let rows = log.records.iter().map(|r| r.lang.clone()).collect();
    let values = log
        .records
        .iter()
        .map(|r| order.langs.iter().map(|l| r.test_f1.get(l).copied()).collect())
        .collect();
    LabeledMatrix::new(rows, order.langs.clone(), values)
}

fn persist(dir: &Path, order: &LanguageOrder, log: &RunLog, summary: &RunSummary) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    log.write(&dir.join(RUNLOG))?;
    score_matrix(order, log)?.write(&dir.join(MATRIX))?;
    let path = dir.join(SUMMARY);
    let text = serde_json::to_string_pretty(summary).expect("summary serializes") + "\n";
    std::fs::write(&path, text).map_err(|e| HarnessError::io(&path, e))
}

pub fn read_summary(dir: &Path) -> Result<RunSummary> {
    let path = dir.join(SUMMARY);
    let text = std::fs::read_to_string(&path).map_err(|e| HarnessError::io(&path, e))?;
    serde_json::from_str(&text).map_err(|e| HarnessError::data(&path, e))
}

/// Every (order, regime) run of an experiment.
pub fn plan(cfg: &ExperimentConfig, orders: &[LanguageOrder]) -> Vec<RunSpec> {
    orders
        .iter()
        .enumerate()
        .flat_map(|(k, o)| {
            cfg.regimes.iter().map(move |&regime| RunSpec {
                regime,
                order: o.clone(),
                seed: cfg.run_seed(k),
            })
        })
        .collect()
}

/// Runs every spec on up to `workers` threads. Failures do not stop the
/// other runs; they are returned together as a partial-sweep error.
pub fn sweep(
    cfg: &ExperimentConfig,
    work: &Workload,
    specs: &[RunSpec],
    workers: usize,
    out: Option<&Path>,
) -> Result<Vec<RunOutput>> {
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<Result<RunOutput>>>> = Mutex::new((0..specs.len()).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..workers.clamp(1, specs.len().max(1)) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= specs.len() {
                    break;
                }
                let dir = out.map(|o| specs[i].dir(o));
                let r = execute(cfg, work, &specs[i], 1, dir.as_deref());
                results.lock().expect("no poisoned worker")[i] = Some(r);
            });
        }
    });
    let mut done = Vec::new();
    let mut failed = Vec::new();
    for (spec, r) in specs.iter().zip(results.into_inner().expect("no poisoned worker")) {
        match r.expect("every run was attempted") {
            Ok(o) => done.push(o),
            Err(e) => failed.push(format!("{}: {e}", spec.label())),
        }
    }
    if !failed.is_empty() {
        return Err(HarnessError::Partial {
            total: specs.len(),
            failed,
        });
    }
    Ok(done)
}
