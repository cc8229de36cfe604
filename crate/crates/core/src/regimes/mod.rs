//! Training regimes and the sequential driver that fills evaluation matrices.

mod config;
mod train;

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use config::{LoraSettings, Regime, RegimeConfig};
pub use train::{
    evaluate, fit, run_mono, train_mono, train_multi, train_nonshared_lora, train_shared_lora, train_vanilla,
    FitOutcome, MonoRun, MultiOutcome, NonSharedOutcome, SequentialOutcome,
};

use crate::error::{Error, Result};
use crate::metrics::RMatrix;
use crate::tasks::TaskDataset;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LanguageOrder {
    pub order_id: usize,
    pub langs: Vec<String>,
}

impl LanguageOrder {
    pub fn new(order_id: usize, langs: Vec<String>) -> Self {
        Self { order_id, langs }
    }

    /// The datasets in this order; the order must be a permutation of them.
    pub fn arrange<'a>(&self, datasets: &'a [TaskDataset]) -> Result<Vec<&'a TaskDataset>> {
        let by_id: BTreeMap<&str, &TaskDataset> = datasets.iter().map(|d| (d.lang_id(), d)).collect();
        if by_id.len() != datasets.len() {
            return Err(Error::InvalidInput("duplicate lang_id among datasets".into()));
        }
        let mut seen = std::collections::BTreeSet::new();
        let mut out = Vec::with_capacity(self.langs.len());
        for l in &self.langs {
            if !seen.insert(l.as_str()) {
                return Err(Error::InvalidInput(format!(
                    "order {} lists `{l}` twice",
                    self.order_id
                )));
            }
            let d = by_id
                .get(l.as_str())
                .ok_or_else(|| Error::InvalidInput(format!("order {} names unknown language `{l}`", self.order_id)))?;
            out.push(*d);
        }
        if out.len() != datasets.len() {
            return Err(Error::InvalidInput(format!(
                "order {} covers {} of {} languages",
                self.order_id,
                out.len(),
                datasets.len()
            )));
        }
        Ok(out)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EarlyStop {
    /// Epoch (1-based) after which training stops, if it stops early.
    pub stopped_after: Option<usize>,
    /// Epoch (1-based) with the best score; parameters are restored from it.
    pub best_epoch: usize,
}

/// Incremental early-stopping state. Only strict improvements reset the
/// patience counter.
#[derive(Clone, Debug)]
pub struct EarlyStopper {
    patience: usize,
    epoch: usize,
    best: f64,
    best_epoch: usize,
}

impl EarlyStopper {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            epoch: 0,
            best: f64::NEG_INFINITY,
            best_epoch: 0,
        }
    }

    /// Records one epoch's score; returns `(improved, stop)`.
    pub fn observe(&mut self, score: f64) -> (bool, bool) {
        self.epoch += 1;
        let improved = score > self.best;
        if improved {
            self.best = score;
            self.best_epoch = self.epoch;
        }
        (improved, self.epoch - self.best_epoch >= self.patience)
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }
}

/// Replays a validation trajectory through the stopping rule.
pub fn early_stop(trajectory: &[f64], patience: usize) -> Result<EarlyStop> {
    if patience == 0 {
        return Err(Error::InvalidConfig("patience must be ≥ 1".into()));
    }
    let mut s = EarlyStopper::new(patience);
    for (e, &v) in trajectory.iter().enumerate() {
        if s.observe(v).1 {
            return Ok(EarlyStop {
                stopped_after: Some(e + 1),
                best_epoch: s.best_epoch(),
            });
        }
    }
    Ok(EarlyStop {
        stopped_after: None,
        best_epoch: s.best_epoch(),
    })
}

/// One completed training step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub regime: Regime,
    pub order_id: usize,
    pub seed: u64,
    pub step: usize,
    /// Language trained in this step (`all` for pooled training).
    pub lang: String,
    pub test_f1: BTreeMap<String, f64>,
    pub valid_f1: Vec<f64>,
    pub epochs: usize,
    pub early_stopped: bool,
    pub best_epoch: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub epoch_test_f1: Vec<BTreeMap<String, f64>>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunLog {
    pub records: Vec<StepRecord>,
}

impl RunLog {
    pub fn push(&mut self, r: StepRecord) {
        self.records.push(r);
    }

    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r)?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(self.to_jsonl()?.as_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn from_jsonl(text: &str) -> Result<Self> {
        let mut records = Vec::new();
        for (n, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let r: StepRecord = serde_json::from_str(line).map_err(|e| Error::Line {
                line: n + 1,
                message: e.to_string(),
            })?;
            if r.test_f1.values().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(Error::Line {
                    line: n + 1,
                    message: "F1 outside [0,1]".into(),
                });
            }
            records.push(r);
        }
        Ok(Self { records })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_jsonl(&text)
    }

    /// Languages in training order.
    pub fn langs(&self) -> Vec<String> {
        self.records.iter().map(|r| r.lang.clone()).collect()
    }

    /// The evaluation matrix of a sequential run: row `i` is the F1 vector
    /// after step `i`, columns follow the training order.
    pub fn r_matrix(&self) -> Result<RMatrix> {
        let langs = self.langs();
        let order_id = self.records.first().map_or(0, |r| r.order_id);
        let mut rows = Vec::with_capacity(langs.len());
        for (i, r) in self.records.iter().enumerate() {
            if r.step != i {
                return Err(Error::InvalidInput(format!("record {i} has step {}", r.step)));
            }
            if r.test_f1.len() != langs.len() {
                return Err(Error::InvalidInput(format!(
                    "step {i} has {} scores for {} languages",
                    r.test_f1.len(),
                    langs.len()
                )));
            }
            let row = langs
                .iter()
                .map(|l| {
                    r.test_f1
                        .get(l)
                        .copied()
                        .ok_or_else(|| Error::InvalidInput(format!("step {i} has no score for `{l}`")))
                })
                .collect::<Result<Vec<_>>>()?;
            rows.push(row);
        }
        RMatrix::new(langs, rows, order_id)
    }

    /// Mean test F1 of the last record.
    pub fn final_mean_f1(&self) -> Option<f64> {
        let last = self.records.last()?;
        Some(last.test_f1.values().sum::<f64>() / last.test_f1.len() as f64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn early_stop_examples() {
        let e = early_stop(&[0.1, 0.2, 0.3, 0.4], 2).unwrap();
        assert_eq!(
            e,
            EarlyStop {
                stopped_after: None,
                best_epoch: 4
            }
        );
        let e = early_stop(&[0.5; 10], 3).unwrap();
        assert_eq!(
            e,
            EarlyStop {
                stopped_after: Some(4),
                best_epoch: 1
            }
        );
        let e = early_stop(&[0.5, 0.7, 0.6, 0.6, 0.6], 3).unwrap();
        assert_eq!(
            e,
            EarlyStop {
                stopped_after: Some(5),
                best_epoch: 2
            }
        );
        assert!(early_stop(&[0.5], 0).is_err());
    }

    fn record(step: usize, lang: &str, scores: &[(&str, f64)]) -> StepRecord {
        StepRecord {
            regime: Regime::Vanilla,
            order_id: 2,
            seed: 1,
            step,
            lang: lang.into(),
            test_f1: scores.iter().map(|(l, v)| (l.to_string(), *v)).collect(),
            valid_f1: vec![0.5],
            epochs: 1,
            early_stopped: false,
            best_epoch: 1,
            epoch_test_f1: Vec::new(),
        }
    }

    #[test]
    fn run_log_round_trip_and_matrix() {
        let mut log = RunLog::default();
        log.push(record(0, "b", &[("a", 0.1), ("b", 0.9)]));
        log.push(record(1, "a", &[("a", 0.8), ("b", 0.7)]));
        let back = RunLog::from_jsonl(&log.to_jsonl().unwrap()).unwrap();
        assert_eq!(back, log);
        let r = back.r_matrix().unwrap();
        assert_eq!(r.langs(), ["b", "a"]);
        assert_eq!(r.rows(), &[vec![0.9, 0.1], vec![0.7, 0.8]]);
    }

    #[test]
    fn order_must_be_a_permutation() {
        let spec = |id: &str| crate::tasks::LanguageSpec {
            lang_id: id.into(),
            script_id: 0,
            family_id: 0,
            vitality: crate::tasks::Vitality::Low,
            overlap: 0.0,
            seed: 0,
        };
        let ds = |id: &str| TaskDataset {
            spec: spec(id),
            train: vec![],
            valid: vec![],
            test: vec![],
            label_names: vec!["O".into(), "B-x".into(), "I-x".into()],
        };
        let data = vec![ds("a"), ds("b")];
        assert!(LanguageOrder::new(0, vec!["b".into(), "a".into()])
            .arrange(&data)
            .is_ok());
        assert!(LanguageOrder::new(0, vec!["a".into()]).arrange(&data).is_err());
        assert!(LanguageOrder::new(0, vec!["a".into(), "a".into()])
            .arrange(&data)
            .is_err());
        assert!(LanguageOrder::new(0, vec!["a".into(), "c".into()])
            .arrange(&data)
            .is_err());
    }
}
