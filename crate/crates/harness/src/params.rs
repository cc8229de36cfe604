//! Trainable-parameter accounting per regime and rank, with F1 columns
//! filled from a finished sweep.

use std::collections::BTreeMap;
use std::fmt::Write;
use std::path::Path;

use polyforget_core::lora::{AdapterSet, DEFAULT_TARGETS};
use polyforget_core::metrics::group_by_vitality;
use polyforget_core::model::{count_trainable, ModelConfig, ModelParams};
use polyforget_core::numeric::Rng;
use polyforget_core::regimes::Regime;
use polyforget_core::tasks::Vitality;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::error::Result;
use crate::report::{read_languages, stored_runs};
use crate::runner::{regime_dir, RUNLOG};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamRow {
    pub regime: Regime,
    pub rank: Option<usize>,
    /// Separately trained models or adapter sets.
    pub units: usize,
    pub base: usize,
    pub adapter: usize,
    pub head: usize,
    pub per_unit: usize,
    pub total: usize,
    pub mean_f1: Option<f64>,
    pub low_f1: Option<f64>,
    pub mid_f1: Option<f64>,
    pub high_f1: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamsReport {
    pub rows: Vec<ParamRow>,
    /// Expected run directories without a run log.
    pub missing: Vec<String>,
}

/// Parameter counts for all five regimes over `num_languages` languages.
pub fn count_rows(cfg: &ExperimentConfig, model: &ModelConfig, num_languages: usize) -> Result<Vec<ParamRow>> {
    let mut base = ModelParams::init(model, &mut Rng::new(0))?;
    let full = count_trainable(&base, None, Regime::Multi);
    base.freeze_all();
    let mut rows = Vec::new();
    for regime in Regime::ALL {
        let units = if matches!(regime, Regime::Mono | Regime::NonSharedLora) {
            num_languages
        } else {
            1
        };
        let counts: Vec<(Option<usize>, _)> = if regime.uses_lora() {
            cfg.lora
                .report_ranks()
                .into_iter()
                .map(|r| {
                    let s = cfg.lora.settings(r);
                    let set = AdapterSet::init(
                        &mut Rng::new(0),
                        &base,
                        &DEFAULT_TARGETS,
                        s.rank,
                        s.alpha,
                        s.dropout,
                        s.train_head,
                    )?;
                    Ok((Some(r), count_trainable(&base, Some(&set), regime)))
                })
                .collect::<Result<_>>()?
        } else {
            vec![(None, full)]
        };
        for (rank, c) in counts {
            rows.push(ParamRow {
                regime,
                rank,
                units,
                base: c.base,
                adapter: c.adapter,
                head: c.head,
                per_unit: c.total(),
                total: units * c.total(),
                mean_f1: None,
                low_f1: None,
                mid_f1: None,
                high_f1: None,
            });
        }
    }
    Ok(rows)
}

/// Fills F1 columns from the runs under `root` and lists expected runs that
/// are absent. Only the trained rank of LoRA regimes receives scores.
pub fn attach_scores(cfg: &ExperimentConfig, root: &Path, report: &mut ParamsReport) -> Result<()> {
    let vitality: BTreeMap<String, Vitality> = read_languages(root)
        .map(|l| l.into_iter().map(|l| (l.lang_id, l.vitality)).collect())
        .unwrap_or_default();
    for &regime in &cfg.regimes {
        for k in 0..cfg.num_orders {
            let dir = root
                .join(regime_dir(regime))
                .join(format!("order{k}_seed{}", cfg.run_seed(k)));
            if !dir.join(RUNLOG).is_file() {
                report.missing.push(dir.display().to_string());
            }
        }
        let runs = stored_runs(root, regime)?;
        if runs.is_empty() {
            continue;
        }
        let mean_f1 = runs.iter().map(|r| r.summary.final_mean_f1).sum::<f64>() / runs.len() as f64;
        let mut per_lang: BTreeMap<String, Vec<f64>> = BTreeMap::new();
        for r in &runs {
            for (l, v) in &r.summary.final_f1 {
                per_lang.entry(l.clone()).or_default().push(*v);
            }
        }
        let scores = per_lang
            .into_iter()
            .map(|(l, v)| (l, v.iter().sum::<f64>() / v.len() as f64))
            .collect();
        let groups = group_by_vitality(&scores, &vitality);
        let trained_rank = regime.uses_lora().then_some(cfg.lora.rank);
        for row in report
            .rows
            .iter_mut()
            .filter(|r| r.regime == regime && r.rank == trained_rank)
        {
            row.mean_f1 = Some(mean_f1);
            row.low_f1 = groups.low;
            row.mid_f1 = groups.mid;
            row.high_f1 = groups.high;
        }
    }
    Ok(())
}

const HEADER: [&str; 12] = [
    "regime", "rank", "units", "base", "adapter", "head", "per_unit", "total", "mean_f1", "low_f1", "mid_f1", "high_f1",
];

fn cells(r: &ParamRow, empty: &str) -> Vec<String> {
    let opt = |v: Option<f64>| v.map_or_else(|| empty.to_string(), |x| format!("{:.2}", 100.0 * x));
    vec![
        r.regime.as_str().to_string(),
        r.rank.map_or_else(|| empty.to_string(), |k| k.to_string()),
        r.units.to_string(),
        r.base.to_string(),
        r.adapter.to_string(),
        r.head.to_string(),
        r.per_unit.to_string(),
        r.total.to_string(),
        opt(r.mean_f1),
        opt(r.low_f1),
        opt(r.mid_f1),
        opt(r.high_f1),
    ]
}

impl ParamsReport {
    /// F1 values are percentages; absent values are empty cells.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(HEADER).expect("in-memory write");
        for r in &self.rows {
            w.write_record(cells(r, "")).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8")
    }

    /// Aligned table; absent values render as an em dash.
    pub fn to_text(&self) -> String {
        let body: Vec<Vec<String>> = self.rows.iter().map(|r| cells(r, "—")).collect();
        let widths: Vec<usize> = (0..HEADER.len())
            .map(|j| {
                body.iter()
                    .map(|r| r[j].chars().count())
                    .chain([HEADER[j].len()])
                    .max()
                    .unwrap_or(0)
            })
            .collect();
        let mut s = String::new();
        let line = |s: &mut String, row: Vec<String>| {
            let padded: Vec<String> = row
                .iter()
                .zip(&widths)
                .enumerate()
                .map(|(j, (c, w))| {
                    let pad = " ".repeat(w - c.chars().count());
                    if j == 0 {
                        format!("{c}{pad}")
                    } else {
                        format!("{pad}{c}")
                    }
                })
                .collect();
            let _ = writeln!(s, "{}", padded.join("  ").trim_end());
        };
        line(&mut s, HEADER.iter().map(|h| h.to_string()).collect());
        for r in body {
            line(&mut s, r);
        }
        if !self.missing.is_empty() {
            let _ = writeln!(s, "\nmissing runs:");
            for m in &self.missing {
                let _ = writeln!(s, "  {m}");
            }
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model() -> ModelConfig {
        ModelConfig {
            vocab_size: 50,
            hidden_dim: 8,
            max_seq_len: 6,
            num_labels: 5,
            dropout_rate: 0.1,
        }
    }

    #[test]
    fn structural_relations() {
        let mut cfg = ExperimentConfig::default();
        cfg.lora.ranks = vec![1, 2, 4];
        let rows = count_rows(&cfg, &model(), 3).unwrap();
        let get = |r: Regime, k: Option<usize>| rows.iter().find(|x| x.regime == r && x.rank == k).unwrap().clone();
        let multi = get(Regime::Multi, None);
        assert_eq!(get(Regime::Mono, None).total, 3 * multi.total);
        for k in [1, 2, 4] {
            let shared = get(Regime::SharedLora, Some(k));
            assert_eq!(shared.adapter, 2 * 2 * k * 8);
            assert_eq!(shared.head, 8 * 5 + 5);
            assert_eq!(get(Regime::NonSharedLora, Some(k)).total, 3 * shared.total);
        }
    }

    #[test]
    fn empty_values_render_as_dash() {
        let cfg = ExperimentConfig::default();
        let report = ParamsReport {
            rows: count_rows(&cfg, &model(), 2).unwrap(),
            missing: vec!["x/order0_seed0".into()],
        };
        let text = report.to_text();
        assert!(text.lines().nth(1).unwrap().contains('—'));
        assert!(text.contains("missing runs"));
        let csv = report.to_csv();
        assert_eq!(csv.lines().count(), 1 + report.rows.len());
        assert!(csv.lines().nth(1).unwrap().ends_with(",,,,"));
    }
}
