//! Transfer metrics computed from persisted run logs.
//!
//! Reads only; run directories are never modified.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use polyforget_core::metrics::{transfer_report, HopEntry, RMatrix, TransferReport};
use polyforget_core::regimes::{Regime, RunLog};
use polyforget_core::tasks::Vitality;
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};
use crate::matrix::LabeledMatrix;
use crate::runner::{read_summary, regime_dir, RunSummary, RUNLOG};
use crate::workload::LanguageInfo;

pub const LANGUAGES: &str = "languages.json";

#[derive(Clone, Debug)]
pub struct StoredRun {
    pub dir: PathBuf,
    pub order_id: usize,
    pub seed: u64,
    pub log: RunLog,
    pub summary: RunSummary,
}

fn parse_run_name(name: &str) -> Option<(usize, u64)> {
    let rest = name.strip_prefix("order")?;
    let (k, s) = rest.split_once("_seed")?;
    Some((k.parse().ok()?, s.parse().ok()?))
}

/// Completed runs of one regime under a sweep root, by (order, seed).
pub fn stored_runs(root: &Path, regime: Regime) -> Result<Vec<StoredRun>> {
    let dir = root.join(regime_dir(regime));
    if !dir.is_dir() {
        return Ok(Vec::new());
    }
    let mut runs = Vec::new();
    for entry in std::fs::read_dir(&dir).map_err(|e| HarnessError::io(&dir, e))? {
        let path = entry.map_err(|e| HarnessError::io(&dir, e))?.path();
        let Some((order_id, seed)) = path.file_name().and_then(|n| n.to_str()).and_then(parse_run_name) else {
            continue;
        };
        if !path.join(RUNLOG).is_file() {
            continue;
        }
        let log = RunLog::read(&path.join(RUNLOG)).map_err(|e| HarnessError::data(path.join(RUNLOG), e))?;
        let summary = read_summary(&path)?;
        runs.push(StoredRun {
            dir: path,
            order_id,
            seed,
            log,
            summary,
        });
    }
    runs.sort_by_key(|r| (r.order_id, r.seed));
    Ok(runs)
}

pub fn read_languages(root: &Path) -> Result<Vec<LanguageInfo>> {
    let path = root.join(LANGUAGES);
    let text = std::fs::read_to_string(&path).map_err(|e| HarnessError::io(&path, e))?;
    serde_json::from_str(&text).map_err(|e| HarnessError::data(&path, e))
}

pub fn write_languages(root: &Path, langs: &[LanguageInfo]) -> Result<()> {
    write_json(&root.join(LANGUAGES), &langs)
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("report types serialize") + "\n";
    std::fs::write(path, text).map_err(|e| HarnessError::io(path, e))
}

/// Final scores of a non-sequential regime averaged over runs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FinalScores {
    pub regime: String,
    pub num_runs: usize,
    pub final_mean_f1: f64,
    pub per_language: BTreeMap<String, f64>,
    pub per_run: Vec<f64>,
}

fn final_scores(regime: Regime, runs: &[StoredRun]) -> FinalScores {
    let mut per_language: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for r in runs {
        for (l, v) in &r.summary.final_f1 {
            per_language.entry(l.clone()).or_default().push(*v);
        }
    }
    let per_run: Vec<f64> = runs.iter().map(|r| r.summary.final_mean_f1).collect();
    FinalScores {
        regime: regime.as_str().to_string(),
        num_runs: runs.len(),
        final_mean_f1: per_run.iter().sum::<f64>() / per_run.len() as f64,
        per_language: per_language
            .into_iter()
            .map(|(l, v)| (l, v.iter().sum::<f64>() / v.len() as f64))
            .collect(),
        per_run,
    }
}

/// Hop-by-language grid of one per-language metric; undefined cells are empty.
pub fn hop_grid(entries: &[HopEntry], languages: &[String]) -> Result<LabeledMatrix> {
    let rows = entries.iter().map(|e| format!("h={}", e.hop)).collect();
    let values = entries
        .iter()
        .map(|e| languages.iter().map(|l| e.per_language.get(l).copied()).collect())
        .collect();
    LabeledMatrix::new(rows, languages.to_vec(), values)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Overview {
    pub transfer: BTreeMap<String, TransferReport>,
    pub final_scores: BTreeMap<String, FinalScores>,
}

/// Writes reports for every regime found under `root` into `out`:
///
/// ```text
/// overview.json
/// {regime}/report.json                     sequential regimes
/// {regime}/order{k}_seed{s}_R.csv          sequential regimes
/// {regime}/{mbt,mft,receiver_mbt,donor_mft}.csv
/// {regime}/final.json                      other regimes
/// ```
pub fn compute_metrics(root: &Path, out: &Path, max_hop: usize) -> Result<Overview> {
    let vitality: BTreeMap<String, Vitality> = match read_languages(root) {
        Ok(langs) => langs.into_iter().map(|l| (l.lang_id, l.vitality)).collect(),
        Err(HarnessError::Missing(_)) => BTreeMap::new(),
        Err(e) => return Err(e),
    };
    let mut overview = Overview::default();
    for regime in Regime::ALL {
        let runs = stored_runs(root, regime)?;
        if runs.is_empty() {
            continue;
        }
        let dir = out.join(regime_dir(regime));
        std::fs::create_dir_all(&dir).map_err(|e| HarnessError::io(&dir, e))?;
        if !regime.is_sequential() {
            let f = final_scores(regime, &runs);
            write_json(&dir.join("final.json"), &f)?;
            overview.final_scores.insert(regime.as_str().to_string(), f);
            continue;
        }
        let mut matrices = Vec::with_capacity(runs.len());
        for r in &runs {
            let m: RMatrix = r
                .log
                .r_matrix()
                .map_err(|e| HarnessError::data(r.dir.join(RUNLOG), e))?;
            LabeledMatrix::dense(m.langs().to_vec(), m.langs().to_vec(), m.rows())?
                .write(&dir.join(format!("order{}_seed{}_R.csv", r.order_id, r.seed)))?;
            matrices.push(m);
        }
        let report = transfer_report(regime.as_str(), &matrices, max_hop, &vitality)?;
        write_json(&dir.join("report.json"), &report)?;
        for (name, entries) in [
            ("mbt", &report.mbt),
            ("mft", &report.mft),
            ("receiver_mbt", &report.receiver_mbt),
            ("donor_mft", &report.donor_mft),
        ] {
            hop_grid(entries, &report.languages)?.write(&dir.join(format!("{name}.csv")))?;
        }
        overview
            .final_scores
            .insert(regime.as_str().to_string(), final_scores(regime, &runs));
        overview.transfer.insert(regime.as_str().to_string(), report);
    }
    if overview.transfer.is_empty() && overview.final_scores.is_empty() {
        return Err(HarnessError::Missing(root.join("<regime>/order*_seed*/").join(RUNLOG)));
    }
    write_json(&out.join("overview.json"), &overview)?;
    Ok(overview)
}
