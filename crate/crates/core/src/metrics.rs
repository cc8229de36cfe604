//! Span F1 and the transfer metrics computed from evaluation matrices.
//!
//! Conventions used throughout (all indices 0-based):
//!
//! * `R[i][j]` is test F1 on the j-th language of an order after finishing the
//!   i-th training step.
//! * `P_s = mean(R[s][0..=s])`, the average over languages seen so far.
//! * A language trained at step `i` has performance-shift sample
//!   `P_{i-1} - P_i` (positive means degradation), defined for `i ≥ 1`.
//! * `MFT_h` sample: `P_{i+h} - P_{i-1}`; `MBT_h` sample: `P_i - P_{i-h-1}`.
//!   Per-language values average the valid samples over orders and the
//!   aggregate averages over languages that have at least one.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tasks::{LabelSchema, Vitality};

/// A labelled span `(slot, start, end)` with `end` exclusive.
pub type Span = (usize, usize, usize);

/// Spans of a label sequence. An I- label that does not continue a span of
/// its own slot opens a new span, so predictions never need repair.
pub fn spans(labels: &[usize]) -> Vec<Span> {
    let mut out: Vec<Span> = Vec::new();
    let mut open = false;
    for (i, &l) in labels.iter().enumerate() {
        match LabelSchema::decode(l) {
            None => open = false,
            Some((slot, begin)) => {
                let continues = !begin && open && matches!(out.last(), Some(&(s, _, e)) if s == slot && e == i);
                if continues {
                    out.last_mut().expect("open span").2 = i + 1;
                } else {
                    out.push((slot, i, i + 1));
                }
                open = true;
            }
        }
    }
    out
}

/// Micro-averaged exact-match span F1 over a corpus. Two empty span sets
/// agree perfectly (F1 = 1).
pub fn f1(predictions: &[Vec<usize>], gold: &[Vec<usize>]) -> Result<f64> {
    if predictions.len() != gold.len() {
        return Err(Error::InvalidInput(format!(
            "{} predicted sequences for {} gold sequences",
            predictions.len(),
            gold.len()
        )));
    }
    let (mut tp, mut n_pred, mut n_gold) = (0usize, 0usize, 0usize);
    for (k, (p, g)) in predictions.iter().zip(gold).enumerate() {
        if p.len() != g.len() {
            return Err(Error::InvalidInput(format!(
                "sequence {k}: {} predicted labels for {} gold labels",
                p.len(),
                g.len()
            )));
        }
        let ps = spans(p);
        let gs = spans(g);
        tp += ps.iter().filter(|s| gs.contains(s)).count();
        n_pred += ps.len();
        n_gold += gs.len();
    }
    if n_pred == 0 && n_gold == 0 {
        return Ok(1.0);
    }
    if tp == 0 {
        return Ok(0.0);
    }
    let precision = tp as f64 / n_pred as f64;
    let recall = tp as f64 / n_gold as f64;
    Ok(2.0 * precision * recall / (precision + recall))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RMatrix {
    langs: Vec<String>,
    entries: Vec<Vec<f64>>,
    pub order_id: usize,
}

impl RMatrix {
    /// `langs[j]` names column j and the language trained at step j.
    pub fn new(langs: Vec<String>, entries: Vec<Vec<f64>>, order_id: usize) -> Result<Self> {
        let t = langs.len();
        if t == 0 {
            return Err(Error::InvalidInput("R matrix needs at least one language".into()));
        }
        if entries.len() != t || entries.iter().any(|r| r.len() != t) {
            return Err(Error::InvalidInput(format!("R matrix must be {t}×{t}")));
        }
        if let Some(v) = entries.iter().flatten().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidInput(format!("R entry {v} outside [0,1]")));
        }
        Ok(Self {
            langs,
            entries,
            order_id,
        })
    }

    pub fn size(&self) -> usize {
        self.langs.len()
    }

    pub fn langs(&self) -> &[String] {
        &self.langs
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.entries
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i][j]
    }

    pub fn step_of(&self, lang: &str) -> Option<usize> {
        self.langs.iter().position(|l| l == lang)
    }

    /// Running averages `P_s` over the languages seen through step `s`.
    pub fn running_average(&self) -> Vec<f64> {
        self.entries
            .iter()
            .enumerate()
            .map(|(s, row)| row[..=s].iter().sum::<f64>() / (s + 1) as f64)
            .collect()
    }
}

fn require_two(r: &RMatrix, what: &str) -> Result<usize> {
    let t = r.size();
    if t < 2 {
        return Err(Error::InvalidInput(format!("{what} needs T ≥ 2, got T = {t}")));
    }
    Ok(t)
}

/// Average zero-shot score on languages not yet trained.
pub fn cft(r: &RMatrix) -> Result<f64> {
    let t = require_two(r, "CFT")?;
    let total: f64 = (0..t - 1)
        .map(|i| r.entries[i][i + 1..].iter().sum::<f64>() / (t - 1 - i) as f64)
        .sum();
    Ok(total / (t - 1) as f64)
}

/// Final-model score minus just-trained score, averaged over all but the last
/// language. Negative under forgetting.
pub fn cbt(r: &RMatrix) -> Result<f64> {
    let t = require_two(r, "CBT")?;
    let total: f64 = (0..t - 1).map(|i| r.entries[t - 1][i] - r.entries[i][i]).sum();
    Ok(total / (t - 1) as f64)
}

/// Shift samples and their mean for one language.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LanguageShift {
    pub samples: Vec<f64>,
    /// `None` when the language was trained first in every order.
    pub mean: Option<f64>,
}

fn check_same_languages(matrices: &[RMatrix]) -> Result<Vec<String>> {
    let first = matrices
        .first()
        .ok_or_else(|| Error::InvalidInput("no evaluation matrices".into()))?;
    let mut langs = first.langs.clone();
    langs.sort();
    for m in &matrices[1..] {
        let mut other = m.langs.clone();
        other.sort();
        if other != langs {
            let missing: Vec<&String> = langs.iter().filter(|l| !other.contains(l)).collect();
            return Err(Error::InvalidInput(format!(
                "order {} does not cover the same languages (missing {missing:?})",
                m.order_id
            )));
        }
    }
    Ok(langs)
}

fn mean(xs: &[f64]) -> Option<f64> {
    (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
}

/// Per-language average performance shift over orders.
pub fn performance_shift(matrices: &[RMatrix]) -> Result<BTreeMap<String, LanguageShift>> {
    let langs = check_same_languages(matrices)?;
    let mut out = BTreeMap::new();
    for lang in langs {
        let mut samples = Vec::new();
        for m in matrices {
            let i = m.step_of(&lang).expect("checked");
            if i >= 1 {
                let p = m.running_average();
                samples.push(p[i - 1] - p[i]);
            }
        }
        let mean = mean(&samples);
        out.insert(lang, LanguageShift { samples, mean });
    }
    Ok(out)
}

/// One hop of a multi-hop metric.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HopResult {
    pub hop: usize,
    pub aggregate: f64,
    pub per_language: BTreeMap<String, f64>,
    /// Languages with no valid step pair in any order.
    pub excluded: Vec<String>,
}

fn hop_metric(
    matrices: &[RMatrix],
    hop: usize,
    name: &str,
    sample: impl Fn(&RMatrix, &[f64], usize) -> Option<f64>,
) -> Result<HopResult> {
    let langs = check_same_languages(matrices)?;
    let mut per_language = BTreeMap::new();
    let mut excluded = Vec::new();
    for lang in langs {
        let samples: Vec<f64> = matrices
            .iter()
            .filter_map(|m| {
                let p = m.running_average();
                sample(m, &p, m.step_of(&lang).expect("checked"))
            })
            .collect();
        match mean(&samples) {
            Some(v) => {
                per_language.insert(lang, v);
            }
            None => excluded.push(lang),
        }
    }
    let values: Vec<f64> = per_language.values().copied().collect();
    let Some(aggregate) = mean(&values) else {
        let t = matrices[0].size();
        return Err(Error::InvalidInput(format!(
            "{name} at hop {hop}: no language has a valid step pair with T = {t}"
        )));
    };
    Ok(HopResult {
        hop,
        aggregate,
        per_language,
        excluded,
    })
}

/// Multi-hop forward transfer, `P_{i+h} - P_{i-1}`.
pub fn mft(matrices: &[RMatrix], hop: usize) -> Result<HopResult> {
    if hop == 0 {
        return Err(Error::InvalidInput("MFT needs hop ≥ 1".into()));
    }
    hop_metric(matrices, hop, "MFT", |m, p, i| {
        (i >= 1 && i + hop < m.size()).then(|| p[i + hop] - p[i - 1])
    })
}

/// Multi-hop backward transfer, `P_i - P_{i-h-1}`.
pub fn mbt(matrices: &[RMatrix], hop: usize) -> Result<HopResult> {
    hop_metric(matrices, hop, "MBT", |_, p, i| (i > hop).then(|| p[i] - p[i - hop - 1]))
}

/// Receiver view: change in the language's own score caused by the step
/// `h` after it was trained, `R[i+h][ℓ] - R[i+h-1][ℓ]`.
pub fn receiver_mbt(matrices: &[RMatrix], hop: usize) -> Result<HopResult> {
    hop_metric(matrices, hop, "receiver MBT", |m, _, i| {
        let s = i + hop;
        (s >= 1 && s < m.size()).then(|| m.entries[s][i] - m.entries[s - 1][i])
    })
}

/// Donor view: change in the running average at offset `h` after the
/// language was trained, `P_{i+h} - P_{i+h-1}`.
pub fn donor_mft(matrices: &[RMatrix], hop: usize) -> Result<HopResult> {
    hop_metric(matrices, hop, "donor MFT", |m, p, i| {
        let s = i + hop;
        (s >= 1 && s < m.size()).then(|| p[s] - p[s - 1])
    })
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GroupMeans {
    pub low: Option<f64>,
    pub mid: Option<f64>,
    pub high: Option<f64>,
    pub unassigned: Option<f64>,
}

impl GroupMeans {
    pub fn get(&self, v: Vitality) -> Option<f64> {
        match v {
            Vitality::Low => self.low,
            Vitality::Mid => self.mid,
            Vitality::High => self.high,
            Vitality::Unassigned => self.unassigned,
        }
    }
}

/// Mean score per vitality group. Languages missing from `vitality` count as
/// UNASSIGNED; empty groups are `None`.
pub fn group_by_vitality(scores: &BTreeMap<String, f64>, vitality: &BTreeMap<String, Vitality>) -> GroupMeans {
    let mut groups: BTreeMap<Vitality, Vec<f64>> = BTreeMap::new();
    for (lang, &s) in scores {
        let v = vitality.get(lang).copied().unwrap_or(Vitality::Unassigned);
        groups.entry(v).or_default().push(s);
    }
    let m = |v| groups.get(&v).and_then(|xs| mean(xs));
    GroupMeans {
        low: m(Vitality::Low),
        mid: m(Vitality::Mid),
        high: m(Vitality::High),
        unassigned: m(Vitality::Unassigned),
    }
}

/// A hop entry in a report: either a result or the reason it is undefined.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HopEntry {
    pub hop: usize,
    pub aggregate: Option<f64>,
    pub per_language: BTreeMap<String, f64>,
    pub excluded: Vec<String>,
    pub reason: Option<String>,
}

impl HopEntry {
    fn from(hop: usize, r: Result<HopResult>) -> Self {
        match r {
            Ok(h) => Self {
                hop,
                aggregate: Some(h.aggregate),
                per_language: h.per_language,
                excluded: h.excluded,
                reason: None,
            },
            Err(e) => Self {
                hop,
                aggregate: None,
                per_language: BTreeMap::new(),
                excluded: Vec::new(),
                reason: Some(e.to_string()),
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrderScores {
    pub order_id: usize,
    pub cft: f64,
    pub cbt: f64,
    pub final_mean_f1: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransferReport {
    pub regime: String,
    pub num_orders: usize,
    pub max_hop: usize,
    pub languages: Vec<String>,
    pub p_avg: BTreeMap<String, Option<f64>>,
    pub p_avg_by_vitality: GroupMeans,
    pub cft: f64,
    pub cbt: f64,
    pub final_mean_f1: f64,
    pub per_order: Vec<OrderScores>,
    pub mft: Vec<HopEntry>,
    pub mbt: Vec<HopEntry>,
    pub receiver_mbt: Vec<HopEntry>,
    pub donor_mft: Vec<HopEntry>,
    /// How each quantity was computed.
    pub variants: BTreeMap<String, String>,
}

fn variant_labels() -> BTreeMap<String, String> {
    [
        ("indexing", "0-based steps; R[i][j] is F1 on the j-th language of the order after step i"),
        ("running_average", "P_s = mean of R[s][0..=s], the languages seen through step s"),
        ("p_avg", "sample P_{i-1} - P_i for the language trained at step i >= 1; mean over orders; positive = degradation"),
        ("cft", "mean over i < T-1 of mean_{j>i} R[i][j]; averaged over orders"),
        ("cbt", "mean over i < T-1 of R[T-1][i] - R[i][i]; averaged over orders"),
        ("mft", "aggregate: per-language mean over orders of P_{i+h} - P_{i-1} (valid if i >= 1 and i+h <= T-1), then mean over languages with a sample"),
        ("mbt", "aggregate: per-language mean over orders of P_i - P_{i-h-1} (valid if i-h-1 >= 0), then mean over languages with a sample"),
        ("receiver_mbt", "per-language mean over orders of R[i+h][l] - R[i+h-1][l]"),
        ("donor_mft", "per-language mean over orders of P_{i+h} - P_{i+h-1}"),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v.to_string()))
    .collect()
}

/// Aggregates the evaluation matrices of one regime over its orders.
pub fn transfer_report(
    regime: &str,
    matrices: &[RMatrix],
    max_hop: usize,
    vitality: &BTreeMap<String, Vitality>,
) -> Result<TransferReport> {
    let languages = check_same_languages(matrices)?;
    let shifts = performance_shift(matrices)?;
    let p_avg: BTreeMap<String, Option<f64>> = shifts.iter().map(|(l, s)| (l.clone(), s.mean)).collect();
    let defined: BTreeMap<String, f64> = p_avg.iter().filter_map(|(l, v)| v.map(|v| (l.clone(), v))).collect();
    let per_order = matrices
        .iter()
        .map(|m| {
            let t = m.size();
            Ok(OrderScores {
                order_id: m.order_id,
                cft: cft(m)?,
                cbt: cbt(m)?,
                final_mean_f1: m.entries[t - 1].iter().sum::<f64>() / t as f64,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let avg = |f: fn(&OrderScores) -> f64| per_order.iter().map(f).sum::<f64>() / per_order.len() as f64;
    Ok(TransferReport {
        regime: regime.to_string(),
        num_orders: matrices.len(),
        max_hop,
        languages,
        p_avg_by_vitality: group_by_vitality(&defined, vitality),
        p_avg,
        cft: avg(|o| o.cft),
        cbt: avg(|o| o.cbt),
        final_mean_f1: avg(|o| o.final_mean_f1),
        mft: (1..=max_hop).map(|h| HopEntry::from(h, mft(matrices, h))).collect(),
        mbt: (0..=max_hop).map(|h| HopEntry::from(h, mbt(matrices, h))).collect(),
        receiver_mbt: (0..=max_hop)
            .map(|h| HopEntry::from(h, receiver_mbt(matrices, h)))
            .collect(),
        donor_mft: (1..=max_hop)
            .map(|h| HopEntry::from(h, donor_mft(matrices, h)))
            .collect(),
        per_order,
        variants: variant_labels(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(t: usize) -> Vec<String> {
        (0..t).map(|i| format!("l{i}")).collect()
    }

    fn matrix(rows: Vec<Vec<f64>>) -> RMatrix {
        RMatrix::new(names(rows.len()), rows, 0).unwrap()
    }

    #[test]
    fn f1_cases() {
        let gold = vec![vec![0, 1, 2, 0, 3]];
        assert_eq!(f1(&gold, &gold).unwrap(), 1.0);
        assert_eq!(f1(&[vec![0; 5]], &gold).unwrap(), 0.0);
        assert_eq!(f1(&[vec![0; 3]], &[vec![0; 3]]).unwrap(), 1.0);
        assert!(f1(&[vec![0; 2]], &gold).is_err());
    }

    #[test]
    fn f1_partial_match() {
        // Gold time span covers tokens 4..=5.
        let gold = vec![vec![0, 0, 0, 0, 1, 2]];
        // Predicted [4,4] plus a spurious date span at 0.
        let short = vec![vec![3, 0, 0, 0, 1, 0]];
        assert_eq!(f1(&short, &gold).unwrap(), 0.0);
        let exact = vec![vec![3, 0, 0, 0, 1, 2]];
        assert!((f1(&exact, &gold).unwrap() - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn lenient_spans() {
        assert_eq!(spans(&[2, 2, 0, 1, 4]), vec![(0, 0, 2), (0, 3, 4), (1, 4, 5)]);
    }

    #[test]
    fn cft_cbt_examples() {
        let c = matrix(vec![vec![0.3; 4]; 4]);
        assert!((cft(&c).unwrap() - 0.3).abs() < 1e-15);
        let two = matrix(vec![vec![0.8, 0.4], vec![0.5, 0.9]]);
        assert!((cft(&two).unwrap() - 0.4).abs() < 1e-15);
        assert!((cbt(&two).unwrap() + 0.3).abs() < 1e-15);
        assert!(cft(&matrix(vec![vec![0.5]])).is_err());
    }

    #[test]
    fn cbt_zero_under_perfect_retention() {
        let r = matrix(vec![vec![0.7, 0.1, 0.0], vec![0.7, 0.6, 0.2], vec![0.7, 0.6, 0.9]]);
        assert_eq!(cbt(&r).unwrap(), 0.0);
    }

    /// Builds a matrix whose running averages are exactly `p` (lower triangle
    /// and diagonal constant per row).
    fn from_running(p: &[f64]) -> RMatrix {
        matrix(p.iter().map(|&v| vec![v; p.len()]).collect())
    }

    #[test]
    fn mft_substitution() {
        let r = from_running(&[0.2, 0.4, 0.6, 0.8]);
        let h = mft(&[r], 2).unwrap();
        // Only the language at step 1 has both P_0 and P_3.
        assert_eq!(h.per_language.len(), 1);
        assert!((h.per_language["l1"] - 0.6).abs() < 1e-12);
        assert_eq!(h.excluded, ["l0", "l2", "l3"]);
    }

    #[test]
    fn constant_p_gives_zero_hops() {
        let r = from_running(&[0.5; 5]);
        for h in 1..4 {
            assert_eq!(mft(std::slice::from_ref(&r), h).unwrap().aggregate, 0.0);
            assert_eq!(mbt(std::slice::from_ref(&r), h).unwrap().aggregate, 0.0);
        }
    }

    #[test]
    fn shift_examples() {
        let r = from_running(&[0.9, 0.8, 0.7]);
        let mut orders = Vec::new();
        for k in 0..5 {
            let mut m = r.clone();
            m.order_id = k;
            orders.push(m);
        }
        let s = performance_shift(&orders).unwrap();
        assert!((s["l2"].mean.unwrap() - 0.1).abs() < 1e-12);
        assert_eq!(s["l0"].mean, None);
    }

    #[test]
    fn shift_rejects_missing_language() {
        let a = matrix(vec![vec![0.5; 2]; 2]);
        let b = RMatrix::new(vec!["l0".into(), "zz".into()], vec![vec![0.5; 2]; 2], 1).unwrap();
        assert!(performance_shift(&[a, b]).is_err());
    }

    #[test]
    fn undefined_hop_is_explained() {
        let r = from_running(&[0.2, 0.4, 0.6]);
        let err = mft(&[r], 2).unwrap_err();
        assert!(err.to_string().contains("hop 2"), "{err}");
    }

    #[test]
    fn vitality_groups() {
        let scores: BTreeMap<String, f64> = [("a".to_string(), 0.6), ("b".to_string(), 0.8)].into();
        let map: BTreeMap<String, Vitality> =
            [("a".to_string(), Vitality::Low), ("b".to_string(), Vitality::High)].into();
        let g = group_by_vitality(&scores, &map);
        assert_eq!((g.low, g.high, g.mid), (Some(0.6), Some(0.8), None));
        let g = group_by_vitality(&scores, &BTreeMap::new());
        assert!((g.unassigned.unwrap() - 0.7).abs() < 1e-15);
    }
}
