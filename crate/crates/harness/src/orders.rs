//! Language orders for sequential runs.

use std::collections::BTreeSet;

use polyforget_core::numeric::Rng;
use polyforget_core::regimes::LanguageOrder;

use crate::config::{ExperimentConfig, PolicyKind};
use crate::error::{HarnessError, Result};
use crate::workload::Workload;

/// The five published 52-locale orders, one comma-separated order per line.
pub const BUNDLED_ORDERS: &str = include_str!("../data/massive_orders.txt");

#[derive(Clone, Debug, PartialEq)]
pub enum OrderPolicy {
    /// Descending resource weight; ties broken by language id.
    ResourceRanked,
    /// Order `k` is a shuffle drawn from `seed + k`.
    Shuffled(u64),
    /// Shuffled, with the given set moved to the end (itself shuffled).
    DestructiveLast(Vec<String>, u64),
}

fn shuffled(langs: &[String], seed: u64) -> Vec<String> {
    let mut out = langs.to_vec();
    Rng::new(seed).fork("order").shuffle(&mut out);
    out
}

/// `n` orders over `languages`, given as `(lang_id, resource weight)`.
pub fn make_orders(policy: &OrderPolicy, languages: &[(String, f64)], n: usize) -> Result<Vec<LanguageOrder>> {
    if languages.is_empty() {
        return Err(HarnessError::data("orders", "no languages to order"));
    }
    let ids: Vec<String> = languages.iter().map(|(l, _)| l.clone()).collect();
    let orders = (0..n)
        .map(|k| -> Result<LanguageOrder> {
            let langs = match policy {
                OrderPolicy::ResourceRanked => {
                    let mut ranked = languages.to_vec();
                    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
                    ranked.into_iter().map(|(l, _)| l).collect()
                }
                OrderPolicy::Shuffled(seed) => shuffled(&ids, seed + k as u64),
                OrderPolicy::DestructiveLast(set, seed) => {
                    let known: BTreeSet<&String> = ids.iter().collect();
                    if let Some(bad) = set.iter().find(|l| !known.contains(l)) {
                        return Err(HarnessError::data(
                            "orders",
                            format!("destructive language `{bad}` is not in the data"),
                        ));
                    }
                    let tail: BTreeSet<&String> = set.iter().collect();
                    let head: Vec<String> = ids.iter().filter(|l| !tail.contains(l)).cloned().collect();
                    let last: Vec<String> = ids.iter().filter(|l| tail.contains(l)).cloned().collect();
                    let s = seed + k as u64;
                    let mut out = shuffled(&head, s);
                    let mut end = last;
                    Rng::new(s).fork("order:tail").shuffle(&mut end);
                    out.extend(end);
                    out
                }
            };
            Ok(LanguageOrder::new(k, langs))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(orders)
}

pub fn bundled_orders() -> Vec<LanguageOrder> {
    BUNDLED_ORDERS
        .lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(k, line)| LanguageOrder::new(k, line.split(',').map(|s| s.trim().to_string()).collect()))
        .collect()
}

/// The orders of an experiment, checked against its languages.
pub fn experiment_orders(cfg: &ExperimentConfig, work: &Workload) -> Result<Vec<LanguageOrder>> {
    let seed = cfg.orders.seed.unwrap_or(cfg.seed);
    let n = cfg.num_orders;
    let orders = match cfg.orders.policy {
        PolicyKind::Shuffled => make_orders(&OrderPolicy::Shuffled(seed), &work.resource_weights(), n)?,
        PolicyKind::ResourceRanked => make_orders(&OrderPolicy::ResourceRanked, &work.resource_weights(), n)?,
        PolicyKind::DestructiveLast => make_orders(
            &OrderPolicy::DestructiveLast(cfg.orders.destructive.clone(), seed),
            &work.resource_weights(),
            n,
        )?,
        PolicyKind::Explicit | PolicyKind::Bundled => {
            let listed = if cfg.orders.policy == PolicyKind::Bundled {
                bundled_orders()
            } else {
                cfg.orders
                    .explicit
                    .iter()
                    .enumerate()
                    .map(|(k, o)| LanguageOrder::new(k, o.clone()))
                    .collect()
            };
            if listed.len() < n {
                return Err(HarnessError::Config {
                    path: "orders".into(),
                    message: format!("{} orders listed but num_orders is {n}", listed.len()),
                });
            }
            listed.into_iter().take(n).collect()
        }
    };
    for o in &orders {
        o.arrange(&work.datasets)?;
    }
    Ok(orders)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn langs(ws: &[f64]) -> Vec<(String, f64)> {
        ws.iter().enumerate().map(|(i, w)| (format!("l{i}"), *w)).collect()
    }

    #[test]
    fn shuffled_is_reproducible_and_a_permutation() {
        let l = langs(&[1.0; 6]);
        let a = make_orders(&OrderPolicy::Shuffled(3), &l, 4).unwrap();
        assert_eq!(a, make_orders(&OrderPolicy::Shuffled(3), &l, 4).unwrap());
        for o in &a {
            let mut s = o.langs.clone();
            s.sort();
            assert_eq!(s, ["l0", "l1", "l2", "l3", "l4", "l5"]);
        }
        assert_ne!(a[0].langs, a[1].langs);
    }

    #[test]
    fn destructive_set_is_a_suffix() {
        let l = langs(&[1.0; 6]);
        let set = vec!["l1".to_string(), "l4".to_string()];
        for o in make_orders(&OrderPolicy::DestructiveLast(set, 9), &l, 5).unwrap() {
            let mut tail = o.langs[4..].to_vec();
            tail.sort();
            assert_eq!(tail, ["l1", "l4"]);
        }
        let bad = OrderPolicy::DestructiveLast(vec!["zz".into()], 0);
        assert!(make_orders(&bad, &l, 1).is_err());
    }

    #[test]
    fn resource_ranked_sorts_by_weight() {
        let o = make_orders(&OrderPolicy::ResourceRanked, &langs(&[3.0, 9.0, 1.0, 5.0]), 2).unwrap();
        assert_eq!(o[0].langs, ["l1", "l3", "l0", "l2"]);
        assert_eq!(o[0].langs, o[1].langs);
    }

    #[test]
    fn bundled_orders_are_permutations_of_one_set() {
        let orders = bundled_orders();
        assert_eq!(orders.len(), 5);
        let mut first = orders[0].langs.clone();
        first.sort();
        assert_eq!(first.len(), 52);
        for o in &orders {
            let mut s = o.langs.clone();
            s.sort();
            assert_eq!(s, first);
        }
        assert_eq!(orders[0].langs[0], "en-US");
    }
}
