use std::collections::BTreeSet;

use polyforget::heatmap::{render_heatmap, HeatmapStyle, Midpoint};
use polyforget::matrix::LabeledMatrix;
use polyforget::orders::{make_orders, OrderPolicy};
use proptest::prelude::*;

fn langs(n: usize) -> Vec<(String, f64)> {
    (0..n).map(|i| (format!("x{i}"), (i * 7 % 5) as f64)).collect()
}

fn is_permutation(order: &[String], n: usize) -> bool {
    order.len() == n && order.iter().collect::<BTreeSet<_>>().len() == n
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn every_policy_yields_permutations(n in 1usize..12, k in 1usize..6, seed in 0u64..1000, tail in 0usize..4) {
        let ls = langs(n);
        let destructive: Vec<String> = ls.iter().take(tail.min(n)).map(|(l, _)| l.clone()).collect();
        for policy in [
            OrderPolicy::ResourceRanked,
            OrderPolicy::Shuffled(seed),
            OrderPolicy::DestructiveLast(destructive.clone(), seed),
        ] {
            let orders = make_orders(&policy, &ls, k).unwrap();
            prop_assert_eq!(orders.len(), k);
            prop_assert_eq!(&orders, &make_orders(&policy, &ls, k).unwrap());
            for o in &orders {
                prop_assert!(is_permutation(&o.langs, n));
            }
            if let OrderPolicy::DestructiveLast(set, _) = &policy {
                for o in &orders {
                    let end: BTreeSet<&String> = o.langs[n - set.len()..].iter().collect();
                    prop_assert_eq!(end, set.iter().collect::<BTreeSet<_>>());
                }
            }
        }
    }

    #[test]
    fn csv_round_trip(
        rows in 1usize..6,
        cols in 1usize..6,
        cells in proptest::collection::vec(proptest::option::of(-1.0f64..1.0), 36),
    ) {
        let values: Vec<Vec<Option<f64>>> =
            (0..rows).map(|i| (0..cols).map(|j| cells[i * 6 + j]).collect()).collect();
        let m = LabeledMatrix::new(
            (0..rows).map(|i| format!("r{i}")).collect(),
            (0..cols).map(|j| format!("c{j}")).collect(),
            values,
        )
        .unwrap();
        prop_assert_eq!(LabeledMatrix::from_csv(&m.to_csv(), std::path::Path::new("m.csv")).unwrap(), m.clone());
        if m.present().next().is_some() {
            let style = HeatmapStyle { midpoint: Midpoint::ColumnMean, ..HeatmapStyle::default() };
            let svg = render_heatmap(&m, &style).unwrap();
            prop_assert_eq!(svg.matches(r#"class="cell""#).count(), rows * cols);
        }
    }
}
