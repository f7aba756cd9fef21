//! Invariants over random inputs.

use proptest::prelude::*;

use vcarm::augment::{build_schedule, select_n_opt, SizeMetrics};
use vcarm::cohort::{split_folds_by, Cohort, CohortSchema, ColumnSpec};
use vcarm::effect::odds_ratio;
use vcarm::eval::auc;
use vcarm::report::{OrCell, Perf};
use vcarm::seed::derive;
use vcarm::subseed;

fn labelled() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (4usize..40).prop_flat_map(|n| {
        (
            prop::collection::vec(-5.0f64..5.0, n),
            prop::collection::vec(any::<bool>(), n).prop_map(|v| {
                let mut v: Vec<f64> = v.into_iter().map(f64::from).collect();
                v[0] = 1.0;
                v[1] = 0.0;
                v
            }),
        )
    })
}

proptest! {
    #[test]
    fn auc_is_rank_based((scores, labels) in labelled()) {
        let a = auc(&scores, &labels).unwrap();
        prop_assert!((0.0..=1.0).contains(&a));
        // strictly increasing transform leaves it unchanged
        let t: Vec<f64> = scores.iter().map(|s| s.exp() * 3.0 + 1.0).collect();
        prop_assert!((auc(&t, &labels).unwrap() - a).abs() < 1e-12);
        // negated scores or flipped labels mirror it
        let neg: Vec<f64> = scores.iter().map(|s| -s).collect();
        prop_assert!((auc(&neg, &labels).unwrap() - (1.0 - a)).abs() < 1e-12);
        let flipped: Vec<f64> = labels.iter().map(|y| 1.0 - y).collect();
        prop_assert!((auc(&scores, &flipped).unwrap() - (1.0 - a)).abs() < 1e-12);
    }

    #[test]
    fn odds_ratio_permutation_and_flip(
        rows in prop::collection::vec((0.02f64..0.98, any::<bool>()), 6..60),
        rot in 0usize..60,
    ) {
        let mut rows = rows;
        rows[0].1 = true;
        rows[1].1 = false;
        let (p, y): (Vec<f64>, Vec<f64>) = rows.iter().map(|&(p, y)| (p, f64::from(y))).unzip();
        let or = odds_ratio(&p, &y).unwrap();
        prop_assert!(or > 0.0 && or.is_finite());
        let k = rot % rows.len();
        let (mut pr, mut yr) = (p.clone(), y.clone());
        pr.rotate_left(k);
        yr.rotate_left(k);
        prop_assert!((odds_ratio(&pr, &yr).unwrap() / or - 1.0).abs() < 1e-12);
        // relabelling events as non-events inverts the ratio
        let pf: Vec<f64> = p.iter().map(|v| 1.0 - v).collect();
        let yf: Vec<f64> = y.iter().map(|v| 1.0 - v).collect();
        prop_assert!((odds_ratio(&pf, &yf).unwrap() * or - 1.0).abs() < 1e-9);
    }

    #[test]
    fn schedule_sizes_never_decrease(mu in 1.2f64..2.0, sigma in 0.0f64..0.01, draws in 1usize..4, sizes in 1usize..12, seed in any::<u64>()) {
        let s = build_schedule(mu, sigma, draws, sizes, seed).unwrap();
        prop_assert_eq!(s.grid_points().len(), draws * sizes);
        for (b, row) in s.b_values.iter().zip(&s.sizes) {
            prop_assert!(row.windows(2).all(|w| w[0] <= w[1]));
            prop_assert!(row.iter().all(|&n| n >= 1));
            prop_assert!((b - mu).abs() <= 5.0 * sigma + 1e-12);
        }
        prop_assert_eq!(s, build_schedule(mu, sigma, draws, sizes, seed).unwrap());
    }

    #[test]
    fn selection_ignores_grid_order(grid in prop::collection::vec((1usize..500, 0u8..5, 0u8..5), 1..12), rot in 0usize..12) {
        let mut grid: Vec<SizeMetrics> = grid
            .into_iter()
            .map(|(size, a, i)| SizeMetrics { size, auc: 0.5 + f64::from(a) / 20.0, ici: f64::from(i) / 50.0 })
            .collect();
        grid.sort_by_key(|g| g.size);
        grid.dedup_by_key(|g| g.size);
        let first = select_n_opt(&grid).unwrap();
        let best = grid.iter().map(|g| g.auc).fold(f64::MIN, f64::max);
        let chosen = grid.iter().find(|g| g.size == first).unwrap();
        prop_assert_eq!(chosen.auc, best);
        let k = rot % grid.len();
        grid.rotate_left(k);
        prop_assert_eq!(select_n_opt(&grid), Some(first));
    }

    #[test]
    fn folds_partition_rows_and_balance_events(n in 10usize..80, k in 2usize..6, seed in any::<u64>(), events in prop::collection::vec(any::<bool>(), 80)) {
        let schema = CohortSchema::new(vec![ColumnSpec::binary("y")], vec!["y".into()], None).unwrap();
        let values: Vec<f64> = events[..n].iter().map(|&e| f64::from(e)).collect();
        let c = Cohort::from_values(schema, n, values.clone()).unwrap();
        let plan = split_folds_by(&c, k, seed, Some("y")).unwrap();
        let mut seen = vec![0usize; n];
        let mut per_fold = Vec::new();
        for f in 0..k {
            let test = plan.test_rows(f);
            per_fold.push(test.iter().filter(|&&r| values[r] == 1.0).count());
            for r in test {
                seen[r] += 1;
            }
            prop_assert_eq!(plan.train_rows(f).len() + plan.test_rows(f).len(), n);
        }
        prop_assert!(seen.iter().all(|&s| s == 1));
        let (lo, hi) = (per_fold.iter().min().unwrap(), per_fold.iter().max().unwrap());
        prop_assert!(hi - lo <= 1, "{:?}", per_fold);
    }

    #[test]
    fn seeds_are_path_sensitive(master in any::<u64>(), a in 0u64..1000, b in 0u64..1000) {
        prop_assume!(a != b);
        prop_assert_ne!(subseed!(master, "x", a), subseed!(master, "x", b));
        prop_assert_eq!(subseed!(master, "x", a), derive(master, &["x".into(), a.into()]));
    }

    #[test]
    fn report_cells_round_half_digits(auc in 0.0f64..1.0, ici in 0.0f64..0.5, or in 0.05f64..20.0) {
        let cell = Perf { auc, ici }.cell();
        let (a, i) = cell.split_once('/').unwrap();
        prop_assert!((a.parse::<f64>().unwrap() - auc).abs() <= 0.005 + 1e-12);
        prop_assert!((i.parse::<f64>().unwrap() - ici).abs() <= 0.005 + 1e-12);
        let c = OrCell { point: or, ci_low: or / 2.0, ci_high: or * 2.0 }.cell();
        let head = c.split(' ').next().unwrap().parse::<f64>().unwrap();
        prop_assert!((head - or).abs() <= 0.05 + 1e-12);
        prop_assert!(c.ends_with(')') && c.contains(" ("));
    }
}
