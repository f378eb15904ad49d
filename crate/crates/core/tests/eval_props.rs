use std::collections::BTreeMap;

use bombus_core::dataset::ClassCatalog;
use bombus_core::ensemble::ProbabilityMatrix;
use bombus_core::eval::{
    confusion_from_scores, count_correlation_series, leakage, precision_recall, top_k_accuracy, MetricsReport,
};
use proptest::prelude::*;

#[derive(Debug, Clone)]
struct Fixture {
    c: usize,
    rows: Vec<Vec<f64>>,
    truth: Vec<usize>,
    train_counts: Vec<u64>,
}

fn fixture() -> impl Strategy<Value = Fixture> {
    (2usize..=10, 1usize..=200).prop_flat_map(|(c, n)| {
        (
            prop::collection::vec(prop::collection::vec(0u32..8, c), n),
            prop::collection::vec(0..c, n),
            prop::collection::vec(0u64..400, c),
        )
            .prop_map(move |(w, truth, train_counts)| {
                let rows = w
                    .into_iter()
                    .map(|mut r| {
                        if r.iter().all(|&v| v == 0) {
                            r[0] = 1;
                        }
                        let s: u32 = r.iter().sum();
                        r.iter().map(|&v| f64::from(v) / f64::from(s)).collect()
                    })
                    .collect();
                Fixture { c, rows, truth, train_counts }
            })
    })
}

fn labels(c: usize) -> Vec<String> {
    let mut l: Vec<String> = (0..c - 1).map(|i| format!("s{i}")).collect();
    l.push("neg".into());
    l
}

fn build(f: &Fixture) -> (ProbabilityMatrix, BTreeMap<String, String>) {
    let l = labels(f.c);
    let cat = ClassCatalog::new(l.clone(), Some("neg".into())).unwrap();
    let ids: Vec<String> = (0..f.rows.len()).map(|i| format!("i{i}")).collect();
    let truth = ids.iter().zip(&f.truth).map(|(id, &y)| (id.clone(), l[y].clone())).collect();
    let m = ProbabilityMatrix::new(ids, cat, f.rows.concat()).unwrap();
    (m, truth)
}

// Independent oracle: explicit counting over the raw fixture.
fn oracle_rank_of(row: &[f64], y: usize) -> usize {
    row.iter().enumerate().filter(|&(j, &v)| v > row[y] || (v == row[y] && j < y)).count()
}

fn oracle_pred(row: &[f64]) -> usize {
    (0..row.len()).find(|&j| oracle_rank_of(row, j) == 0).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn metrics_match_brute_force(f in fixture()) {
        let (m, truth) = build(&f);
        let n = f.rows.len();
        for k in 1..=f.c {
            let hits = (0..n).filter(|&i| oracle_rank_of(&f.rows[i], f.truth[i]) < k).count();
            prop_assert!((top_k_accuracy(&m, &truth, k).unwrap() - hits as f64 / n as f64).abs() <= 1e-12);
        }
        let mut counts = vec![vec![0u64; f.c]; f.c];
        for i in 0..n {
            counts[f.truth[i]][oracle_pred(&f.rows[i])] += 1;
        }
        let cm = confusion_from_scores(&m, &truth).unwrap();
        prop_assert_eq!(cm.counts(), &counts[..]);

        let pr = precision_recall(&cm);
        for c in 0..f.c {
            let row: u64 = counts[c].iter().sum();
            let col: u64 = counts.iter().map(|r| r[c]).sum();
            let tp = counts[c][c];
            prop_assert_eq!(pr[c].recall.undefined, row == 0);
            prop_assert_eq!(pr[c].precision.undefined, col == 0);
            let want_r = if row == 0 { 0.0 } else { tp as f64 / row as f64 };
            let want_p = if col == 0 { 0.0 } else { tp as f64 / col as f64 };
            prop_assert!((pr[c].recall.value - want_r).abs() <= 1e-12);
            prop_assert!((pr[c].precision.value - want_p).abs() <= 1e-12);
        }

        let neg = f.c - 1;
        let leaked: u64 = (0..neg).map(|r| counts[r][neg]).sum();
        let targets: u64 = (0..neg).map(|r| counts[r].iter().sum::<u64>()).sum();
        let l = leakage(&cm, "neg").unwrap();
        prop_assert_eq!(l.count, leaked);
        prop_assert_eq!(l.target_total, targets);
        let want = if targets == 0 { 0.0 } else { leaked as f64 / targets as f64 };
        prop_assert!((l.fraction - want).abs() <= 1e-12);
        prop_assert!((0.0..=1.0).contains(&l.fraction));
    }

    #[test]
    fn conservation_and_monotonicity(f in fixture()) {
        let (m, truth) = build(&f);
        let n = f.rows.len();
        let cm = confusion_from_scores(&m, &truth).unwrap();
        prop_assert_eq!(cm.total(), n as u64);
        for c in 0..f.c {
            prop_assert_eq!(cm.row_sum(c), f.truth.iter().filter(|&&y| y == c).count() as u64);
        }
        let top1 = top_k_accuracy(&m, &truth, 1).unwrap();
        prop_assert!((cm.diagonal_sum() as f64 / n as f64 - top1).abs() <= 1e-12);
        let accs: Vec<f64> = (1..=f.c).map(|k| top_k_accuracy(&m, &truth, k).unwrap()).collect();
        prop_assert!(accs.windows(2).all(|w| w[0] <= w[1]));
        prop_assert_eq!(*accs.last().unwrap(), 1.0);
    }

    #[test]
    fn series_points_follow_columns(f in fixture(), threshold in 0u64..400) {
        let (m, truth) = build(&f);
        let cm = confusion_from_scores(&m, &truth).unwrap();
        let l = labels(f.c);
        let tc: BTreeMap<String, u64> = l.iter().cloned().zip(f.train_counts.iter().copied()).collect();
        let s = count_correlation_series(&cm, &tc, threshold).unwrap();
        let mut below_fp = 0;
        for c in 0..f.c {
            let fp = (0..f.c).filter(|&r| r != c).map(|r| cm.get(r, c)).sum::<u64>();
            prop_assert_eq!(s.false_positives[c].value, fp as f64);
            prop_assert_eq!(s.false_positives[c].train_count, f.train_counts[c]);
            if f.train_counts[c] < threshold {
                below_fp += fp;
            }
        }
        prop_assert_eq!(s.summary.false_positives_below, below_fp);
        prop_assert_eq!(s.summary.below.len() + s.summary.at_or_above.len(), f.c);

        let report = MetricsReport::build(&m, &truth, &[1, 2], Some(&tc), threshold, BTreeMap::new()).unwrap();
        prop_assert_eq!(report.per_class.iter().map(|p| p.support).sum::<u64>(), f.rows.len() as u64);
    }
}

#[test]
fn empty_negative_column_has_no_leakage() {
    let cat = ClassCatalog::new(labels(3), Some("neg".into())).unwrap();
    let ids = vec!["a".to_string(), "b".to_string()];
    let m = ProbabilityMatrix::new(ids, cat, vec![0.9, 0.1, 0.0, 0.2, 0.8, 0.0]).unwrap();
    let truth = [("a", "s0"), ("b", "s0")].iter().map(|(a, b)| (a.to_string(), b.to_string())).collect();
    let l = leakage(&confusion_from_scores(&m, &truth).unwrap(), "neg").unwrap();
    assert_eq!((l.count, l.fraction), (0, 0.0));
}

#[test]
fn uniform_scores_hit_three_in_thirty() {
    use rand::{Rng, SeedableRng};
    let cat = ClassCatalog::from_labels((0..30).map(|i| format!("c{i}")).collect::<Vec<_>>()).unwrap();
    let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(11);
    let n = 10_000;
    let mut rows = Vec::with_capacity(n * 30);
    let mut truth = BTreeMap::new();
    let mut ids = Vec::with_capacity(n);
    for i in 0..n {
        let raw: Vec<f64> = (0..30).map(|_| r.random::<f64>()).collect();
        let s: f64 = raw.iter().sum();
        rows.extend(raw.iter().map(|v| v / s));
        ids.push(format!("u{i}"));
        truth.insert(format!("u{i}"), format!("c{}", r.random_range(0..30)));
    }
    let m = ProbabilityMatrix::new(ids, cat, rows).unwrap();
    let acc = top_k_accuracy(&m, &truth, 3).unwrap();
    assert!((acc - 0.10).abs() <= 0.01, "{acc}");
}
