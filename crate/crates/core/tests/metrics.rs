//! Algebraic identities of the accuracy gap and the compound improvement,
//! on randomized inputs.

use acai_core::metrics::{acc_gap, cai, evaluate_predictions, AccGapPair, CaiInputs};
use acai_core::world::{bin_assign, Interval};
use proptest::prelude::*;

const TOL: f64 = 1e-9;

fn pct() -> impl Strategy<Value = f64> {
    0.0..=100.0f64
}

fn pair() -> impl Strategy<Value = AccGapPair> {
    (pct(), pct()).prop_map(|(acc, acc_gap)| AccGapPair { acc, acc_gap })
}

fn cai_at(b: AccGapPair, i: AccGapPair, lambda: f64) -> f64 {
    cai(&CaiInputs::new(b, i, lambda).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn gap_is_spread_of_bins(bins in prop::collection::vec(pct(), 2..12)) {
        let g = acc_gap(&bins).unwrap();
        let mut sorted = bins.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        prop_assert!(g >= 0.0);
        prop_assert_eq!(g, sorted[sorted.len() - 1] - sorted[0]);
        prop_assert_eq!(g == 0.0, bins.iter().all(|b| *b == bins[0]));
    }

    #[test]
    fn equal_bins_have_zero_gap(v in pct(), n in 2usize..12) {
        prop_assert_eq!(acc_gap(&vec![v; n]).unwrap(), 0.0);
    }

    #[test]
    fn cai_degenerates_at_the_ends(b in pair(), i in pair()) {
        prop_assert_eq!(cai_at(b, i, 0.0), i.acc - b.acc);
        prop_assert_eq!(cai_at(b, i, 1.0), b.acc_gap - i.acc_gap);
    }

    #[test]
    fn baseline_against_itself_is_zero(b in pair(), lambda in 0.0..=1.0f64) {
        prop_assert_eq!(cai_at(b, b, lambda), 0.0);
    }

    #[test]
    fn cai_is_affine(b in pair(), i in pair(), lambda in 0.0..=1.0f64, d in -50.0..50.0f64) {
        let base = cai_at(b, i, lambda);
        let more_acc = cai_at(b, AccGapPair { acc: i.acc + d, ..i }, lambda);
        let less_gap = cai_at(b, AccGapPair { acc_gap: i.acc_gap - d, ..i }, lambda);
        prop_assert!((more_acc - base - (1.0 - lambda) * d).abs() <= TOL);
        prop_assert!((less_gap - base - lambda * d).abs() <= TOL);
    }

    #[test]
    fn cai_matches_direct_formula(b in pair(), i in pair(), lambda in 0.0..=1.0f64) {
        let direct = lambda * b.acc_gap - lambda * i.acc_gap + (1.0 - lambda) * i.acc - (1.0 - lambda) * b.acc;
        prop_assert!((cai_at(b, i, lambda) - direct).abs() <= TOL);
    }

    #[test]
    fn lambda_outside_unit_interval_is_rejected(lambda in prop_oneof![-10.0..-1e-9f64, 1.0 + 1e-9..10.0f64]) {
        let p = AccGapPair { acc: 50.0, acc_gap: 5.0 };
        prop_assert!(CaiInputs::new(p, p, lambda).is_err());
    }

    #[test]
    fn bundle_identities(
        rows in prop::collection::vec((-2.0..2.0f64, 0usize..3, 0usize..3), 40..300),
        perm_seed in any::<u64>(),
    ) {
        let values: Vec<f64> = rows.iter().map(|r| r.0).collect();
        let labels: Vec<usize> = rows.iter().map(|r| r.1).collect();
        let preds: Vec<usize> = rows.iter().map(|r| r.2).collect();
        let range = Interval { lo: -2.0, hi: 2.0 };
        let part = bin_assign(&values, 4, range).unwrap();
        let m = evaluate_predictions(&preds, &labels, &part, 1).unwrap();
        prop_assert!((0.0..=100.0).contains(&m.acc) && (0.0..=100.0).contains(&m.acc_min) && m.acc_gap >= 0.0);

        let included: Vec<f64> = m.included_accuracies();
        let lo = included.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = included.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        prop_assert_eq!(m.acc_min, lo);
        prop_assert_eq!(m.acc_gap, hi - lo);
        if m.excluded.iter().all(|e| !e) {
            let n: usize = m.bin_counts.iter().sum();
            let weighted: f64 = m.per_bin_acc.iter().zip(&m.bin_counts).map(|(a, c)| a * *c as f64).sum::<f64>() / n as f64;
            prop_assert!((weighted - m.acc).abs() <= TOL);
            prop_assert!(lo - TOL <= m.acc && m.acc <= hi + TOL);
        }

        // Reordering samples changes nothing.
        let mut order: Vec<usize> = (0..rows.len()).collect();
        let mut s = perm_seed | 1;
        for k in (1..order.len()).rev() {
            s ^= s << 13;
            s ^= s >> 7;
            s ^= s << 17;
            order.swap(k, (s % (k as u64 + 1)) as usize);
        }
        let pv: Vec<f64> = order.iter().map(|&k| values[k]).collect();
        let pl: Vec<usize> = order.iter().map(|&k| labels[k]).collect();
        let pp: Vec<usize> = order.iter().map(|&k| preds[k]).collect();
        let m2 = evaluate_predictions(&pp, &pl, &bin_assign(&pv, 4, range).unwrap(), 1).unwrap();
        prop_assert_eq!(m2.per_bin_acc, m.per_bin_acc);
        prop_assert_eq!((m2.acc_gap, m2.acc_min), (m.acc_gap, m.acc_min));
        prop_assert!((m2.acc - m.acc).abs() <= TOL);
    }
}
