mod common;

use common::{continuous_columns, naive_smd, pop, split};
use covbal::data::sample_moments;
use covbal::{adhoc_assess, count_imbalanced, smd, BalanceConfig, SmdVector};
use proptest::prelude::*;

fn arms(k: usize) -> impl Strategy<Value = (Vec<usize>, Vec<usize>)> {
    Just((0..k).collect::<Vec<usize>>()).prop_shuffle().prop_flat_map(move |perm| {
        (1..k).prop_flat_map(move |cut| {
            let perm = perm.clone();
            (1..=cut, 1..=(k - cut)).prop_map(move |(a, b)| (perm[..a].to_vec(), perm[cut..cut + b].to_vec()))
        })
    })
}

fn instance() -> impl Strategy<Value = (Vec<Vec<f64>>, Vec<usize>, Vec<usize>)> {
    continuous_columns(3..=12, 1..=5).prop_flat_map(|cols| {
        let k = cols[0].len();
        (Just(cols), arms(k)).prop_map(|(c, (m, n))| (c, m, n))
    })
}

proptest! {
    #[test]
    fn matches_formula((cols, m, n) in instance()) {
        let got = smd(&pop(&cols), &split(&m, &n, cols[0].len()));
        let want = naive_smd(&cols, &m, &n);
        for (g, w) in got.as_slice().iter().zip(&want) {
            prop_assert!((g - w).abs() <= 1e-9 * (1.0 + w.abs()), "{g} vs {w}");
        }
    }

    #[test]
    fn arm_order_does_not_matter((cols, m, n) in instance()) {
        let p = pop(&cols);
        let s = split(&m, &n, cols[0].len());
        prop_assert_eq!(smd(&p, &s), smd(&p, &s.swapped()));
    }

    #[test]
    fn invariant_under_affine_maps(
        (cols, m, n) in instance(),
        a in prop_oneof![-50.0f64..-0.1, 0.1f64..50.0],
        b in -100.0f64..100.0,
    ) {
        let moved: Vec<Vec<f64>> = cols.iter().map(|c| c.iter().map(|x| a * x + b).collect()).collect();
        let k = cols[0].len();
        let d0 = smd(&pop(&cols), &split(&m, &n, k));
        let d1 = smd(&pop(&moved), &split(&m, &n, k));
        for (x, y) in d0.as_slice().iter().zip(d1.as_slice()) {
            prop_assert!((x - y).abs() <= 1e-8 * (1.0 + x.abs()), "{x} vs {y}");
        }
    }

    #[test]
    fn r_delta_non_increasing(deltas in prop::collection::vec(0.0f64..3.0, 1..20), d1 in 0.001f64..3.0, d2 in 0.001f64..3.0) {
        let v = SmdVector::new(deltas).unwrap();
        let (lo, hi) = if d1 <= d2 { (d1, d2) } else { (d2, d1) };
        prop_assert!(count_imbalanced(&v, lo).unwrap() >= count_imbalanced(&v, hi).unwrap());
    }

    #[test]
    fn adhoc_monotone_in_r(deltas in prop::collection::vec(0.0f64..3.0, 1..20), d in 0.01f64..3.0, r in 0usize..20) {
        let v = SmdVector::new(deltas).unwrap();
        let a = adhoc_assess(&v, &BalanceConfig::new(d, r).unwrap());
        let b = adhoc_assess(&v, &BalanceConfig::new(d, r + 1).unwrap());
        prop_assert!(!a.balanced || b.balanced);
        prop_assert_eq!(a.r_delta, count_imbalanced(&v, d).unwrap());
    }

    #[test]
    fn adhoc_monotone_in_delta(deltas in prop::collection::vec(0.0f64..3.0, 1..20), d in 0.01f64..2.0, step in 0.0f64..1.0, r in 0usize..5) {
        let v = SmdVector::new(deltas).unwrap();
        let a = adhoc_assess(&v, &BalanceConfig::new(d, r).unwrap());
        let b = adhoc_assess(&v, &BalanceConfig::new(d + step, r).unwrap());
        prop_assert!(!a.balanced || b.balanced);
    }
}

#[test]
fn toy_population_values() {
    let p = pop(&[vec![0.0, 0.0, 1.0, 1.0]]);
    // S = sqrt(1/3), so Δ({1},{3}) = sqrt(3).
    let d = smd(&p, &split(&[0], &[2], 4));
    assert!((d.as_slice()[0] - 3f64.sqrt()).abs() < 1e-12);
    assert_eq!(smd(&p, &split(&[0], &[1], 4)).as_slice()[0], 0.0);
    assert_eq!(count_imbalanced(&d, 1.0).unwrap(), 1);
    assert_eq!(count_imbalanced(&d, 2.0).unwrap(), 0);
    assert!(count_imbalanced(&d, 0.0).is_err());
}

#[test]
fn cutoff_is_inclusive() {
    let v = SmdVector::new(vec![0.2, 0.19999, 0.5]).unwrap();
    assert_eq!(count_imbalanced(&v, 0.2).unwrap(), 2);
    let out = adhoc_assess(&v, &BalanceConfig::new(0.2, 1).unwrap());
    assert!(!out.balanced);
    assert_eq!(out.r_delta, 2);
}

#[test]
fn sample_moments_small_sets() {
    let p = pop(&[vec![1.0, 2.0, 3.0, 4.0]]);
    let s = sample_moments(&p, &[0, 3]).unwrap();
    assert_eq!(s.means, vec![2.5]);
    assert!((s.sds.unwrap()[0] - 4.5f64.sqrt()).abs() < 1e-12);
    assert!(sample_moments(&p, &[2]).unwrap().sds.is_none());
    assert!(sample_moments(&p, &[]).is_err());
}
