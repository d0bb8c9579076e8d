#![allow(dead_code)]
pub mod theorems;

use covbal::{Population, SplitSample};
use proptest::prelude::*;

/// SMD straight from the formula: |mean_M − mean_N| / population SD (divisor K − 1).
pub fn naive_smd(cols: &[Vec<f64>], m: &[usize], n: &[usize]) -> Vec<f64> {
    cols.iter()
        .map(|c| {
            let k = c.len() as f64;
            let mu = c.iter().sum::<f64>() / k;
            let var = c.iter().map(|x| (x - mu) * (x - mu)).sum::<f64>() / (k - 1.0);
            let mean = |ix: &[usize]| ix.iter().map(|&i| c[i]).sum::<f64>() / ix.len() as f64;
            (mean(m) - mean(n)).abs() / var.sqrt()
        })
        .collect()
}

/// Pseudo p-value by definition: the minimum over a dense set of cutoffs of
/// `P(R_ref ≥ R_obs)`, as an exact fraction `(tail, total)`.
///
/// Cutoffs are every distinct positive SMD, every midpoint between
/// consecutive ones and one point beyond the largest.
pub fn brute_pseudo_p(obs: &[f64], rows: &[(u64, Vec<f64>)]) -> (u64, u64) {
    let mut vals: Vec<f64> = rows.iter().flat_map(|(_, r)| r.iter().copied()).chain(obs.iter().copied()).collect();
    vals.retain(|v| *v > 0.0);
    vals.sort_by(f64::total_cmp);
    vals.dedup();
    let mut cuts = vals.clone();
    for w in vals.windows(2) {
        cuts.push(0.5 * (w[0] + w[1]));
    }
    cuts.push(vals.last().copied().unwrap_or(1.0) + 1.0);
    if let Some(first) = vals.first() {
        cuts.push(first * 0.5);
    }
    let total: u64 = rows.iter().map(|(w, _)| w).sum();
    let count = |r: &[f64], d: f64| r.iter().filter(|&&x| x >= d).count();
    let mut best = total;
    for d in cuts {
        let ro = count(obs, d);
        let tail: u64 = rows.iter().filter(|(_, r)| count(r, d) >= ro).map(|(w, _)| w).sum();
        best = best.min(tail);
    }
    (best, total)
}

/// Column-major covariates on a coarse lattice (ties are common), with
/// every column non-constant.
pub fn columns_strategy(
    k: std::ops::RangeInclusive<usize>,
    j: std::ops::RangeInclusive<usize>,
) -> impl Strategy<Value = Vec<Vec<f64>>> {
    (k, j).prop_flat_map(|(k, j)| {
        prop::collection::vec(prop::collection::vec((-6i32..=6).prop_map(|v| v as f64 * 0.5), k), j)
            .prop_filter("constant column", |cols| cols.iter().all(|c| c.iter().any(|v| *v != c[0])))
    })
}

/// Same as `columns_strategy` but continuous values.
pub fn continuous_columns(
    k: std::ops::RangeInclusive<usize>,
    j: std::ops::RangeInclusive<usize>,
) -> impl Strategy<Value = Vec<Vec<f64>>> {
    (k, j)
        .prop_flat_map(|(k, j)| prop::collection::vec(prop::collection::vec(-3.0f64..3.0, k), j))
        .prop_filter("constant column", |cols| cols.iter().all(|c| c.iter().any(|v| *v != c[0])))
}

pub fn pop(cols: &[Vec<f64>]) -> Population {
    Population::from_columns_unnamed(cols.to_vec()).unwrap()
}

pub fn split(m: &[usize], n: &[usize], k: usize) -> SplitSample {
    SplitSample::new(m.to_vec(), n.to_vec(), k).unwrap()
}
