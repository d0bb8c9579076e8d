//! Checks of the theoretical properties of pseudo p-values on small,
//! fully enumerable populations. Each check returns `Err` with a
//! description of the first violation.
//!
//! All probabilities are integer weights over an integer total, so the
//! inequalities are checked without rounding.

#![allow(dead_code)]

use covbal::pseudo_p::{ecdf_family, pseudo_p, random_pseudo_p, EcdfFamily, Grid};
use covbal::sampling::{SamplingScheme, SchemeKind};
use covbal::{build_reference, Population, ReferenceMode, ReferenceSet, SeededRng, SmdVector};
use rand::Rng;

#[derive(Debug, Clone)]
pub struct Instance {
    pub cols: Vec<Vec<f64>>,
    pub m: usize,
    pub n: usize,
    /// Two competing draw mechanisms, both realisable on this population.
    pub mech_a: SchemeKind,
    pub mech_b: SchemeKind,
}

impl Instance {
    pub fn population(&self) -> Population {
        Population::from_columns_unnamed(self.cols.clone()).unwrap()
    }

    pub fn k(&self) -> usize {
        self.cols[0].len()
    }
}

/// A random instance with `K ≤ 10`, `J ≤ 3` and arms of one or two units.
/// Half of the instances use lattice values so that SMD ties occur.
pub fn random_instance(seed: u64) -> Instance {
    let mut rng = SeededRng::new(seed, 0).generator();
    loop {
        let k = rng.random_range(4..=10usize);
        let j = rng.random_range(1..=3usize);
        let lattice = rng.random_bool(0.5);
        let cols: Vec<Vec<f64>> = (0..j)
            .map(|_| {
                (0..k)
                    .map(|_| if lattice { rng.random_range(-3i32..=3) as f64 } else { rng.random_range(-2.0..2.0) })
                    .collect()
            })
            .collect();
        if cols.iter().any(|c| c.iter().all(|v| *v == c[0])) {
            continue;
        }
        let m = rng.random_range(1..=2usize);
        let n = rng.random_range(1..=2usize);
        let kinds: Vec<SchemeKind> = [
            SchemeKind::Srs,
            SchemeKind::Segregated,
            SchemeKind::Partial { first_half_m: rng.random_range(0..=m) },
            SchemeKind::Matched,
            SchemeKind::RPartial,
            SchemeKind::Natural,
        ]
        .into_iter()
        .filter(|kind| SamplingScheme::new(kind.clone(), m, n).validate(k).is_ok())
        .collect();
        if kinds.len() < 2 {
            continue;
        }
        let a = kinds[rng.random_range(0..kinds.len())].clone();
        let b = kinds[rng.random_range(0..kinds.len())].clone();
        return Instance { cols, m, n, mech_a: a, mech_b: b };
    }
}

fn enumerate(pop: &Population, kind: &SchemeKind, m: usize, n: usize) -> ReferenceSet {
    build_reference(pop, &SamplingScheme::new(kind.clone(), m, n), ReferenceMode::Enumerate, 0).unwrap()
}

/// All distinct positive SMD values in the given sets: the cutoffs at which any `R^δ` can change.
fn candidate_grid(sets: &[&ReferenceSet]) -> Grid {
    let mut v: Vec<f64> = sets.iter().flat_map(|s| s.rows().flatten().copied()).filter(|x| *x > 0.0).collect();
    v.sort_by(f64::total_cmp);
    v.dedup();
    if v.is_empty() {
        v.push(1.0);
    }
    Grid::new(v).unwrap()
}

fn r_at(row: &[f64], d: f64) -> usize {
    row.iter().filter(|&&x| x >= d).count()
}

/// `at_least[r]` = reference weight with `R^δ ≥ r`, counted directly.
fn tail_table(reference: &ReferenceSet, d: f64) -> Vec<u64> {
    let j = reference.j();
    let mut hist = vec![0u64; j + 2];
    for (x, w) in reference.rows().zip(reference.weights()) {
        hist[r_at(x, d)] += w;
    }
    for r in (0..=j).rev() {
        hist[r] += hist[r + 1];
    }
    hist
}

/// Bounds: `0 ≤ p ≤ 1` for any split, `p > 0` for splits in the ideal support,
/// `0 < p(g,h) ≤ 1` for every reference split.
pub fn check_bounds(inst: &Instance) -> Result<(), String> {
    let pop = inst.population();
    let ideal = enumerate(&pop, &SchemeKind::Srs, inst.m, inst.n);
    let other = enumerate(&pop, &inst.mech_a, inst.m, inst.n);
    let grid = candidate_grid(&[&ideal, &other]);
    let fam = ecdf_family(&ideal, &grid).unwrap();
    for row in other.rows() {
        let v = pseudo_p(&SmdVector::new(row.to_vec()).unwrap(), &fam).unwrap().p.value();
        if !(0.0..=1.0).contains(&v) {
            return Err(format!("p = {v} outside [0, 1]"));
        }
        // Every mechanism here draws splits that SRS can also produce.
        if v <= 0.0 {
            return Err("p = 0 for a split in the ideal support".into());
        }
    }
    let dist = random_pseudo_p(&ideal, &fam).unwrap();
    if let Some(v) = dist.values().into_iter().find(|v| !(*v > 0.0 && *v <= 1.0)) {
        return Err(format!("random p = {v} outside (0, 1]"));
    }
    Ok(())
}

/// If some cutoff has `P(R_ref ≥ R_obs) ≤ c` then `p ≤ c`: equivalently `p` is at
/// most every single-cutoff tail, and equals the smallest one.
pub fn check_tail_bound(inst: &Instance) -> Result<(), String> {
    let pop = inst.population();
    let ideal = enumerate(&pop, &SchemeKind::Srs, inst.m, inst.n);
    let other = enumerate(&pop, &inst.mech_b, inst.m, inst.n);
    let grid = candidate_grid(&[&ideal, &other]);
    let fam = ecdf_family(&ideal, &grid).unwrap();
    let tables: Vec<Vec<u64>> = grid.as_slice().iter().map(|&d| tail_table(&ideal, d)).collect();
    for row in other.rows() {
        let p = pseudo_p(&SmdVector::new(row.to_vec()).unwrap(), &fam).unwrap().p.tail_weight;
        let mut smallest = u64::MAX;
        for (&d, table) in grid.as_slice().iter().zip(&tables) {
            let tail = table[r_at(row, d)];
            if p > tail {
                return Err(format!("p weight {p} exceeds tail weight {tail} at δ = {d}"));
            }
            smallest = smallest.min(tail);
        }
        if smallest != p {
            return Err(format!("p weight {p} differs from scanned minimum {smallest}"));
        }
    }
    Ok(())
}

/// `P(F_X(X − 1) ≤ a) = ⌈a⌉` for a non-degenerate distribution on naturals,
/// with `⌈a⌉` the smallest attained value of `F_X(X)` above `a`.
///
/// `support` holds distinct naturals with positive integer weights.
pub fn check_lemma(support: &[(u64, u64)]) -> Result<(), String> {
    if support.len() < 2 {
        return Err("lemma needs a non-degenerate distribution".into());
    }
    let total: u64 = support.iter().map(|s| s.1).sum();
    let cdf = |x: i64| -> u64 { support.iter().filter(|(v, _)| (*v as i64) <= x).map(|s| s.1).sum() };
    let attained: Vec<u64> = support.iter().map(|(v, _)| cdf(*v as i64)).collect();
    let top = attained.iter().copied().filter(|&f| f < total).max().unwrap();
    // a = t / (2·total): hits every attained level and every midpoint between levels.
    for t in 0..=2 * top {
        let lhs: u64 = support.iter().filter(|(v, _)| 2 * cdf(*v as i64 - 1) <= t).map(|s| s.1).sum();
        let ceil = attained.iter().copied().filter(|&f| 2 * f > t).min().unwrap();
        if lhs != ceil {
            return Err(format!("a = {t}/{}: P(F(X-1) <= a) = {lhs}/{total}, ceiling = {ceil}/{total}", 2 * total));
        }
    }
    Ok(())
}

pub fn random_lemma_support(seed: u64) -> Vec<(u64, u64)> {
    let mut rng = SeededRng::new(seed, 1).generator();
    let s = rng.random_range(2..=8usize);
    let mut values: Vec<u64> = (0..20).collect();
    for i in (1..values.len()).rev() {
        values.swap(i, rng.random_range(0..=i));
    }
    values.truncate(s);
    values.iter().map(|&v| (v, rng.random_range(1..=9u64))).collect()
}

/// For every cutoff with non-degenerate `R^δ` and every valid `c`:
/// `P(p(g,h) ≤ c) ≥ 1 − ⌈1 − c⌉`.
pub fn check_right_skew(inst: &Instance) -> Result<(), String> {
    let pop = inst.population();
    let ideal = enumerate(&pop, &SchemeKind::Srs, inst.m, inst.n);
    let grid = candidate_grid(&[&ideal]);
    let fam = ecdf_family(&ideal, &grid).unwrap();
    let dist = random_pseudo_p(&ideal, &fam).unwrap();
    let total = fam.total_weight();
    // Weight of random p-values with tail weight ≤ x, via sorted prefix sums.
    let mut tails: Vec<(u64, u64)> =
        dist.pseudo_ps().map(|p| p.tail_weight).zip(dist.weights().iter().copied()).collect();
    tails.sort_unstable();
    let mut prefix = Vec::with_capacity(tails.len());
    let mut acc = 0;
    for &(_, w) in &tails {
        acc += w;
        prefix.push(acc);
    }
    let at_most = |x: u64| match tails.partition_point(|(t, _)| *t <= x) {
        0 => 0,
        i => prefix[i - 1],
    };
    for g in 0..grid.len() {
        let levels = attained_levels(&fam, g);
        if levels.len() < 2 {
            continue;
        }
        let top = levels.iter().copied().filter(|&f| f < total).max().unwrap();
        // 1 − c = t / (2·total) for t in 0..=2·top.
        for t in 0..=2 * top {
            let ceil = levels.iter().copied().filter(|&f| 2 * f > t).min().unwrap();
            // p ≤ c  ⇔  2·tail ≤ 2·total − t
            let below = at_most((2 * total - t) / 2);
            if below + ceil < total {
                return Err(format!(
                    "δ = {}: P(p <= c) = {below}/{total} below 1 - ceil = {}/{total}",
                    grid.as_slice()[g],
                    total - ceil
                ));
            }
        }
    }
    Ok(())
}

/// Distinct values of `F_δ(R^δ)` over the reference support, as weights.
fn attained_levels(fam: &EcdfFamily, g: usize) -> Vec<u64> {
    let total = fam.total_weight();
    let mut levels: Vec<u64> = (0..=fam.j())
        .filter(|&r| fam.weight_exactly(g, r) > 0)
        .map(|r| total - fam.weight_at_least(g, r + 1))
        .collect();
    levels.sort_unstable();
    levels.dedup();
    levels
}

/// Double enumeration over two mechanisms `A` (for `(v, w)`) and `B` (for `(v*, w*)`):
/// returns `(P(p_A < p_B), sup_δ P(R^δ_A > R^δ_B))` as weights over `W_A · W_B`.
pub fn relative_size_sides(inst: &Instance) -> (u128, u128, u128) {
    let pop = inst.population();
    let ideal = enumerate(&pop, &SchemeKind::Srs, inst.m, inst.n);
    let a = enumerate(&pop, &inst.mech_a, inst.m, inst.n);
    let b = enumerate(&pop, &inst.mech_b, inst.m, inst.n);
    let grid = candidate_grid(&[&ideal, &a, &b]);
    let fam = ecdf_family(&ideal, &grid).unwrap();
    let tails = |set: &ReferenceSet| -> Vec<(u64, u64)> {
        set.rows()
            .zip(set.weights())
            .map(|(row, w)| (pseudo_p(&SmdVector::new(row.to_vec()).unwrap(), &fam).unwrap().p.tail_weight, *w))
            .collect()
    };
    let (ta, tb) = (tails(&a), tails(&b));
    let lhs: u128 = ta
        .iter()
        .map(|&(pa, wa)| wa as u128 * tb.iter().filter(|(pb, _)| pa < *pb).map(|x| x.1 as u128).sum::<u128>())
        .sum();

    let j = pop.j();
    let hist = |set: &ReferenceSet, d: f64| -> Vec<u128> {
        let mut h = vec![0u128; j + 1];
        for (row, w) in set.rows().zip(set.weights()) {
            h[r_at(row, d)] += *w as u128;
        }
        h
    };
    let rhs = grid
        .as_slice()
        .iter()
        .map(|&d| {
            let (ha, hb) = (hist(&a, d), hist(&b, d));
            (0..=j).map(|ra| ha[ra] * hb[..ra].iter().sum::<u128>()).sum::<u128>()
        })
        .max()
        .unwrap_or(0);
    let scale = a.total_weight() as u128 * b.total_weight() as u128;
    (lhs, rhs, scale)
}

/// `P(p(v,w) < p(v*,w*)) ≥ sup_δ P(R^δ_{v,w} > R^δ_{v*,w*})`.
pub fn check_relative_size(inst: &Instance) -> Result<(), String> {
    let (lhs, rhs, scale) = relative_size_sides(inst);
    if lhs < rhs {
        return Err(format!(
            "{} vs {}: P(p_A < p_B) = {:.4} < sup P(R_A > R_B) = {:.4}",
            inst.mech_a,
            inst.mech_b,
            lhs as f64 / scale as f64,
            rhs as f64 / scale as f64
        ));
    }
    Ok(())
}

/// The step-function property behind the grid formula: a grid holding every
/// candidate cutoff gives exactly the infimum over all `δ > 0` (checked
/// against cutoffs at every midpoint and below the smallest value), and the
/// regular .01 grid is never below it.
pub fn check_grid_equivalence(inst: &Instance) -> Result<(), String> {
    let pop = inst.population();
    let ideal = enumerate(&pop, &SchemeKind::Srs, inst.m, inst.n);
    let other = enumerate(&pop, &inst.mech_a, inst.m, inst.n);
    let exact = candidate_grid(&[&ideal, &other]);
    let mut dense: Vec<f64> = exact.as_slice().to_vec();
    dense.extend(exact.as_slice().windows(2).map(|w| 0.5 * (w[0] + w[1])));
    dense.push(0.5 * exact.as_slice()[0]);
    dense.sort_by(f64::total_cmp);
    dense.dedup();
    let dense = Grid::new(dense).unwrap();
    let regular = Grid::default_covering(exact.max());

    let fe = ecdf_family(&ideal, &exact).unwrap();
    let fd = ecdf_family(&ideal, &dense).unwrap();
    let fr = ecdf_family(&ideal, &regular).unwrap();
    for row in other.rows() {
        let v = SmdVector::new(row.to_vec()).unwrap();
        let pe = pseudo_p(&v, &fe).unwrap().p;
        let pd = pseudo_p(&v, &fd).unwrap().p;
        let pr = pseudo_p(&v, &fr).unwrap().p;
        if pe != pd {
            return Err(format!("candidate grid {} vs dense grid {}", pe.value(), pd.value()));
        }
        if !pe.le(&pr) {
            return Err(format!("regular grid {} below exact {}", pr.value(), pe.value()));
        }
    }
    Ok(())
}
