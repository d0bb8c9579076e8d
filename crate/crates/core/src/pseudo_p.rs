//! Pseudo p-values for covariate balance.
//!
//! For every cutoff `δ` on a grid, the reference set gives the distribution
//! `F†_δ` of `R^δ`, the number of covariates with SMD at least `δ` in a split
//! drawn under the ideal scheme. The pseudo p-value of an observed split is
//! `min_δ P(R^δ_ref ≥ R^δ_obs)`, and the standardized pseudo p-value is the
//! probability that a reference split scores a pseudo p-value no larger
//! than the observed one.
//!
//! Tail probabilities are kept as integer weights over a shared total, so
//! ties between the observed and reference p-values compare exactly.

use rayon::prelude::*;
use serde::Serialize;

use crate::data::{adhoc_assess, smd, BalanceConfig, Population, SmdVector, SplitSample};
use crate::error::{Error, Result};
use crate::reference::{Provenance, ReferenceSet};
use crate::sampling::{build_reference, ReferenceMode, SamplingScheme};
use crate::summary::{five_number, FiveNumber};

pub const DEFAULT_GRID_STEP: f64 = 0.01;
pub const DEFAULT_GRID_MAX: f64 = 3.0;

/// Strictly increasing positive cutoffs.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct Grid(Vec<f64>);

impl Grid {
    pub fn new(deltas: Vec<f64>) -> Result<Self> {
        if deltas.is_empty() {
            return Err(Error::InvalidGrid("grid is empty".into()));
        }
        if deltas.iter().any(|d| !(d.is_finite() && *d > 0.0)) {
            return Err(Error::InvalidGrid("grid values must be positive and finite".into()));
        }
        if deltas.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidGrid("grid must be strictly increasing".into()));
        }
        Ok(Grid(deltas))
    }

    /// `step, 2·step, …` up to the first point at or above `max`.
    pub fn regular(step: f64, max: f64) -> Result<Self> {
        if !(step > 0.0 && step.is_finite() && max.is_finite()) {
            return Err(Error::InvalidGrid(format!("bad grid step {step} or max {max}")));
        }
        let count = ((max / step) - 1e-9).ceil().max(1.0) as usize;
        if count > 10_000_000 {
            return Err(Error::InvalidGrid(format!("grid with {count} points is too large")));
        }
        // i / (1/step) keeps decimal steps exact (3 / 100 == 0.03, 3 * 0.01 != 0.03).
        let inv = (1.0 / step).round();
        let decimal = (inv * step - 1.0).abs() < 1e-12;
        let values = (1..=count).map(|i| if decimal { i as f64 / inv } else { i as f64 * step }).collect();
        Grid::new(values)
    }

    /// Step .01 up to `max(3.00, required + .01)`.
    pub fn default_covering(required: f64) -> Self {
        let max = DEFAULT_GRID_MAX.max(required + DEFAULT_GRID_STEP);
        Grid::regular(DEFAULT_GRID_STEP, max).expect("default grid parameters are valid")
    }

    /// Every distinct positive SMD in the reference set and the observed vectors.
    ///
    /// The minimum over these cutoffs equals the infimum over all `δ > 0`.
    pub fn exact<'a>(reference: &ReferenceSet, observed: impl IntoIterator<Item = &'a SmdVector>) -> Self {
        let mut vals: Vec<f64> = reference.rows().flatten().copied().collect();
        for o in observed {
            vals.extend_from_slice(o.as_slice());
        }
        vals.retain(|v| *v > 0.0);
        vals.sort_unstable_by(f64::total_cmp);
        vals.dedup();
        if vals.is_empty() {
            // Every SMD is zero: R^δ = 0 for all δ > 0, any single cutoff is exact.
            vals.push(1.0);
        }
        Grid(vals)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn max(&self) -> f64 {
        *self.0.last().expect("grid is nonempty")
    }

    pub fn info(&self) -> GridInfo {
        let max_spacing = self.0.windows(2).map(|w| w[1] - w[0]).fold(self.0[0], f64::max);
        GridInfo { points: self.0.len(), min: self.0[0], max: self.max(), max_spacing }
    }
}

/// How to choose the grid when assessing a split.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum GridSpec {
    /// Step .01 up to `max(3.00, largest SMD + .01)` over observed and reference rows.
    #[default]
    Default,
    /// `step, 2·step, …`, up to at least `max`, extended to cover every SMD involved.
    Regular { step: f64, max: f64 },
    /// Union of observed and reference SMD values.
    Exact,
    /// Used as given; assessment fails if it does not cover the SMDs involved.
    Explicit(Grid),
}

impl GridSpec {
    pub fn resolve(&self, reference: &ReferenceSet, observed: &[&SmdVector]) -> Result<Grid> {
        let required = observed.iter().map(|o| o.max()).fold(reference.max_smd(), f64::max);
        match self {
            GridSpec::Default => Ok(Grid::default_covering(required)),
            GridSpec::Regular { step, max } => {
                let mut g = Grid::regular(*step, *max)?;
                if g.max() < required {
                    g = Grid::regular(*step, required + step)?;
                }
                Ok(g)
            }
            GridSpec::Exact => Ok(Grid::exact(reference, observed.iter().copied())),
            GridSpec::Explicit(g) => Ok(g.clone()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GridInfo {
    pub points: usize,
    pub min: f64,
    pub max: f64,
    pub max_spacing: f64,
}

/// `R^δ` for every grid cutoff, given SMDs sorted ascending.
fn r_profile_sorted(sorted: &[f64], grid: &[f64], out: &mut [u32]) {
    let j = sorted.len();
    let mut below = 0;
    for (slot, &d) in out.iter_mut().zip(grid) {
        while below < j && sorted[below] < d {
            below += 1;
        }
        *slot = (j - below) as u32;
    }
}

fn sort_into(src: &[f64], buf: &mut Vec<f64>) {
    buf.clear();
    buf.extend_from_slice(src);
    buf.sort_unstable_by(f64::total_cmp);
}

/// `R^δ` of one SMD vector over the grid.
pub fn r_profile(smd: &SmdVector, grid: &Grid) -> Vec<usize> {
    let mut buf = Vec::new();
    sort_into(smd.as_slice(), &mut buf);
    let mut out = vec![0u32; grid.len()];
    r_profile_sorted(&buf, grid.as_slice(), &mut out);
    out.into_iter().map(|r| r as usize).collect()
}

/// The distributions `F†_δ` of `R^δ` over a reference set, for every grid cutoff.
#[derive(Debug, Clone, PartialEq)]
pub struct EcdfFamily {
    grid: Grid,
    j: usize,
    total: u64,
    /// `at_least[g * (J + 2) + r]` = reference weight with `R^{δ_g} ≥ r`, for `r = 0..=J+1`.
    at_least: Vec<u64>,
}

impl EcdfFamily {
    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn j(&self) -> usize {
        self.j
    }

    pub fn total_weight(&self) -> u64 {
        self.total
    }

    /// Reference weight with `R^δ ≥ r` at grid index `g`.
    pub fn weight_at_least(&self, g: usize, r: usize) -> u64 {
        if r > self.j {
            return 0;
        }
        self.at_least[g * (self.j + 2) + r]
    }

    /// Weight of reference rows with exactly `R^δ = r` at grid index `g`.
    pub fn weight_exactly(&self, g: usize, r: usize) -> u64 {
        self.weight_at_least(g, r) - self.weight_at_least(g, r + 1)
    }

    /// `F†_δ(a) = P(R^δ ≤ a)` at grid index `g`.
    pub fn cdf(&self, g: usize, a: i64) -> f64 {
        if a < 0 {
            return 0.0;
        }
        let a = a as usize;
        if a >= self.j {
            return 1.0;
        }
        (self.total - self.weight_at_least(g, a + 1)) as f64 / self.total as f64
    }

    /// Smallest tail weight `P(R^δ_ref ≥ R^δ)` over the grid and the first index attaining it.
    fn min_tail(&self, profile: &[u32]) -> (u64, usize) {
        let stride = self.j + 2;
        let mut best = (u64::MAX, 0);
        for (g, &r) in profile.iter().enumerate() {
            let t = self.at_least[g * stride + r as usize];
            if t < best.0 {
                best = (t, g);
            }
        }
        best
    }
}

/// Tabulates `R^δ` of every reference row at every grid cutoff.
pub fn ecdf_family(reference: &ReferenceSet, grid: &Grid) -> Result<EcdfFamily> {
    if reference.is_empty() {
        return Err(Error::EmptyReference);
    }
    if grid.max() < reference.max_smd() {
        log::debug!(
            "grid max {} below largest reference SMD {}; cutoffs above the grid are not evaluated",
            grid.max(),
            reference.max_smd()
        );
    }
    let j = reference.j();
    let gl = grid.len();
    let width = j + 1;
    let weights = reference.weights();
    let hist = (0..reference.len())
        .into_par_iter()
        .with_min_len(512)
        .fold(
            || (vec![0u64; gl * width], Vec::with_capacity(j), vec![0u32; gl]),
            |(mut h, mut buf, mut prof), i| {
                sort_into(reference.row(i), &mut buf);
                r_profile_sorted(&buf, grid.as_slice(), &mut prof);
                let w = weights[i];
                for (g, &r) in prof.iter().enumerate() {
                    h[g * width + r as usize] += w;
                }
                (h, buf, prof)
            },
        )
        .map(|(h, _, _)| h)
        .reduce(
            || vec![0u64; gl * width],
            |mut a, b| {
                a.iter_mut().zip(&b).for_each(|(x, y)| *x += y);
                a
            },
        );

    let stride = j + 2;
    let mut at_least = vec![0u64; gl * stride];
    for g in 0..gl {
        let mut acc = 0u64;
        for r in (0..=j).rev() {
            acc += hist[g * width + r];
            at_least[g * stride + r] = acc;
        }
    }
    Ok(EcdfFamily { grid: grid.clone(), j, total: reference.total_weight(), at_least })
}

/// A pseudo p-value as a tail weight over the reference total.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct PseudoP {
    pub tail_weight: u64,
    pub total_weight: u64,
}

impl PseudoP {
    pub fn value(&self) -> f64 {
        self.tail_weight as f64 / self.total_weight as f64
    }

    /// `self ≤ other`, compared exactly.
    pub fn le(&self, other: &PseudoP) -> bool {
        self.tail_weight as u128 * other.total_weight as u128 <= other.tail_weight as u128 * self.total_weight as u128
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PseudoPOutcome {
    pub p: PseudoP,
    /// Smallest grid cutoff attaining the minimum.
    pub argmin_delta: f64,
}

fn check_coverage(grid: &Grid, required: f64) -> Result<()> {
    if grid.max() < required {
        return Err(Error::GridCoverage { grid_max: grid.max(), required });
    }
    Ok(())
}

/// Pseudo p-value of an observed SMD vector against a family.
pub fn pseudo_p(observed: &SmdVector, fam: &EcdfFamily) -> Result<PseudoPOutcome> {
    if observed.len() != fam.j {
        return Err(Error::DimensionMismatch { expected: fam.j, found: observed.len() });
    }
    check_coverage(&fam.grid, observed.max())?;
    let mut buf = Vec::with_capacity(fam.j);
    sort_into(observed.as_slice(), &mut buf);
    let mut prof = vec![0u32; fam.grid.len()];
    r_profile_sorted(&buf, fam.grid.as_slice(), &mut prof);
    let (tail, g) = fam.min_tail(&prof);
    Ok(PseudoPOutcome {
        p: PseudoP { tail_weight: tail, total_weight: fam.total },
        argmin_delta: fam.grid.as_slice()[g],
    })
}

/// Pseudo p-values of every reference row, each scored against the full family.
#[derive(Debug, Clone, PartialEq)]
pub struct PDistribution {
    total: u64,
    /// Per reference row, in row order.
    tails: Vec<u64>,
    weights: Vec<u64>,
    /// `(tail, cumulative weight of rows with tail ≤ this)`, sorted by tail.
    cumulative: Vec<(u64, u64)>,
}

impl PDistribution {
    fn new(total: u64, tails: Vec<u64>, weights: Vec<u64>) -> Self {
        let mut pairs: Vec<(u64, u64)> = tails.iter().copied().zip(weights.iter().copied()).collect();
        pairs.sort_unstable();
        let mut cumulative: Vec<(u64, u64)> = Vec::new();
        let mut acc = 0;
        for (t, w) in pairs {
            acc += w;
            match cumulative.last_mut() {
                Some(last) if last.0 == t => last.1 = acc,
                _ => cumulative.push((t, acc)),
            }
        }
        PDistribution { total, tails, weights, cumulative }
    }

    pub fn len(&self) -> usize {
        self.tails.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tails.is_empty()
    }

    /// p-value of each reference row, in row order.
    pub fn values(&self) -> Vec<f64> {
        self.tails.iter().map(|&t| t as f64 / self.total as f64).collect()
    }

    pub fn pseudo_ps(&self) -> impl Iterator<Item = PseudoP> + '_ {
        self.tails.iter().map(|&t| PseudoP { tail_weight: t, total_weight: self.total })
    }

    pub fn weights(&self) -> &[u64] {
        &self.weights
    }

    /// Distinct p-values with their probabilities, ascending.
    pub fn support(&self) -> Vec<(f64, f64)> {
        let mut prev = 0;
        self.cumulative
            .iter()
            .map(|&(t, cum)| {
                let mass = cum - prev;
                prev = cum;
                (t as f64 / self.total as f64, mass as f64 / self.total as f64)
            })
            .collect()
    }

    /// Weight of reference rows whose p-value is at most `p`.
    pub fn weight_at_most(&self, p: &PseudoP) -> u64 {
        // tail_i / total <= p.tail / p.total, compared exactly.
        let idx = self.cumulative.partition_point(|&(t, _)| {
            (t as u128) * (p.total_weight as u128) <= (p.tail_weight as u128) * (self.total as u128)
        });
        if idx == 0 {
            0
        } else {
            self.cumulative[idx - 1].1
        }
    }

    /// `p* = P(p(g,h) ≤ p)`.
    pub fn standardize(&self, p: &PseudoP) -> f64 {
        self.weight_at_most(p) as f64 / self.total as f64
    }
}

/// Pseudo p-value of every reference split, treated in turn as the observed one.
pub fn random_pseudo_p(reference: &ReferenceSet, fam: &EcdfFamily) -> Result<PDistribution> {
    if reference.j() != fam.j {
        return Err(Error::DimensionMismatch { expected: fam.j, found: reference.j() });
    }
    if reference.total_weight() != fam.total {
        return Err(Error::InvalidArgument("family was built from a different reference set".into()));
    }
    check_coverage(&fam.grid, reference.max_smd())?;
    let gl = fam.grid.len();
    let tails: Vec<u64> = (0..reference.len())
        .into_par_iter()
        .with_min_len(512)
        .map_init(
            || (Vec::with_capacity(fam.j), vec![0u32; gl]),
            |(buf, prof), i| {
                sort_into(reference.row(i), buf);
                r_profile_sorted(buf, fam.grid.as_slice(), prof);
                fam.min_tail(prof).0
            },
        )
        .collect();
    Ok(PDistribution::new(fam.total, tails, reference.weights().to_vec()))
}

/// Fraction of `dist` at or below `p`.
pub fn standardized_pseudo_p(p: f64, dist: &[f64]) -> Result<f64> {
    if dist.is_empty() {
        return Err(Error::InvalidArgument("p-value distribution is empty".into()));
    }
    Ok(dist.iter().filter(|&&q| q <= p).count() as f64 / dist.len() as f64)
}

/// Share of reference splits the ad hoc procedure would accept at `(δ, r)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AdhocRate {
    pub delta: f64,
    pub max_imbalanced: usize,
    pub balanced_weight: u64,
    pub fraction: f64,
}

pub fn adhoc_rates(reference: &ReferenceSet, configs: &[BalanceConfig]) -> Vec<AdhocRate> {
    configs
        .iter()
        .map(|cfg| {
            let balanced_weight: u64 = reference
                .rows()
                .zip(reference.weights())
                .filter(|(row, _)| {
                    let v = SmdVector::new(row.to_vec()).expect("reference rows are valid SMDs");
                    adhoc_assess(&v, cfg).balanced
                })
                .map(|(_, w)| *w)
                .sum();
            AdhocRate {
                delta: cfg.delta_cutoff(),
                max_imbalanced: cfg.max_imbalanced(),
                balanced_weight,
                fraction: balanced_weight as f64 / reference.total_weight() as f64,
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BalanceReport {
    pub p: f64,
    /// In `[0, 1]`; human-readable output shows it as a percentage.
    pub p_star: f64,
    pub p_tail_weight: u64,
    pub reference_weight: u64,
    pub argmin_delta: f64,
    pub smds: SmdVector,
    pub smd_summary: FiveNumber,
    pub r_profile: Vec<usize>,
    pub grid: GridInfo,
    pub reference_rows: usize,
    pub provenance: Provenance,
}

/// A reference set with its family and p-value distribution, reusable across
/// many observed splits of the same sizes.
#[derive(Debug, Clone)]
pub struct Assessor {
    reference: ReferenceSet,
    family: EcdfFamily,
    distribution: PDistribution,
}

impl Assessor {
    pub fn new(reference: ReferenceSet, grid: &Grid) -> Result<Self> {
        let family = ecdf_family(&reference, grid)?;
        let distribution = random_pseudo_p(&reference, &family)?;
        Ok(Assessor { reference, family, distribution })
    }

    pub fn reference(&self) -> &ReferenceSet {
        &self.reference
    }

    pub fn family(&self) -> &EcdfFamily {
        &self.family
    }

    pub fn distribution(&self) -> &PDistribution {
        &self.distribution
    }

    /// `(p, p*)` of an SMD vector.
    pub fn score(&self, observed: &SmdVector) -> Result<(PseudoPOutcome, f64)> {
        let out = pseudo_p(observed, &self.family)?;
        let p_star = self.distribution.standardize(&out.p);
        Ok((out, p_star))
    }

    pub fn report(&self, observed: SmdVector) -> Result<BalanceReport> {
        let (out, p_star) = self.score(&observed)?;
        let grid = self.family.grid();
        Ok(BalanceReport {
            p: out.p.value(),
            p_star,
            p_tail_weight: out.p.tail_weight,
            reference_weight: out.p.total_weight,
            argmin_delta: out.argmin_delta,
            smd_summary: five_number(observed.as_slice()).expect("J >= 1"),
            r_profile: r_profile(&observed, grid),
            smds: observed,
            grid: grid.info(),
            reference_rows: self.reference.len(),
            provenance: self.reference.provenance().clone(),
        })
    }
}

/// Assesses `split` against a prebuilt reference set.
pub fn assess_with_reference(
    pop: &Population,
    split: &SplitSample,
    reference: ReferenceSet,
    grid: &GridSpec,
) -> Result<(BalanceReport, Assessor)> {
    let (m, n) = split.sizes();
    reference.check_matches(pop, m, n)?;
    let observed = smd(pop, split);
    let grid = grid.resolve(&reference, &[&observed])?;
    let assessor = Assessor::new(reference, &grid)?;
    let report = assessor.report(observed)?;
    Ok((report, assessor))
}

/// Builds the reference set under `scheme` and assesses `split` against it.
pub fn assess(
    pop: &Population,
    split: &SplitSample,
    scheme: &SamplingScheme,
    grid: &GridSpec,
    mode: ReferenceMode,
    seed: u64,
) -> Result<BalanceReport> {
    if split.sizes() != (scheme.m_size, scheme.n_size) {
        return Err(Error::InvalidArgument(format!(
            "split sizes {:?} differ from scheme sizes ({}, {})",
            split.sizes(),
            scheme.m_size,
            scheme.n_size
        )));
    }
    let reference = build_reference(pop, scheme, mode, seed)?;
    Ok(assess_with_reference(pop, split, reference, grid)?.0)
}
