//! Finite population, two-arm splits and the descriptive statistics built on them.
//!
//! Covariates are stored column-major so that per-covariate scans over a
//! split touch one contiguous slice.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// The finite universe of `K` experimental units with `J` known covariates.
#[derive(Debug, Clone, PartialEq)]
pub struct Population {
    k: usize,
    j: usize,
    /// Column-major: covariate `j` occupies `values[j * k..(j + 1) * k]`.
    values: Vec<f64>,
    covariate_names: Vec<String>,
    unit_ids: Vec<String>,
    means: Vec<f64>,
    sds: Vec<f64>,
}

impl Population {
    /// Builds a population from one vector per covariate.
    pub fn from_columns(unit_ids: Vec<String>, covariate_names: Vec<String>, columns: Vec<Vec<f64>>) -> Result<Self> {
        let k = unit_ids.len();
        let j = covariate_names.len();
        if k < 2 {
            return Err(Error::InvalidPopulation(format!("need at least 2 units, got {k}")));
        }
        if j == 0 {
            return Err(Error::InvalidPopulation("need at least one covariate".into()));
        }
        if columns.len() != j {
            return Err(Error::DimensionMismatch { expected: j, found: columns.len() });
        }
        let mut values = Vec::with_capacity(k * j);
        for (name, col) in covariate_names.iter().zip(&columns) {
            if col.len() != k {
                return Err(Error::InvalidPopulation(format!(
                    "covariate '{name}' has {} values for {k} units",
                    col.len()
                )));
            }
            if let Some(pos) = col.iter().position(|v| !v.is_finite()) {
                return Err(Error::InvalidPopulation(format!(
                    "covariate '{name}' has a non-finite value for unit '{}'",
                    unit_ids[pos]
                )));
            }
            values.extend_from_slice(col);
        }

        let mut means = Vec::with_capacity(j);
        let mut sds = Vec::with_capacity(j);
        let mut degenerate = Vec::new();
        for (c, name) in covariate_names.iter().enumerate() {
            let col = &values[c * k..(c + 1) * k];
            let (mean, sd) = mean_sd(col);
            if sd.is_nan() || sd <= 0.0 {
                degenerate.push(name.clone());
            }
            means.push(mean);
            sds.push(sd);
        }
        if !degenerate.is_empty() {
            return Err(Error::ZeroVariance { columns: degenerate });
        }

        Ok(Population { k, j, values, covariate_names, unit_ids, means, sds })
    }

    /// Builds a population from one row per unit.
    pub fn from_rows(unit_ids: Vec<String>, covariate_names: Vec<String>, rows: &[Vec<f64>]) -> Result<Self> {
        let j = covariate_names.len();
        if let Some((i, row)) = rows.iter().enumerate().find(|(_, r)| r.len() != j) {
            return Err(Error::InvalidPopulation(format!("row {} has {} values, expected {j}", i + 1, row.len())));
        }
        let columns = (0..j).map(|c| rows.iter().map(|r| r[c]).collect()).collect();
        Self::from_columns(unit_ids, covariate_names, columns)
    }

    /// Population with generated ids `1..=K` and names `x1..xJ`.
    pub fn from_columns_unnamed(columns: Vec<Vec<f64>>) -> Result<Self> {
        let k = columns.first().map_or(0, Vec::len);
        let ids = (1..=k).map(|i| i.to_string()).collect();
        let names = (1..=columns.len()).map(|c| format!("x{c}")).collect();
        Self::from_columns(ids, names, columns)
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn j(&self) -> usize {
        self.j
    }

    pub fn column(&self, j: usize) -> &[f64] {
        &self.values[j * self.k..(j + 1) * self.k]
    }

    pub fn value(&self, unit: usize, j: usize) -> f64 {
        self.values[j * self.k + unit]
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.covariate_names
    }

    pub fn unit_ids(&self) -> &[String] {
        &self.unit_ids
    }

    /// Position of a unit id, if present.
    pub fn unit_index(&self, id: &str) -> Option<usize> {
        self.unit_ids.iter().position(|u| u == id)
    }

    /// Population means and SDs (denominator `K - 1`).
    pub fn moments(&self) -> (&[f64], &[f64]) {
        (&self.means, &self.sds)
    }

    /// SHA-256 over dimensions, labels and the exact bit patterns of all values.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.k as u64).to_le_bytes());
        h.update((self.j as u64).to_le_bytes());
        for s in self.unit_ids.iter().chain(&self.covariate_names) {
            h.update((s.len() as u64).to_le_bytes());
            h.update(s.as_bytes());
        }
        for v in &self.values {
            h.update(v.to_bits().to_le_bytes());
        }
        hex::encode(h.finalize())
    }
}

fn mean_sd(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, f64::NAN);
    }
    let ss: f64 = xs.iter().map(|x| (x - mean) * (x - mean)).sum();
    (mean, (ss / (n - 1.0)).sqrt())
}

/// Population means `x̄_{j,U}` and standard deviations `S_j`.
pub fn population_moments(pop: &Population) -> (Vec<f64>, Vec<f64>) {
    let (m, s) = pop.moments();
    (m.to_vec(), s.to_vec())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleMoments {
    pub means: Vec<f64>,
    /// `None` when the sample has a single unit.
    pub sds: Option<Vec<f64>>,
}

/// Means and SDs (denominator `|A| - 1`) over the units in `a`.
pub fn sample_moments(pop: &Population, a: &[usize]) -> Result<SampleMoments> {
    if a.is_empty() {
        return Err(Error::EmptyIndexSet);
    }
    if let Some(&bad) = a.iter().find(|&&i| i >= pop.k()) {
        return Err(Error::InvalidSplit(format!("index {bad} out of range for K={}", pop.k())));
    }
    let mut means = Vec::with_capacity(pop.j());
    let mut sds = Vec::with_capacity(pop.j());
    let mut buf = Vec::with_capacity(a.len());
    for j in 0..pop.j() {
        let col = pop.column(j);
        buf.clear();
        buf.extend(a.iter().map(|&i| col[i]));
        let (m, s) = mean_sd(&buf);
        means.push(m);
        sds.push(s);
    }
    let sds = (a.len() >= 2).then_some(sds);
    Ok(SampleMoments { means, sds })
}

/// Two disjoint arms `M` and `N`, as zero-based unit indices sorted ascending.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SplitSample {
    m: Vec<usize>,
    n: Vec<usize>,
}

impl SplitSample {
    pub fn new(mut m: Vec<usize>, mut n: Vec<usize>, k: usize) -> Result<Self> {
        if m.is_empty() || n.is_empty() {
            return Err(Error::InvalidSplit("both arms must be nonempty".into()));
        }
        m.sort_unstable();
        n.sort_unstable();
        let mut seen = vec![false; k];
        for &i in m.iter().chain(&n) {
            if i >= k {
                return Err(Error::InvalidSplit(format!("index {i} out of range for K={k}")));
            }
            if seen[i] {
                return Err(Error::InvalidSplit(format!("unit index {i} appears twice")));
            }
            seen[i] = true;
        }
        Ok(SplitSample { m, n })
    }

    /// Skips validation; callers guarantee disjoint, sorted, in-range arms.
    pub(crate) fn from_sorted_unchecked(m: Vec<usize>, n: Vec<usize>) -> Self {
        debug_assert!(m.windows(2).all(|w| w[0] < w[1]));
        debug_assert!(n.windows(2).all(|w| w[0] < w[1]));
        SplitSample { m, n }
    }

    pub fn m(&self) -> &[usize] {
        &self.m
    }

    pub fn n(&self) -> &[usize] {
        &self.n
    }

    pub fn sizes(&self) -> (usize, usize) {
        (self.m.len(), self.n.len())
    }

    pub fn swapped(&self) -> Self {
        SplitSample { m: self.n.clone(), n: self.m.clone() }
    }
}

/// Non-directional standardized mean differences, one per covariate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SmdVector(Vec<f64>);

impl SmdVector {
    pub fn new(deltas: Vec<f64>) -> Result<Self> {
        if let Some(d) = deltas.iter().find(|d| !(d.is_finite() && **d >= 0.0)) {
            return Err(Error::InvalidArgument(format!("SMD entries must be finite and >= 0, got {d}")));
        }
        Ok(SmdVector(deltas))
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
        self.0.iter().copied().fold(0.0, f64::max)
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

/// `Δ_j = |x̄_{j,M} − x̄_{j,N}| / S_j` for every covariate.
pub fn smd(pop: &Population, split: &SplitSample) -> SmdVector {
    let mut out = Vec::with_capacity(pop.j());
    smd_into(pop, split.m(), split.n(), &mut out);
    SmdVector(out)
}

/// Hot-path variant writing into a caller-owned buffer.
pub(crate) fn smd_into(pop: &Population, m: &[usize], n: &[usize], out: &mut Vec<f64>) {
    out.clear();
    let (_, sds) = pop.moments();
    let (fm, fn_) = (m.len() as f64, n.len() as f64);
    for (j, sd) in sds.iter().enumerate() {
        let col = pop.column(j);
        let sm: f64 = m.iter().map(|&i| col[i]).sum();
        let sn: f64 = n.iter().map(|&i| col[i]).sum();
        out.push((sm / fm - sn / fn_).abs() / sd);
    }
}

/// `R^δ`: number of covariates with `Δ_j ≥ δ`.
pub fn count_imbalanced(smd: &SmdVector, delta: f64) -> Result<usize> {
    if delta.is_nan() || delta <= 0.0 {
        return Err(Error::InvalidArgument(format!("cutoff must be positive, got {delta}")));
    }
    Ok(smd.0.iter().filter(|&&d| d >= delta).count())
}

/// Cutoffs of the ad hoc procedure: `δ` and the largest tolerated `R^δ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BalanceConfig {
    delta_cutoff: f64,
    max_imbalanced: usize,
}

impl BalanceConfig {
    pub fn new(delta_cutoff: f64, max_imbalanced: usize) -> Result<Self> {
        if !(delta_cutoff > 0.0 && delta_cutoff.is_finite()) {
            return Err(Error::InvalidArgument(format!("cutoff must be positive and finite, got {delta_cutoff}")));
        }
        Ok(BalanceConfig { delta_cutoff, max_imbalanced })
    }

    pub fn delta_cutoff(&self) -> f64 {
        self.delta_cutoff
    }

    pub fn max_imbalanced(&self) -> usize {
        self.max_imbalanced
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct AdhocOutcome {
    pub balanced: bool,
    pub r_delta: usize,
}

/// Declares the arms balanced when `R^δ ≤ r`.
pub fn adhoc_assess(smd: &SmdVector, cfg: &BalanceConfig) -> AdhocOutcome {
    let r_delta = smd.0.iter().filter(|&&d| d >= cfg.delta_cutoff).count();
    AdhocOutcome { balanced: r_delta <= cfg.max_imbalanced, r_delta }
}
