//! Producing two-arm splits from a population: exhaustive enumeration,
//! seeded draws under each study design, and reference sets for the
//! pseudo p-value.
//!
//! Every scheme compiles into a [`Plan`]: a mixture of components, each a
//! sequence of steps "choose `size` units for arm X uniformly from `base`
//! minus every unit already chosen". The same plan drives random draws and
//! exact enumeration, so both always agree on the support of a scheme.
//!
//! The first half of the population is units `0..K/2`; with odd `K` the
//! extra unit belongs to the second half.

use std::fmt;
use std::str::FromStr;

use itertools::Itertools;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Binomial, Distribution};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{smd_into, Population, SplitSample};
use crate::error::{Error, Result};
use crate::reference::{Provenance, ReferenceSet};
use crate::rng::SeededRng;

/// Default upper bound on the number of enumerated splits.
pub const DEFAULT_ENUMERATION_CAP: u128 = 10_000_000;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SchemeKind {
    /// Simple random sampling of both arms from the whole population.
    Srs,
    /// Pick one cluster uniformly, then randomize it into the two arms.
    Cluster(Vec<Vec<usize>>),
    /// `N` from the first half, `M` from the second half.
    Segregated,
    /// `N` and `first_half_m` units of `M` from the first half, the rest of `M` from the second.
    Partial { first_half_m: usize },
    /// Both arms from the first half.
    Matched,
    /// `Partial` with the first-half share of `M` drawn from `Binomial(|M|, 1/2)`.
    RPartial,
    /// `N` from the first half, then `M` by SRS from the remaining units.
    Natural,
}

impl fmt::Display for SchemeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SchemeKind::Srs => f.write_str("srs"),
            SchemeKind::Cluster(parts) => {
                let body = parts.iter().map(|c| c.iter().map(|i| (i + 1).to_string()).join(",")).join("|");
                write!(f, "cluster:{body}")
            }
            SchemeKind::Segregated => f.write_str("segregated"),
            SchemeKind::Partial { first_half_m } => write!(f, "partial:{first_half_m}"),
            SchemeKind::Matched => f.write_str("matched"),
            SchemeKind::RPartial => f.write_str("r_partial"),
            SchemeKind::Natural => f.write_str("natural"),
        }
    }
}

/// Parses the labels written by `Display`. Cluster members are 1-based row positions.
impl FromStr for SchemeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let lower = s.to_ascii_lowercase();
        let kind = match lower.as_str() {
            "srs" | "randomized" => SchemeKind::Srs,
            "segregated" => SchemeKind::Segregated,
            "matched" => SchemeKind::Matched,
            "r_partial" | "rpartial" => SchemeKind::RPartial,
            "natural" => SchemeKind::Natural,
            _ => {
                if let Some(rest) = lower.strip_prefix("partial:") {
                    let first_half_m =
                        rest.parse().map_err(|_| Error::InvalidArgument(format!("bad partial count in '{s}'")))?;
                    SchemeKind::Partial { first_half_m }
                } else if let Some(rest) = lower.strip_prefix("cluster:") {
                    let parts = rest
                        .split('|')
                        .map(|c| {
                            c.split(',')
                                .map(|i| match i.trim().parse::<usize>() {
                                    Ok(v) if v >= 1 => Ok(v - 1),
                                    _ => Err(Error::InvalidArgument(format!("bad cluster member '{i}' in '{s}'"))),
                                })
                                .collect::<Result<Vec<_>>>()
                        })
                        .collect::<Result<Vec<_>>>()?;
                    SchemeKind::Cluster(parts)
                } else {
                    return Err(Error::InvalidArgument(format!("unknown sampling scheme '{s}'")));
                }
            }
        };
        Ok(kind)
    }
}

/// A scheme together with the arm sizes `(|M|, |N|)`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SamplingScheme {
    pub kind: SchemeKind,
    pub m_size: usize,
    pub n_size: usize,
}

impl SamplingScheme {
    pub fn new(kind: SchemeKind, m_size: usize, n_size: usize) -> Self {
        SamplingScheme { kind, m_size, n_size }
    }

    pub fn srs(m_size: usize, n_size: usize) -> Self {
        Self::new(SchemeKind::Srs, m_size, n_size)
    }

    /// Checks that every outcome of the scheme is realisable on `k` units.
    pub fn validate(&self, k: usize) -> Result<()> {
        let (m, n) = (self.m_size, self.n_size);
        if m == 0 || n == 0 {
            return Err(Error::Infeasible(format!("arm sizes must be >= 1, got ({m}, {n})")));
        }
        let (h1, h2) = (k / 2, k - k / 2);
        let need = |ok: bool, what: String| if ok { Ok(()) } else { Err(Error::Infeasible(what)) };
        match &self.kind {
            SchemeKind::Srs => need(m + n <= k, format!("|M|+|N| = {} exceeds K = {k}", m + n)),
            SchemeKind::Cluster(parts) => {
                if parts.is_empty() {
                    return Err(Error::Infeasible("cluster partition is empty".into()));
                }
                let mut seen = vec![false; k];
                for (c, part) in parts.iter().enumerate() {
                    for &i in part {
                        if i >= k {
                            return Err(Error::Infeasible(format!(
                                "cluster {} has unit {} outside the population",
                                c + 1,
                                i + 1
                            )));
                        }
                        if seen[i] {
                            return Err(Error::Infeasible(format!("unit {} is in two clusters", i + 1)));
                        }
                        seen[i] = true;
                    }
                    if part.len() < m + n {
                        return Err(Error::Infeasible(format!(
                            "cluster {} has {} units, fewer than |M|+|N| = {}",
                            c + 1,
                            part.len(),
                            m + n
                        )));
                    }
                }
                Ok(())
            }
            SchemeKind::Segregated => need(n <= h1 && m <= h2, format!("segregated needs |N| <= {h1} and |M| <= {h2}")),
            SchemeKind::Partial { first_half_m: f } => need(
                *f <= m && n + f <= h1 && m - f <= h2,
                format!("partial:{f} needs {f} <= |M|, |N|+{f} <= {h1} and |M|-{f} <= {h2}"),
            ),
            SchemeKind::Matched => need(m + n <= h1, format!("matched needs |M|+|N| <= {h1}")),
            SchemeKind::RPartial => {
                need(m + n <= h1 && m <= h2, format!("r_partial needs |M|+|N| <= {h1} and |M| <= {h2}"))
            }
            SchemeKind::Natural => need(n <= h1 && m + n <= k, format!("natural needs |N| <= {h1} and |M|+|N| <= {k}")),
        }
    }

    /// Compiles the scheme for a population of `k` units.
    pub fn plan(&self, k: usize) -> Result<Plan> {
        self.validate(k)?;
        let (m, n) = (self.m_size, self.n_size);
        let all: Vec<usize> = (0..k).collect();
        let first: Vec<usize> = (0..k / 2).collect();
        let second: Vec<usize> = (k / 2..k).collect();
        let step = |base: &Vec<usize>, size, arm| Step { base: base.clone(), size, arm };
        let partial = |f: usize| Component {
            steps: vec![step(&first, f, Arm::M), step(&first, n, Arm::N), step(&second, m - f, Arm::M)],
        };
        let (components, mixture) = match &self.kind {
            SchemeKind::Srs => {
                (vec![Component { steps: vec![step(&all, m, Arm::M), step(&all, n, Arm::N)] }], Mixture::Single)
            }
            SchemeKind::Cluster(parts) => (
                parts
                    .iter()
                    .map(|p| {
                        let mut p = p.clone();
                        p.sort_unstable();
                        Component { steps: vec![step(&p, m, Arm::M), step(&p, n, Arm::N)] }
                    })
                    .collect(),
                Mixture::Uniform,
            ),
            SchemeKind::Segregated => {
                (vec![Component { steps: vec![step(&first, n, Arm::N), step(&second, m, Arm::M)] }], Mixture::Single)
            }
            SchemeKind::Partial { first_half_m } => (vec![partial(*first_half_m)], Mixture::Single),
            SchemeKind::Matched => {
                (vec![Component { steps: vec![step(&first, n, Arm::N), step(&first, m, Arm::M)] }], Mixture::Single)
            }
            SchemeKind::RPartial => ((0..=m).map(partial).collect(), Mixture::Binomial),
            SchemeKind::Natural => {
                (vec![Component { steps: vec![step(&first, n, Arm::N), step(&all, m, Arm::M)] }], Mixture::Single)
            }
        };
        Ok(Plan { k, components, mixture })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Arm {
    M,
    N,
}

#[derive(Debug, Clone)]
struct Step {
    base: Vec<usize>,
    size: usize,
    arm: Arm,
}

#[derive(Debug, Clone)]
struct Component {
    steps: Vec<Step>,
}

/// How a component is selected.
#[derive(Debug, Clone, Copy)]
enum Mixture {
    Single,
    Uniform,
    /// Component `f` has probability `C(c−1, f) / 2^(c−1)` where `c` is the component count.
    Binomial,
}

/// A compiled sampling scheme.
#[derive(Debug, Clone)]
pub struct Plan {
    k: usize,
    components: Vec<Component>,
    mixture: Mixture,
}

impl Plan {
    /// Draws one split using the given generator.
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> SplitSample {
        let idx = match self.mixture {
            Mixture::Single => 0,
            Mixture::Uniform => rng.random_range(0..self.components.len()),
            Mixture::Binomial => {
                let trials = (self.components.len() - 1) as u64;
                Binomial::new(trials, 0.5).expect("p = 1/2 is valid").sample(rng) as usize
            }
        };
        let mut chosen = vec![false; self.k];
        let (mut m, mut n) = (Vec::new(), Vec::new());
        let mut pool = Vec::with_capacity(self.k);
        for step in &self.components[idx].steps {
            pool.clear();
            pool.extend(step.base.iter().copied().filter(|&i| !chosen[i]));
            let (picked, _) = pool.partial_shuffle(rng, step.size);
            for &i in picked.iter() {
                chosen[i] = true;
            }
            match step.arm {
                Arm::M => m.extend_from_slice(picked),
                Arm::N => n.extend_from_slice(picked),
            }
        }
        m.sort_unstable();
        n.sort_unstable();
        SplitSample::from_sorted_unchecked(m, n)
    }

    /// Number of distinct outcomes per component.
    fn component_counts(&self) -> Vec<u128> {
        self.components
            .iter()
            .map(|c| {
                let mut chosen = vec![false; self.k];
                let mut count: u128 = 1;
                for step in &c.steps {
                    let avail: Vec<usize> = step.base.iter().copied().filter(|&i| !chosen[i]).collect();
                    count = count.saturating_mul(binomial(avail.len() as u64, step.size as u64));
                    for &i in avail.iter().take(step.size) {
                        chosen[i] = true;
                    }
                }
                count
            })
            .collect()
    }

    /// Total number of outcomes over all components.
    pub fn support_size(&self) -> u128 {
        self.component_counts().iter().fold(0u128, |a, &b| a.saturating_add(b))
    }

    /// Every outcome with an integer weight proportional to its probability.
    pub fn enumerate(&self, cap: u128) -> Result<Vec<(u64, SplitSample)>> {
        let counts = self.component_counts();
        let total = counts.iter().fold(0u128, |a, &b| a.saturating_add(b));
        if total > cap {
            return Err(Error::EnumerationCap { count: total, cap });
        }
        // Outcome probability in component c is mix_c / count_c; scale by the
        // lcm of the reduced denominators to get integers.
        let c_len = self.components.len() as u64;
        let mix: Vec<(u128, u128)> = (0..self.components.len())
            .map(|c| match self.mixture {
                Mixture::Single => (1, 1),
                Mixture::Uniform => (1, c_len as u128),
                Mixture::Binomial => (binomial(c_len - 1, c as u64), 1u128 << (c_len - 1)),
            })
            .collect();
        let mut scale: u128 = 1;
        let mut fracs = Vec::with_capacity(counts.len());
        for (&(num, den), &count) in mix.iter().zip(&counts) {
            if num == 0 || count == 0 {
                fracs.push((0, 1));
                continue;
            }
            let den = den.checked_mul(count).ok_or(Error::EnumerationCap { count: total, cap })?;
            let g = gcd(num, den);
            let (num, den) = (num / g, den / g);
            scale = lcm(scale, den).ok_or(Error::EnumerationCap { count: total, cap })?;
            fracs.push((num, den));
        }
        let mut out = Vec::with_capacity(total as usize);
        for (comp, &(num, den)) in self.components.iter().zip(&fracs) {
            if num == 0 {
                continue;
            }
            let w = u64::try_from(num * (scale / den)).map_err(|_| Error::EnumerationCap { count: total, cap })?;
            let mut chosen = vec![false; self.k];
            enumerate_steps(&comp.steps, &mut chosen, &mut Vec::new(), &mut Vec::new(), &mut |m, n| {
                let mut m = m.to_vec();
                let mut n = n.to_vec();
                m.sort_unstable();
                n.sort_unstable();
                out.push((w, SplitSample::from_sorted_unchecked(m, n)));
            });
        }
        Ok(out)
    }
}

fn enumerate_steps(
    steps: &[Step],
    chosen: &mut Vec<bool>,
    m: &mut Vec<usize>,
    n: &mut Vec<usize>,
    emit: &mut dyn FnMut(&[usize], &[usize]),
) {
    let Some((step, rest)) = steps.split_first() else {
        emit(m, n);
        return;
    };
    let avail: Vec<usize> = step.base.iter().copied().filter(|&i| !chosen[i]).collect();
    for combo in avail.into_iter().combinations(step.size) {
        for &i in &combo {
            chosen[i] = true;
        }
        let arm = if step.arm == Arm::M { &mut *m } else { &mut *n };
        let before = arm.len();
        arm.extend_from_slice(&combo);
        enumerate_steps(rest, chosen, m, n, emit);
        let arm = if step.arm == Arm::M { &mut *m } else { &mut *n };
        arm.truncate(before);
        for &i in &combo {
            chosen[i] = false;
        }
    }
}

/// Exact binomial coefficient, saturating at `u128::MAX`.
pub fn binomial(n: u64, k: u64) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        // acc * (n - i) / (i + 1) stays integral at every step.
        let num = match acc.checked_mul((n - i) as u128) {
            Some(v) => v,
            None => return u128::MAX,
        };
        acc = num / (i as u128 + 1);
    }
    acc
}

fn gcd(mut a: u128, mut b: u128) -> u128 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

fn lcm(a: u128, b: u128) -> Option<u128> {
    (a / gcd(a, b)).checked_mul(b)
}

/// Every ordered pair of disjoint index sets with `|M| = m_size`, `|N| = n_size`
/// drawn from `0..k`, in lexicographic order (`M` first, then `N`).
pub fn enumerate_splits(k: usize, m_size: usize, n_size: usize) -> Result<Vec<SplitSample>> {
    enumerate_splits_capped(k, m_size, n_size, DEFAULT_ENUMERATION_CAP)
}

pub fn enumerate_splits_capped(k: usize, m_size: usize, n_size: usize, cap: u128) -> Result<Vec<SplitSample>> {
    let plan = SamplingScheme::srs(m_size, n_size).plan(k)?;
    Ok(plan.enumerate(cap)?.into_iter().map(|(_, s)| s).collect())
}

/// Draws one split under `scheme`.
pub fn draw_split(pop: &Population, scheme: &SamplingScheme, rng: SeededRng) -> Result<SplitSample> {
    let plan = scheme.plan(pop.k())?;
    Ok(plan.draw(&mut rng.generator()))
}

/// Cluster sampling: one cluster chosen uniformly, then randomized into two arms.
pub fn cluster_draw(
    pop: &Population,
    partition: &[Vec<usize>],
    sizes: (usize, usize),
    rng: SeededRng,
) -> Result<SplitSample> {
    let scheme = SamplingScheme::new(SchemeKind::Cluster(partition.to_vec()), sizes.0, sizes.1);
    draw_split(pop, &scheme, rng)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum ReferenceMode {
    Enumerate,
    MonteCarlo { rounds: u64 },
}

impl fmt::Display for ReferenceMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ReferenceMode::Enumerate => f.write_str("enumerate"),
            ReferenceMode::MonteCarlo { rounds } => write!(f, "monte_carlo:{rounds}"),
        }
    }
}

impl FromStr for ReferenceMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        if s == "enumerate" {
            return Ok(ReferenceMode::Enumerate);
        }
        if let Some(r) = s.strip_prefix("monte_carlo:") {
            let rounds = r.parse().map_err(|_| Error::InvalidArgument(format!("bad round count '{r}'")))?;
            return Ok(ReferenceMode::MonteCarlo { rounds });
        }
        Err(Error::InvalidArgument(format!("unknown reference mode '{s}'")))
    }
}

/// SMD rows for every split of the ideal scheme (enumerated) or for
/// `rounds` independent draws; round `r` uses stream `r` of `seed`.
pub fn build_reference(
    pop: &Population,
    scheme: &SamplingScheme,
    mode: ReferenceMode,
    seed: u64,
) -> Result<ReferenceSet> {
    build_reference_capped(pop, scheme, mode, seed, DEFAULT_ENUMERATION_CAP)
}

pub fn build_reference_capped(
    pop: &Population,
    scheme: &SamplingScheme,
    mode: ReferenceMode,
    seed: u64,
    cap: u128,
) -> Result<ReferenceSet> {
    let plan = scheme.plan(pop.k())?;
    let j = pop.j();
    let (rows, weights) = match mode {
        ReferenceMode::Enumerate => {
            let splits = plan.enumerate(cap)?;
            let rows: Vec<f64> = splits
                .par_iter()
                .with_min_len(256)
                .flat_map_iter(|(_, s)| {
                    let mut buf = Vec::with_capacity(j);
                    smd_into(pop, s.m(), s.n(), &mut buf);
                    buf
                })
                .collect();
            let weights: Vec<u64> = splits.iter().map(|(w, _)| *w).collect();
            (rows, weights)
        }
        ReferenceMode::MonteCarlo { rounds } => {
            if rounds == 0 {
                return Err(Error::InvalidArgument("Monte Carlo rounds must be >= 1".into()));
            }
            let rows: Vec<f64> = (0..rounds as usize)
                .into_par_iter()
                .with_min_len(256)
                .flat_map_iter(|r| {
                    let split = plan.draw(&mut SeededRng::new(seed, r as u64).generator());
                    let mut buf = Vec::with_capacity(j);
                    smd_into(pop, split.m(), split.n(), &mut buf);
                    buf
                })
                .collect();
            (rows, vec![1; rounds as usize])
        }
    };
    let provenance = Provenance {
        scheme: scheme.kind.to_string(),
        m_size: scheme.m_size,
        n_size: scheme.n_size,
        mode,
        seed,
        population_hash: pop.content_hash(),
    };
    ReferenceSet::new(j, rows, weights, provenance)
}
