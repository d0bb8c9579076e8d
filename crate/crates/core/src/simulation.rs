//! Design-comparison simulation: generate populations with a mean shift in
//! the second half, draw one split per study design, and score every split
//! against the SRS reference distribution of its population.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{smd, Population, SmdVector};
use crate::error::{Error, Result};
use crate::pseudo_p::{Assessor, GridSpec};
use crate::rng::{derive_seed, SeededRng};
use crate::sampling::{build_reference, ReferenceMode, SamplingScheme, SchemeKind};
use crate::summary::{box_stats, BoxStats};

pub const SIM_J: usize = 10;
pub const DEFAULT_MC_ROUNDS: u64 = 10_000;
pub const DEFAULT_ITERATIONS: usize = 1_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Design {
    Randomized,
    Segregated,
    Partial,
    Matched,
    #[serde(rename = "R_Partial")]
    RPartial,
    Natural,
}

impl Design {
    pub const ALL: [Design; 6] =
        [Design::Randomized, Design::Segregated, Design::Partial, Design::Matched, Design::RPartial, Design::Natural];

    pub fn label(self) -> &'static str {
        match self {
            Design::Randomized => "Randomized",
            Design::Segregated => "Segregated",
            Design::Partial => "Partial",
            Design::Matched => "Matched",
            Design::RPartial => "R_Partial",
            Design::Natural => "Natural",
        }
    }

    pub fn scheme_kind(self, partial_fixed: usize) -> SchemeKind {
        match self {
            Design::Randomized => SchemeKind::Srs,
            Design::Segregated => SchemeKind::Segregated,
            Design::Partial => SchemeKind::Partial { first_half_m: partial_fixed },
            Design::Matched => SchemeKind::Matched,
            Design::RPartial => SchemeKind::RPartial,
            Design::Natural => SchemeKind::Natural,
        }
    }
}

impl fmt::Display for Design {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Design {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_lowercase().replace(['_', '-'], "");
        Design::ALL
            .into_iter()
            .find(|d| d.label().to_ascii_lowercase().replace('_', "") == key)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown design '{s}'")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    pub k: usize,
    pub m_size: usize,
    pub n_size: usize,
    pub bias: f64,
    pub j_dims: usize,
    pub mode: ReferenceMode,
    /// Units of `M` that the Partial design takes from the first half.
    pub partial_fixed: usize,
    pub designs: Vec<Design>,
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        if !(self.bias.is_finite() && self.bias >= 0.0) {
            return Err(Error::InvalidArgument(format!("bias must be >= 0, got {}", self.bias)));
        }
        if self.j_dims == 0 {
            return Err(Error::InvalidArgument("j_dims must be >= 1".into()));
        }
        if self.designs.is_empty() {
            return Err(Error::InvalidArgument("scenario lists no designs".into()));
        }
        if let ReferenceMode::MonteCarlo { rounds: 0 } = self.mode {
            return Err(Error::InvalidArgument("Monte Carlo rounds must be >= 1".into()));
        }
        SamplingScheme::srs(self.m_size, self.n_size).validate(self.k)?;
        for d in &self.designs {
            self.scheme(*d).validate(self.k).map_err(|e| match e {
                Error::Infeasible(msg) => Error::Infeasible(format!("{} in scenario '{}': {msg}", d, self.name)),
                other => other,
            })?;
        }
        Ok(())
    }

    pub fn scheme(&self, d: Design) -> SamplingScheme {
        SamplingScheme::new(d.scheme_kind(self.partial_fixed), self.m_size, self.n_size)
    }
}

/// Enumeration scenarios 1–16: `K` of 12, 16, 20 (3/3) and 20 (4/4), each with bias 0, .5, 1, 2.
pub fn enumeration_preset(index: usize) -> Option<Scenario> {
    if !(1..=16).contains(&index) {
        return None;
    }
    let (k, size) = [(12, 2), (16, 2), (20, 3), (20, 4)][(index - 1) / 4];
    let bias = [0.0, 0.5, 1.0, 2.0][(index - 1) % 4];
    Some(Scenario {
        name: format!("enum-scenario-{index}"),
        k,
        m_size: size,
        n_size: size,
        bias,
        j_dims: SIM_J,
        mode: ReferenceMode::Enumerate,
        partial_fixed: if index <= 12 { 1 } else { 2 },
        designs: Design::ALL.to_vec(),
    })
}

/// Monte Carlo scenarios 1–8: `K = 100` (20/20) with bias 0, .1, .25, .5, .75,
/// then `K = 400` (40/40) with bias 0, .1, .25.
pub fn monte_carlo_preset(index: usize, rounds: u64) -> Option<Scenario> {
    if !(1..=8).contains(&index) {
        return None;
    }
    let (k, size, bias) = match index {
        1..=5 => (100, 20, [0.0, 0.1, 0.25, 0.5, 0.75][index - 1]),
        _ => (400, 40, [0.0, 0.1, 0.25][index - 6]),
    };
    Some(Scenario {
        name: format!("mc-scenario-{index}"),
        k,
        m_size: size,
        n_size: size,
        bias,
        j_dims: SIM_J,
        mode: ReferenceMode::MonteCarlo { rounds },
        partial_fixed: 8,
        designs: Design::ALL.to_vec(),
    })
}

/// Looks up `enum-scenario-<i>` or `mc-scenario-<i>`.
pub fn preset(name: &str, mc_rounds: u64) -> Option<Scenario> {
    let name = name.trim();
    if let Some(i) = name.strip_prefix("enum-scenario-") {
        return enumeration_preset(i.parse().ok()?);
    }
    if let Some(i) = name.strip_prefix("mc-scenario-") {
        return monte_carlo_preset(i.parse().ok()?, mc_rounds);
    }
    None
}

/// First `⌊K/2⌋` units i.i.d. `N(0, 1)`, the rest i.i.d. `N(bias, 1)`, column by column.
pub fn generate_population(sc: &Scenario, rng: SeededRng) -> Result<Population> {
    let half = sc.k / 2;
    let shifted = Normal::new(sc.bias, 1.0).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let standard = Normal::new(0.0, 1.0).expect("unit normal");
    // A degenerate column has probability zero; retry on the next stream if it happens.
    for attempt in 0..16 {
        let mut g = SeededRng::new(rng.seed, rng.stream_id.wrapping_add(attempt << 32)).generator();
        let columns: Vec<Vec<f64>> = (0..sc.j_dims)
            .map(|_| {
                (0..sc.k).map(|i| if i < half { standard.sample(&mut g) } else { shifted.sample(&mut g) }).collect()
            })
            .collect();
        match Population::from_columns_unnamed(columns) {
            Err(Error::ZeroVariance { columns }) => {
                log::warn!("regenerating population with degenerate columns {columns:?}");
            }
            other => return other,
        }
    }
    Err(Error::InvalidPopulation("could not generate a non-degenerate population".into()))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IterationResult {
    /// In the scenario's design order.
    pub p: Vec<f64>,
    pub p_star: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimulationResult {
    pub scenario: Scenario,
    pub seed: u64,
    pub iterations: Vec<IterationResult>,
}

impl SimulationResult {
    pub fn designs(&self) -> &[Design] {
        &self.scenario.designs
    }

    /// p values of one design across iterations.
    pub fn p_values(&self, d: usize) -> Vec<f64> {
        self.iterations.iter().map(|it| it.p[d]).collect()
    }

    pub fn p_star_values(&self, d: usize) -> Vec<f64> {
        self.iterations.iter().map(|it| it.p_star[d]).collect()
    }
}

/// Seeds used by one iteration: population stream, design draw seed and reference seed.
fn iteration_seeds(seed: u64, iteration: u64) -> (SeededRng, u64, u64) {
    let it = derive_seed(seed, iteration);
    (SeededRng::new(it, 0), derive_seed(it, 1), derive_seed(it, 2))
}

/// One iteration: fresh population, one split per design, one shared SRS reference set.
pub fn run_iteration(sc: &Scenario, seed: u64, iteration: u64) -> Result<IterationResult> {
    let (pop_rng, draw_seed, ref_seed) = iteration_seeds(seed, iteration);
    let pop = generate_population(sc, pop_rng)?;
    let observed: Vec<SmdVector> = sc
        .designs
        .iter()
        .enumerate()
        .map(|(i, d)| {
            let plan = sc.scheme(*d).plan(sc.k)?;
            let split = plan.draw(&mut SeededRng::new(draw_seed, i as u64).generator());
            Ok(smd(&pop, &split))
        })
        .collect::<Result<_>>()?;
    let reference = build_reference(&pop, &SamplingScheme::srs(sc.m_size, sc.n_size), sc.mode, ref_seed)?;
    let refs: Vec<&SmdVector> = observed.iter().collect();
    let grid = GridSpec::Default.resolve(&reference, &refs)?;
    let assessor = Assessor::new(reference, &grid)?;
    let mut p = Vec::with_capacity(observed.len());
    let mut p_star = Vec::with_capacity(observed.len());
    for o in &observed {
        let (out, ps) = assessor.score(o)?;
        p.push(out.p.value());
        p_star.push(ps);
    }
    Ok(IterationResult { p, p_star })
}

/// Runs `iterations` independent replications in parallel; results are in
/// iteration order and do not depend on the thread count.
pub fn run_scenario(sc: &Scenario, iterations: usize, seed: u64) -> Result<SimulationResult> {
    sc.validate()?;
    let results =
        (0..iterations as u64).into_par_iter().map(|i| run_iteration(sc, seed, i)).collect::<Result<Vec<_>>>()?;
    Ok(SimulationResult { scenario: sc.clone(), seed, iterations: results })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DesignShare {
    pub design: Design,
    pub share: f64,
}

/// Fraction of iterations in which each design has the largest p; ties share the credit.
pub fn best_design_shares(res: &SimulationResult) -> Vec<DesignShare> {
    let nd = res.designs().len();
    let mut credit = vec![0.0; nd];
    for it in &res.iterations {
        let best = it.p.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let winners: Vec<usize> = (0..nd).filter(|&d| it.p[d] == best).collect();
        let each = 1.0 / winners.len() as f64;
        for d in winners {
            credit[d] += each;
        }
    }
    let n = res.iterations.len().max(1) as f64;
    res.designs().iter().zip(credit).map(|(&design, c)| DesignShare { design, share: c / n }).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ThresholdShare {
    pub design: Design,
    pub p_below: f64,
    pub p_star_below: f64,
}

/// Fractions of iterations with `p < p_cut` and with `p* < p_star_cut`.
pub fn threshold_shares(res: &SimulationResult, p_cut: f64, p_star_cut: f64) -> Vec<ThresholdShare> {
    let n = res.iterations.len().max(1) as f64;
    res.designs()
        .iter()
        .enumerate()
        .map(|(d, &design)| {
            let p_low = res.iterations.iter().filter(|it| it.p[d] < p_cut).count();
            let ps_low = res.iterations.iter().filter(|it| it.p_star[d] < p_star_cut).count();
            ThresholdShare { design, p_below: p_low as f64 / n, p_star_below: ps_low as f64 / n }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DesignBoxplot {
    pub design: Design,
    pub p: BoxStats,
    pub p_star: BoxStats,
}

pub fn boxplot_summary(res: &SimulationResult) -> Vec<DesignBoxplot> {
    if res.iterations.is_empty() {
        return Vec::new();
    }
    res.designs()
        .iter()
        .enumerate()
        .map(|(d, &design)| DesignBoxplot {
            design,
            p: box_stats(&res.p_values(d)).expect("nonempty"),
            p_star: box_stats(&res.p_star_values(d)).expect("nonempty"),
        })
        .collect()
}

fn csv_err(e: csv::Error) -> Error {
    Error::InvalidArgument(format!("writing CSV: {e}"))
}

/// Tidy rows `scenario,design,iteration,p,p_star`.
pub fn write_results_csv<W: Write>(w: W, results: &[SimulationResult]) -> Result<()> {
    let mut cw = csv::Writer::from_writer(w);
    cw.write_record(["scenario", "design", "iteration", "p", "p_star"]).map_err(csv_err)?;
    for res in results {
        for (i, it) in res.iterations.iter().enumerate() {
            for (d, design) in res.designs().iter().enumerate() {
                cw.write_record([
                    res.scenario.name.as_str(),
                    design.label(),
                    &(i + 1).to_string(),
                    &it.p[d].to_string(),
                    &it.p_star[d].to_string(),
                ])
                .map_err(csv_err)?;
            }
        }
    }
    cw.flush().map_err(|e| Error::InvalidArgument(e.to_string()))
}

/// One row per scenario, one column per design in `Design::ALL` order; blank for designs not run.
fn write_wide<W: Write>(
    w: W,
    results: &[SimulationResult],
    cell: impl Fn(&SimulationResult) -> Vec<(Design, f64)>,
) -> Result<()> {
    let mut cw = csv::Writer::from_writer(w);
    let mut header = vec!["scenario", "k", "bias", "iterations"];
    header.extend(Design::ALL.iter().map(|d| d.label()));
    cw.write_record(&header).map_err(csv_err)?;
    for res in results {
        let cells = cell(res);
        let mut rec = vec![
            res.scenario.name.clone(),
            res.scenario.k.to_string(),
            res.scenario.bias.to_string(),
            res.iterations.len().to_string(),
        ];
        for d in Design::ALL {
            rec.push(cells.iter().find(|(x, _)| *x == d).map(|(_, v)| v.to_string()).unwrap_or_default());
        }
        cw.write_record(&rec).map_err(csv_err)?;
    }
    cw.flush().map_err(|e| Error::InvalidArgument(e.to_string()))
}

pub fn write_best_design_csv<W: Write>(w: W, results: &[SimulationResult]) -> Result<()> {
    write_wide(w, results, |r| best_design_shares(r).into_iter().map(|s| (s.design, s.share)).collect())
}

pub fn write_p_below_csv<W: Write>(w: W, results: &[SimulationResult], p_cut: f64) -> Result<()> {
    write_wide(w, results, |r| threshold_shares(r, p_cut, 0.0).into_iter().map(|s| (s.design, s.p_below)).collect())
}

pub fn write_p_star_below_csv<W: Write>(w: W, results: &[SimulationResult], p_star_cut: f64) -> Result<()> {
    write_wide(w, results, |r| {
        threshold_shares(r, 0.0, p_star_cut).into_iter().map(|s| (s.design, s.p_star_below)).collect()
    })
}

/// Long format: one row per (scenario, design, statistic); outliers `;`-separated.
pub fn write_boxplot_csv<W: Write>(w: W, results: &[SimulationResult]) -> Result<()> {
    let mut cw = csv::Writer::from_writer(w);
    cw.write_record([
        "scenario",
        "design",
        "statistic",
        "min",
        "q1",
        "median",
        "q3",
        "max",
        "whisker_low",
        "whisker_high",
        "outliers",
    ])
    .map_err(csv_err)?;
    for res in results {
        for b in boxplot_summary(res) {
            for (stat, s) in [("p", &b.p), ("p_star", &b.p_star)] {
                let f = s.five;
                let outliers = s.outliers.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(";");
                cw.write_record([
                    res.scenario.name.clone(),
                    b.design.label().to_string(),
                    stat.to_string(),
                    f.min.to_string(),
                    f.q1.to_string(),
                    f.median.to_string(),
                    f.q3.to_string(),
                    f.max.to_string(),
                    s.whisker_low.to_string(),
                    s.whisker_high.to_string(),
                    outliers,
                ])
                .map_err(csv_err)?;
            }
        }
    }
    cw.flush().map_err(|e| Error::InvalidArgument(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> Scenario {
        Scenario {
            name: "tiny".into(),
            k: 12,
            m_size: 2,
            n_size: 2,
            bias: 1.0,
            j_dims: 3,
            mode: ReferenceMode::MonteCarlo { rounds: 200 },
            partial_fixed: 1,
            designs: Design::ALL.to_vec(),
        }
    }

    #[test]
    fn presets_follow_the_scenario_table() {
        let s = enumeration_preset(7).unwrap();
        assert_eq!((s.k, s.m_size, s.bias, s.partial_fixed), (16, 2, 1.0, 1));
        let s = enumeration_preset(14).unwrap();
        assert_eq!((s.k, s.m_size, s.bias, s.partial_fixed), (20, 4, 0.5, 2));
        let s = monte_carlo_preset(8, 2000).unwrap();
        assert_eq!((s.k, s.m_size, s.bias, s.partial_fixed), (400, 40, 0.25, 8));
        assert_eq!(preset("mc-scenario-5", 10).unwrap().bias, 0.75);
        assert!(preset("mc-scenario-9", 10).is_none());
        for i in 1..=16 {
            enumeration_preset(i).unwrap().validate().unwrap();
        }
        for i in 1..=8 {
            monte_carlo_preset(i, 10).unwrap().validate().unwrap();
        }
    }

    #[test]
    fn design_labels_parse() {
        for d in Design::ALL {
            assert_eq!(d.label().parse::<Design>().unwrap(), d);
        }
        assert_eq!("r-partial".parse::<Design>().unwrap(), Design::RPartial);
        assert!("random".parse::<Design>().is_err());
    }

    #[test]
    fn population_halves() {
        let mut sc = tiny();
        sc.k = 100;
        sc.bias = 2.0;
        let pop = generate_population(&sc, SeededRng::new(3, 0)).unwrap();
        assert_eq!((pop.k(), pop.j()), (100, 3));
        for j in 0..3 {
            let col = pop.column(j);
            let lo: f64 = col[..50].iter().sum::<f64>() / 50.0;
            let hi: f64 = col[50..].iter().sum::<f64>() / 50.0;
            assert!(lo.abs() < 0.6, "first-half mean {lo}");
            assert!((hi - 2.0).abs() < 0.6, "second-half mean {hi}");
        }
        let again = generate_population(&sc, SeededRng::new(3, 0)).unwrap();
        assert_eq!(pop, again);
    }

    #[test]
    fn aggregates_on_handmade_results() {
        let mut sc = tiny();
        sc.designs = vec![Design::Randomized, Design::Segregated];
        let res = SimulationResult {
            scenario: sc,
            seed: 0,
            iterations: vec![
                IterationResult { p: vec![0.5, 0.5], p_star: vec![0.1, 0.1] },
                IterationResult { p: vec![0.9, 0.01], p_star: vec![0.9, 0.3] },
            ],
        };
        let best = best_design_shares(&res);
        assert_eq!(best[0].share, 0.75);
        assert_eq!(best[1].share, 0.25);
        let th = threshold_shares(&res, 0.05, 0.2);
        assert_eq!((th[0].p_below, th[0].p_star_below), (0.0, 0.5));
        assert_eq!((th[1].p_below, th[1].p_star_below), (0.5, 0.5));
    }

    #[test]
    fn single_design_wins_everything() {
        let mut sc = tiny();
        sc.designs = vec![Design::Matched];
        let res = run_scenario(&sc, 5, 1).unwrap();
        assert_eq!(best_design_shares(&res)[0].share, 1.0);
    }

    #[test]
    fn run_is_reproducible_and_bounded() {
        let sc = tiny();
        let a = run_scenario(&sc, 6, 42).unwrap();
        let b = run_scenario(&sc, 6, 42).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.iterations.len(), 6);
        for it in &a.iterations {
            assert!(it.p.iter().chain(&it.p_star).all(|v| (0.0..=1.0).contains(v)));
        }
        let sum: f64 = best_design_shares(&a).iter().map(|s| s.share).sum();
        assert!((sum - 1.0).abs() < 1e-12);
    }

    #[test]
    fn infeasible_design_is_reported() {
        let mut sc = tiny();
        sc.m_size = 4;
        sc.n_size = 4;
        assert!(matches!(sc.validate(), Err(Error::Infeasible(_))));
    }

    #[test]
    fn csv_writers_shape() {
        let res = run_scenario(&tiny(), 2, 5).unwrap();
        let mut buf = Vec::new();
        write_results_csv(&mut buf, std::slice::from_ref(&res)).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 1 + 2 * 6);
        assert!(text.starts_with("scenario,design,iteration,p,p_star\n"));
        let mut buf = Vec::new();
        write_best_design_csv(&mut buf, std::slice::from_ref(&res)).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("scenario,k,bias,iterations,Randomized,Segregated,Partial,Matched,R_Partial,Natural"));
        let mut buf = Vec::new();
        write_boxplot_csv(&mut buf, std::slice::from_ref(&res)).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 1 + 12);
    }
}
