//! Simulation config (TOML).
//!
//! ```toml
//! seed = 1
//! iterations = 1000      # default for every scenario
//! mc_rounds = 10000      # reference rounds for Monte Carlo presets
//! p_cut = 0.05
//! p_star_cut = 0.20
//!
//! [[scenario]]
//! preset = "mc-scenario-5"
//!
//! [[scenario]]
//! name = "small"
//! k = 40
//! m_size = 5
//! n_size = 5
//! bias = 0.3
//! mode = "monte_carlo"   # or "enumerate"
//! rounds = 2000
//! partial_fixed = 2
//! designs = ["Randomized", "Matched"]
//! iterations = 50
//! ```
//!
//! A scenario either names a preset (whose fields may then be overridden) or
//! gives `k`, `m_size` and `n_size` itself.

use std::path::Path;

use covbal::simulation::{preset, Design, Scenario, DEFAULT_ITERATIONS, DEFAULT_MC_ROUNDS, SIM_J};
use covbal::ReferenceMode;
use serde::Deserialize;

use crate::error::{CliError, Result};

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub seed: Option<u64>,
    pub iterations: Option<usize>,
    pub mc_rounds: Option<u64>,
    pub p_cut: Option<f64>,
    pub p_star_cut: Option<f64>,
    #[serde(default, rename = "scenario")]
    pub scenarios: Vec<ScenarioEntry>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioEntry {
    pub preset: Option<String>,
    pub name: Option<String>,
    pub k: Option<usize>,
    pub m_size: Option<usize>,
    pub n_size: Option<usize>,
    pub bias: Option<f64>,
    pub j_dims: Option<usize>,
    pub mode: Option<ModeName>,
    pub rounds: Option<u64>,
    pub partial_fixed: Option<usize>,
    pub designs: Option<Vec<String>>,
    pub iterations: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModeName {
    Enumerate,
    MonteCarlo,
}

/// A scenario ready to run with its iteration count.
#[derive(Debug, Clone)]
pub struct Job {
    pub scenario: Scenario,
    pub iterations: usize,
}

impl SimConfig {
    pub fn parse(text: &str, what: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| CliError::Parse(format!("{what}: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn p_cut(&self) -> f64 {
        self.p_cut.unwrap_or(0.05)
    }

    pub fn p_star_cut(&self) -> f64 {
        self.p_star_cut.unwrap_or(0.20)
    }

    /// Resolves every entry to a validated scenario.
    pub fn jobs(&self) -> Result<Vec<Job>> {
        if self.scenarios.is_empty() {
            return Err(CliError::Validation("config has no [[scenario]] entries".into()));
        }
        for (key, v) in [("p_cut", self.p_cut), ("p_star_cut", self.p_star_cut)] {
            if let Some(v) = v {
                if !(0.0..=1.0).contains(&v) {
                    return Err(CliError::Validation(format!("{key} must lie in [0, 1], got {v}")));
                }
            }
        }
        let default_iters = self.iterations.unwrap_or(DEFAULT_ITERATIONS);
        let mc_rounds = self.mc_rounds.unwrap_or(DEFAULT_MC_ROUNDS);
        let mut names = std::collections::HashSet::new();
        self.scenarios
            .iter()
            .enumerate()
            .map(|(i, e)| {
                let job = e.resolve(i, default_iters, mc_rounds)?;
                if !names.insert(job.scenario.name.clone()) {
                    return Err(CliError::Validation(format!(
                        "scenario[{i}]: duplicate scenario name '{}'",
                        job.scenario.name
                    )));
                }
                Ok(job)
            })
            .collect()
    }
}

impl ScenarioEntry {
    fn resolve(&self, index: usize, default_iters: usize, mc_rounds: u64) -> Result<Job> {
        let at = |msg: String| CliError::Validation(format!("scenario[{index}]: {msg}"));
        let mut sc = match &self.preset {
            Some(name) => preset(name, self.rounds.unwrap_or(mc_rounds)).ok_or_else(|| {
                at(format!("unknown preset '{name}' (expected enum-scenario-1..16 or mc-scenario-1..8)"))
            })?,
            None => {
                let need = |v: Option<usize>, key: &str| {
                    v.ok_or_else(|| at(format!("missing field '{key}' (required when no preset is given)")))
                };
                Scenario {
                    name: format!("scenario-{}", index + 1),
                    k: need(self.k, "k")?,
                    m_size: need(self.m_size, "m_size")?,
                    n_size: need(self.n_size, "n_size")?,
                    bias: 0.0,
                    j_dims: SIM_J,
                    mode: ReferenceMode::MonteCarlo { rounds: mc_rounds },
                    partial_fixed: 1,
                    designs: Design::ALL.to_vec(),
                }
            }
        };
        if let Some(v) = &self.name {
            sc.name = v.clone();
        }
        if let Some(v) = self.k {
            sc.k = v;
        }
        if let Some(v) = self.m_size {
            sc.m_size = v;
        }
        if let Some(v) = self.n_size {
            sc.n_size = v;
        }
        if let Some(v) = self.bias {
            sc.bias = v;
        }
        if let Some(v) = self.j_dims {
            sc.j_dims = v;
        }
        if let Some(v) = self.partial_fixed {
            sc.partial_fixed = v;
        }
        let rounds = match sc.mode {
            ReferenceMode::MonteCarlo { rounds } => self.rounds.unwrap_or(rounds),
            ReferenceMode::Enumerate => self.rounds.unwrap_or(mc_rounds),
        };
        match self.mode {
            Some(ModeName::Enumerate) => sc.mode = ReferenceMode::Enumerate,
            Some(ModeName::MonteCarlo) => sc.mode = ReferenceMode::MonteCarlo { rounds },
            None => {
                if let ReferenceMode::MonteCarlo { .. } = sc.mode {
                    sc.mode = ReferenceMode::MonteCarlo { rounds };
                }
            }
        }
        if let Some(ds) = &self.designs {
            sc.designs = ds
                .iter()
                .map(|d| d.parse::<Design>().map_err(|e| at(format!("designs: {e}"))))
                .collect::<Result<_>>()?;
        }
        sc.validate().map_err(|e| match e {
            covbal::Error::Infeasible(msg) => CliError::Infeasible(format!("scenario[{index}]: {msg}")),
            other => at(other.to_string()),
        })?;
        let iterations = self.iterations.unwrap_or(default_iters);
        if iterations == 0 {
            return Err(at("iterations must be >= 1".into()));
        }
        Ok(Job { scenario: sc, iterations })
    }
}
