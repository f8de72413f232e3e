//! Study configuration files.
//!
//! A power study lists scenarios explicitly, as a full grid, or both:
//!
//! ```toml
//! study = "power"
//! replicates = 200
//! seed = 7
//! budget = 499
//! alpha = 0.05
//!
//! [[cells]]
//! n_units = 100
//! n_times = 4
//! lag = 1
//! tau = 0.3
//!
//! [grid]
//! n_units = [100, 200]
//! n_times = [6]
//! lag = [0, 1]
//! tau = [0.0, 0.03]
//! ```
//!
//! A coverage study:
//!
//! ```toml
//! study = "coverage"
//! replicates = 100
//! n_units = 100
//! n_times = 8
//! taus = [0.1, 0.3, 0.6, 0.4, 0.2, 0.0, 0.0, 0.0]
//! interactions = [0, 1]
//! lags = [0, 1, 2]
//! level = 0.9
//! ```
//!
//! Either form may instead name a preset (`preset = "sim1-desk"`) and
//! override `replicates`, `seed` and `budget`.

use serde::Deserialize;

use super::generate::{Sim1Config, Variances};
use super::study::{CoverageConfig, Method, PowerConfig};
use crate::combine::Sidedness;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum StudyConfig {
    Power(PowerConfig),
    Coverage(CoverageConfig),
}

impl StudyConfig {
    pub fn replicates(&self) -> usize {
        match self {
            StudyConfig::Power(p) => p.replicates,
            StudyConfig::Coverage(c) => c.replicates,
        }
    }

    pub fn set_replicates(&mut self, n: usize) {
        match self {
            StudyConfig::Power(p) => p.replicates = n,
            StudyConfig::Coverage(c) => c.replicates = n,
        }
    }

    pub fn set_seed(&mut self, seed: u64) {
        match self {
            StudyConfig::Power(p) => p.seed = seed,
            StudyConfig::Coverage(c) => c.seed = seed,
        }
    }

    pub fn set_budget(&mut self, budget: usize) {
        match self {
            StudyConfig::Power(p) => p.budget = budget,
            StudyConfig::Coverage(c) => c.budget = budget,
        }
    }

    /// Number of progress steps reported by a run.
    pub fn n_steps(&self) -> usize {
        match self {
            StudyConfig::Power(p) => p.cells.len(),
            StudyConfig::Coverage(c) => c.interactions.len(),
        }
    }
}

/// Preset names accepted by [`preset`].
pub const PRESETS: [&str; 4] = ["sim1-desk", "sim1-full", "sim2-desk", "sim2-full"];

const SIM1_N: [usize; 5] = [100, 200, 300, 400, 500];
const SIM1_T: [usize; 5] = [4, 6, 8, 10, 12];
const SIM1_LAG: [usize; 5] = [0, 1, 2, 3, 4];
const SIM1_TAU: [f64; 2] = [0.0, 0.03];
const SIM1_TAU_SWEEP: [f64; 5] = [0.01, 0.02, 0.03, 0.04, 0.05];

/// One-axis-at-a-time sweeps around N = 300, T = 8, lag 2, followed by the
/// effect-size sweep at that point. Duplicates are dropped.
fn sim1_cells() -> Vec<Sim1Config> {
    let cell = |n_units, n_times, lag, tau| Sim1Config { n_units, n_times, lag, tau, variances: Variances::default() };
    let mut cells: Vec<Sim1Config> = Vec::new();
    let mut push = |c: Sim1Config| {
        if !cells.contains(&c) {
            cells.push(c);
        }
    };
    for tau in SIM1_TAU {
        for n in SIM1_N {
            push(cell(n, 8, 2, tau));
        }
        for t in SIM1_T {
            push(cell(300, t, 2, tau));
        }
        for l in SIM1_LAG {
            push(cell(300, 8, l, tau));
        }
    }
    for tau in SIM1_TAU_SWEEP {
        push(cell(300, 8, 2, tau));
    }
    cells
}

/// Built-in study definitions. The desk variants are sized for a laptop.
pub fn preset(name: &str) -> Result<StudyConfig> {
    let power = |replicates, budget| {
        StudyConfig::Power(PowerConfig {
            cells: sim1_cells(),
            replicates,
            seed: 0,
            budget,
            alpha: 0.05,
            side: Sidedness::TwoSided,
        })
    };
    let coverage = |n_units, replicates, budget| {
        StudyConfig::Coverage(CoverageConfig { n_units, replicates, budget, ..CoverageConfig::default() })
    };
    match name {
        "sim1-desk" => Ok(power(300, 499)),
        "sim1-full" => Ok(power(1000, 1000)),
        "sim2-desk" => Ok(coverage(100, 200, 499)),
        "sim2-full" => Ok(coverage(200, 1000, 1000)),
        other => Err(Error::InvalidConfig(format!("unknown preset `{other}`; known: {}", PRESETS.join(", ")))),
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct CellFile {
    n_units: usize,
    n_times: usize,
    lag: usize,
    #[serde(default)]
    tau: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct GridFile {
    n_units: Vec<usize>,
    n_times: Vec<usize>,
    lag: Vec<usize>,
    tau: Vec<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct StudyFile {
    study: Option<String>,
    preset: Option<String>,
    replicates: Option<usize>,
    seed: Option<u64>,
    budget: Option<usize>,
    variances: Option<Variances>,
    // power
    alpha: Option<f64>,
    side: Option<Sidedness>,
    cells: Option<Vec<CellFile>>,
    grid: Option<GridFile>,
    // coverage
    n_units: Option<usize>,
    n_times: Option<usize>,
    taus: Option<Vec<f64>>,
    interactions: Option<Vec<u8>>,
    lags: Option<Vec<usize>>,
    level: Option<f64>,
    methods: Option<Vec<Method>>,
}

impl StudyFile {
    fn power_keys(&self) -> Vec<&'static str> {
        let mut keys = Vec::new();
        if self.alpha.is_some() {
            keys.push("alpha");
        }
        if self.side.is_some() {
            keys.push("side");
        }
        if self.cells.is_some() {
            keys.push("cells");
        }
        if self.grid.is_some() {
            keys.push("grid");
        }
        keys
    }

    fn coverage_keys(&self) -> Vec<&'static str> {
        let mut keys = Vec::new();
        for (k, set) in [
            ("n_units", self.n_units.is_some()),
            ("n_times", self.n_times.is_some()),
            ("taus", self.taus.is_some()),
            ("interactions", self.interactions.is_some()),
            ("lags", self.lags.is_some()),
            ("level", self.level.is_some()),
            ("methods", self.methods.is_some()),
        ] {
            if set {
                keys.push(k);
            }
        }
        keys
    }
}

fn reject_keys(keys: &[&str], study: &str) -> Result<()> {
    match keys.first() {
        Some(k) => Err(Error::InvalidConfig(format!("key `{k}` does not apply to a {study} study"))),
        None => Ok(()),
    }
}

/// Parses a TOML study configuration.
pub fn parse_study_config(text: &str) -> Result<StudyConfig> {
    let file: StudyFile = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
    let mut cfg = match (&file.preset, file.study.as_deref()) {
        (Some(name), _) => {
            let mut keys = file.power_keys();
            keys.extend(file.coverage_keys());
            if file.study.is_some() {
                keys.insert(0, "study");
            }
            if file.variances.is_some() {
                keys.push("variances");
            }
            if let Some(k) = keys.first() {
                return Err(Error::InvalidConfig(format!(
                    "key `{k}` cannot be combined with a preset; only replicates, seed and budget may be overridden"
                )));
            }
            preset(name)?
        }
        (None, Some("power")) => {
            reject_keys(&file.coverage_keys(), "power")?;
            let variances = file.variances.unwrap_or_default();
            let mut cells = Vec::new();
            for c in file.cells.iter().flatten() {
                cells.push(Sim1Config { n_units: c.n_units, n_times: c.n_times, lag: c.lag, tau: c.tau, variances });
            }
            if let Some(g) = &file.grid {
                for &n_units in &g.n_units {
                    for &n_times in &g.n_times {
                        for &lag in &g.lag {
                            for &tau in &g.tau {
                                cells.push(Sim1Config { n_units, n_times, lag, tau, variances });
                            }
                        }
                    }
                }
            }
            if cells.is_empty() {
                return Err(Error::InvalidConfig("a power study needs `cells` or a `grid`".into()));
            }
            StudyConfig::Power(PowerConfig {
                cells,
                replicates: 0,
                seed: 0,
                budget: 499,
                alpha: file.alpha.unwrap_or(0.05),
                side: file.side.unwrap_or(Sidedness::TwoSided),
            })
        }
        (None, Some("coverage")) => {
            reject_keys(&file.power_keys(), "coverage")?;
            let d = CoverageConfig::default();
            StudyConfig::Coverage(CoverageConfig {
                n_units: file.n_units.unwrap_or(d.n_units),
                n_times: file.n_times.unwrap_or(d.n_times),
                taus: file.taus.clone().unwrap_or(d.taus),
                interactions: file.interactions.clone().unwrap_or(d.interactions),
                lags: file.lags.clone().unwrap_or(d.lags),
                level: file.level.unwrap_or(d.level),
                replicates: 0,
                seed: 0,
                budget: 499,
                variances: file.variances.unwrap_or_default(),
                methods: file.methods.clone().unwrap_or(d.methods),
            })
        }
        (None, Some(other)) => {
            return Err(Error::InvalidConfig(format!("unknown study `{other}`; expected `power` or `coverage`")))
        }
        (None, None) => return Err(Error::InvalidConfig("missing `study` (or `preset`)".into())),
    };
    match file.replicates {
        Some(0) => return Err(Error::InvalidConfig("replicates must be positive".into())),
        Some(n) => cfg.set_replicates(n),
        None if file.preset.is_none() => return Err(Error::InvalidConfig("missing `replicates`".into())),
        None => {}
    }
    if let Some(s) = file.seed {
        cfg.set_seed(s);
    }
    match file.budget {
        Some(0) => return Err(Error::ZeroBudget),
        Some(b) => cfg.set_budget(b),
        None => {}
    }
    if let StudyConfig::Coverage(c) = &cfg {
        if c.interactions.iter().any(|&m| m > 3) {
            return Err(Error::InvalidConfig("interactions must be in 0..=3".into()));
        }
        if !(c.level > 0.0 && c.level < 1.0) {
            return Err(Error::InvalidConfig(format!("level must be in (0, 1), got {}", c.level)));
        }
    }
    Ok(cfg)
}
