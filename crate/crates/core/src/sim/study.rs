use std::fmt;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Binomial, DiscreteCDF};

use super::generate::{gen_outcomes, Sim1Config, Sim2Config, Variances};
use crate::ci::{invert_combined, CIConfig};
use crate::combine::{combine_result, CombineMethod, Sidedness};
use crate::error::{Error, Result};
use crate::mcrt::{check_lag, run_mcrts, run_naive, TestConfig};
use crate::seed::{derive_seed, rng_from_seed, TAG_DATA};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Nested tests combined with Fisher's method.
    McrtFisher,
    /// Nested tests combined with the weighted Z-score.
    McrtZ,
    /// Bonferroni on the non-nested tests.
    Bonferroni,
}

impl Method {
    pub const POWER: [Method; 3] = [Method::McrtFisher, Method::McrtZ, Method::Bonferroni];
    pub const COVERAGE: [Method; 2] = [Method::McrtFisher, Method::McrtZ];

    pub fn name(self) -> &'static str {
        match self {
            Method::McrtFisher => "mcrt_fisher",
            Method::McrtZ => "mcrt_z",
            Method::Bonferroni => "bonferroni",
        }
    }

    fn combiner(self) -> CombineMethod {
        match self {
            Method::McrtFisher => CombineMethod::Fisher,
            Method::McrtZ => CombineMethod::WeightedZ,
            Method::Bonferroni => CombineMethod::Bonferroni,
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One line of a study table. Power rows report the rejection rate; coverage
/// rows report coverage plus interval lengths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyRow {
    pub study: String,
    pub n_units: usize,
    pub n_times: usize,
    pub lag: usize,
    pub tau: f64,
    pub interaction: Option<u8>,
    pub alpha: f64,
    pub method: Method,
    /// Replicates that produced a result.
    pub replicates: usize,
    /// Replicates where the method could not be evaluated.
    pub failures: usize,
    pub rate: f64,
    pub rate_se: f64,
    pub mean_length: Option<f64>,
    pub length_se: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct StudyResult {
    pub rows: Vec<StudyRow>,
    /// Scenarios that could not run, with the reason.
    pub skipped: Vec<String>,
}

fn binomial_se(rate: f64, n: usize) -> f64 {
    if n == 0 {
        f64::NAN
    } else {
        (rate * (1.0 - rate) / n as f64).sqrt()
    }
}

/// `1 - level` without the binary noise (0.9 gives 0.1, not 0.09999999999999998).
fn complement(level: f64) -> f64 {
    ((1.0 - level) * 1e12).round() / 1e12
}

fn replicate_seed(seed: u64, rep: usize) -> u64 {
    derive_seed(seed, rep as u64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PowerConfig {
    pub cells: Vec<Sim1Config>,
    pub replicates: usize,
    pub seed: u64,
    pub budget: usize,
    pub alpha: f64,
    pub side: Sidedness,
}

/// Per-replicate rejections, indexed like [`Method::POWER`]; `None` when the
/// method failed on that replicate.
pub type ReplicateRejections = [Option<bool>; 3];

#[derive(Debug, Clone, PartialEq)]
pub struct PowerStudy {
    pub result: StudyResult,
    /// For each cell that ran: its index in the configuration and the
    /// per-replicate rejections.
    pub replicates: Vec<(usize, Vec<ReplicateRejections>)>,
}

fn check_common(replicates: usize, budget: usize, alpha: f64) -> Result<()> {
    if replicates == 0 {
        return Err(Error::InvalidConfig("replicates must be positive".into()));
    }
    if budget == 0 {
        return Err(Error::ZeroBudget);
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidConfig(format!("alpha must be in (0, 1), got {alpha}")));
    }
    Ok(())
}

/// Combined p-values of the three methods on one replicate. The two nested
/// methods share the same per-test p-values.
fn power_pvalues(cell: &Sim1Config, cfg: &PowerConfig, rep: usize) -> Result<[Option<f64>; 3]> {
    let seed = replicate_seed(cfg.seed, rep);
    let mut rng = rng_from_seed(derive_seed(seed, TAG_DATA));
    let data = gen_outcomes(cell.n_units, cell.n_times, &cell.taus(), 0, &cell.variances, &mut rng)?;
    let tcfg = TestConfig { budget: cfg.budget, seed, ..Default::default() };
    let nested = run_mcrts(&data, cell.lag, &tcfg)?;
    let naive = run_naive(&data, cell.lag, &tcfg)?;
    let p = |r, m: Method| combine_result(r, m.combiner(), cfg.side).ok().map(|c| c.p);
    Ok([p(&nested, Method::McrtFisher), p(&nested, Method::McrtZ), p(&naive, Method::Bonferroni)])
}

/// Rejection rates of the three methods in every scenario.
pub fn power_study(cfg: &PowerConfig, progress: &mut dyn FnMut(usize, usize)) -> Result<PowerStudy> {
    check_common(cfg.replicates, cfg.budget, cfg.alpha)?;
    let mut result = StudyResult::default();
    let mut replicates = Vec::new();
    for (idx, cell) in cfg.cells.iter().enumerate() {
        if let Err(e) = cell.check() {
            result.skipped.push(format!(
                "n_units={} n_times={} lag={} tau={}: {e}",
                cell.n_units, cell.n_times, cell.lag, cell.tau
            ));
            progress(idx + 1, cfg.cells.len());
            continue;
        }
        let pvals = (0..cfg.replicates)
            .into_par_iter()
            .map(|rep| power_pvalues(cell, cfg, rep))
            .collect::<Result<Vec<_>>>()?;
        let rejections: Vec<ReplicateRejections> =
            pvals.iter().map(|ps| ps.map(|p| p.map(|p| p <= cfg.alpha))).collect();
        for (m, method) in Method::POWER.iter().enumerate() {
            let valid: Vec<bool> = rejections.iter().filter_map(|r| r[m]).collect();
            let hits = valid.iter().filter(|&&r| r).count();
            let rate = if valid.is_empty() { f64::NAN } else { hits as f64 / valid.len() as f64 };
            result.rows.push(StudyRow {
                study: "power".into(),
                n_units: cell.n_units,
                n_times: cell.n_times,
                lag: cell.lag,
                tau: cell.tau,
                interaction: None,
                alpha: cfg.alpha,
                method: *method,
                replicates: valid.len(),
                failures: cfg.replicates - valid.len(),
                rate,
                rate_se: binomial_se(rate, valid.len()),
                mean_length: None,
                length_se: None,
            });
        }
        replicates.push((idx, rejections));
        progress(idx + 1, cfg.cells.len());
    }
    Ok(PowerStudy { result, replicates })
}

/// Discordant-pair comparison of two methods on the same replicates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairedComparison {
    /// Replicates where only the first method rejects.
    pub only_first: usize,
    /// Replicates where only the second method rejects.
    pub only_second: usize,
    /// One-sided exact binomial p-value for "the first rejects more often".
    pub p_value: f64,
}

/// Exact one-sided sign test on discordant pairs: `P{X >= b}` with
/// `X ~ Binomial(b + c, 1/2)`.
pub fn paired_sign_test(only_first: usize, only_second: usize) -> PairedComparison {
    let n = (only_first + only_second) as u64;
    let p_value = if only_first == 0 {
        1.0
    } else {
        let bin = Binomial::new(0.5, n).expect("valid binomial");
        bin.sf(only_first as u64 - 1)
    };
    PairedComparison { only_first, only_second, p_value }
}

impl PowerStudy {
    /// Paired comparison of two methods within one configured cell.
    pub fn paired(&self, cell: usize, first: Method, second: Method) -> Option<PairedComparison> {
        let idx = |m: Method| Method::POWER.iter().position(|&x| x == m).expect("power method");
        let (a, b) = (idx(first), idx(second));
        let (_, reps) = self.replicates.iter().find(|(c, _)| *c == cell)?;
        let (mut only_a, mut only_b) = (0, 0);
        for r in reps {
            if let (Some(x), Some(y)) = (r[a], r[b]) {
                only_a += usize::from(x && !y);
                only_b += usize::from(y && !x);
            }
        }
        Some(paired_sign_test(only_a, only_b))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoverageConfig {
    pub n_units: usize,
    pub n_times: usize,
    pub taus: Vec<f64>,
    pub interactions: Vec<u8>,
    pub lags: Vec<usize>,
    pub level: f64,
    pub replicates: usize,
    pub seed: u64,
    pub budget: usize,
    pub variances: Variances,
    pub methods: Vec<Method>,
}

impl Default for CoverageConfig {
    fn default() -> Self {
        let base = Sim2Config::default();
        Self {
            n_units: base.n_units,
            n_times: base.n_times,
            taus: base.taus,
            interactions: vec![0, 1, 2, 3],
            lags: (0..=4).collect(),
            level: 0.9,
            replicates: 300,
            seed: 0,
            budget: 499,
            variances: Variances::default(),
            methods: Method::COVERAGE.to_vec(),
        }
    }
}

/// Interval outcome of one replicate: `Some((covered, length))` or `None`
/// on failure (for example a grid that never brackets).
type IntervalOutcome = Option<(bool, f64)>;

/// Coverage of `tau_l` and mean interval length for every interaction,
/// lag and method.
pub fn coverage_study(cfg: &CoverageConfig, progress: &mut dyn FnMut(usize, usize)) -> Result<StudyResult> {
    check_common(cfg.replicates, cfg.budget, complement(cfg.level))?;
    if cfg.methods.contains(&Method::Bonferroni) {
        return Err(Error::InvalidConfig("coverage studies invert the nested tests; use mcrt_fisher or mcrt_z".into()));
    }
    for &l in &cfg.lags {
        check_lag(cfg.n_times, l)?;
    }
    let mut result = StudyResult::default();
    for (idx, &m) in cfg.interactions.iter().enumerate() {
        let sim = Sim2Config {
            n_units: cfg.n_units,
            n_times: cfg.n_times,
            taus: cfg.taus.clone(),
            interaction: m,
            variances: cfg.variances,
        };
        // outcomes[rep][lag][method]
        let outcomes = (0..cfg.replicates)
            .into_par_iter()
            .map(|rep| -> Result<Vec<Vec<IntervalOutcome>>> {
                let seed = replicate_seed(cfg.seed, rep);
                let mut rng = rng_from_seed(derive_seed(seed, TAG_DATA));
                let data = gen_outcomes(sim.n_units, sim.n_times, &sim.taus, sim.interaction, &sim.variances, &mut rng)?;
                let ci_cfg = CIConfig { alpha: complement(cfg.level), budget: cfg.budget, seed, ..Default::default() };
                Ok(cfg
                    .lags
                    .iter()
                    .map(|&lag| {
                        let truth = cfg.taus.get(lag).copied().unwrap_or(0.0);
                        cfg.methods
                            .iter()
                            .map(|method| {
                                invert_combined(&data, lag, &ci_cfg, method.combiner())
                                    .ok()
                                    .map(|ci| (ci.contains(truth), ci.width()))
                            })
                            .collect()
                    })
                    .collect())
            })
            .collect::<Result<Vec<_>>>()?;
        for (li, &lag) in cfg.lags.iter().enumerate() {
            for (mi, method) in cfg.methods.iter().enumerate() {
                let valid: Vec<(bool, f64)> = outcomes.iter().filter_map(|o| o[li][mi]).collect();
                let n = valid.len();
                let covered = valid.iter().filter(|v| v.0).count();
                let rate = if n == 0 { f64::NAN } else { covered as f64 / n as f64 };
                let lengths: Vec<f64> = valid.iter().map(|v| v.1).collect();
                let mean_length = crate::permtest::mean(&lengths);
                let length_se = (crate::permtest::sample_variance(&lengths) / n as f64).sqrt();
                result.rows.push(StudyRow {
                    study: "coverage".into(),
                    n_units: cfg.n_units,
                    n_times: cfg.n_times,
                    lag,
                    tau: cfg.taus.get(lag).copied().unwrap_or(0.0),
                    interaction: Some(m),
                    alpha: complement(cfg.level),
                    method: *method,
                    replicates: n,
                    failures: cfg.replicates - n,
                    rate,
                    rate_se: binomial_se(rate, n),
                    mean_length: Some(mean_length),
                    length_se: Some(length_se),
                });
            }
        }
        progress(idx + 1, cfg.interactions.len());
    }
    Ok(result)
}

/// Runs a configured study.
pub fn run_study(cfg: &super::StudyConfig, progress: &mut dyn FnMut(usize, usize)) -> Result<StudyResult> {
    match cfg {
        super::StudyConfig::Power(p) => Ok(power_study(p, progress)?.result),
        super::StudyConfig::Coverage(c) => coverage_study(c, progress),
    }
}

/// Writes the table as CSV; the column order is that of [`StudyRow`].
pub fn write_table<W: Write>(w: W, rows: &[StudyRow]) -> Result<()> {
    let mut wtr = csv::WriterBuilder::new().has_headers(false).from_writer(w);
    wtr.write_record([
        "study",
        "n_units",
        "n_times",
        "lag",
        "tau",
        "interaction",
        "alpha",
        "method",
        "replicates",
        "failures",
        "rate",
        "rate_se",
        "mean_length",
        "length_se",
    ])?;
    for r in rows {
        wtr.serialize(r)?;
    }
    wtr.flush()?;
    Ok(())
}

/// Writes the table to `path`.
pub fn emit_tables(result: &StudyResult, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    write_table(std::io::BufWriter::new(file), &result.rows)
}

pub fn parse_table(text: &str) -> Result<Vec<StudyRow>> {
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    rdr.deserialize().map(|r| r.map_err(Error::from)).collect()
}
