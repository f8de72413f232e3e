//! Stepped-wedge families on enumerated spaces and the scenario file format.
//!
//! A scenario file is TOML in one of two forms. The generic form lists the
//! space, its partitions and tabulated statistics:
//!
//! ```toml
//! name = "two tests"
//!
//! [space]
//! elements = ["a", "b", "c", "d"]
//! probs = ["1/4", "1/4", "1/4", "1/4"]   # optional, uniform by default
//!
//! [[partition]]
//! labels = [0, 0, 0, 0]                  # one cell label per element
//!
//! [[partition]]
//! cells = [["a", "b"], ["c", "d"]]       # or explicit cells
//!
//! [[statistic]]                          # T^(k)(z, W), one value per element
//! values = [1.0, 1.0, 2.0, 2.0]
//!
//! [[statistic]]
//! values = [0.3, 0.1, 0.2, 0.4]
//!
//! [checks]
//! alphas = [0.1, 0.25, 0.5]              # or one list per test
//! ```
//!
//! The stepped-wedge form builds everything from a design:
//!
//! ```toml
//! [stepped_wedge]
//! counts = [2, 2, 2]      # units crossing over at t = 1, 2, 3
//! lag = 0
//! family = "mcrt"         # or "naive"
//! outcome_seed = 7        # i.i.d. N(0, 1) effect-free outcomes
//! # outcomes = [[y0, y1, y2, y3], ...]   # or explicit, one row per unit
//! ```
//!
//! `[checks]` may also set `partition`, `nestedness`, `hasse`, `dominance`
//! and `cond_indep` to `false`, and `mode` to `"exact"`, `"auto"` or
//! `"monte_carlo"` (with `draws` and `seed`).

use std::collections::BTreeMap;
use std::fmt;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Zero};
use rand_distr::{Distribution, StandardNormal};
use serde::Deserialize;

use super::dominance::{
    cond_indep_check, joint_dominance_check, DominanceMode, PotentialOutcomeTable, TabulatedStatistic,
    ValidationStatistic,
};
use super::hasse::build_hasse;
use super::space::{is_partition, pairwise_nested_check, FiniteAssignmentSpace, Partition, PartitionFamily};
use crate::design::{enumerate_crossover_times, step_conditional_prob, CrossoverTimes, DesignSpec};
use crate::error::{Error, Result};
use crate::mcrt::{build_schedule, check_lag};
use crate::seed::rng_from_seed;

/// Exact rational with the value of the shortest decimal that prints as `x`,
/// so `0.1` becomes `1/10`.
pub fn decimal_rational(x: f64) -> BigRational {
    let text = format!("{x}");
    let (neg, digits) = match text.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, text.as_str()),
    };
    let (int, frac) = digits.split_once('.').unwrap_or((digits, ""));
    let numer: BigInt = format!("{int}{frac}").parse().expect("finite float prints as digits");
    let denom = num_traits::pow(BigInt::from(10), frac.len());
    let r = BigRational::new(numer, denom);
    if neg {
        -r
    } else {
        r
    }
}

fn parse_rational(text: &str) -> Result<BigRational> {
    let bad = || Error::Parse(format!("`{text}` is not a probability"));
    match text.split_once('/') {
        Some((a, b)) => {
            let a: BigInt = a.trim().parse().map_err(|_| bad())?;
            let b: BigInt = b.trim().parse().map_err(|_| bad())?;
            if b.is_zero() {
                return Err(bad());
            }
            Ok(BigRational::new(a, b))
        }
        None => text.trim().parse::<f64>().map(decimal_rational).map_err(|_| bad()),
    }
}

/// Element label of a cross-over time vector, e.g. `1.3.2.2`.
fn element_label(a: &CrossoverTimes) -> String {
    a.times().iter().map(usize::to_string).collect::<Vec<_>>().join(".")
}

/// All stepped-wedge assignments of a design with their probabilities.
pub fn stepped_wedge_space(spec: &DesignSpec) -> Result<(FiniteAssignmentSpace, Vec<CrossoverTimes>)> {
    let elements = enumerate_crossover_times(spec);
    // Every assignment has the same probability, the product of the
    // sequential step probabilities.
    let mut p = BigRational::one();
    for t in 1..=spec.n_times() {
        p *= step_conditional_prob(spec, t)?;
    }
    let labels = elements.iter().map(element_label).collect();
    let space = FiniteAssignmentSpace::new(labels, vec![p; elements.len()])?;
    Ok((space, elements))
}

/// One stepped-wedge test: treated cross over at `k`, controls at
/// `control_times`, outcomes at `outcome_time`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SteppedWedgeTest {
    pub k: usize,
    pub control_times: Vec<usize>,
    pub outcome_time: usize,
}

impl SteppedWedgeTest {
    /// Difference in means at the outcome time; 0 when an arm is empty.
    fn statistic(&self, a: &CrossoverTimes, w: &PotentialOutcomeTable, z: usize) -> f64 {
        let (mut st, mut nt, mut sc, mut nc) = (0.0, 0usize, 0.0, 0usize);
        for i in 0..a.len() {
            let y = w.outcome(z, i, self.outcome_time);
            if a.get(i) == self.k {
                st += y;
                nt += 1;
            } else if self.control_times.contains(&a.get(i)) {
                sc += y;
                nc += 1;
            }
        }
        if nt == 0 || nc == 0 {
            0.0
        } else {
            st / nt as f64 - sc / nc as f64
        }
    }
}

/// Conditioning partitions of the lag-`l` MCRT family, ordered by treated
/// time. All tests share one sequence: the cell of test `k` fixes which
/// subset every unit's cross-over time falls in, and the exact cross-over
/// time of every unit crossing over before `k`. Successive cells are nested,
/// and within a cell the units of test `k`'s pool are exchangeable.
pub fn mcrt_family(elements: &[CrossoverTimes], lag: usize) -> Result<(PartitionFamily, Vec<SteppedWedgeTest>)> {
    let first = elements.first().ok_or_else(|| Error::Validation("no assignments".into()))?;
    let schedule = build_schedule(first.spec().n_times(), lag)?;
    let mut tests = Vec::new();
    for subset in schedule.subsets() {
        for (pos, &k) in subset.iter().enumerate() {
            if pos + 1 < subset.len() {
                tests.push(SteppedWedgeTest { k, control_times: subset[pos + 1..].to_vec(), outcome_time: k + lag });
            }
        }
    }
    tests.sort_by_key(|t| t.k);
    let membership = |a: usize| schedule.subset_of(a).map_or(0, |j| j + 1);
    let partitions = tests
        .iter()
        .map(|t| {
            Partition::from_labels(elements.iter().map(|a| {
                a.times()
                    .iter()
                    .map(|&ai| (membership(ai), if ai < t.k { ai } else { 0 }))
                    .collect::<Vec<_>>()
            }))
        })
        .collect();
    Ok((PartitionFamily::new(partitions)?, tests))
}

/// Conditioning partitions of the non-nested lag-`l` tests `t = 1..=T-l`:
/// the cell of test `t` fixes the set of units that cross over at `t` or
/// after `t + l`.
pub fn naive_family(elements: &[CrossoverTimes], lag: usize) -> Result<(PartitionFamily, Vec<SteppedWedgeTest>)> {
    let first = elements.first().ok_or_else(|| Error::Validation("no assignments".into()))?;
    let n_times = first.spec().n_times();
    check_lag(n_times, lag)?;
    let tests: Vec<SteppedWedgeTest> = (1..=n_times - lag)
        .map(|t| SteppedWedgeTest { k: t, control_times: (t + lag + 1..=n_times).collect(), outcome_time: t + lag })
        .collect();
    let partitions = tests
        .iter()
        .map(|t| {
            Partition::from_labels(elements.iter().map(|a| {
                a.times().iter().map(|&ai| ai == t.k || ai > t.k + lag).collect::<Vec<bool>>()
            }))
        })
        .collect();
    Ok((PartitionFamily::new(partitions)?, tests))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FamilyKind {
    Mcrt,
    Naive,
}

/// A stepped-wedge design with an effect-free outcome table.
#[derive(Debug, Clone, PartialEq)]
pub struct SteppedWedgeScenario {
    pub spec: DesignSpec,
    pub lag: usize,
    pub family: FamilyKind,
    /// `N x (T + 1)` outcomes, identical under every assignment.
    pub outcomes: Vec<Vec<f64>>,
}

impl SteppedWedgeScenario {
    /// Scenario with i.i.d. standard normal outcomes drawn from `seed`.
    pub fn with_random_outcomes(spec: DesignSpec, lag: usize, family: FamilyKind, seed: u64) -> Self {
        let mut rng = rng_from_seed(seed);
        let outcomes = (0..spec.n_units())
            .map(|_| (0..=spec.n_times()).map(|_| StandardNormal.sample(&mut rng)).collect())
            .collect();
        Self { spec, lag, family, outcomes }
    }

    pub fn build(&self, name: &str, alphas: Vec<Vec<f64>>, checks: Checks) -> Result<Scenario> {
        let (space, elements) = stepped_wedge_space(&self.spec)?;
        let (family, tests) = match self.family {
            FamilyKind::Mcrt => mcrt_family(&elements, self.lag)?,
            FamilyKind::Naive => naive_family(&elements, self.lag)?,
        };
        if self.outcomes.len() != self.spec.n_units() {
            return Err(Error::Validation(format!(
                "{} outcome rows for {} units",
                self.outcomes.len(),
                self.spec.n_units()
            )));
        }
        let outcomes = PotentialOutcomeTable::effect_free(self.outcomes.clone(), space.len())?;
        if outcomes.n_times() != self.spec.n_times() + 1 {
            return Err(Error::Validation(format!(
                "outcome rows have {} times, expected {}",
                outcomes.n_times(),
                self.spec.n_times() + 1
            )));
        }
        let statistics = tests
            .iter()
            .map(|t| TabulatedStatistic(elements.iter().enumerate().map(|(z, a)| t.statistic(a, &outcomes, z)).collect()))
            .collect();
        let test_names = tests.iter().map(|t| format!("k={}", t.k)).collect();
        let alphas = broadcast_alphas(alphas, family.len())?;
        Ok(Scenario { name: name.to_string(), space, cells: None, family, test_names, statistics, outcomes, alphas, checks })
    }
}

/// Which checks a scenario runs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Checks {
    pub partition: bool,
    pub nestedness: bool,
    pub hasse: bool,
    pub dominance: bool,
    pub cond_indep: bool,
    pub mode: DominanceMode,
}

impl Default for Checks {
    fn default() -> Self {
        Self { partition: true, nestedness: true, hasse: true, dominance: true, cond_indep: true, mode: DominanceMode::Auto }
    }
}

/// A fully specified validation scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub space: FiniteAssignmentSpace,
    /// Cells as written in the file, for the partition check.
    pub cells: Option<Vec<Vec<Vec<usize>>>>,
    pub family: PartitionFamily,
    pub test_names: Vec<String>,
    pub statistics: Vec<TabulatedStatistic>,
    pub outcomes: PotentialOutcomeTable,
    pub alphas: Vec<Vec<f64>>,
    pub checks: Checks,
}

fn broadcast_alphas(alphas: Vec<Vec<f64>>, k: usize) -> Result<Vec<Vec<f64>>> {
    match alphas.len() {
        1 => Ok(vec![alphas[0].clone(); k]),
        n if n == k => Ok(alphas),
        n => Err(Error::Validation(format!("{n} alpha lists for {k} tests"))),
    }
}

const DEFAULT_ALPHAS: [f64; 5] = [0.05, 0.1, 0.25, 0.5, 0.75];

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    name: Option<String>,
    space: Option<SpaceSection>,
    #[serde(default)]
    partition: Vec<PartitionSection>,
    #[serde(default)]
    statistic: Vec<StatisticSection>,
    stepped_wedge: Option<SteppedWedgeSection>,
    checks: Option<ChecksSection>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SpaceSection {
    elements: Vec<String>,
    probs: Option<Vec<toml::Value>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct PartitionSection {
    labels: Option<Vec<toml::Value>>,
    cells: Option<Vec<Vec<String>>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct StatisticSection {
    values: Vec<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SteppedWedgeSection {
    counts: Vec<usize>,
    lag: usize,
    family: FamilyKind,
    outcomes: Option<Vec<Vec<f64>>>,
    outcome_seed: Option<u64>,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum Alphas {
    Shared(Vec<f64>),
    PerTest(Vec<Vec<f64>>),
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ChecksSection {
    alphas: Option<Alphas>,
    partition: Option<bool>,
    nestedness: Option<bool>,
    hasse: Option<bool>,
    dominance: Option<bool>,
    cond_indep: Option<bool>,
    mode: Option<String>,
    draws: Option<usize>,
    seed: Option<u64>,
}

fn value_key(v: &toml::Value) -> String {
    match v {
        toml::Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

/// Parses a scenario file. Errors carry the TOML location or name the
/// offending key.
pub fn parse_scenario(text: &str) -> Result<Scenario> {
    let file: ScenarioFile = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
    let mut checks = Checks::default();
    let mut alphas = vec![DEFAULT_ALPHAS.to_vec()];
    if let Some(c) = &file.checks {
        checks.partition = c.partition.unwrap_or(true);
        checks.nestedness = c.nestedness.unwrap_or(true);
        checks.hasse = c.hasse.unwrap_or(true);
        checks.dominance = c.dominance.unwrap_or(true);
        checks.cond_indep = c.cond_indep.unwrap_or(true);
        checks.mode = match c.mode.as_deref() {
            None | Some("auto") => DominanceMode::Auto,
            Some("exact") => DominanceMode::Exact,
            Some("monte_carlo") => DominanceMode::MonteCarlo { draws: c.draws.unwrap_or(100_000), seed: c.seed.unwrap_or(0) },
            Some(other) => return Err(Error::Parse(format!("checks.mode: unknown mode `{other}`"))),
        };
        match &c.alphas {
            Some(Alphas::Shared(v)) => alphas = vec![v.clone()],
            Some(Alphas::PerTest(v)) => alphas = v.clone(),
            None => {}
        }
    }
    let name = file.name.clone().unwrap_or_else(|| "scenario".into());
    match (&file.space, &file.stepped_wedge) {
        (Some(_), Some(_)) => Err(Error::Parse("a scenario has either [space] or [stepped_wedge], not both".into())),
        (None, None) => Err(Error::Parse("scenario defines neither [space] nor [stepped_wedge]".into())),
        (None, Some(sw)) => {
            if !file.partition.is_empty() || !file.statistic.is_empty() {
                return Err(Error::Parse("[stepped_wedge] scenarios derive their partitions and statistics".into()));
            }
            let spec = DesignSpec::new(sw.counts.iter().sum(), sw.counts.clone())?;
            let scenario = match &sw.outcomes {
                Some(rows) => SteppedWedgeScenario { spec, lag: sw.lag, family: sw.family, outcomes: rows.clone() },
                None => SteppedWedgeScenario::with_random_outcomes(spec, sw.lag, sw.family, sw.outcome_seed.unwrap_or(0)),
            };
            scenario.build(&name, alphas, checks)
        }
        (Some(sp), None) => generic_scenario(name, sp, &file, alphas, checks),
    }
}

fn generic_scenario(name: String, sp: &SpaceSection, file: &ScenarioFile, alphas: Vec<Vec<f64>>, checks: Checks) -> Result<Scenario> {
    let space = match &sp.probs {
        None => FiniteAssignmentSpace::uniform(sp.elements.clone())?,
        Some(ps) => {
            let probs = ps
                .iter()
                .map(|v| match v {
                    toml::Value::String(s) => parse_rational(s),
                    toml::Value::Float(f) => Ok(decimal_rational(*f)),
                    toml::Value::Integer(i) => Ok(BigRational::from_integer((*i).into())),
                    other => Err(Error::Parse(format!("space.probs: `{other}` is not a probability"))),
                })
                .collect::<Result<Vec<_>>>()?;
            FiniteAssignmentSpace::new(sp.elements.clone(), probs)?
        }
    };
    let n = space.len();
    let index: BTreeMap<&str, usize> = sp.elements.iter().enumerate().map(|(i, e)| (e.as_str(), i)).collect();
    if file.partition.is_empty() {
        return Err(Error::Parse("scenario has no [[partition]]".into()));
    }
    let mut partitions = Vec::new();
    let mut raw_cells = Vec::new();
    let mut any_cells = false;
    for (k, p) in file.partition.iter().enumerate() {
        match (&p.labels, &p.cells) {
            (Some(labels), None) => {
                if labels.len() != n {
                    return Err(Error::Parse(format!("partition {}: {} labels for {n} elements", k + 1, labels.len())));
                }
                let part = Partition::from_labels(labels.iter().map(value_key));
                raw_cells.push(part.cells());
                partitions.push(part);
            }
            (None, Some(cells)) => {
                any_cells = true;
                let cells = cells
                    .iter()
                    .map(|c| {
                        c.iter()
                            .map(|e| {
                                index.get(e.as_str()).copied().ok_or_else(|| {
                                    Error::Parse(format!("partition {}: unknown element `{e}`", k + 1))
                                })
                            })
                            .collect::<Result<Vec<_>>>()
                    })
                    .collect::<Result<Vec<_>>>()?;
                // Labels from the first cell holding each element; checked
                // separately for overlap and coverage.
                let mut labels = vec![usize::MAX; n];
                for (c, cell) in cells.iter().enumerate().rev() {
                    for &z in cell {
                        labels[z] = c;
                    }
                }
                partitions.push(Partition::from_labels(labels));
                raw_cells.push(cells);
            }
            _ => return Err(Error::Parse(format!("partition {}: give exactly one of `labels` or `cells`", k + 1))),
        }
    }
    let family = PartitionFamily::new(partitions)?;
    if file.statistic.len() != family.len() {
        return Err(Error::Parse(format!(
            "{} statistics for {} partitions",
            file.statistic.len(),
            family.len()
        )));
    }
    let statistics = file
        .statistic
        .iter()
        .enumerate()
        .map(|(k, s)| {
            if s.values.len() != n {
                return Err(Error::Parse(format!("statistic {}: {} values for {n} elements", k + 1, s.values.len())));
            }
            Ok(TabulatedStatistic(s.values.clone()))
        })
        .collect::<Result<Vec<_>>>()?;
    let test_names = (1..=family.len()).map(|k| format!("test {k}")).collect();
    let alphas = broadcast_alphas(alphas, family.len())?;
    // Tabulated statistics already fold the outcomes in.
    let outcomes = PotentialOutcomeTable::effect_free(Vec::new(), n)?;
    Ok(Scenario {
        name,
        space,
        cells: any_cells.then_some(raw_cells),
        family,
        test_names,
        statistics,
        outcomes,
        alphas,
        checks,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioReport {
    pub name: String,
    pub n_elements: usize,
    pub n_tests: usize,
    pub checks: Vec<CheckOutcome>,
}

impl ScenarioReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

impl fmt::Display for ScenarioReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "scenario {}: {} elements, {} tests", self.name, self.n_elements, self.n_tests)?;
        for c in &self.checks {
            writeln!(f, "{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail)?;
        }
        write!(f, "{}", if self.passed() { "all checks passed" } else { "some checks failed" })
    }
}

fn names(space: &FiniteAssignmentSpace, cell: &[usize]) -> String {
    format!("{{{}}}", cell.iter().map(|&z| space.label(z)).collect::<Vec<_>>().join(", "))
}

/// Runs the requested checks of a scenario.
pub fn run_scenario(s: &Scenario) -> Result<ScenarioReport> {
    let mut out = Vec::new();
    let k = s.family.len();
    if s.checks.partition {
        let mut failures = Vec::new();
        for p in 0..k {
            let cells = s.cells.as_ref().map_or_else(|| s.family.get(p).cells(), |c| c[p].clone());
            let r = is_partition(s.space.len(), &cells);
            if !r.ok {
                let witness = r.witness.map_or(String::new(), |z| format!(" (element {})", s.space.label(z)));
                failures.push(format!("{}: {}{witness}", s.test_names[p], r.reason.unwrap_or_default()));
            }
        }
        out.push(CheckOutcome {
            name: "partition",
            passed: failures.is_empty(),
            detail: if failures.is_empty() { format!("{k} partitions are disjoint covers") } else { failures.join("; ") },
        });
    }
    if s.checks.nestedness {
        let mut failures = Vec::new();
        for j in 0..k {
            for l in j + 1..k {
                let c = pairwise_nested_check(&s.family, j, l);
                if let (false, Some((a, b))) = (c.nested, &c.counterexample) {
                    failures.push(format!(
                        "{} and {} are not nested: cells {} and {}",
                        s.test_names[j],
                        s.test_names[l],
                        names(&s.space, a),
                        names(&s.space, b)
                    ));
                }
            }
        }
        out.push(CheckOutcome {
            name: "nestedness",
            passed: failures.is_empty(),
            detail: if failures.is_empty() { format!("all {} pairs nested", k * (k.max(1) - 1) / 2) } else { failures.join("; ") },
        });
    }
    if s.checks.hasse {
        let outcome = match build_hasse(&s.family) {
            Ok(h) => match h.check_structure() {
                Ok(()) => CheckOutcome {
                    name: "hasse",
                    passed: true,
                    detail: format!("{} nodes, {} edges, {} roots", h.len(), h.edges().len(), h.roots().len()),
                },
                Err(e) => CheckOutcome { name: "hasse", passed: false, detail: e },
            },
            Err(e) => CheckOutcome { name: "hasse", passed: false, detail: e.to_string() },
        };
        out.push(outcome);
    }
    let stats: Vec<&dyn ValidationStatistic> = s.statistics.iter().map(|t| t as &dyn ValidationStatistic).collect();
    if s.checks.dominance {
        let rep = joint_dominance_check(&s.space, &s.family, &s.outcomes, &stats, &s.alphas, s.checks.mode)?;
        let worst = rep
            .cells
            .iter()
            .max_by(|a, b| (a.joint - a.bound).total_cmp(&(b.joint - b.bound)))
            .expect("alpha grid is non-empty");
        let mut detail = format!(
            "{} level combinations, {}; largest joint - bound = {:.6} at alphas {:?}",
            rep.cells.len(),
            if rep.exact { "exact" } else { "monte carlo" },
            worst.joint - worst.bound,
            worst.alphas
        );
        if let Some(r) = rep.conditional_max_ratio {
            detail.push_str(&format!("; conditional max ratio {r:.6}"));
        }
        if !rep.conditions_verified {
            detail.push_str("; conditions unverified");
        }
        out.push(CheckOutcome { name: "dominance", passed: rep.holds(), detail });
    }
    if s.checks.cond_indep {
        let mut worst = (0.0f64, String::new());
        let mut passed = true;
        for j in 0..k {
            for l in j + 1..k {
                let r = cond_indep_check(&s.space, &s.family, &s.outcomes, &stats, j, l)?;
                passed &= r.independent;
                if r.max_gap >= worst.0 {
                    worst = (r.max_gap, format!("{} vs {}", s.test_names[j], s.test_names[l]));
                }
            }
        }
        let detail = if k < 2 { "single test".to_string() } else { format!("max total-variation gap {:.3e} ({})", worst.0, worst.1) };
        out.push(CheckOutcome { name: "cond_indep", passed, detail });
    }
    Ok(ScenarioReport { name: s.name.clone(), n_elements: s.space.len(), n_tests: k, checks: out })
}

/// Bundled scenarios: `(name, TOML text)`.
pub const BUILTIN_SCENARIOS: [(&str, &str); 2] = [
    (
        "nested-lag0",
        r#"name = "nested-lag0"

[stepped_wedge]
counts = [2, 2, 2]
lag = 0
family = "mcrt"
outcome_seed = 20240601

[checks]
alphas = [0.05, 0.1, 0.25, 0.5, 0.75]
"#,
    ),
    (
        "naive-lag1",
        r#"name = "naive-lag1"

[stepped_wedge]
counts = [1, 1, 1, 1]
lag = 1
family = "naive"
outcome_seed = 20240601

[checks]
alphas = [0.25, 0.5]
"#,
    ),
];

pub fn builtin_scenario(name: &str) -> Result<Scenario> {
    let (_, text) = BUILTIN_SCENARIOS
        .iter()
        .find(|(n, _)| *n == name)
        .ok_or_else(|| Error::InvalidConfig(format!("unknown built-in scenario `{name}`")))?;
    parse_scenario(text)
}
