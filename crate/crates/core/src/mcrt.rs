//! Lag-specific schedules of nested permutation tests and their execution.
//!
//! For lag `l` the cross-over times `1..=T` are split into `J = min(l + 1,
//! T - l - 1)` arithmetic subsets with gap `l + 1`. Inside a subset, the test
//! for time `k` compares units crossing over at `k` against units crossing
//! over at later times of the same subset, using outcomes at time `k + l`.

use std::collections::BTreeSet;

use rayon::prelude::*;

use crate::design::{AssignmentMatrix, CrossoverTimes};
use crate::error::{Error, Result};
use crate::permtest::{
    permutation_pvalue, sample_variance, PermutationResult, Statistic, TwoGroupSample,
    DEFAULT_EXACT_THRESHOLD,
};
use crate::seed::{derive_seed, TAG_NAIVE, TAG_TESTS};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LagSchedule {
    lag: usize,
    n_times: usize,
    subsets: Vec<Vec<usize>>,
}

impl LagSchedule {
    pub fn lag(&self) -> usize {
        self.lag
    }

    pub fn n_times(&self) -> usize {
        self.n_times
    }

    pub fn n_subsets(&self) -> usize {
        self.subsets.len()
    }

    pub fn subsets(&self) -> &[Vec<usize>] {
        &self.subsets
    }

    /// Index of the subset containing time `t`, if any.
    pub fn subset_of(&self, t: usize) -> Option<usize> {
        self.subsets.iter().position(|c| c.contains(&t))
    }
}

pub fn check_lag(n_times: usize, lag: usize) -> Result<()> {
    if n_times < 2 || lag > n_times - 2 {
        return Err(Error::LagOutOfRange { lag, n_times });
    }
    Ok(())
}

pub fn build_schedule(n_times: usize, lag: usize) -> Result<LagSchedule> {
    check_lag(n_times, lag)?;
    let j_count = (lag + 1).min(n_times - lag - 1);
    let subsets = (1..=j_count)
        .map(|j| (j..=n_times).step_by(lag + 1).collect())
        .collect();
    Ok(LagSchedule {
        lag,
        n_times,
        subsets,
    })
}

/// One permutation test of the lag-`l` family.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LagTestGroup {
    /// Cross-over time of the treated arm.
    pub k: usize,
    /// 0-based subset index; `None` for the non-nested baseline groups.
    pub subset: Option<usize>,
    pub treated: Vec<usize>,
    pub control: Vec<usize>,
    /// Cross-over times that feed the control arm.
    pub control_times: Vec<usize>,
    /// Outcome time `k + l`.
    pub outcome_time: usize,
}

impl LagTestGroup {
    /// Treated and control units together.
    pub fn pool(&self) -> BTreeSet<usize> {
        self.treated.iter().chain(&self.control).copied().collect()
    }
}

fn group_for(a: &CrossoverTimes, k: usize, control_times: Vec<usize>, lag: usize, subset: Option<usize>) -> LagTestGroup {
    let treated = a.units_at(k);
    let control = (0..a.len())
        .filter(|&i| control_times.contains(&a.get(i)))
        .collect();
    LagTestGroup {
        k,
        subset,
        treated,
        control,
        control_times,
        outcome_time: k + lag,
    }
}

/// Test groups of a schedule, in increasing `k`.
pub fn build_groups(a: &CrossoverTimes, schedule: &LagSchedule) -> Result<Vec<LagTestGroup>> {
    if a.spec().n_times() != schedule.n_times {
        return Err(Error::MismatchedDesign(format!(
            "schedule has T = {}, assignment has T = {}",
            schedule.n_times,
            a.spec().n_times()
        )));
    }
    let mut groups = Vec::new();
    for (j, subset) in schedule.subsets.iter().enumerate() {
        for (pos, &k) in subset.iter().enumerate() {
            let later = subset[pos + 1..].to_vec();
            if later.is_empty() {
                continue;
            }
            groups.push(group_for(a, k, later, schedule.lag, Some(j)));
        }
    }
    groups.sort_by_key(|g| g.k);
    Ok(groups)
}

/// The non-nested groups: units crossing over at `t` against every unit
/// crossing over after `t + l`, for `t = 1..=T-l`. Used as the Bonferroni
/// baseline.
pub fn naive_groups(a: &CrossoverTimes, lag: usize) -> Result<Vec<LagTestGroup>> {
    let n_times = a.spec().n_times();
    check_lag(n_times, lag)?;
    Ok((1..=n_times - lag)
        .map(|t| group_for(a, t, (t + lag + 1..=n_times).collect(), lag, None))
        .collect())
}

/// Assignment plus the `N x (T + 1)` outcome panel (times `0..=T`).
#[derive(Debug, Clone, PartialEq)]
pub struct TrialData {
    crossover: CrossoverTimes,
    outcomes: Vec<f64>,
    width: usize,
}

impl TrialData {
    /// `outcomes[i]` holds unit `i`'s outcomes at times `0..=T`.
    pub fn new(crossover: CrossoverTimes, outcomes: Vec<Vec<f64>>) -> Result<Self> {
        let width = crossover.spec().n_times() + 1;
        if outcomes.len() != crossover.len() {
            return Err(Error::InvalidSample(format!(
                "{} outcome rows for {} units",
                outcomes.len(),
                crossover.len()
            )));
        }
        if let Some(row) = outcomes.iter().find(|r| r.len() != width) {
            return Err(Error::PanelShape {
                expected: width,
                found: row.len(),
            });
        }
        if outcomes.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidSample("outcomes must be finite".into()));
        }
        Ok(Self {
            crossover,
            outcomes: outcomes.into_iter().flatten().collect(),
            width,
        })
    }

    pub fn crossover(&self) -> &CrossoverTimes {
        &self.crossover
    }

    pub fn n_units(&self) -> usize {
        self.crossover.len()
    }

    pub fn n_times(&self) -> usize {
        self.width - 1
    }

    pub fn outcome(&self, unit: usize, t: usize) -> f64 {
        self.outcomes[unit * self.width + t]
    }

    pub fn row(&self, unit: usize) -> &[f64] {
        &self.outcomes[unit * self.width..(unit + 1) * self.width]
    }

    /// Arm outcomes of a group at its outcome time.
    pub fn group_sample(&self, g: &LagTestGroup) -> Result<TwoGroupSample> {
        let pick = |units: &[usize]| units.iter().map(|&i| self.outcome(i, g.outcome_time)).collect();
        TwoGroupSample::new(pick(&g.treated), pick(&g.control), self.n_units())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TestConfig {
    pub budget: usize,
    pub exact_threshold: u64,
    /// Minimum units per arm; smaller arms are skipped.
    pub min_arm: usize,
    pub statistic: Statistic,
    pub seed: u64,
}

impl Default for TestConfig {
    fn default() -> Self {
        Self {
            budget: 999,
            exact_threshold: DEFAULT_EXACT_THRESHOLD,
            min_arm: 2,
            statistic: Statistic::DiffInMeans,
            seed: 0,
        }
    }
}

/// Seed of the test with treated time `k`; independent of which other tests
/// run.
pub fn test_seed(seed: u64, k: usize) -> u64 {
    derive_seed(derive_seed(seed, TAG_TESTS), k as u64)
}

pub(crate) fn naive_test_seed(seed: u64, k: usize) -> u64 {
    derive_seed(derive_seed(seed, TAG_NAIVE), k as u64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct McrtTest {
    pub group: LagTestGroup,
    pub result: PermutationResult,
    pub n_treated: usize,
    pub n_control: usize,
    pub var_treated: f64,
    pub var_control: f64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SkippedTest {
    pub k: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct McrtResult {
    pub lag: usize,
    pub n_units: usize,
    pub tests: Vec<McrtTest>,
    pub skipped: Vec<SkippedTest>,
}

impl McrtResult {
    pub fn p_values(&self, alternative: crate::permtest::Alternative) -> Vec<f64> {
        self.tests.iter().map(|t| t.result.tail(alternative)).collect()
    }

    /// Largest resample count across tests.
    pub fn max_resamples(&self) -> u64 {
        self.tests.iter().map(|t| t.result.n_resamples).max().unwrap_or(1)
    }
}

pub(crate) fn skip_reason(g: &LagTestGroup, min_arm: usize) -> Option<String> {
    if g.treated.len() < min_arm {
        return Some(format!(
            "treated arm has {} unit(s), need {min_arm}",
            g.treated.len()
        ));
    }
    if g.control.len() < min_arm {
        return Some(format!(
            "control arm has {} unit(s), need {min_arm}",
            g.control.len()
        ));
    }
    None
}

/// Runs the permutation test of every group with at least `min_arm` units
/// per arm. `seed_of` maps a treated time to that test's seed.
pub fn run_groups(
    data: &TrialData,
    groups: &[LagTestGroup],
    lag: usize,
    cfg: &TestConfig,
    seed_of: impl Fn(usize) -> u64 + Sync,
) -> Result<McrtResult> {
    let min_arm = cfg.min_arm.max(1);
    let mut skipped = Vec::new();
    let mut runnable = Vec::new();
    for g in groups {
        match skip_reason(g, min_arm) {
            Some(reason) => skipped.push(SkippedTest { k: g.k, reason }),
            None => runnable.push(g),
        }
    }
    let tests = runnable
        .par_iter()
        .map(|g| {
            let s = data.group_sample(g)?;
            let result = permutation_pvalue(&s, cfg.statistic, cfg.budget, seed_of(g.k), cfg.exact_threshold)?;
            Ok(McrtTest {
                group: (*g).clone(),
                result,
                n_treated: g.treated.len(),
                n_control: g.control.len(),
                var_treated: sample_variance(s.treated()),
                var_control: sample_variance(s.control()),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(McrtResult {
        lag,
        n_units: data.n_units(),
        tests,
        skipped,
    })
}

/// Runs the lag-`l` nested family on a trial.
pub fn run_mcrts(data: &TrialData, lag: usize, cfg: &TestConfig) -> Result<McrtResult> {
    let schedule = build_schedule(data.n_times(), lag)?;
    let groups = build_groups(data.crossover(), &schedule)?;
    run_groups(data, &groups, lag, cfg, |k| test_seed(cfg.seed, k))
}

/// Runs the non-nested baseline family on a trial.
pub fn run_naive(data: &TrialData, lag: usize, cfg: &TestConfig) -> Result<McrtResult> {
    let groups = naive_groups(data.crossover(), lag)?;
    run_groups(data, &groups, lag, cfg, |k| naive_test_seed(cfg.seed, k))
}

/// Units whose lag-`l` outcome at time `t + l` under `z_star` can be imputed
/// from `z` under the constant-effect hypothesis for cross-over time `t`:
/// both histories up to `t + l` are "cross over at `t`" or "not yet crossed".
pub fn imputable_units(
    z: &AssignmentMatrix,
    z_star: &AssignmentMatrix,
    t: usize,
    lag: usize,
) -> Result<BTreeSet<usize>> {
    if z.spec() != z_star.spec() {
        return Err(Error::MismatchedDesign("assignments use different designs".into()));
    }
    let n_times = z.spec().n_times();
    if t == 0 || t + lag > n_times {
        return Err(Error::LagOutOfRange { lag, n_times });
    }
    let horizon = t + lag;
    let allowed = |row: &[u8]| {
        let prefix = &row[..horizon];
        let untreated = prefix.iter().all(|&v| v == 0);
        let at_t = prefix
            .iter()
            .enumerate()
            .all(|(c, &v)| v == u8::from(c + 1 == t));
        untreated || at_t
    };
    Ok((0..z.spec().n_units())
        .filter(|&i| allowed(z.row(i)) && allowed(z_star.row(i)))
        .collect())
}
