//! Two-group permutation tests with exact enumeration or Monte-Carlo
//! relabeling.
//!
//! A relabeling picks which `m` of the pooled `m + n` outcomes play the
//! treated arm. Monte-Carlo relabeling `r` draws from stream `r` of the
//! caller's seed, so results do not depend on how resamples are scheduled.

use itertools::Itertools;
use rand::seq::index;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::design::binomial_f64;
use crate::error::{Error, Result};
use crate::seed::stream_rng;

/// Default number of relabelings up to which p-values are computed exactly.
pub const DEFAULT_EXACT_THRESHOLD: u64 = 20_000;

/// Treated and control outcomes plus the `N` used in the `sqrt(N)` factor.
#[derive(Debug, Clone, PartialEq)]
pub struct TwoGroupSample {
    treated: Vec<f64>,
    control: Vec<f64>,
    scale_n: usize,
}

impl TwoGroupSample {
    pub fn new(treated: Vec<f64>, control: Vec<f64>, scale_n: usize) -> Result<Self> {
        if treated.is_empty() || control.is_empty() {
            return Err(Error::InvalidSample(format!(
                "both arms need at least one unit (treated {}, control {})",
                treated.len(),
                control.len()
            )));
        }
        if scale_n == 0 {
            return Err(Error::InvalidSample("scale_n must be positive".into()));
        }
        if treated.iter().chain(&control).any(|v| !v.is_finite()) {
            return Err(Error::InvalidSample("outcomes must be finite".into()));
        }
        Ok(Self {
            treated,
            control,
            scale_n,
        })
    }

    pub fn treated(&self) -> &[f64] {
        &self.treated
    }

    pub fn control(&self) -> &[f64] {
        &self.control
    }

    pub fn scale_n(&self) -> usize {
        self.scale_n
    }

    /// Same sample with the arms exchanged.
    pub fn swapped(&self) -> Self {
        Self {
            treated: self.control.clone(),
            control: self.treated.clone(),
            scale_n: self.scale_n,
        }
    }

    pub(crate) fn with_treated(&self, treated: Vec<f64>) -> Self {
        Self {
            treated,
            control: self.control.clone(),
            scale_n: self.scale_n,
        }
    }

    fn pooled(&self) -> Vec<f64> {
        self.treated.iter().chain(&self.control).copied().collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Statistic {
    /// `sqrt(N) * (mean(treated) - mean(control))`.
    #[default]
    DiffInMeans,
    /// Sum of treated mid-ranks in the pooled sample.
    RankSum,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PermutationResult {
    pub stat_obs: f64,
    /// `P*{T(Z*) <= T(Z)}`.
    pub p_less: f64,
    /// `P*{T(Z*) >= T(Z)}`.
    pub p_greater: f64,
    pub n_resamples: u64,
    pub exact: bool,
}

impl PermutationResult {
    pub fn tail(&self, alternative: Alternative) -> f64 {
        match alternative {
            Alternative::Less => self.p_less,
            Alternative::Greater => self.p_greater,
        }
    }
}

/// Direction of a one-sided p-value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Alternative {
    Less,
    Greater,
}

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Unbiased sample variance (divisor `len - 1`); `NaN` below two values.
pub fn sample_variance(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return f64::NAN;
    }
    let m = mean(v);
    v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64
}

pub fn diff_in_means(s: &TwoGroupSample) -> f64 {
    (s.scale_n as f64).sqrt() * (mean(&s.treated) - mean(&s.control))
}

fn midranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

pub fn rank_sum(s: &TwoGroupSample) -> f64 {
    let ranks = midranks(&s.pooled());
    ranks[..s.treated.len()].iter().sum()
}

pub fn statistic_value(s: &TwoGroupSample, stat: Statistic) -> f64 {
    match stat {
        Statistic::DiffInMeans => diff_in_means(s),
        Statistic::RankSum => rank_sum(s),
    }
}

/// Relabelings of a pooled sample of `m + n` outcomes: either every
/// `m`-subset or `budget` uniform draws.
#[derive(Debug, Clone, Copy)]
struct RelabelingPlan {
    m: usize,
    n: usize,
    exact: bool,
    budget: usize,
    seed: u64,
}

impl RelabelingPlan {
    fn new(m: usize, n: usize, budget: usize, seed: u64, exact_threshold: u64) -> Result<Self> {
        if budget == 0 {
            return Err(Error::ZeroBudget);
        }
        let total = binomial_f64(m + n, m);
        Ok(Self {
            m,
            n,
            exact: total <= exact_threshold as f64,
            budget,
            seed,
        })
    }

    /// Maps every relabeling (as a sorted index slice into the pooled sample)
    /// through `f`, in a fixed order.
    fn map<T: Send>(&self, f: impl Fn(&[usize]) -> T + Sync) -> Vec<T> {
        if self.exact {
            return (0..self.m + self.n)
                .combinations(self.m)
                .map(|c| f(&c))
                .collect();
        }
        let (m, n, seed) = (self.m, self.n, self.seed);
        (0..self.budget)
            .into_par_iter()
            .with_min_len(64)
            .map(|r| {
                let mut rng = stream_rng(seed, r as u64);
                let mut sel: Vec<usize> = if m <= n {
                    index::sample(&mut rng, m + n, m).into_vec()
                } else {
                    let ctrl = index::sample(&mut rng, m + n, n).into_vec();
                    let mut is_ctrl = vec![false; m + n];
                    for c in ctrl {
                        is_ctrl[c] = true;
                    }
                    (0..m + n).filter(|&i| !is_ctrl[i]).collect()
                };
                sel.sort_unstable();
                f(&sel)
            })
            .collect()
    }

    fn count(&self) -> u64 {
        if self.exact {
            binomial_f64(self.m + self.n, self.m) as u64
        } else {
            self.budget as u64
        }
    }

    fn pvalue(&self, hits: usize) -> f64 {
        if self.exact {
            hits as f64 / self.count() as f64
        } else {
            (1 + hits) as f64 / (self.budget + 1) as f64
        }
    }
}

/// Randomization distribution of the difference in means, stored so that
/// tail probabilities can be re-evaluated after shifting the treated arm by
/// any `delta` with the same relabelings (common random numbers).
#[derive(Debug, Clone)]
pub struct ShiftableDistribution {
    sample: TwoGroupSample,
    plan: RelabelingPlanInfo,
    obs_sum: f64,
    /// Sum of the relabeled treated arm, unshifted.
    sums: Vec<f64>,
    /// How many original treated units each relabeling keeps treated.
    overlaps: Vec<u32>,
    tol: f64,
}

#[derive(Debug, Clone, Copy)]
struct RelabelingPlanInfo {
    exact: bool,
    budget: usize,
    count: u64,
}

impl ShiftableDistribution {
    pub fn new(s: &TwoGroupSample, budget: usize, seed: u64, exact_threshold: u64) -> Result<Self> {
        let m = s.treated.len();
        let plan = RelabelingPlan::new(m, s.control.len(), budget, seed, exact_threshold)?;
        let pooled = s.pooled();
        let pairs = plan.map(|sel| {
            let sum: f64 = sel.iter().map(|&i| pooled[i]).sum();
            let overlap = sel.iter().take_while(|&&i| i < m).count() as u32;
            (sum, overlap)
        });
        let (sums, overlaps) = pairs.into_iter().unzip();
        let max_abs = pooled.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        Ok(Self {
            sample: s.clone(),
            plan: RelabelingPlanInfo {
                exact: plan.exact,
                budget: plan.budget,
                count: plan.count(),
            },
            obs_sum: s.treated.iter().sum(),
            sums,
            overlaps,
            tol: 1e-10 * m as f64 * max_abs.max(f64::MIN_POSITIVE),
        })
    }

    pub fn sample(&self) -> &TwoGroupSample {
        &self.sample
    }

    pub fn is_exact(&self) -> bool {
        self.plan.exact
    }

    pub fn n_resamples(&self) -> u64 {
        self.plan.count
    }

    fn pvalue(&self, hits: usize) -> f64 {
        if self.plan.exact {
            hits as f64 / self.plan.count as f64
        } else {
            (1 + hits) as f64 / (self.plan.budget + 1) as f64
        }
    }

    /// `(P1, P2)` = `(P*{T* <= T}, P*{T* >= T})` on the sample with the
    /// treated outcomes reduced by `delta`.
    pub fn tails(&self, delta: f64) -> (f64, f64) {
        let m = self.sample.treated.len() as f64;
        let (mut less, mut greater) = (0usize, 0usize);
        for (&sum, &overlap) in self.sums.iter().zip(&self.overlaps) {
            // T* - T is a positive multiple of this difference of shifted sums.
            let d = (sum - self.obs_sum) + delta * (m - overlap as f64);
            if d <= self.tol {
                less += 1;
            }
            if d >= -self.tol {
                greater += 1;
            }
        }
        (self.pvalue(less), self.pvalue(greater))
    }

    pub fn result(&self, delta: f64) -> PermutationResult {
        let (p_less, p_greater) = self.tails(delta);
        let shifted = self
            .sample
            .with_treated(self.sample.treated.iter().map(|y| y - delta).collect());
        PermutationResult {
            stat_obs: diff_in_means(&shifted),
            p_less,
            p_greater,
            n_resamples: self.plan.count,
            exact: self.plan.exact,
        }
    }
}

/// Exact or Monte-Carlo permutation p-values for both tails.
///
/// Exact enumeration is used when `C(m + n, m) <= exact_threshold`; otherwise
/// `budget` relabelings are drawn and each tail is reported as
/// `(1 + hits) / (budget + 1)`. Ties count towards both tails.
pub fn permutation_pvalue(
    s: &TwoGroupSample,
    stat: Statistic,
    budget: usize,
    seed: u64,
    exact_threshold: u64,
) -> Result<PermutationResult> {
    match stat {
        Statistic::DiffInMeans => {
            Ok(ShiftableDistribution::new(s, budget, seed, exact_threshold)?.result(0.0))
        }
        Statistic::RankSum => rank_sum_pvalue(s, budget, seed, exact_threshold),
    }
}

fn rank_sum_pvalue(
    s: &TwoGroupSample,
    budget: usize,
    seed: u64,
    exact_threshold: u64,
) -> Result<PermutationResult> {
    let plan = RelabelingPlan::new(s.treated.len(), s.control.len(), budget, seed, exact_threshold)?;
    let ranks = midranks(&s.pooled());
    let obs: f64 = ranks[..s.treated.len()].iter().sum();
    let stats = plan.map(|sel| sel.iter().map(|&i| ranks[i]).sum::<f64>());
    // Ranks are half-integers, so sums compare exactly up to a small slack.
    let less = stats.iter().filter(|&&v| v <= obs + 1e-9).count();
    let greater = stats.iter().filter(|&&v| v >= obs - 1e-9).count();
    Ok(PermutationResult {
        stat_obs: obs,
        p_less: plan.pvalue(less),
        p_greater: plan.pvalue(greater),
        n_resamples: plan.count(),
        exact: plan.exact,
    })
}
