//! Confidence intervals for a constant lagged effect by test inversion.
//!
//! For a shift `delta` the treated outcomes are reduced by `delta` and the
//! two permutation tails `P1 = P*{T* <= T}` and `P2 = P*{T* >= T}` are
//! recomputed on the same relabelings. `P1` is non-increasing and `P2`
//! non-decreasing in `delta`, so the interval
//! `[min {delta : P2 > alpha/2}, max {delta : P1 > alpha/2}]` can be found by
//! a grid search followed by bisection.

use rayon::prelude::*;

use crate::combine::{combine_pvalues, p_ceiling, weights_from_result, CombineMethod, WeightVector};
use crate::error::{Error, Result};
use crate::mcrt::{build_groups, build_schedule, run_groups, skip_reason, test_seed, TestConfig, TrialData};
use crate::permtest::{mean, sample_variance, ShiftableDistribution, TwoGroupSample, DEFAULT_EXACT_THRESHOLD};

/// Evenly spaced search grid `lo, lo + step, ..., hi`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    pub lo: f64,
    pub hi: f64,
    pub step: f64,
}

impl Grid {
    pub fn new(lo: f64, hi: f64, step: f64) -> Result<Self> {
        if !(lo < hi) || !(step > 0.0) || !lo.is_finite() || !hi.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "grid needs lo < hi and step > 0 (got {lo}, {hi}, {step})"
            )));
        }
        Ok(Self { lo, hi, step })
    }

    /// `center +- half_width` with `points` points.
    pub fn centered(center: f64, half_width: f64, points: usize) -> Result<Self> {
        let points = points.max(2);
        Self::new(center - half_width, center + half_width, 2.0 * half_width / (points - 1) as f64)
    }

    pub fn points(&self) -> Vec<f64> {
        let n = ((self.hi - self.lo) / self.step + 1e-9).floor() as usize;
        let mut v: Vec<f64> = (0..=n).map(|i| self.lo + i as f64 * self.step).collect();
        if *v.last().unwrap() < self.hi {
            v.push(self.hi);
        }
        v
    }
}

pub const DEFAULT_GRID_POINTS: usize = 121;
pub const DEFAULT_GRID_HALF_WIDTH_SE: f64 = 6.0;
pub const DEFAULT_REFINE_ITERS: usize = 20;
/// Doublings of the default grid tried before giving up on bracketing.
const MAX_WIDENINGS: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CIConfig {
    pub alpha: f64,
    /// Search grid; `None` centers a default grid on the pooled estimate.
    pub grid: Option<Grid>,
    /// Bisection steps after the grid search; 0 disables refinement.
    pub refine_iters: usize,
    pub budget: usize,
    pub exact_threshold: u64,
    pub min_arm: usize,
    pub seed: u64,
}

impl Default for CIConfig {
    fn default() -> Self {
        Self {
            alpha: 0.1,
            grid: None,
            refine_iters: DEFAULT_REFINE_ITERS,
            budget: 999,
            exact_threshold: DEFAULT_EXACT_THRESHOLD,
            min_arm: 2,
            seed: 0,
        }
    }
}

impl CIConfig {
    fn check(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::InvalidConfig(format!("alpha must be in (0, 1), got {}", self.alpha)));
        }
        Ok(())
    }

    pub fn test_config(&self) -> TestConfig {
        TestConfig {
            budget: self.budget,
            exact_threshold: self.exact_threshold,
            min_arm: self.min_arm,
            seed: self.seed,
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConfidenceInterval {
    pub lo: f64,
    pub hi: f64,
    pub level: f64,
    /// Spacing between the last rejected and first accepted shift.
    pub grid_resolution: f64,
}

impl ConfidenceInterval {
    pub fn contains(&self, x: f64) -> bool {
        self.lo <= x && x <= self.hi
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }
}

/// Treated outcomes reduced by `delta`.
pub fn shift_outcomes(s: &TwoGroupSample, delta: f64) -> TwoGroupSample {
    s.with_treated(s.treated().iter().map(|y| y - delta).collect())
}

/// `(P1, P2)` on the sample shifted by `delta`.
pub fn tail_pvalues(s: &TwoGroupSample, delta: f64, cfg: &CIConfig) -> Result<(f64, f64)> {
    Ok(ShiftableDistribution::new(s, cfg.budget, cfg.seed, cfg.exact_threshold)?.tails(delta))
}

/// Difference in means and its standard error, pooled across samples by
/// inverse variance.
fn pooled_estimate(samples: &[&TwoGroupSample]) -> (f64, f64) {
    let (mut num, mut den) = (0.0, 0.0);
    let mut plain = Vec::new();
    for s in samples {
        let est = mean(s.treated()) - mean(s.control());
        plain.push(est);
        let var = sample_variance(s.treated()) / s.treated().len() as f64
            + sample_variance(s.control()) / s.control().len() as f64;
        if var.is_finite() && var > 0.0 {
            num += est / var;
            den += 1.0 / var;
        }
    }
    if den > 0.0 {
        (num / den, den.sqrt().recip())
    } else {
        (mean(&plain), 0.0)
    }
}

fn default_grid(samples: &[&TwoGroupSample], widening: usize) -> Result<Grid> {
    let (center, se) = pooled_estimate(samples);
    let scale = samples
        .iter()
        .flat_map(|s| s.treated().iter().chain(s.control()))
        .fold(1.0f64, |a, v| a.max(v.abs()));
    // Constant arms carry no spread information; fall back to the data scale.
    let spread = if se > 0.0 { se } else { 1e-3 * scale };
    let half = DEFAULT_GRID_HALF_WIDTH_SE * spread * 2f64.powi(widening as i32);
    Grid::centered(center, half, DEFAULT_GRID_POINTS)
}

/// Grid search plus bisection over a curve `delta -> (P1, P2)` with `P1`
/// non-increasing and `P2` non-decreasing. Shifts whose tail equals
/// `alpha/2` exactly are accepted.
fn invert_curve(curve: &(dyn Fn(f64) -> (f64, f64) + Sync), grid: &Grid, cfg: &CIConfig) -> Result<ConfidenceInterval> {
    let cut = cfg.alpha / 2.0;
    let xs = grid.points();
    let vals: Vec<(f64, f64)> = xs.par_iter().map(|&d| curve(d)).collect();
    let (first, last) = (vals[0], vals[vals.len() - 1]);
    if first.1 >= cut {
        return Err(Error::GridNotBracketing { side: "lower", edge: xs[0], p_edge: first.1 });
    }
    if last.0 >= cut {
        return Err(Error::GridNotBracketing { side: "upper", edge: xs[xs.len() - 1], p_edge: last.0 });
    }
    // First accepted point for the lower end, last accepted for the upper.
    let i_lo = vals.iter().position(|v| v.1 >= cut).expect("bracketed");
    let i_hi = vals.iter().rposition(|v| v.0 >= cut).expect("bracketed");

    let refine = |mut rejected: f64, mut accepted: f64, accepts: &dyn Fn(f64) -> bool| {
        for _ in 0..cfg.refine_iters {
            let mid = 0.5 * (rejected + accepted);
            if accepts(mid) {
                accepted = mid;
            } else {
                rejected = mid;
            }
        }
        (accepted, (accepted - rejected).abs())
    };
    let (lo, res_lo) = refine(xs[i_lo - 1], xs[i_lo], &|d| curve(d).1 >= cut);
    let (hi, res_hi) = refine(xs[i_hi + 1], xs[i_hi], &|d| curve(d).0 >= cut);
    if lo > hi {
        return Err(Error::EmptyInterval { lo, hi });
    }
    Ok(ConfidenceInterval {
        lo,
        hi,
        level: 1.0 - cfg.alpha,
        grid_resolution: res_lo.max(res_hi),
    })
}

fn invert_with_default_grid(
    curve: &(dyn Fn(f64) -> (f64, f64) + Sync),
    samples: &[&TwoGroupSample],
    cfg: &CIConfig,
) -> Result<ConfidenceInterval> {
    if let Some(grid) = cfg.grid {
        return invert_curve(curve, &grid, cfg);
    }
    let mut widening = 0;
    loop {
        match invert_curve(curve, &default_grid(samples, widening)?, cfg) {
            Err(Error::GridNotBracketing { .. }) if widening < MAX_WIDENINGS => widening += 1,
            other => return other,
        }
    }
}

/// Interval from a single two-group permutation test.
pub fn invert_single(s: &TwoGroupSample, cfg: &CIConfig) -> Result<ConfidenceInterval> {
    cfg.check()?;
    let dist = ShiftableDistribution::new(s, cfg.budget, cfg.seed, cfg.exact_threshold)?;
    invert_with_default_grid(&|d| dist.tails(d), &[s], cfg)
}

/// Per-test distributions and the combiner inputs of a lag-`l` family.
pub struct CombinedCurve {
    dists: Vec<ShiftableDistribution>,
    method: CombineMethod,
    weights: Option<WeightVector>,
    n_resamples: u64,
}

impl CombinedCurve {
    pub fn new(data: &TrialData, lag: usize, cfg: &CIConfig, method: CombineMethod) -> Result<Self> {
        let schedule = build_schedule(data.n_times(), lag)?;
        let groups = build_groups(data.crossover(), &schedule)?;
        let tcfg = cfg.test_config();
        let runnable: Vec<_> = groups
            .iter()
            .filter(|g| skip_reason(g, cfg.min_arm.max(1)).is_none())
            .collect();
        if runnable.is_empty() {
            return Err(Error::NoTests(format!("every lag-{lag} test was skipped")));
        }
        let dists = runnable
            .par_iter()
            .map(|g| {
                let s = data.group_sample(g)?;
                ShiftableDistribution::new(&s, cfg.budget, test_seed(cfg.seed, g.k), cfg.exact_threshold)
            })
            .collect::<Result<Vec<_>>>()?;
        let weights = match method {
            CombineMethod::WeightedZ => {
                // Variances do not depend on the shift, so weights are fixed.
                let r = run_groups(data, &groups, lag, &TestConfig { budget: 1, exact_threshold: 0, ..tcfg }, |k| {
                    test_seed(cfg.seed, k)
                })?;
                Some(weights_from_result(&r)?)
            }
            _ => None,
        };
        let n_resamples = dists.iter().map(|d| d.n_resamples()).max().unwrap_or(1);
        Ok(Self { dists, method, weights, n_resamples })
    }

    /// Combined `(P1, P2)` at shift `delta`.
    pub fn tails(&self, delta: f64) -> Result<(f64, f64)> {
        let (p1, p2): (Vec<f64>, Vec<f64>) = self.dists.iter().map(|d| d.tails(delta)).unzip();
        let c1 = combine_pvalues(self.method, &p1, self.weights.as_ref(), self.n_resamples)?;
        let c2 = combine_pvalues(self.method, &p2, self.weights.as_ref(), self.n_resamples)?;
        Ok((c1.p, c2.p))
    }

    pub fn n_tests(&self) -> usize {
        self.dists.len()
    }

    /// The ceiling used for unit p-values by the weighted Z combiner.
    pub fn p_ceiling(&self) -> f64 {
        p_ceiling(self.n_resamples)
    }
}

/// Interval from the combined lag-`l` family.
pub fn invert_combined(data: &TrialData, lag: usize, cfg: &CIConfig, method: CombineMethod) -> Result<ConfidenceInterval> {
    cfg.check()?;
    let curve = CombinedCurve::new(data, lag, cfg, method)?;
    // Combiner errors cannot occur for valid p-values, which tails always are.
    let f = |d: f64| curve.tails(d).expect("tail p-values lie in (0, 1]");
    let samples: Vec<TwoGroupSample> = curve.dists.iter().map(|d| d.sample().clone()).collect();
    let refs: Vec<&TwoGroupSample> = samples.iter().collect();
    invert_with_default_grid(&f, &refs, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::design::{sample_crossover_times, DesignSpec};
    use crate::mcrt::build_groups;
    use crate::seed::rng_from_seed;
    use itertools::Itertools;
    use proptest::prelude::*;
    use rand_distr::{Distribution, Normal};

    fn normal_sample(m: usize, n: usize, effect: f64, seed: u64) -> TwoGroupSample {
        let mut rng = rng_from_seed(seed);
        let d = Normal::new(0.0, 1.0).unwrap();
        let t = (0..m).map(|_| effect + d.sample(&mut rng)).collect();
        let c = (0..n).map(|_| d.sample(&mut rng)).collect();
        TwoGroupSample::new(t, c, m + n).unwrap()
    }

    #[test]
    fn shift_round_trips() {
        let s = normal_sample(5, 6, 1.0, 1);
        assert_eq!(shift_outcomes(&s, 0.0), s);
        let back = shift_outcomes(&shift_outcomes(&s, 0.375), -0.375);
        assert_eq!(back.control(), s.control());
        for (a, b) in back.treated().iter().zip(s.treated()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn tails_are_monotone_and_limit_correctly() {
        let s = normal_sample(12, 15, 0.5, 2);
        let cfg = CIConfig { budget: 499, exact_threshold: 0, ..Default::default() };
        let dist = ShiftableDistribution::new(&s, cfg.budget, cfg.seed, 0).unwrap();
        let mut prev = (f64::INFINITY, 0.0);
        for i in -40..=40 {
            let (p1, p2) = dist.tails(i as f64 * 0.1);
            assert!(p1 <= prev.0 && p2 >= prev.1);
            prev = (p1, p2);
        }
        let (p1, p2) = tail_pvalues(&s, 50.0, &cfg).unwrap();
        assert_eq!((p1, p2), (1.0 / 500.0, 1.0));
    }

    #[test]
    fn symmetric_data_has_equal_tails() {
        let s = TwoGroupSample::new(vec![-1.0, 0.5, 2.0], vec![-2.0, -0.5, 1.0], 6).unwrap();
        let (p1, p2) = tail_pvalues(&s, 1.0, &CIConfig::default()).unwrap();
        assert_eq!(p1, p2);
    }

    #[test]
    fn tails_match_enumeration_for_four_and_four() {
        let s = TwoGroupSample::new(vec![3.1, 0.4, 2.2, 1.9], vec![0.3, -0.8, 1.1, 0.0], 8).unwrap();
        for delta in [-1.0, 0.0, 0.7, 1.6] {
            let shifted = shift_outcomes(&s, delta);
            let pooled: Vec<f64> = shifted.treated().iter().chain(shifted.control()).copied().collect();
            let obs: f64 = shifted.treated().iter().sum();
            let sums: Vec<f64> = (0..8).combinations(4).map(|c| c.iter().map(|&i| pooled[i]).sum()).collect();
            assert_eq!(sums.len(), 70);
            let p1 = sums.iter().filter(|&&v| v <= obs + 1e-12).count() as f64 / 70.0;
            let p2 = sums.iter().filter(|&&v| v >= obs - 1e-12).count() as f64 / 70.0;
            assert_eq!(tail_pvalues(&s, delta, &CIConfig::default()).unwrap(), (p1, p2));
        }
    }

    #[test]
    fn zero_noise_interval_contains_effect() {
        let tau = 1.25;
        let s = TwoGroupSample::new(vec![tau; 6], vec![0.0; 6], 12).unwrap();
        let ci = invert_single(&s, &CIConfig { alpha: 0.05, ..Default::default() }).unwrap();
        assert!(ci.contains(tau), "{ci:?}");
        assert!(ci.width() < 0.1);
    }

    #[test]
    fn interval_is_shift_equivariant() {
        let s = normal_sample(20, 20, 0.3, 3);
        let cfg = CIConfig { budget: 499, ..Default::default() };
        let a = invert_single(&s, &cfg).unwrap();
        let c = 2.5;
        let moved = shift_outcomes(&s, -c);
        let b = invert_single(&moved, &cfg).unwrap();
        assert!((b.lo - a.lo - c).abs() < 1e-6, "{a:?} {b:?}");
        assert!((b.hi - a.hi - c).abs() < 1e-6);
        assert_eq!(a.level, 0.9);
    }

    #[test]
    fn endpoints_follow_the_inversion_rule() {
        let s = normal_sample(15, 18, 0.8, 4);
        let cfg = CIConfig { alpha: 0.1, budget: 999, ..Default::default() };
        let ci = invert_single(&s, &cfg).unwrap();
        let dist = ShiftableDistribution::new(&s, cfg.budget, cfg.seed, cfg.exact_threshold).unwrap();
        let cut = cfg.alpha / 2.0;
        assert!(dist.tails(ci.lo).1 >= cut);
        assert!(dist.tails(ci.lo - 2.0 * ci.grid_resolution).1 < cut);
        assert!(dist.tails(ci.hi).0 >= cut);
        assert!(dist.tails(ci.hi + 2.0 * ci.grid_resolution).0 < cut);
    }

    #[test]
    fn smaller_alpha_never_shortens() {
        let s = normal_sample(25, 25, 0.0, 5);
        let mut last = 0.0;
        for alpha in [0.3, 0.2, 0.1, 0.05, 0.02] {
            let ci = invert_single(&s, &CIConfig { alpha, ..Default::default() }).unwrap();
            assert!(ci.width() >= last);
            last = ci.width();
        }
    }

    #[test]
    fn narrow_grid_is_reported() {
        let s = normal_sample(20, 20, 0.0, 6);
        let cfg = CIConfig { grid: Some(Grid::new(-0.01, 0.01, 0.005).unwrap()), ..Default::default() };
        match invert_single(&s, &cfg) {
            Err(Error::GridNotBracketing { side, p_edge, .. }) => {
                assert_eq!(side, "lower");
                assert!(p_edge >= 0.05);
            }
            other => panic!("expected bracketing error, got {other:?}"),
        }
        assert!(Grid::new(1.0, 0.0, 0.1).is_err());
        assert!(invert_single(&s, &CIConfig { alpha: 1.0, ..Default::default() }).is_err());
    }

    #[test]
    fn single_test_coverage() {
        let reps = 200;
        let tau = 0.7;
        let cfg = CIConfig { budget: 199, refine_iters: 8, ..Default::default() };
        let hits = (0..reps)
            .filter(|&r| {
                let s = normal_sample(20, 20, tau, 1000 + r);
                invert_single(&s, &CIConfig { seed: r, ..cfg }).unwrap().contains(tau)
            })
            .count();
        let cover = hits as f64 / reps as f64;
        let se = (0.9f64 * 0.1 / reps as f64).sqrt();
        assert!(cover >= 0.9 - 3.0 * se, "coverage {cover}");
    }

    fn trial_with_effect(n: usize, t: usize, lag: usize, tau: f64, seed: u64) -> TrialData {
        let spec = DesignSpec::balanced(n, t).unwrap();
        let mut rng = rng_from_seed(seed);
        let a = sample_crossover_times(&spec, &mut rng);
        let d = Normal::new(0.0, 0.5).unwrap();
        let rows = (0..n)
            .map(|i| {
                let mu = d.sample(&mut rng);
                (0..=t)
                    .map(|s| {
                        let eff = if s >= a.get(i) && s - a.get(i) == lag { tau } else { 0.0 };
                        mu + 0.2 * s as f64 + eff + d.sample(&mut rng)
                    })
                    .collect()
            })
            .collect();
        TrialData::new(a, rows).unwrap()
    }

    #[test]
    fn single_group_combined_matches_single() {
        // T = 2, lag 0: one subset {1, 2}, one test.
        let data = trial_with_effect(20, 2, 0, 1.0, 8);
        let cfg = CIConfig { budget: 499, ..Default::default() };
        let groups = build_groups(data.crossover(), &build_schedule(2, 0).unwrap()).unwrap();
        assert_eq!(groups.len(), 1);
        let s = data.group_sample(&groups[0]).unwrap();
        let single = invert_single(&s, &CIConfig { seed: test_seed(cfg.seed, groups[0].k), ..cfg }).unwrap();
        for method in [CombineMethod::Fisher, CombineMethod::WeightedZ, CombineMethod::Bonferroni] {
            let c = invert_combined(&data, 0, &cfg, method).unwrap();
            let tol = 2.0 * single.grid_resolution.max(c.grid_resolution);
            assert!((c.lo - single.lo).abs() <= tol, "{method}: {c:?} vs {single:?}");
            assert!((c.hi - single.hi).abs() <= tol);
        }
    }

    #[test]
    fn combined_interval_contains_zero_without_effect() {
        let reps = 100;
        let cfg = CIConfig { budget: 199, refine_iters: 8, ..Default::default() };
        let hits = (0..reps)
            .filter(|&r| {
                let data = trial_with_effect(40, 4, 1, 0.0, 500 + r);
                invert_combined(&data, 1, &CIConfig { seed: r, ..cfg }, CombineMethod::WeightedZ)
                    .unwrap()
                    .contains(0.0)
            })
            .count();
        let se = (0.9f64 * 0.1 / reps as f64).sqrt();
        assert!(hits as f64 / reps as f64 >= 0.9 - 3.0 * se, "hits {hits}");
    }

    #[test]
    fn combined_curve_is_monotone() {
        let data = trial_with_effect(40, 5, 1, 0.5, 9);
        let cfg = CIConfig { budget: 199, ..Default::default() };
        for method in [CombineMethod::Fisher, CombineMethod::WeightedZ] {
            let curve = CombinedCurve::new(&data, 1, &cfg, method).unwrap();
            assert!(curve.n_tests() >= 2);
            let mut prev = (f64::INFINITY, 0.0);
            for i in -30..=30 {
                let (p1, p2) = curve.tails(0.5 + i as f64 * 0.05).unwrap();
                assert!(p1 <= prev.0 && p2 >= prev.1);
                prev = (p1, p2);
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn interval_brackets_are_ordered(seed in 0u64..1000, effect in -2.0f64..2.0) {
            let s = normal_sample(10, 12, effect, seed);
            let ci = invert_single(&s, &CIConfig { budget: 199, refine_iters: 10, seed, ..Default::default() }).unwrap();
            prop_assert!(ci.lo <= ci.hi);
        }
    }
}
