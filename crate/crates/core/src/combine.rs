//! Combining the one-sided p-values of a family of tests: Fisher, Bonferroni
//! and a variance-weighted Z-score combiner with estimated weights.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dist::{chi_square_sf, normal_cdf, normal_quantile};
use crate::error::{Error, Result};
use crate::mcrt::McrtResult;
use crate::permtest::{sample_variance, Alternative};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CombineMethod {
    Fisher,
    WeightedZ,
    Bonferroni,
}

impl CombineMethod {
    pub fn name(self) -> &'static str {
        match self {
            Self::Fisher => "fisher",
            Self::WeightedZ => "weighted_z",
            Self::Bonferroni => "bonferroni",
        }
    }
}

impl fmt::Display for CombineMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for CombineMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fisher" => Ok(Self::Fisher),
            "weighted_z" | "z" => Ok(Self::WeightedZ),
            "bonferroni" => Ok(Self::Bonferroni),
            other => Err(Error::InvalidConfig(format!("unknown combiner `{other}`"))),
        }
    }
}

/// Which one-sided p-values to combine.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sidedness {
    /// Treatment raises the outcome.
    #[default]
    Greater,
    Less,
    /// Each direction combined separately; twice the smaller, capped at 1.
    TwoSided,
}

impl FromStr for Sidedness {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "greater" => Ok(Self::Greater),
            "less" => Ok(Self::Less),
            "two-sided" | "two_sided" => Ok(Self::TwoSided),
            other => Err(Error::InvalidConfig(format!("unknown alternative `{other}`"))),
        }
    }
}

/// Inverse asymptotic variances and the normalized weights derived from them.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightVector {
    lambdas: Vec<f64>,
    weights: Vec<f64>,
}

impl WeightVector {
    /// Weights `sqrt(lambda_k / sum_j lambda_j)`.
    pub fn from_lambdas(lambdas: Vec<f64>) -> Result<Self> {
        if lambdas.is_empty() {
            return Err(Error::NoTests("no weights to normalize".into()));
        }
        if let Some(bad) = lambdas.iter().find(|l| !(l.is_finite() && **l > 0.0)) {
            return Err(Error::UndefinedWeight(format!("lambda {bad} is not positive and finite")));
        }
        let total: f64 = lambdas.iter().sum();
        let weights = lambdas.iter().map(|l| (l / total).sqrt()).collect();
        Ok(Self { lambdas, weights })
    }

    pub fn equal(k: usize) -> Result<Self> {
        Self::from_lambdas(vec![1.0; k])
    }

    pub fn lambdas(&self) -> &[f64] {
        &self.lambdas
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CombinedPValue {
    pub method: CombineMethod,
    pub statistic: f64,
    pub p: f64,
    pub inputs: Vec<f64>,
}

/// Inverse asymptotic variance of the difference in means,
/// `1 / (N/n_control * var_treated + N/n_treated * var_control)`.
///
/// The treated variance is scaled by the control size and vice versa.
pub fn estimate_lambda(treated: &[f64], control: &[f64], n: usize) -> Result<f64> {
    if treated.len() < 2 || control.len() < 2 {
        return Err(Error::UndefinedWeight(format!(
            "arms of size {} and {} are too small to estimate variances",
            treated.len(),
            control.len()
        )));
    }
    lambda_from_moments(treated.len(), control.len(), sample_variance(treated), sample_variance(control), n)
}

pub(crate) fn lambda_from_moments(n_treated: usize, n_control: usize, var_treated: f64, var_control: f64, n: usize) -> Result<f64> {
    let n = n as f64;
    let v = n / n_control as f64 * var_treated + n / n_treated as f64 * var_control;
    if !(v > 0.0) || !v.is_finite() {
        return Err(Error::UndefinedWeight(format!(
            "both arms have zero variance (treated {var_treated}, control {var_control})"
        )));
    }
    Ok(1.0 / v)
}

/// Weights of every test that ran, normalized jointly across all subsets.
pub fn weights_from_result(r: &McrtResult) -> Result<WeightVector> {
    if r.tests.is_empty() {
        return Err(Error::NoTests(format!("every lag-{} test was skipped", r.lag)));
    }
    let lambdas = r
        .tests
        .iter()
        .map(|t| lambda_from_moments(t.n_treated, t.n_control, t.var_treated, t.var_control, r.n_units))
        .collect::<Result<Vec<_>>>()?;
    WeightVector::from_lambdas(lambdas)
}

fn check_pvalues(p: &[f64]) -> Result<()> {
    if p.is_empty() {
        return Err(Error::NoTests("no p-values to combine".into()));
    }
    match p.iter().find(|v| !(**v > 0.0 && **v <= 1.0)) {
        Some(&bad) => Err(Error::InvalidPValue(bad)),
        None => Ok(()),
    }
}

/// Largest p-value fed to the normal quantile when `n_resamples` relabelings
/// were used: `1 - 1/(2(B + 1))`.
pub fn p_ceiling(n_resamples: u64) -> f64 {
    1.0 - 0.5 / (n_resamples as f64 + 1.0)
}

/// `Phi(sum_k w_k Phi^{-1}(p_k))`, with each `p_k` capped at `ceiling`.
pub fn weighted_z_combine(p: &[f64], w: &WeightVector, ceiling: f64) -> Result<CombinedPValue> {
    check_pvalues(p)?;
    if p.len() != w.len() {
        return Err(Error::InvalidConfig(format!("{} p-values but {} weights", p.len(), w.len())));
    }
    let statistic: f64 = p
        .iter()
        .zip(w.weights())
        .map(|(&pk, &wk)| wk * normal_quantile(pk.min(ceiling)))
        .sum();
    Ok(CombinedPValue {
        method: CombineMethod::WeightedZ,
        statistic,
        p: normal_cdf(statistic).max(f64::MIN_POSITIVE),
        inputs: p.to_vec(),
    })
}

/// `-2 sum ln p` referred to chi-square with `2K` degrees of freedom.
pub fn fisher_combine(p: &[f64]) -> Result<CombinedPValue> {
    check_pvalues(p)?;
    let statistic = -2.0 * p.iter().map(|v| v.ln()).sum::<f64>();
    Ok(CombinedPValue {
        method: CombineMethod::Fisher,
        statistic: statistic.max(0.0),
        p: chi_square_sf(statistic, 2.0 * p.len() as f64).max(f64::MIN_POSITIVE),
        inputs: p.to_vec(),
    })
}

/// `min(1, K * min p)`.
pub fn bonferroni_combine(p: &[f64]) -> Result<CombinedPValue> {
    check_pvalues(p)?;
    let min = p.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(CombinedPValue {
        method: CombineMethod::Bonferroni,
        statistic: min,
        p: (p.len() as f64 * min).min(1.0),
        inputs: p.to_vec(),
    })
}

/// Dispatches to one combiner. `weights` is needed by the weighted Z
/// combiner only.
pub fn combine_pvalues(
    method: CombineMethod,
    p: &[f64],
    weights: Option<&WeightVector>,
    n_resamples: u64,
) -> Result<CombinedPValue> {
    match method {
        CombineMethod::Fisher => fisher_combine(p),
        CombineMethod::Bonferroni => bonferroni_combine(p),
        CombineMethod::WeightedZ => {
            let w = weights.ok_or_else(|| Error::InvalidConfig("weighted_z needs weights".into()))?;
            weighted_z_combine(p, w, p_ceiling(n_resamples))
        }
    }
}

/// Combines the per-test tails `(p_less, p_greater)` in the requested
/// direction.
pub fn combine_tails(
    method: CombineMethod,
    p_less: &[f64],
    p_greater: &[f64],
    weights: Option<&WeightVector>,
    n_resamples: u64,
    side: Sidedness,
) -> Result<CombinedPValue> {
    match side {
        Sidedness::Greater => combine_pvalues(method, p_greater, weights, n_resamples),
        Sidedness::Less => combine_pvalues(method, p_less, weights, n_resamples),
        Sidedness::TwoSided => {
            let g = combine_pvalues(method, p_greater, weights, n_resamples)?;
            let l = combine_pvalues(method, p_less, weights, n_resamples)?;
            let mut best = if l.p < g.p { l } else { g };
            best.p = (2.0 * best.p).min(1.0);
            Ok(best)
        }
    }
}

/// Combines the tests of an MCRT run with weights estimated from its arms.
pub fn combine_result(r: &McrtResult, method: CombineMethod, side: Sidedness) -> Result<CombinedPValue> {
    if r.tests.is_empty() {
        return Err(Error::NoTests(format!("every lag-{} test was skipped", r.lag)));
    }
    let weights = match method {
        CombineMethod::WeightedZ => Some(weights_from_result(r)?),
        _ => None,
    };
    combine_tails(
        method,
        &r.p_values(Alternative::Less),
        &r.p_values(Alternative::Greater),
        weights.as_ref(),
        r.max_resamples(),
        side,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::design::CrossoverTimes;
    use crate::mcrt::{run_mcrts, TestConfig, TrialData};
    use crate::seed::{derive_seed, rng_from_seed};
    use proptest::prelude::*;
    use rand::Rng;
    use rand_distr::{Distribution, Normal};

    fn ks_uniform(mut v: Vec<f64>) -> f64 {
        v.sort_by(f64::total_cmp);
        let n = v.len() as f64;
        v.iter()
            .enumerate()
            .map(|(i, &x)| ((i + 1) as f64 / n - x).max(x - i as f64 / n))
            .fold(0.0, f64::max)
    }

    #[test]
    fn lambda_examples() {
        // Unit variances in two arms of size N/2: (2 + 2)^-1.
        let t = [0.0, 2.0, 0.0, 2.0];
        let c = [1.0, -1.0, 1.0, -1.0];
        let vt = sample_variance(&t);
        let vc = sample_variance(&c);
        let l = estimate_lambda(&t, &c, 8).unwrap();
        assert!((l - 1.0 / (2.0 * vt + 2.0 * vc)).abs() < 1e-15);
        let l1 = lambda_from_moments(4, 4, 1.0, 1.0, 8).unwrap();
        assert_eq!(l1, 0.25);
        let doubled: Vec<f64> = t.iter().map(|v| 2.0 * v).collect();
        let doubled_c: Vec<f64> = c.iter().map(|v| 2.0 * v).collect();
        let l2 = estimate_lambda(&doubled, &doubled_c, 8).unwrap();
        assert!((l2 - l / 4.0).abs() < 1e-15);
        // Cross-matching: treated variance goes with the control size.
        let l3 = lambda_from_moments(2, 6, 3.0, 1.0, 8).unwrap();
        assert!((l3 - 1.0 / (8.0 / 6.0 * 3.0 + 8.0 / 2.0 * 1.0)).abs() < 1e-15);
        assert!(lambda_from_moments(3, 6, 3.0, 1.0, 8).unwrap() > l3);
        assert!(lambda_from_moments(2, 7, 3.0, 1.0, 8).unwrap() > l3);
    }

    #[test]
    fn lambda_rejects_degenerate_arms() {
        assert!(matches!(estimate_lambda(&[1.0, 1.0], &[2.0, 2.0], 4), Err(Error::UndefinedWeight(_))));
        assert!(matches!(estimate_lambda(&[1.0], &[2.0, 3.0], 3), Err(Error::UndefinedWeight(_))));
        assert!(estimate_lambda(&[1.0, 1.0], &[2.0, 3.0], 4).is_ok());
    }

    #[test]
    fn weighted_z_examples() {
        let one = WeightVector::from_lambdas(vec![3.0]).unwrap();
        let r = weighted_z_combine(&[0.05], &one, p_ceiling(999)).unwrap();
        assert!((r.p - 0.05).abs() < 1e-14);
        let two = WeightVector::equal(2).unwrap();
        let r = weighted_z_combine(&[0.5, 0.5], &two, p_ceiling(999)).unwrap();
        assert!(r.statistic.abs() < 1e-15);
        assert!((r.p - 0.5).abs() < 1e-15);
        assert!((two.weights()[0] - 0.5f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn weighted_z_caps_unit_pvalues() {
        let w = WeightVector::equal(1).unwrap();
        let r = weighted_z_combine(&[1.0], &w, p_ceiling(99)).unwrap();
        assert!((r.p - (1.0 - 0.5 / 100.0)).abs() < 1e-12);
        assert!(r.statistic.is_finite());
    }

    #[test]
    fn rejects_invalid_pvalues() {
        let w = WeightVector::equal(2).unwrap();
        for bad in [0.0, -0.1, 1.5, f64::NAN] {
            assert!(matches!(weighted_z_combine(&[0.5, bad], &w, 0.99), Err(Error::InvalidPValue(_))));
            assert!(matches!(fisher_combine(&[bad]), Err(Error::InvalidPValue(_))));
        }
        assert!(matches!(weighted_z_combine(&[0.5], &w, 0.99), Err(Error::InvalidConfig(_))));
        assert!(matches!(bonferroni_combine(&[]), Err(Error::NoTests(_))));
        assert!(WeightVector::from_lambdas(vec![1.0, 0.0]).is_err());
    }

    #[test]
    fn fisher_examples() {
        for p in [0.001, 0.3, 0.9] {
            assert!((fisher_combine(&[p]).unwrap().p - p).abs() < 1e-12);
        }
        let r = fisher_combine(&[1.0, 1.0, 1.0]).unwrap();
        assert_eq!((r.statistic, r.p), (0.0, 1.0));
        // Two inputs: tail of chi-square(4) at x is exp(-x/2)(1 + x/2).
        let r = fisher_combine(&[0.1, 0.2]).unwrap();
        let x = r.statistic;
        assert!((r.p - (-x / 2.0).exp() * (1.0 + x / 2.0)).abs() < 1e-12);
    }

    #[test]
    fn bonferroni_examples() {
        assert!((bonferroni_combine(&[0.01, 0.5]).unwrap().p - 0.02).abs() < 1e-15);
        assert_eq!(bonferroni_combine(&[1.0, 1.0, 1.0]).unwrap().p, 1.0);
        assert_eq!(bonferroni_combine(&[0.4, 0.9, 0.6]).unwrap().p, 1.0);
    }

    #[test]
    fn two_sided_doubles_the_smaller_direction() {
        let r = combine_tails(CombineMethod::Fisher, &[0.9, 0.8], &[0.02, 0.3], None, 99, Sidedness::TwoSided).unwrap();
        let g = fisher_combine(&[0.02, 0.3]).unwrap().p;
        assert!((r.p - 2.0 * g).abs() < 1e-15);
        let r = combine_tails(CombineMethod::Bonferroni, &[0.9], &[0.8], None, 99, Sidedness::TwoSided).unwrap();
        assert_eq!(r.p, 1.0);
        assert!(combine_tails(CombineMethod::WeightedZ, &[0.5], &[0.5], None, 99, Sidedness::Greater).is_err());
    }

    #[test]
    fn uniform_inputs_give_uniform_outputs() {
        let mut rng = rng_from_seed(6);
        let w = WeightVector::equal(4).unwrap();
        let uw = WeightVector::from_lambdas(vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let (mut z, mut zu, mut f) = (Vec::new(), Vec::new(), Vec::new());
        for _ in 0..100_000 {
            let p: Vec<f64> = (0..4).map(|_| 1.0 - rng.random::<f64>()).collect();
            z.push(weighted_z_combine(&p, &w, 1.0).unwrap().p);
            zu.push(weighted_z_combine(&p, &uw, 1.0).unwrap().p);
            f.push(fisher_combine(&p).unwrap().p);
        }
        for (name, v) in [("z", z), ("z-unequal", zu), ("fisher", f)] {
            let d = ks_uniform(v);
            assert!(d < 0.01, "{name}: KS {d}");
        }
    }

    #[test]
    fn weights_from_hand_built_result() {
        let times = vec![1, 1, 1, 2, 2, 3, 3, 3, 4, 4];
        let a = CrossoverTimes::from_times(times, 4).unwrap();
        let rows: Vec<Vec<f64>> = (0..10)
            .map(|i| (0..5).map(|t| ((i * 37 + t * 11) % 13) as f64 / 3.0).collect())
            .collect();
        let data = TrialData::new(a, rows.clone()).unwrap();
        let r = run_mcrts(&data, 0, &TestConfig::default()).unwrap();
        assert_eq!(r.tests.len(), 3);
        let w = weights_from_result(&r).unwrap();
        // Recompute each lambda straight from the panel.
        let arms = [(vec![0, 1, 2], vec![3, 4, 5, 6, 7, 8, 9], 1), (vec![3, 4], vec![5, 6, 7, 8, 9], 2), (vec![5, 6, 7], vec![8, 9], 3)];
        let lambdas: Vec<f64> = arms
            .iter()
            .map(|(t, c, time)| {
                let y = |u: &Vec<usize>| u.iter().map(|&i| rows[i][*time]).collect::<Vec<f64>>();
                let (yt, yc) = (y(t), y(c));
                let var = |v: &[f64]| {
                    let m = v.iter().sum::<f64>() / v.len() as f64;
                    v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64
                };
                1.0 / (10.0 / yc.len() as f64 * var(&yt) + 10.0 / yt.len() as f64 * var(&yc))
            })
            .collect();
        let total: f64 = lambdas.iter().sum();
        for (k, l) in lambdas.iter().enumerate() {
            assert!((w.lambdas()[k] - l).abs() < 1e-12);
            assert!((w.weights()[k] - (l / total).sqrt()).abs() < 1e-12);
        }
        let sq: f64 = w.weights().iter().map(|x| x * x).sum();
        assert!((sq - 1.0).abs() < 1e-12);
    }

    #[test]
    fn skipped_tests_renormalize() {
        // Time 2 has one unit: the k = 2 test is skipped and k = 1 takes all weight.
        let times = vec![1, 1, 2, 3, 3, 3];
        let a = CrossoverTimes::from_times(times, 3).unwrap();
        let rows = (0..6).map(|i| (0..4).map(|t| (i * t) as f64).collect()).collect();
        let data = TrialData::new(a, rows).unwrap();
        let r = run_mcrts(&data, 0, &TestConfig::default()).unwrap();
        assert_eq!(r.skipped.len(), 1);
        let w = weights_from_result(&r).unwrap();
        assert_eq!(w.weights(), &[1.0]);
    }

    #[test]
    fn all_skipped_is_an_error() {
        let a = CrossoverTimes::from_times(vec![1, 2, 3], 3).unwrap();
        let data = TrialData::new(a, vec![vec![0.0; 4]; 3]).unwrap();
        let r = run_mcrts(&data, 0, &TestConfig::default()).unwrap();
        assert!(matches!(weights_from_result(&r), Err(Error::NoTests(_))));
        assert!(matches!(combine_result(&r, CombineMethod::Fisher, Sidedness::Greater), Err(Error::NoTests(_))));
    }

    #[test]
    fn combined_pvalue_is_valid_under_the_null() {
        let reps = 2000;
        let noise = Normal::new(0.0, 1.0).unwrap();
        let spec = crate::design::DesignSpec::balanced(40, 4).unwrap();
        let mut z_p = Vec::with_capacity(reps);
        let mut f_p = Vec::with_capacity(reps);
        for rep in 0..reps {
            let mut rng = rng_from_seed(derive_seed(77, rep as u64));
            let a = crate::design::sample_crossover_times(&spec, &mut rng);
            let rows = (0..40)
                .map(|_| {
                    let mu: f64 = noise.sample(&mut rng);
                    (0..5).map(|t| mu + 0.3 * t as f64 + noise.sample(&mut rng)).collect()
                })
                .collect();
            let data = TrialData::new(a, rows).unwrap();
            let cfg = TestConfig { budget: 199, seed: rep as u64, ..Default::default() };
            let r = run_mcrts(&data, 1, &cfg).unwrap();
            z_p.push(combine_result(&r, CombineMethod::WeightedZ, Sidedness::Greater).unwrap().p);
            f_p.push(combine_result(&r, CombineMethod::Fisher, Sidedness::Greater).unwrap().p);
        }
        for alpha in [0.01, 0.05, 0.1] {
            let se = (alpha * (1.0 - alpha) / reps as f64).sqrt();
            for (name, v) in [("z", &z_p), ("fisher", &f_p)] {
                let rate = v.iter().filter(|&&p| p <= alpha).count() as f64 / reps as f64;
                assert!(rate <= alpha + 3.0 * se, "{name} alpha={alpha} rate={rate}");
            }
        }
    }

    fn pvec() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(1e-9f64..=1.0, 1..6)
    }

    proptest! {
        #[test]
        fn squared_weights_sum_to_one(l in prop::collection::vec(1e-6f64..1e6, 1..10)) {
            let w = WeightVector::from_lambdas(l).unwrap();
            let sq: f64 = w.weights().iter().map(|x| x * x).sum();
            prop_assert!((sq - 1.0).abs() < 1e-12);
            prop_assert!(w.weights().iter().all(|&x| x > 0.0));
        }

        #[test]
        fn combiners_are_monotone(p in pvec(), idx in 0usize..6, factor in 0.0f64..1.0) {
            let i = idx % p.len();
            let mut q = p.clone();
            q[i] = (q[i] * factor).max(1e-12);
            let w = WeightVector::from_lambdas((1..=p.len()).map(|k| k as f64).collect()).unwrap();
            let ceil = p_ceiling(999);
            prop_assert!(weighted_z_combine(&q, &w, ceil).unwrap().p <= weighted_z_combine(&p, &w, ceil).unwrap().p);
            prop_assert!(fisher_combine(&q).unwrap().p <= fisher_combine(&p).unwrap().p);
            prop_assert!(bonferroni_combine(&q).unwrap().p <= bonferroni_combine(&p).unwrap().p);
        }

        #[test]
        fn combined_pvalues_are_probabilities(p in pvec()) {
            let w = WeightVector::equal(p.len()).unwrap();
            for r in [weighted_z_combine(&p, &w, p_ceiling(99)).unwrap(), fisher_combine(&p).unwrap(), bonferroni_combine(&p).unwrap()] {
                prop_assert!(r.p > 0.0 && r.p <= 1.0);
            }
        }
    }
}
