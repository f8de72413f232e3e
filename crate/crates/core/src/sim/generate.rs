use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::Deserialize;

use crate::design::{sample_crossover_times, DesignSpec};
use crate::error::{Error, Result};
use crate::mcrt::{check_lag, TrialData};

/// Variances of the unit intercept, the unit covariate and the noise.
#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Variances {
    pub mu: f64,
    pub x: f64,
    pub eps: f64,
}

impl Default for Variances {
    fn default() -> Self {
        Self { mu: 0.25, x: 0.25, eps: 0.1 }
    }
}

impl Variances {
    fn normals(&self) -> Result<[Normal<f64>; 3]> {
        let make = |name: &str, v: f64| {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::InvalidConfig(format!("variance `{name}` must be finite and non-negative, got {v}")));
            }
            Normal::new(0.0, v.sqrt()).map_err(|e| Error::InvalidConfig(e.to_string()))
        };
        Ok([make("mu", self.mu)?, make("x", self.x)?, make("eps", self.eps)?])
    }
}

/// Unit-by-time interaction: none, quadratic, exponential or tanh.
pub fn interaction_f(m: u8, x: f64) -> Result<f64> {
    match m {
        0 => Ok(0.0),
        1 => Ok(x * x),
        2 => Ok(2.0 * (x / 2.0).exp()),
        3 => Ok(5.0 * x.tanh()),
        _ => Err(Error::InvalidConfig(format!("interaction must be 0, 1, 2 or 3, got {m}"))),
    }
}

/// Draws a balanced stepped-wedge assignment and the panel
/// `Y_it = mu_i + s (X_i + t) + 0.1 f_m(X_i + t) + tau_{t - A_i} 1{t >= A_i} + eps_it`
/// for `t = 0..=T`, with slope `s = 0.5` (or `0.45` when `m != 0`).
/// `taus[l]` is the effect `l` steps after cross-over; missing lags are 0.
pub fn gen_outcomes<R: Rng + ?Sized>(
    n_units: usize,
    n_times: usize,
    taus: &[f64],
    interaction: u8,
    variances: &Variances,
    rng: &mut R,
) -> Result<TrialData> {
    interaction_f(interaction, 0.0)?;
    let spec = DesignSpec::balanced(n_units, n_times)?;
    let [d_mu, d_x, d_eps] = variances.normals()?;
    let a = sample_crossover_times(&spec, rng);
    let slope = if interaction == 0 { 0.5 } else { 0.45 };
    let rows = (0..n_units)
        .map(|i| {
            let mu = d_mu.sample(rng);
            let x = d_x.sample(rng);
            (0..=n_times)
                .map(|t| {
                    let u = x + t as f64;
                    let effect = if t >= a.get(i) { taus.get(t - a.get(i)).copied().unwrap_or(0.0) } else { 0.0 };
                    let f = interaction_f(interaction, u).expect("checked above");
                    mu + slope * u + 0.1 * f + effect + d_eps.sample(rng)
                })
                .collect()
        })
        .collect();
    TrialData::new(a, rows)
}

/// A single-effect scenario: only lag `lag` carries an effect.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sim1Config {
    pub n_units: usize,
    pub n_times: usize,
    pub lag: usize,
    pub tau: f64,
    pub variances: Variances,
}

impl Sim1Config {
    pub fn check(&self) -> Result<()> {
        check_lag(self.n_times, self.lag)?;
        DesignSpec::balanced(self.n_units, self.n_times)?;
        self.variances.normals()?;
        Ok(())
    }

    pub fn taus(&self) -> Vec<f64> {
        let mut taus = vec![0.0; self.lag + 1];
        taus[self.lag] = self.tau;
        taus
    }
}

pub fn gen_outcomes_sim1<R: Rng + ?Sized>(cfg: &Sim1Config, rng: &mut R) -> Result<TrialData> {
    cfg.check()?;
    gen_outcomes(cfg.n_units, cfg.n_times, &cfg.taus(), 0, &cfg.variances, rng)
}

/// A multi-effect scenario: a vector of lagged effects and an
/// interaction shape.
#[derive(Debug, Clone, PartialEq)]
pub struct Sim2Config {
    pub n_units: usize,
    pub n_times: usize,
    pub taus: Vec<f64>,
    pub interaction: u8,
    pub variances: Variances,
}

impl Default for Sim2Config {
    fn default() -> Self {
        Self {
            n_units: 200,
            n_times: 8,
            taus: vec![0.1, 0.3, 0.6, 0.4, 0.2, 0.0, 0.0, 0.0],
            interaction: 0,
            variances: Variances::default(),
        }
    }
}

pub fn gen_outcomes_sim2<R: Rng + ?Sized>(cfg: &Sim2Config, rng: &mut R) -> Result<TrialData> {
    gen_outcomes(cfg.n_units, cfg.n_times, &cfg.taus, cfg.interaction, &cfg.variances, rng)
}
