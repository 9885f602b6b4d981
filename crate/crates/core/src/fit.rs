//! Two-step per-country fit.
//!
//! Step 1 regresses `ln a` on `g`: with `a = exp(-k1 (g - g0))` the slope is
//! `-k1` and the intercept `k1 g0`. Step 2 holds `k1` and minimizes the sum
//! of per-sector mean squared errors over `(k2, alpha, g0)` with SCE-UA.

use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{nearly_equal, ModelParams, SectorShares, TransferType};
use crate::numerics::{ols_fit, NumericsError};
use crate::sce::{minimize_from, Bounds, OptResult, OptimizerConfig, SceError};

/// Default acceptance threshold on the summed per-sector MSE.
pub const DEFAULT_THRESHOLD: f64 = 0.1;

/// Minimum number of yearly observations for a country to be fitted.
pub const DEFAULT_MIN_OBS: usize = 4;

/// Distance kept from the faces of the box when seeding the start point.
const START_MARGIN: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FitError {
    #[error("{code}: {n_obs} observations, at least {min_obs} required")]
    Ineligible { code: String, n_obs: usize, min_obs: usize },
    #[error("need at least 2 observations with a > 0 for the log-linear step, got {0}")]
    InsufficientData(usize),
    #[error("log-linear step is degenerate: {0}")]
    Degenerate(String),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Optimizer(#[from] SceError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub year: i32,
    /// Natural log of GDP per capita.
    pub g: f64,
    pub shares: SectorShares,
}

/// Cleaned yearly observations of one country, years strictly increasing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountrySeries {
    pub code: String,
    pub name: String,
    pub observations: Vec<Observation>,
}

impl CountrySeries {
    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    /// Checks the series invariants: strictly increasing years, finite `g`,
    /// shares in `[0, 1]`.
    pub fn validate(&self) -> Result<(), String> {
        if self.observations.windows(2).any(|w| w[0].year >= w[1].year) {
            return Err(format!("{}: years not strictly increasing", self.code));
        }
        for obs in &self.observations {
            if !obs.g.is_finite() {
                return Err(format!("{} {}: non-finite g", self.code, obs.year));
            }
            if obs.shares.as_array().iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(format!("{} {}: share outside [0, 1]", self.code, obs.year));
            }
        }
        Ok(())
    }
}

/// Initial estimates from the log-linear regression.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Step1 {
    pub k1: f64,
    pub g0_init: f64,
}

pub fn step1_fit(series: &CountrySeries) -> Result<Step1, FitError> {
    let (g, ln_a): (Vec<f64>, Vec<f64>) = series
        .observations
        .iter()
        .filter(|o| o.shares.a > 0.0)
        .map(|o| (o.g, o.shares.a.ln()))
        .unzip();
    if g.len() < 2 {
        return Err(FitError::InsufficientData(g.len()));
    }
    let line = ols_fit(&g, &ln_a)?;
    let k1 = -line.slope;
    if nearly_equal(k1, 0.0) {
        return Err(FitError::Degenerate(format!("k1 = {k1}")));
    }
    Ok(Step1 {
        k1,
        g0_init: line.intercept / k1,
    })
}

/// Per-sector mean squared errors between model and observations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SectorMse {
    pub a: f64,
    pub i: f64,
    pub s: f64,
}

impl SectorMse {
    pub fn sum(&self) -> f64 {
        self.a + self.i + self.s
    }
}

pub fn sector_mse(series: &CountrySeries, params: &ModelParams) -> SectorMse {
    let n = series.len() as f64;
    let mut acc = [0.0; 3];
    for obs in &series.observations {
        let model = params.shares(obs.g).as_array();
        let seen = obs.shares.as_array();
        for k in 0..3 {
            let d = model[k] - seen[k];
            acc[k] += d * d;
        }
    }
    SectorMse {
        a: acc[0] / n,
        i: acc[1] / n,
        s: acc[2] / n,
    }
}

/// Step-2 objective: summed per-sector MSE, or `+inf` when the model is not
/// finite somewhere on the series.
pub fn fit_objective(series: &CountrySeries, params: &ModelParams) -> f64 {
    let total = sector_mse(series, params).sum();
    if total.is_finite() {
        total
    } else {
        f64::INFINITY
    }
}

/// Default box for `(k2, alpha, g0)`.
pub fn default_bounds() -> Bounds {
    Bounds::new(&[(-5.0, 5.0), (0.0, 5.0), (1.0, 15.0)]).expect("static bounds are valid")
}

/// Minimizes the objective over `(k2, alpha, g0)` with `k1` held fixed.
///
/// `(0.5, 0.5, g0_init)`, moved just inside the box, is part of the initial
/// population.
pub fn step2_fit(
    series: &CountrySeries,
    k1: f64,
    g0_init: f64,
    bounds: &Bounds,
    config: &OptimizerConfig,
) -> Result<(ModelParams, OptResult), FitError> {
    if bounds.dim() != 3 {
        return Err(SceError::InvalidConfig(format!("expected 3 bounds, got {}", bounds.dim())).into());
    }
    let start = bounds.clamp_interior(&[0.5, 0.5, g0_init], START_MARGIN);
    let objective = |x: &[f64]| fit_objective(series, &ModelParams::new(k1, x[0], x[1], x[2]));
    let res = minimize_from(objective, bounds, config, &[start])?;
    let p = &res.best_point;
    Ok((ModelParams::new(k1, p[0], p[1], p[2]), res))
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitConfig {
    pub threshold: f64,
    pub bounds: Bounds,
    /// Its `seed` is replaced per country, see [`country_seed`].
    pub optimizer: OptimizerConfig,
    pub seed: u64,
    pub min_obs: usize,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            threshold: DEFAULT_THRESHOLD,
            bounds: default_bounds(),
            optimizer: OptimizerConfig::default(),
            seed: 42,
            min_obs: DEFAULT_MIN_OBS,
        }
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Optimizer seed for one country: the global seed mixed with an FNV-1a hash
/// of the country code. Independent of dataset order and platform.
pub fn country_seed(seed: u64, code: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in code.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    splitmix64(seed ^ h)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub code: String,
    pub params: ModelParams,
    pub mse_a: f64,
    pub mse_i: f64,
    pub mse_s: f64,
    pub mse_sum: f64,
    pub accepted: bool,
    /// `None` when the fitted parameters sit on a type boundary.
    pub transfer_type: Option<TransferType>,
    pub g_max_i: Option<f64>,
    pub n_obs: usize,
    pub evaluations_used: usize,
}

pub fn fit_country(series: &CountrySeries, config: &FitConfig) -> Result<FitResult, FitError> {
    if series.len() < config.min_obs {
        return Err(FitError::Ineligible {
            code: series.code.clone(),
            n_obs: series.len(),
            min_obs: config.min_obs,
        });
    }
    let Step1 { k1, g0_init } = step1_fit(series)?;
    let optimizer = config
        .optimizer
        .clone()
        .with_seed(country_seed(config.seed, &series.code));
    let (params, opt) = step2_fit(series, k1, g0_init, &config.bounds, &optimizer)?;
    let mse = sector_mse(series, &params);
    let mse_sum = mse.sum();
    log::debug!(
        "{}: {:?} mse_sum={mse_sum} evals={}",
        series.code,
        params,
        opt.evaluations_used
    );
    Ok(FitResult {
        code: series.code.clone(),
        params,
        mse_a: mse.a,
        mse_i: mse.i,
        mse_s: mse.s,
        mse_sum,
        accepted: mse_sum < config.threshold,
        transfer_type: params.classify().ok(),
        g_max_i: params.g_max_industry(),
        n_obs: series.len(),
        evaluations_used: opt.evaluations_used,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitFailure {
    pub code: String,
    pub error: FitError,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FitSummary {
    pub countries: usize,
    pub eligible: usize,
    pub fitted: usize,
    pub accepted: usize,
    /// Accepted fits per transfer type, index 0 is type 1.
    pub type_counts: [usize; 8],
    /// Accepted fits without a type.
    pub unclassified: usize,
}

impl fmt::Display for FitSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "countries: {}", self.countries)?;
        writeln!(f, "eligible: {}", self.eligible)?;
        writeln!(f, "fitted: {}", self.fitted)?;
        writeln!(f, "accepted: {}", self.accepted)?;
        let types: Vec<String> = self
            .type_counts
            .iter()
            .enumerate()
            .filter(|(_, &n)| n > 0)
            .map(|(t, n)| format!("{}:{}", t + 1, n))
            .collect();
        if types.is_empty() {
            write!(f, "types: none")?;
        } else {
            write!(f, "types: {}", types.join(" "))?;
        }
        if self.unclassified > 0 {
            write!(f, "\nunclassified: {}", self.unclassified)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitReport {
    /// Sorted by country code.
    pub results: Vec<FitResult>,
    /// Sorted by country code.
    pub failures: Vec<FitFailure>,
    pub summary: FitSummary,
}

/// Fits every series, fanning out across `jobs` threads (all available
/// when `None`). Failures are collected per country.
pub fn fit_all(dataset: &[CountrySeries], config: &FitConfig, jobs: Option<usize>) -> FitReport {
    let run = || -> Vec<(String, Result<FitResult, FitError>)> {
        dataset
            .par_iter()
            .map(|s| (s.code.clone(), fit_country(s, config)))
            .collect()
    };
    let outcomes = match jobs {
        Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build() {
            Ok(pool) => pool.install(run),
            Err(e) => {
                log::warn!("thread pool unavailable ({e}), fitting on the current thread");
                dataset
                    .iter()
                    .map(|s| (s.code.clone(), fit_country(s, config)))
                    .collect()
            }
        },
        None => run(),
    };

    let mut summary = FitSummary {
        countries: dataset.len(),
        ..Default::default()
    };
    let mut results = Vec::new();
    let mut failures = Vec::new();
    for (code, outcome) in outcomes {
        match outcome {
            Ok(r) => {
                summary.eligible += 1;
                summary.fitted += 1;
                if r.accepted {
                    summary.accepted += 1;
                    match r.transfer_type {
                        Some(t) => summary.type_counts[usize::from(t.id()) - 1] += 1,
                        None => summary.unclassified += 1,
                    }
                }
                results.push(r);
            }
            Err(error) => {
                if !matches!(error, FitError::Ineligible { .. }) {
                    summary.eligible += 1;
                }
                failures.push(FitFailure { code, error });
            }
        }
    }
    results.sort_by(|l, r| l.code.cmp(&r.code));
    failures.sort_by(|l, r| l.code.cmp(&r.code));
    FitReport {
        results,
        failures,
        summary,
    }
}

/// Synthetic series from the closed-form shares on `g_grid`, years
/// assigned consecutively from 1980.
///
/// Gaussian noise of standard deviation `noise_sigma` perturbs `a` and `i`;
/// `s` takes the remainder, each share is clamped to `[0, 1]` and the
/// triple renormalized to sum to one.
pub fn synth_generate(params: &ModelParams, g_grid: &[f64], noise_sigma: f64, seed: u64) -> CountrySeries {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, noise_sigma.abs()).expect("finite sigma");
    let observations = g_grid
        .iter()
        .enumerate()
        .map(|(k, &g)| {
            let exact = params.shares(g);
            let (a, i) = if noise_sigma > 0.0 {
                (exact.a + noise.sample(&mut rng), exact.i + noise.sample(&mut rng))
            } else {
                (exact.a, exact.i)
            };
            let mut shares = [a, i, 1.0 - a - i].map(|v| v.clamp(0.0, 1.0));
            let total: f64 = shares.iter().sum();
            if total != 1.0 {
                shares.iter_mut().for_each(|v| *v /= total);
            }
            Observation {
                year: 1980 + k as i32,
                g,
                shares: SectorShares::new(shares[0], shares[1], shares[2]),
            }
        })
        .collect();
    CountrySeries {
        code: "SYN".into(),
        name: "synthetic".into(),
        observations,
    }
}

/// `n` evenly spaced points from `start` to `end` inclusive.
pub fn linspace(start: f64, end: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![start],
        _ => (0..n)
            .map(|k| start + (end - start) * k as f64 / (n - 1) as f64)
            .collect(),
    }
}
