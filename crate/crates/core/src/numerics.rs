//! Small numerical toolkit used by the fitting pipeline and the analysis
//! commands: least squares, correlation, a fixed-step RK4 integrator for the
//! transfer ODE, bisection, quartile summaries and histograms.

use thiserror::Error;

use crate::model::{ModelParams, SectorShares};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NumericsError {
    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("input sequences differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("zero variance in {0}")]
    ZeroVariance(&'static str),
    #[error("invalid integration step {step} over [{start}, {end}]")]
    InvalidStep { step: f64, start: f64, end: f64 },
    #[error("f({lo}) and f({hi}) have the same sign")]
    NoBracket { lo: f64, hi: f64 },
    #[error("bin edges must be strictly increasing and at least two")]
    EdgeOrder,
    #[error("non-finite value in input")]
    NonFinite,
}

/// Ordinary least-squares line `y = slope x + intercept`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OlsFit {
    pub slope: f64,
    pub intercept: f64,
    /// Sum of squared residuals.
    pub residual_sum: f64,
}

impl OlsFit {
    pub fn predict(&self, x: f64) -> f64 {
        self.slope * x + self.intercept
    }
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn check_pair(x: &[f64], y: &[f64]) -> Result<(), NumericsError> {
    if x.len() != y.len() {
        return Err(NumericsError::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < 2 {
        return Err(NumericsError::TooFewSamples {
            needed: 2,
            got: x.len(),
        });
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(NumericsError::NonFinite);
    }
    Ok(())
}

/// Centered second moments `(sxx, syy, sxy)`.
fn moments(x: &[f64], y: &[f64]) -> (f64, f64, f64, f64, f64) {
    let (mx, my) = (mean(x), mean(y));
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for (&xi, &yi) in x.iter().zip(y) {
        let (dx, dy) = (xi - mx, yi - my);
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    (mx, my, sxx, syy, sxy)
}

pub fn ols_fit(x: &[f64], y: &[f64]) -> Result<OlsFit, NumericsError> {
    check_pair(x, y)?;
    let (mx, my, sxx, _, sxy) = moments(x, y);
    if sxx == 0.0 {
        return Err(NumericsError::ZeroVariance("x"));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let residual_sum = x
        .iter()
        .zip(y)
        .map(|(&xi, &yi)| {
            let r = yi - (slope * xi + intercept);
            r * r
        })
        .sum();
    Ok(OlsFit {
        slope,
        intercept,
        residual_sum,
    })
}

/// Pearson product-moment correlation, clamped to `[-1, 1]`.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64, NumericsError> {
    check_pair(x, y)?;
    let (_, _, sxx, syy, sxy) = moments(x, y);
    if sxx == 0.0 {
        return Err(NumericsError::ZeroVariance("x"));
    }
    if syy == 0.0 {
        return Err(NumericsError::ZeroVariance("y"));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Sampled solution of the transfer ODE.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub g_values: Vec<f64>,
    pub shares: Vec<SectorShares>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.g_values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.g_values.is_empty()
    }

    pub fn last(&self) -> Option<(f64, SectorShares)> {
        Some((*self.g_values.last()?, *self.shares.last()?))
    }
}

/// Number of uniform sub-steps of size at most `step` covering `[start, end]`.
pub fn step_count(start: f64, end: f64, step: f64) -> Result<usize, NumericsError> {
    let invalid = || NumericsError::InvalidStep { step, start, end };
    if !(step > 0.0) || !start.is_finite() || !end.is_finite() || !step.is_finite() || end < start {
        return Err(invalid());
    }
    let ratio = (end - start) / step;
    // Ratios like 0.26 / 1e-3 land a hair above an integer in binary.
    let n = (ratio - 1e-9 * ratio.max(1.0)).ceil().max(0.0);
    if n > 1e9 {
        return Err(invalid());
    }
    Ok(n as usize)
}

/// Grid `start, start + h, ..., end` with uniform `h <= step`; the last node
/// is exactly `end`.
pub fn uniform_grid(start: f64, end: f64, step: f64) -> Result<Vec<f64>, NumericsError> {
    let n = step_count(start, end, step)?;
    if n == 0 {
        return Ok(vec![start]);
    }
    let h = (end - start) / n as f64;
    let mut grid: Vec<f64> = (0..n).map(|k| start + k as f64 * h).collect();
    grid.push(end);
    Ok(grid)
}

/// Integrates the transfer ODE with the classical fourth-order Runge-Kutta
/// scheme on the grid produced by [`uniform_grid`].
pub fn rk4_integrate(
    params: &ModelParams,
    g_start: f64,
    start: SectorShares,
    g_end: f64,
    step: f64,
) -> Result<Trajectory, NumericsError> {
    let g_values = uniform_grid(g_start, g_end, step)?;
    let mut shares = Vec::with_capacity(g_values.len());
    let mut y = start.as_array();
    shares.push(start);
    let f = |y: &[f64; 3]| {
        let (da, di, ds) = params.rhs(&SectorShares::new(y[0], y[1], y[2]));
        [da, di, ds]
    };
    let axpy = |y: &[f64; 3], h: f64, k: &[f64; 3]| [y[0] + h * k[0], y[1] + h * k[1], y[2] + h * k[2]];
    for w in g_values.windows(2) {
        let h = w[1] - w[0];
        let k1 = f(&y);
        let k2 = f(&axpy(&y, 0.5 * h, &k1));
        let k3 = f(&axpy(&y, 0.5 * h, &k2));
        let k4 = f(&axpy(&y, h, &k3));
        for j in 0..3 {
            y[j] += h / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]);
        }
        shares.push(SectorShares::new(y[0], y[1], y[2]));
    }
    Ok(Trajectory { g_values, shares })
}

/// Bisection for a sign change of `f` in `[lo, hi]`, stopping once the
/// bracket is narrower than `tol`.
pub fn find_crossing<F>(f: F, lo: f64, hi: f64, tol: f64) -> Result<f64, NumericsError>
where
    F: Fn(f64) -> f64,
{
    let (mut lo, mut hi) = if lo <= hi { (lo, hi) } else { (hi, lo) };
    let mut f_lo = f(lo);
    let f_hi = f(hi);
    if f_lo == 0.0 {
        return Ok(lo);
    }
    if f_hi == 0.0 {
        return Ok(hi);
    }
    if !(f_lo * f_hi < 0.0) {
        return Err(NumericsError::NoBracket { lo, hi });
    }
    let tol = tol.max(0.0);
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let f_mid = f(mid);
        if f_mid == 0.0 {
            return Ok(mid);
        }
        if (f_mid < 0.0) == (f_lo < 0.0) {
            lo = mid;
            f_lo = f_mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Summary of one quartile group.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuartileGroup {
    pub count: usize,
    pub key_min: f64,
    pub key_max: f64,
    pub mean_u: f64,
    pub std_u: f64,
    pub mean_v: f64,
    pub std_v: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuartileStats {
    /// Lowest key values first.
    pub groups: [QuartileGroup; 4],
    /// Input indices of each group's members, in sorted order.
    pub members: [Vec<usize>; 4],
}

fn mean_std(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count() as f64;
    let m = values.clone().sum::<f64>() / n;
    let var = values.map(|v| (v - m) * (v - m)).sum::<f64>() / n;
    (m, var.sqrt())
}

/// Splits the sample into four groups by ascending `key` and summarizes the
/// paired values in each.
///
/// Group sizes differ by at most one; the first `n mod 4` groups get the
/// extra member. Ties in `key` keep input order. Standard deviations are
/// population (divide by `n`) deviations.
pub fn quartile_stats(key: &[f64], paired: &[(f64, f64)]) -> Result<QuartileStats, NumericsError> {
    if key.len() != paired.len() {
        return Err(NumericsError::LengthMismatch(key.len(), paired.len()));
    }
    if key.len() < 4 {
        return Err(NumericsError::TooFewSamples {
            needed: 4,
            got: key.len(),
        });
    }
    if key.iter().any(|k| !k.is_finite()) {
        return Err(NumericsError::NonFinite);
    }
    let mut order: Vec<usize> = (0..key.len()).collect();
    order.sort_by(|&l, &r| key[l].total_cmp(&key[r]));

    let (q, r) = (key.len() / 4, key.len() % 4);
    let mut members: [Vec<usize>; 4] = Default::default();
    let mut start = 0;
    for (g, slot) in members.iter_mut().enumerate() {
        let size = q + usize::from(g < r);
        *slot = order[start..start + size].to_vec();
        start += size;
    }
    let groups = std::array::from_fn(|g| {
        let idx = &members[g];
        let (mean_u, std_u) = mean_std(idx.iter().map(|&k| paired[k].0));
        let (mean_v, std_v) = mean_std(idx.iter().map(|&k| paired[k].1));
        QuartileGroup {
            count: idx.len(),
            key_min: key[idx[0]],
            key_max: key[*idx.last().unwrap()],
            mean_u,
            std_u,
            mean_v,
            std_v,
        }
    });
    Ok(QuartileStats { groups, members })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Histogram {
    pub counts: Vec<usize>,
    pub underflow: usize,
    /// Values at or above the last edge, plus NaNs.
    pub overflow: usize,
}

impl Histogram {
    pub fn total(&self) -> usize {
        self.counts.iter().sum::<usize>() + self.underflow + self.overflow
    }
}

/// Counts `values` into half-open bins `[e_j, e_{j+1})`.
pub fn histogram(values: &[f64], edges: &[f64]) -> Result<Histogram, NumericsError> {
    if edges.len() < 2 || edges.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(NumericsError::EdgeOrder);
    }
    let mut hist = Histogram {
        counts: vec![0; edges.len() - 1],
        underflow: 0,
        overflow: 0,
    };
    for &v in values {
        if v < edges[0] {
            hist.underflow += 1;
        } else if !(v < edges[edges.len() - 1]) {
            hist.overflow += 1;
        } else {
            // Index of the last edge <= v.
            let bin = edges.partition_point(|&e| e <= v) - 1;
            hist.counts[bin] += 1;
        }
    }
    Ok(hist)
}
