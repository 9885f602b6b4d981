//! Shuffled Complex Evolution (SCE-UA) global minimizer for box-bounded
//! problems.
//!
//! The population is sorted, dealt into complexes by stride, and each
//! complex is evolved with competitive complex evolution (CCE): a
//! subcomplex is drawn with a triangular distribution favoring better
//! points, its worst point is reflected through the centroid of the rest,
//! contracted toward it on failure, and replaced by a uniform random point
//! as a last resort. Complexes are then merged and reshuffled.
//!
//! Every evaluated candidate lies strictly inside the box. Runs are
//! deterministic given the seed.
//!
//! # References
//!
//! Duan, Sorooshian & Gupta (1992), *Effective and efficient global
//! optimization for conceptual rainfall-runoff models*, Water Resources
//! Research 28(4).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SceError {
    #[error("bounds must have at least one dimension")]
    EmptyBounds,
    #[error("dimension {dim}: lower bound {lower} is not below upper bound {upper}")]
    InvertedBounds { dim: usize, lower: f64, upper: f64 },
    #[error("invalid optimizer configuration: {0}")]
    InvalidConfig(String),
    #[error("start point {0:?} is not strictly inside the bounds")]
    StartOutOfBounds(Vec<f64>),
}

/// Open box `lower < x < upper`, one interval per dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct Bounds {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl Bounds {
    pub fn new(intervals: &[(f64, f64)]) -> Result<Self, SceError> {
        if intervals.is_empty() {
            return Err(SceError::EmptyBounds);
        }
        for (dim, &(lower, upper)) in intervals.iter().enumerate() {
            if !(lower < upper) || !lower.is_finite() || !upper.is_finite() {
                return Err(SceError::InvertedBounds { dim, lower, upper });
            }
        }
        Ok(Self {
            lower: intervals.iter().map(|b| b.0).collect(),
            upper: intervals.iter().map(|b| b.1).collect(),
        })
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    /// Strict interior test.
    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && x.iter()
                .zip(&self.lower)
                .zip(&self.upper)
                .all(|((&v, &lo), &hi)| lo < v && v < hi)
    }

    /// Moves `x` into the interior, keeping at least `margin` (scaled to the
    /// interval width when the interval is narrow) away from each face.
    pub fn clamp_interior(&self, x: &[f64], margin: f64) -> Vec<f64> {
        x.iter()
            .zip(&self.lower)
            .zip(&self.upper)
            .map(|((&v, &lo), &hi)| {
                let m = margin.min(0.25 * (hi - lo));
                v.clamp(lo + m, hi - m)
            })
            .collect()
    }

    fn sample(&self, rng: &mut impl Rng) -> Vec<f64> {
        loop {
            let x: Vec<f64> = self
                .lower
                .iter()
                .zip(&self.upper)
                .map(|(&lo, &hi)| lo + rng.random::<f64>() * (hi - lo))
                .collect();
            // `random::<f64>()` can return exactly 0.
            if self.contains(&x) {
                return x;
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerConfig {
    pub n_complexes: usize,
    /// `None` means `2n + 1` for an `n`-dimensional problem.
    pub points_per_complex: Option<usize>,
    /// `None` means `n + 1`.
    pub subcomplex_size: Option<usize>,
    /// `None` means one evolution step per complex member.
    pub evolutions_per_complex: Option<usize>,
    pub max_evaluations: usize,
    /// Converged once the best value improves by less than this fraction
    /// over `convergence_window` consecutive shuffles.
    pub convergence_tol: f64,
    pub convergence_window: usize,
    pub seed: u64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            n_complexes: 4,
            points_per_complex: None,
            subcomplex_size: None,
            evolutions_per_complex: None,
            max_evaluations: 50_000,
            convergence_tol: 1e-8,
            convergence_window: 10,
            seed: 0,
        }
    }
}

/// Population geometry with defaults filled in for a concrete dimension.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Geometry {
    pub n_complexes: usize,
    pub points_per_complex: usize,
    pub subcomplex_size: usize,
    pub evolutions_per_complex: usize,
}

impl Geometry {
    pub fn population(&self) -> usize {
        self.n_complexes * self.points_per_complex
    }
}

impl OptimizerConfig {
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_max_evaluations(mut self, max_evaluations: usize) -> Self {
        self.max_evaluations = max_evaluations;
        self
    }

    pub fn geometry(&self, dim: usize) -> Result<Geometry, SceError> {
        let m = self.points_per_complex.unwrap_or(2 * dim + 1);
        let q = self.subcomplex_size.unwrap_or(dim + 1);
        let beta = self.evolutions_per_complex.unwrap_or(m);
        let bad = |msg: String| Err(SceError::InvalidConfig(msg));
        if self.n_complexes < 1 {
            return bad("n_complexes must be at least 1".into());
        }
        if q < 2 {
            return bad(format!("subcomplex_size {q} must be at least 2"));
        }
        if m < q {
            return bad(format!("points_per_complex {m} is smaller than subcomplex_size {q}"));
        }
        if beta < 1 {
            return bad("evolutions_per_complex must be at least 1".into());
        }
        if !(self.convergence_tol >= 0.0) || self.convergence_window < 1 {
            return bad("convergence settings must be non-negative with a window of at least 1".into());
        }
        let geometry = Geometry {
            n_complexes: self.n_complexes,
            points_per_complex: m,
            subcomplex_size: q,
            evolutions_per_complex: beta,
        };
        if self.max_evaluations < geometry.population() {
            return bad(format!(
                "max_evaluations {} cannot cover the initial population of {}",
                self.max_evaluations,
                geometry.population()
            ));
        }
        Ok(geometry)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptResult {
    pub best_point: Vec<f64>,
    pub best_value: f64,
    pub evaluations_used: usize,
    /// `false` when the evaluation budget ran out first.
    pub converged: bool,
    /// Best value after the initial sampling and after every shuffle.
    pub history: Vec<f64>,
}

#[derive(Debug, Clone)]
struct Member {
    x: Vec<f64>,
    f: f64,
}

struct Run<'a, F> {
    objective: F,
    bounds: &'a Bounds,
    rng: ChaCha8Rng,
    evaluations: usize,
    budget: usize,
}

impl<F: FnMut(&[f64]) -> f64> Run<'_, F> {
    fn exhausted(&self) -> bool {
        self.evaluations >= self.budget
    }

    fn eval(&mut self, x: Vec<f64>) -> Member {
        debug_assert!(self.bounds.contains(&x));
        self.evaluations += 1;
        let f = (self.objective)(&x);
        // NaN and -inf are treated like the +inf infeasibility sentinel.
        let f = if f.is_nan() || f == f64::NEG_INFINITY {
            f64::INFINITY
        } else {
            f
        };
        Member { x, f }
    }

    /// Draws `q` distinct positions from a sorted complex of size `m` with
    /// probability `2 (m - j) / (m (m + 1))` for zero-based rank `j`.
    fn pick_subcomplex(&mut self, m: usize, q: usize) -> Vec<usize> {
        let mf = m as f64;
        let mut picked = Vec::with_capacity(q);
        while picked.len() < q {
            let u: f64 = self.rng.random();
            let pos = (mf + 0.5 - ((mf + 0.5).powi(2) - mf * (mf + 1.0) * u).sqrt()).floor();
            let pos = (pos.max(0.0) as usize).min(m - 1);
            if !picked.contains(&pos) {
                picked.push(pos);
            }
        }
        picked.sort_unstable();
        picked
    }

    /// One competitive complex evolution pass over a sorted complex.
    fn evolve(&mut self, complex: &mut [Member], geometry: &Geometry) {
        let q = geometry.subcomplex_size;
        for _ in 0..geometry.evolutions_per_complex {
            if self.exhausted() {
                return;
            }
            let picks = self.pick_subcomplex(complex.len(), q);
            let worst_pos = picks[q - 1];
            let dim = self.bounds.dim();
            let mut centroid = vec![0.0; dim];
            for &p in &picks[..q - 1] {
                for (c, v) in centroid.iter_mut().zip(&complex[p].x) {
                    *c += v;
                }
            }
            centroid.iter_mut().for_each(|c| *c /= (q - 1) as f64);
            let worst = complex[worst_pos].clone();

            let reflected: Vec<f64> = centroid.iter().zip(&worst.x).map(|(c, w)| 2.0 * c - w).collect();
            let mut replacement = None;
            if self.bounds.contains(&reflected) {
                let cand = self.eval(reflected);
                if cand.f < worst.f {
                    replacement = Some(cand);
                }
            }
            if replacement.is_none() && !self.exhausted() {
                let contracted: Vec<f64> = centroid.iter().zip(&worst.x).map(|(c, w)| 0.5 * (c + w)).collect();
                if self.bounds.contains(&contracted) {
                    let cand = self.eval(contracted);
                    if cand.f < worst.f {
                        replacement = Some(cand);
                    }
                }
            }
            if replacement.is_none() && !self.exhausted() {
                let fresh = self.bounds.sample(&mut self.rng);
                replacement = Some(self.eval(fresh));
            }
            if let Some(cand) = replacement {
                complex[worst_pos] = cand;
                complex.sort_by(|l, r| l.f.total_cmp(&r.f));
            }
        }
    }
}

/// Minimizes `objective` over the open box.
pub fn minimize<F>(objective: F, bounds: &Bounds, config: &OptimizerConfig) -> Result<OptResult, SceError>
where
    F: FnMut(&[f64]) -> f64,
{
    minimize_from(objective, bounds, config, &[])
}

/// Like [`minimize`], with the given points placed in the initial
/// population ahead of the uniform samples.
pub fn minimize_from<F>(
    objective: F,
    bounds: &Bounds,
    config: &OptimizerConfig,
    starts: &[Vec<f64>],
) -> Result<OptResult, SceError>
where
    F: FnMut(&[f64]) -> f64,
{
    let geometry = config.geometry(bounds.dim())?;
    if let Some(bad) = starts.iter().find(|x| !bounds.contains(x)) {
        return Err(SceError::StartOutOfBounds(bad.clone()));
    }
    if starts.len() > geometry.population() {
        return Err(SceError::InvalidConfig(format!(
            "{} start points exceed the population of {}",
            starts.len(),
            geometry.population()
        )));
    }

    let mut run = Run {
        objective,
        bounds,
        rng: ChaCha8Rng::seed_from_u64(config.seed),
        evaluations: 0,
        budget: config.max_evaluations,
    };

    let mut population: Vec<Member> = Vec::with_capacity(geometry.population());
    for x in starts {
        population.push(run.eval(x.clone()));
    }
    while population.len() < geometry.population() {
        let x = bounds.sample(&mut run.rng);
        population.push(run.eval(x));
    }
    population.sort_by(|l, r| l.f.total_cmp(&r.f));

    let p = geometry.n_complexes;
    let mut history = vec![population[0].f];
    let mut converged = false;
    while !run.exhausted() {
        // Deal by stride: member k of complex c is population[c + p k].
        let mut complexes: Vec<Vec<Member>> = (0..p)
            .map(|c| population.iter().skip(c).step_by(p).cloned().collect())
            .collect();
        for complex in &mut complexes {
            run.evolve(complex, &geometry);
        }
        population = complexes.into_iter().flatten().collect();
        population.sort_by(|l, r| l.f.total_cmp(&r.f));
        history.push(population[0].f);

        let w = config.convergence_window;
        if history.len() > w {
            let old = history[history.len() - 1 - w];
            let new = population[0].f;
            let improvement = old - new;
            let scale = 0.5 * (old.abs() + new.abs());
            if new.is_finite() && improvement <= config.convergence_tol * scale {
                converged = true;
                break;
            }
        }
    }

    let best = population.swap_remove(0);
    Ok(OptResult {
        best_point: best.x,
        best_value: best.f,
        evaluations_used: run.evaluations,
        converged,
        history,
    })
}
