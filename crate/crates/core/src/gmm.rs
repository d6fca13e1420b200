//! Diagonal-covariance Gaussian mixture over `[a, b1, b2]` model points,
//! fitted by expectation-maximization.
//!
//! Each iteration computes responsibilities
//! `γ_m(s) = π_m N(s|μ_m,Σ_m) / Σ_j π_j N(s|μ_j,Σ_j)` in log space, then
//! re-estimates `r_m = Σ_n γ_m(s_n)`, `π_m = r_m / N`, the weighted means, and
//! the per-axis weighted variances about the new means. Off-diagonal
//! covariance terms are never formed.
//!
//! Sums over points are folded per fixed-size chunk in index order, so a fit
//! is bit-identical under either [`Execution`] strategy.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::exec::REDUCE_CHUNK;
use crate::sysid::{LinearModel, NoiseParams};
use crate::{Error, Execution, Result};

pub const DIM: usize = 3;
pub type Point = [f64; DIM];

/// Lower bound on every per-axis variance.
pub const VARIANCE_FLOOR: f64 = 1e-8;
/// Components whose responsibility mass falls below this are re-seeded.
pub const RESCUE_THRESHOLD: f64 = 1e-6;
pub const DEFAULT_TOL: f64 = 1e-6;
pub const DEFAULT_MAX_ITER: usize = 500;

const LN_2PI: f64 = 1.837_877_066_409_345_3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmmParams {
    pub weights: Vec<f64>,
    pub means: Vec<Point>,
    pub variances: Vec<Point>,
}

impl GmmParams {
    pub fn new(weights: Vec<f64>, means: Vec<Point>, variances: Vec<Point>) -> Result<Self> {
        let p = Self {
            weights,
            means,
            variances,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn components(&self) -> usize {
        self.weights.len()
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.weights.len();
        if m == 0 || self.means.len() != m || self.variances.len() != m {
            return Err(Error::param(format!(
                "mixture shape mismatch: {} weights, {} means, {} variances",
                m,
                self.means.len(),
                self.variances.len()
            )));
        }
        if self.weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::invariant("mixture weights must be finite and nonnegative"));
        }
        let total: f64 = self.weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::invariant(format!("mixture weights sum to {total}")));
        }
        if self.means.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::invariant("non-finite component mean"));
        }
        if self.variances.iter().flatten().any(|v| !(v.is_finite() && *v >= VARIANCE_FLOOR)) {
            return Err(Error::invariant("component variance below floor or non-finite"));
        }
        Ok(())
    }

    /// `ln π_m + ln N(s | μ_m, diag σ²_m)`
    fn log_joint(&self, m: usize, s: &Point) -> f64 {
        let mut acc = 0.0;
        for d in 0..DIM {
            let var = self.variances[m][d];
            let diff = s[d] - self.means[m][d];
            acc += LN_2PI + var.ln() + diff * diff / var;
        }
        self.weights[m].ln() - 0.5 * acc
    }

    /// Fills `gamma` with responsibilities of `s` and returns `ln p(s)`.
    fn responsibilities_into(&self, s: &Point, gamma: &mut [f64]) -> f64 {
        let m = self.components();
        for (j, g) in gamma.iter_mut().enumerate() {
            *g = self.log_joint(j, s);
        }
        let max = gamma.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !max.is_finite() {
            gamma.fill(1.0 / m as f64);
            return max;
        }
        let mut total = 0.0;
        for g in gamma.iter_mut() {
            *g = (*g - max).exp();
            total += *g;
        }
        for g in gamma.iter_mut() {
            *g /= total;
        }
        max + total.ln()
    }
}

/// Posterior component probabilities for one point. Falls back to uniform
/// if every component density underflows.
pub fn responsibilities(params: &GmmParams, s: &Point) -> Vec<f64> {
    let mut gamma = vec![0.0; params.components()];
    params.responsibilities_into(s, &mut gamma);
    gamma
}

pub fn log_likelihood(params: &GmmParams, points: &[Point], exec: Execution) -> f64 {
    exec.chunked_reduce(
        points,
        |_, chunk| {
            let mut g = vec![0.0; params.components()];
            chunk.iter().map(|s| params.responsibilities_into(s, &mut g)).sum::<f64>()
        },
        |a, b| a + b,
    )
    .unwrap_or(0.0)
}

/// E-step output: responsibilities (row-major N×M) and `Σ_n ln p(s_n)`.
struct EStep {
    gamma: Vec<f64>,
    log_likelihood: f64,
}

fn e_step(params: &GmmParams, points: &[Point], exec: Execution) -> EStep {
    let m = params.components();
    let n_chunks = points.len().div_ceil(REDUCE_CHUNK);
    let parts = exec.map_range(n_chunks, |c| {
        let lo = c * REDUCE_CHUNK;
        let hi = (lo + REDUCE_CHUNK).min(points.len());
        let mut gamma = vec![0.0; (hi - lo) * m];
        let ll: f64 = points[lo..hi]
            .iter()
            .zip(gamma.chunks_exact_mut(m))
            .map(|(s, g)| params.responsibilities_into(s, g))
            .sum();
        (gamma, ll)
    });
    let mut gamma = Vec::with_capacity(points.len() * m);
    let mut log_likelihood = 0.0;
    for (g, ll) in parts {
        gamma.extend_from_slice(&g);
        log_likelihood += ll;
    }
    EStep { gamma, log_likelihood }
}

/// Per-component weighted sums over `points`, folded chunk-wise.
fn weighted_sums<F>(points: &[Point], gamma: &[f64], m: usize, exec: Execution, term: F) -> Vec<(f64, Point)>
where
    F: Fn(usize, &Point) -> Point + Sync + Send,
{
    exec.chunked_reduce(
        points,
        |lo, chunk| {
            let mut acc = vec![(0.0, [0.0; DIM]); m];
            for (i, s) in chunk.iter().enumerate() {
                let row = &gamma[(lo + i) * m..(lo + i + 1) * m];
                for (j, (r, v)) in acc.iter_mut().enumerate() {
                    let g = row[j];
                    *r += g;
                    let t = term(j, s);
                    for d in 0..DIM {
                        v[d] += g * t[d];
                    }
                }
            }
            acc
        },
        |mut a, b| {
            for ((ra, va), (rb, vb)) in a.iter_mut().zip(b) {
                *ra += rb;
                for d in 0..DIM {
                    va[d] += vb[d];
                }
            }
            a
        },
    )
    .unwrap_or_else(|| vec![(0.0, [0.0; DIM]); m])
}

/// Per-axis population variance of the whole cloud, floored.
pub fn pooled_variance(points: &[Point]) -> Point {
    let n = points.len().max(1) as f64;
    let mut mean = [0.0; DIM];
    for s in points {
        for d in 0..DIM {
            mean[d] += s[d];
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = [0.0; DIM];
    for s in points {
        for d in 0..DIM {
            var[d] += (s[d] - mean[d]).powi(2);
        }
    }
    var.map(|v| (v / n).max(VARIANCE_FLOOR))
}

fn m_step<R: Rng>(
    params: &GmmParams,
    points: &[Point],
    gamma: &[f64],
    exec: Execution,
    rng: &mut R,
) -> (GmmParams, Vec<usize>) {
    let m = params.components();
    let first = weighted_sums(points, gamma, m, exec, |_, s| *s);
    let means: Vec<Point> = first
        .iter()
        .map(|(r, v)| if *r > 0.0 { v.map(|x| x / r) } else { [0.0; DIM] })
        .collect();
    let second = weighted_sums(points, gamma, m, exec, |j, s| {
        std::array::from_fn(|d| (s[d] - means[j][d]).powi(2))
    });

    let mut weights = Vec::with_capacity(m);
    let mut new_means = Vec::with_capacity(m);
    let mut variances = Vec::with_capacity(m);
    let mut rescued = Vec::new();
    let mut pooled = None;
    for j in 0..m {
        let r = first[j].0;
        if r < RESCUE_THRESHOLD {
            rescued.push(j);
            let pv = *pooled.get_or_insert_with(|| pooled_variance(points));
            new_means.push(*points.choose(rng).expect("non-empty cloud"));
            variances.push(pv);
            weights.push(1.0);
        } else {
            new_means.push(means[j]);
            variances.push(second[j].1.map(|v| (v / r).max(VARIANCE_FLOOR)));
            weights.push(r);
        }
    }
    let total: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= total);
    (
        GmmParams {
            weights,
            means: new_means,
            variances,
        },
        rescued,
    )
}

/// Result of one EM iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct EmStep {
    pub params: GmmParams,
    /// Log-likelihood of the input parameters on the cloud.
    pub log_likelihood: f64,
    /// Components re-seeded because their responsibility mass vanished.
    pub rescued: Vec<usize>,
}

/// One E-step on `params` followed by one M-step. `rng` is only drawn from
/// when a component needs re-seeding.
pub fn em_step<R: Rng>(params: &GmmParams, points: &[Point], exec: Execution, rng: &mut R) -> Result<EmStep> {
    params.validate()?;
    if points.is_empty() {
        return Err(Error::param("empty model cloud"));
    }
    let e = e_step(params, points, exec);
    let (next, rescued) = m_step(params, points, &e.gamma, exec, rng);
    Ok(EmStep {
        params: next,
        log_likelihood: e.log_likelihood,
        rescued,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitMode {
    /// k-means++ seeding of means on the per-axis standardized cloud.
    KMeansPlusPlus,
    /// Means uniform in the cloud's bounding box.
    Random,
}

impl std::str::FromStr for InitMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "kmeans++" | "kmeans-plus-plus" => Ok(InitMode::KMeansPlusPlus),
            "random" => Ok(InitMode::Random),
            other => Err(Error::param(format!("unknown init mode `{other}` (kmeans++ | random)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GmmConfig {
    pub components: usize,
    pub seed: u64,
    pub max_iter: usize,
    pub tol: f64,
    pub init: InitMode,
    pub exec: Execution,
}

impl GmmConfig {
    pub fn new(components: usize, seed: u64) -> Self {
        Self {
            components,
            seed,
            max_iter: DEFAULT_MAX_ITER,
            tol: DEFAULT_TOL,
            init: InitMode::KMeansPlusPlus,
            exec: Execution::default(),
        }
    }
}

/// Equal weights, pooled variances, means seeded per `mode`.
pub fn initialize<R: Rng>(points: &[Point], components: usize, mode: InitMode, rng: &mut R) -> Result<GmmParams> {
    if components == 0 {
        return Err(Error::param("component count must be at least 1"));
    }
    if points.len() < components {
        return Err(Error::param(format!(
            "cloud has {} points, fewer than {components} components",
            points.len()
        )));
    }
    let pooled = pooled_variance(points);
    let means = match mode {
        InitMode::KMeansPlusPlus => kmeans_pp(points, components, &pooled, rng),
        InitMode::Random => {
            let mut lo = [f64::INFINITY; DIM];
            let mut hi = [f64::NEG_INFINITY; DIM];
            for s in points {
                for d in 0..DIM {
                    lo[d] = lo[d].min(s[d]);
                    hi[d] = hi[d].max(s[d]);
                }
            }
            (0..components)
                .map(|_| std::array::from_fn(|d| lo[d] + (hi[d] - lo[d]) * rng.random::<f64>()))
                .collect()
        }
    };
    GmmParams::new(vec![1.0 / components as f64; components], means, vec![pooled; components])
}

fn kmeans_pp<R: Rng>(points: &[Point], k: usize, scale: &Point, rng: &mut R) -> Vec<Point> {
    let dist2 = |a: &Point, b: &Point| (0..DIM).map(|d| (a[d] - b[d]).powi(2) / scale[d]).sum::<f64>();
    let mut centers = vec![points[rng.random_range(0..points.len())]];
    let mut nearest: Vec<f64> = points.iter().map(|p| dist2(p, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = nearest.iter().sum();
        let idx = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            nearest
                .iter()
                .position(|d| {
                    acc += d;
                    acc > target
                })
                .unwrap_or(points.len() - 1)
        } else {
            rng.random_range(0..points.len())
        };
        let c = points[idx];
        for (n, p) in nearest.iter_mut().zip(points) {
            *n = n.min(dist2(p, &c));
        }
        centers.push(c);
    }
    centers
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Rescue {
    pub iteration: usize,
    pub component: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmTrace {
    pub iterations: usize,
    /// `log_likelihoods[0]` is the initial parameters; entry `t` follows
    /// iteration `t`.
    pub log_likelihoods: Vec<f64>,
    pub converged: bool,
    pub rescues: Vec<Rescue>,
}

impl EmTrace {
    pub fn final_log_likelihood(&self) -> f64 {
        *self.log_likelihoods.last().expect("trace holds the initial value")
    }

    /// Largest drop between consecutive log-likelihoods, ignoring
    /// iterations that re-seeded a component.
    pub fn worst_decrease(&self) -> f64 {
        self.log_likelihoods
            .windows(2)
            .enumerate()
            .filter(|(i, _)| !self.rescues.iter().any(|r| r.iteration == i + 1))
            .map(|(_, w)| w[0] - w[1])
            .fold(0.0, f64::max)
    }
}

/// Runs EM from a seeded initialization until the log-likelihood moves by
/// less than `tol` or `max_iter` iterations have run.
pub fn gmm_fit(points: &[Point], config: &GmmConfig) -> Result<(GmmParams, EmTrace)> {
    if !(config.tol.is_finite() && config.tol >= 0.0) {
        return Err(Error::param(format!("tolerance must be nonnegative, got {}", config.tol)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut params = initialize(points, config.components, config.init, &mut rng)?;
    let mut e = e_step(&params, points, config.exec);
    let mut trace = EmTrace {
        iterations: 0,
        log_likelihoods: vec![e.log_likelihood],
        converged: false,
        rescues: Vec::new(),
    };
    for iteration in 1..=config.max_iter {
        let (next, rescued) = m_step(&params, points, &e.gamma, config.exec, &mut rng);
        trace
            .rescues
            .extend(rescued.into_iter().map(|component| Rescue { iteration, component }));
        params = next;
        let prev = e.log_likelihood;
        e = e_step(&params, points, config.exec);
        trace.log_likelihoods.push(e.log_likelihood);
        trace.iterations = iteration;
        if !e.log_likelihood.is_finite() {
            return Err(Error::invariant(format!("log-likelihood became {} at iteration {iteration}", e.log_likelihood)));
        }
        if (e.log_likelihood - prev).abs() < config.tol {
            trace.converged = true;
            break;
        }
    }
    Ok((params, trace))
}

/// One bank model per component mean, in component order. Weights and
/// variances are not consulted.
pub fn extract_models(params: &GmmParams, noise: NoiseParams) -> Result<Vec<LinearModel>> {
    params.validate()?;
    params.means.iter().map(|m| LinearModel::new(*m, noise)).collect()
}

/// The JSON form of a fitted mixture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmmExport {
    #[serde(rename = "M")]
    pub components: usize,
    pub weights: Vec<f64>,
    pub means: Vec<Point>,
    pub variances: Vec<Point>,
    pub seed: u64,
    pub iterations: usize,
    pub final_log_likelihood: f64,
}

impl GmmExport {
    pub fn new(params: &GmmParams, trace: &EmTrace, seed: u64) -> Self {
        Self {
            components: params.components(),
            weights: params.weights.clone(),
            means: params.means.clone(),
            variances: params.variances.clone(),
            seed,
            iterations: trace.iterations,
            final_log_likelihood: trace.final_log_likelihood(),
        }
    }

    pub fn params(&self) -> Result<GmmParams> {
        if self.components != self.weights.len() {
            return Err(Error::param(format!(
                "M={} but {} weights",
                self.components,
                self.weights.len()
            )));
        }
        GmmParams::new(self.weights.clone(), self.means.clone(), self.variances.clone())
    }
}
