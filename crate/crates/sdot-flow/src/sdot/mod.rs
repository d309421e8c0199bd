//! Semi-discrete optimal transport between a continuous noise prior and a
//! weighted point cloud, under squared Euclidean cost.
//!
//! A dual weight vector `g` (one entry per data point) carves the prior's
//! support into power cells: noise `x` belongs to the point minimizing
//! `|x - y_i|^2 - g_i`. Solving the dual problem means finding `g` whose
//! cells carry exactly the prescribed weights `b`; this module provides the
//! cell-assignment operators, the stochastic gradient of the dual objective,
//! convergence metrics, a stochastic solver ([`solve_dual`]), and an exact
//! one-dimensional oracle used to validate it.
//!
//! Scores are evaluated in the algebraically equivalent form
//! `g_i - |y_i|^2 + 2<x, y_i>` so that per-point work amortizes to a dot
//! product; both assignment operators and the gradient share this arithmetic
//! so their outcomes agree bit for bit.

mod io;
mod oracle;
mod solve;

pub use io::{read_duals, write_duals, write_metrics_csv};
pub use oracle::{exact_cell_mass_1d, exact_mre_1d, laguerre_segments_1d, normal_cdf, Segments1d};
pub use solve::{solve_dual, solve_dual_per_class, DualAscent};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::optim::AdamConfig;
use crate::scalar::Scalar;

/// Dual weights for one transport problem: the raw iterate `g` and the
/// exponential moving average `g_ema` that downstream consumers use.
#[derive(Clone, Debug, PartialEq)]
pub struct DualWeights<S: Scalar = f64> {
    pub g: Vec<S>,
    pub g_ema: Vec<S>,
}

impl<S: Scalar> DualWeights<S> {
    pub fn zeros(n: usize) -> Self {
        DualWeights {
            g: vec![S::zero(); n],
            g_ema: vec![S::zero(); n],
        }
    }

    pub fn len(&self) -> usize {
        self.g.len()
    }

    pub fn is_empty(&self) -> bool {
        self.g.is_empty()
    }
}

/// One stage of the ascent schedule. Stages run back to back; optimizer
/// moments carry over, only these knobs change.
#[derive(Clone, Copy, Debug)]
pub struct SdotStage<S: Scalar = f64> {
    pub num_steps: usize,
    pub learning_rate: S,
    pub batch_size: usize,
    /// EMA coefficient for both the averaged gradient and averaged weights.
    pub ema_beta: S,
    /// Entropic smoothing; 0 selects hard assignments.
    pub epsilon: S,
}

impl<S: Scalar> SdotStage<S> {
    pub fn validate(&self) -> Result<()> {
        if self.num_steps == 0 {
            return Err(Error::invalid("stage num_steps must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("stage batch_size must be at least 1"));
        }
        if !(self.learning_rate > S::zero()) || !self.learning_rate.is_finite() {
            return Err(Error::invalid("stage learning_rate must be positive"));
        }
        if !(self.ema_beta >= S::zero() && self.ema_beta < S::one()) {
            return Err(Error::invalid("stage ema_beta must lie in [0, 1)"));
        }
        if !(self.epsilon >= S::zero()) || !self.epsilon.is_finite() {
            return Err(Error::invalid("stage epsilon must be >= 0"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct SdotConfig<S: Scalar = f64> {
    pub stages: Vec<SdotStage<S>>,
    pub master_seed: u64,
    pub adam: AdamConfig<S>,
}

impl<S: Scalar> SdotConfig<S> {
    pub fn validate(&self) -> Result<()> {
        self.adam.validate()?;
        for s in &self.stages {
            s.validate()?;
        }
        Ok(())
    }

    pub fn total_steps(&self) -> usize {
        self.stages.iter().map(|s| s.num_steps).sum()
    }
}

/// Convergence metrics for one ascent step. `mre_est` and `l1_est` are the
/// weight-relative max error and the l1 norm of the EMA-smoothed gradient;
/// `warmup` marks steps where the EMA has not yet forgotten its zero
/// initialization, making the estimates unreliable.
#[derive(Clone, Copy, Debug)]
pub struct MetricsSnapshot<S: Scalar = f64> {
    pub step: usize,
    pub mre_est: S,
    pub l1_est: S,
    pub warmup: bool,
}

/// Recommended stopping threshold for `mre_est` on converged problems.
pub const DEFAULT_MRE_THRESHOLD: f64 = 0.2;

/// Scores below the cell maximum by more than this many entropic units
/// contribute less than e^-40 ~ 4e-18 of the top probability and are
/// dropped from softmax sums.
const SOFT_CUTOFF: f64 = -40.0;

/// `q_i = g_i - |y_i|^2`, the x-independent part of each point's score.
fn fill_q<S: Scalar>(dataset: &Dataset<S>, g: &[S], q: &mut Vec<S>) {
    q.clear();
    let dim = dataset.dim();
    let pts = dataset.points_flat();
    for (i, &gi) in g.iter().enumerate() {
        let row = &pts[i * dim..(i + 1) * dim];
        let mut norm = S::zero();
        for &c in row {
            norm += c * c;
        }
        q.push(gi - norm);
    }
}

#[inline]
fn score<S: Scalar>(x: &[S], row: &[S], qi: S) -> S {
    let two = S::of(2.0);
    match x.len() {
        1 => qi + two * x[0] * row[0],
        2 => qi + two * (x[0] * row[0] + x[1] * row[1]),
        _ => {
            let mut dot = S::zero();
            for (a, b) in x.iter().zip(row) {
                dot += *a * *b;
            }
            qi + two * dot
        }
    }
}

/// Index of the best-scoring point; ties keep the smaller index.
fn best_index<S: Scalar>(x: &[S], dataset: &Dataset<S>, q: &[S]) -> usize {
    let dim = dataset.dim();
    let pts = dataset.points_flat();
    let mut best = 0usize;
    let mut best_s = score(x, &pts[..dim], q[0]);
    for i in 1..q.len() {
        let s = score(x, &pts[i * dim..(i + 1) * dim], q[i]);
        if s > best_s {
            best_s = s;
            best = i;
        }
    }
    best
}

fn check_point_dims<S: Scalar>(x0: &[S], dataset: &Dataset<S>, g: &[S]) -> Result<()> {
    if x0.len() != dataset.dim() {
        return Err(Error::DimensionMismatch {
            expected: dataset.dim(),
            got: x0.len(),
        });
    }
    if g.len() != dataset.len() {
        return Err(Error::DimensionMismatch {
            expected: dataset.len(),
            got: g.len(),
        });
    }
    Ok(())
}

/// The power-cell owner of `x0`: argmin over `|x0 - y_i|^2 - g_i`, ties to
/// the smaller index.
pub fn hard_assign<S: Scalar>(x0: &[S], dataset: &Dataset<S>, g: &[S]) -> Result<usize> {
    check_point_dims(x0, dataset, g)?;
    let mut q = Vec::new();
    fill_q(dataset, g, &mut q);
    Ok(best_index(x0, dataset, &q))
}

/// Entropic cell membership: softmax of `-(|x0 - y_i|^2 - g_i) / eps`.
/// Requires `eps > 0`; the result sums to one.
pub fn soft_assign<S: Scalar>(
    x0: &[S],
    dataset: &Dataset<S>,
    g: &[S],
    eps: S,
) -> Result<Vec<S>> {
    check_point_dims(x0, dataset, g)?;
    if !(eps > S::zero()) || !eps.is_finite() {
        return Err(Error::invalid("soft assignment needs eps > 0"));
    }
    let mut q = Vec::new();
    fill_q(dataset, g, &mut q);
    let dim = dataset.dim();
    let pts = dataset.points_flat();
    let mut scores: Vec<S> = (0..q.len())
        .map(|i| score(x0, &pts[i * dim..(i + 1) * dim], q[i]) / eps)
        .collect();
    let m = scores
        .iter()
        .copied()
        .fold(S::neg_infinity(), |a, b| if b > a { b } else { a });
    let cutoff = S::of(SOFT_CUTOFF);
    let mut z = S::zero();
    for s in scores.iter_mut() {
        let d = *s - m;
        *s = if d >= cutoff { d.exp() } else { S::zero() };
        z += *s;
    }
    for s in scores.iter_mut() {
        *s /= z;
    }
    Ok(scores)
}

/// Stochastic gradient of the dual objective from a flat batch of noise
/// vectors: empirical cell mass minus target weights, `(1/B) sum_j h_j - b`.
/// `eps = 0` uses hard one-hot memberships (matching [`hard_assign`] sample
/// by sample), `eps > 0` the entropic memberships of [`soft_assign`].
pub fn gradient_estimate<S: Scalar>(
    noise_batch: &[S],
    dataset: &Dataset<S>,
    g: &[S],
    eps: S,
) -> Result<Vec<S>> {
    let dim = dataset.dim();
    if noise_batch.is_empty() || noise_batch.len() % dim != 0 {
        return Err(Error::invalid(format!(
            "noise batch length {} must be a positive multiple of dim {}",
            noise_batch.len(),
            dim
        )));
    }
    if g.len() != dataset.len() {
        return Err(Error::DimensionMismatch {
            expected: dataset.len(),
            got: g.len(),
        });
    }
    if !(eps >= S::zero()) || !eps.is_finite() {
        return Err(Error::invalid("eps must be >= 0"));
    }
    let n = dataset.len();
    let b = noise_batch.len() / dim;
    let inv_b = S::one() / S::of(b as f64);
    let mut q = Vec::new();
    fill_q(dataset, g, &mut q);
    let pts = dataset.points_flat();

    let mut grad: Vec<S>;
    if eps == S::zero() {
        let mut counts = vec![0u64; n];
        for x in noise_batch.chunks_exact(dim) {
            counts[best_index(x, dataset, &q)] += 1;
        }
        grad = counts
            .iter()
            .zip(dataset.weights())
            .map(|(&c, &w)| S::of(c as f64) * inv_b - w)
            .collect();
    } else {
        grad = dataset.weights().iter().map(|&w| -w).collect();
        let cutoff = S::of(SOFT_CUTOFF);
        let mut scores = vec![S::zero(); n];
        for x in noise_batch.chunks_exact(dim) {
            let mut m = S::neg_infinity();
            for i in 0..n {
                let s = score(x, &pts[i * dim..(i + 1) * dim], q[i]) / eps;
                scores[i] = s;
                if s > m {
                    m = s;
                }
            }
            let mut z = S::zero();
            for s in scores.iter_mut() {
                let d = *s - m;
                *s = if d >= cutoff { d.exp() } else { S::zero() };
                z += *s;
            }
            let scale = inv_b / z;
            for (gr, &s) in grad.iter_mut().zip(scores.iter()) {
                if s != S::zero() {
                    *gr += s * scale;
                }
            }
        }
    }
    Ok(grad)
}

/// Weight-relative convergence metrics of a (smoothed) dual gradient:
/// `mre = max_i |grad_i| / b_i` and `l1 = sum_i |grad_i|`.
pub fn estimate_metrics<S: Scalar>(
    grad_ema: &[S],
    weights: &[S],
    step: usize,
    warmup: bool,
) -> Result<MetricsSnapshot<S>> {
    if grad_ema.len() != weights.len() {
        return Err(Error::DimensionMismatch {
            expected: weights.len(),
            got: grad_ema.len(),
        });
    }
    let mut mre = S::zero();
    let mut l1 = S::zero();
    for (i, (&ge, &w)) in grad_ema.iter().zip(weights).enumerate() {
        if w == S::zero() {
            return Err(Error::InvalidWeights(format!(
                "weight {i} is zero; relative error is undefined"
            )));
        }
        let a = ge.abs();
        l1 += a;
        let rel = a / w;
        if rel > mre {
            mre = rel;
        }
    }
    Ok(MetricsSnapshot {
        step,
        mre_est: mre,
        l1_est: l1,
        warmup,
    })
}
