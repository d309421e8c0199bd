//! Exact one-dimensional power cells under a standard normal prior.
//!
//! In 1-D the cell of point `y_i` is where the line
//! `f_i(x) = -2 y_i x + (y_i^2 - g_i)` is the lower envelope of all such
//! lines (these are the cost functions with the common `x^2` term dropped).
//! For sorted points the slopes decrease strictly, so the envelope is built
//! with a monotone stack; cells whose line never reaches the envelope are
//! empty. Masses are then differences of the normal CDF at the envelope's
//! breakpoints. This is the ground-truth oracle the stochastic solver is
//! validated against.

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Standard normal CDF via the complementary error function.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

/// The envelope decomposition of the real line: `owners[k]` holds the cell
/// covering `(cuts[k-1], cuts[k])`, with implicit infinite ends.
#[derive(Clone, Debug)]
pub struct Segments1d {
    pub owners: Vec<usize>,
    pub cuts: Vec<f64>,
}

fn validate_1d<S: Scalar>(dataset: &Dataset<S>, g: &[S]) -> Result<Vec<f64>> {
    if dataset.dim() != 1 {
        return Err(Error::DimensionMismatch {
            expected: 1,
            got: dataset.dim(),
        });
    }
    if g.len() != dataset.len() {
        return Err(Error::DimensionMismatch {
            expected: dataset.len(),
            got: g.len(),
        });
    }
    if g.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("dual weights".into()));
    }
    let ys: Vec<f64> = dataset.points_flat().iter().map(|y| y.to64()).collect();
    for w in ys.windows(2) {
        if !(w[1] > w[0]) {
            return Err(Error::UnsortedPoints(format!(
                "{} does not exceed {}",
                w[1], w[0]
            )));
        }
    }
    Ok(ys)
}

/// Intersection abscissa of lines `i` and `j` (`i < j`, distinct slopes).
fn cross(ys: &[f64], g: &[f64], i: usize, j: usize) -> f64 {
    let num = (ys[j] * ys[j] - g[j]) - (ys[i] * ys[i] - g[i]);
    num / (2.0 * (ys[j] - ys[i]))
}

/// Exact cell decomposition of the line for a sorted 1-D dataset.
pub fn laguerre_segments_1d<S: Scalar>(dataset: &Dataset<S>, g: &[S]) -> Result<Segments1d> {
    let ys = validate_1d(dataset, g)?;
    let gf: Vec<f64> = g.iter().map(|v| v.to64()).collect();
    let n = ys.len();

    // Monotone stack over lines in order of strictly decreasing slope.
    let mut stack: Vec<usize> = Vec::with_capacity(n);
    for i in 0..n {
        while stack.len() >= 2 {
            let top = stack[stack.len() - 1];
            let under = stack[stack.len() - 2];
            // `top` survives only if it becomes minimal after `under` and
            // before `i` does.
            if cross(&ys, &gf, under, i) <= cross(&ys, &gf, under, top) {
                stack.pop();
            } else {
                break;
            }
        }
        // A lone incumbent always keeps the far-left segment (its slope is
        // strictly larger), so only stacks of two or more ever pop.
        stack.push(i);
    }

    let cuts: Vec<f64> = stack
        .windows(2)
        .map(|w| cross(&ys, &gf, w[0], w[1]))
        .collect();
    Ok(Segments1d {
        owners: stack,
        cuts,
    })
}

/// Exact prior mass of every cell (zero for empty cells). Masses sum to one
/// up to floating-point rounding.
pub fn exact_cell_mass_1d<S: Scalar>(dataset: &Dataset<S>, g: &[S]) -> Result<Vec<S>> {
    let seg = laguerre_segments_1d(dataset, g)?;
    let mut masses = vec![S::zero(); dataset.len()];
    for (k, &owner) in seg.owners.iter().enumerate() {
        let lo = if k == 0 {
            0.0
        } else {
            normal_cdf(seg.cuts[k - 1])
        };
        let hi = if k == seg.owners.len() - 1 {
            1.0
        } else {
            normal_cdf(seg.cuts[k])
        };
        masses[owner] = S::of((hi - lo).max(0.0));
    }
    Ok(masses)
}

/// Max weight-relative cell-mass error at `g`: the exact counterpart of the
/// solver's `mre_est`.
pub fn exact_mre_1d<S: Scalar>(dataset: &Dataset<S>, g: &[S]) -> Result<f64> {
    let masses = exact_cell_mass_1d(dataset, g)?;
    let mut mre = 0.0f64;
    for (m, w) in masses.iter().zip(dataset.weights()) {
        let rel = (m.to64() - w.to64()).abs() / w.to64();
        if rel > mre {
            mre = rel;
        }
    }
    Ok(mre)
}
