//! Weighted point clouds and the noise prior they are transported from.

use crate::error::{Error, Result};
use crate::rng;
use crate::scalar::Scalar;

/// Compensated (Kahan) summation in f64; error stays O(eps) regardless of n.
pub(crate) fn kahan_sum(values: impl Iterator<Item = f64>) -> f64 {
    let mut sum = 0.0;
    let mut c = 0.0;
    for v in values {
        let y = v - c;
        let t = sum + y;
        c = (t - sum) - y;
        sum = t;
    }
    sum
}

/// A finite discrete target measure: `n` points with strictly positive
/// weights summing to one, each tagged with a class id (all zero when the
/// dataset is unconditioned).
#[derive(Clone, Debug)]
pub struct Dataset<S: Scalar = f64> {
    dim: usize,
    points: Vec<S>,
    weights: Vec<S>,
    class_ids: Vec<u32>,
}

impl<S: Scalar> Dataset<S> {
    pub fn new(
        dim: usize,
        points: Vec<S>,
        weights: Option<Vec<S>>,
        class_ids: Option<Vec<u32>>,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("point dimension must be at least 1"));
        }
        if points.is_empty() {
            return Err(Error::EmptyDataset);
        }
        if points.len() % dim != 0 {
            return Err(Error::invalid(format!(
                "flat point buffer length {} is not a multiple of dim {}",
                points.len(),
                dim
            )));
        }
        let n = points.len() / dim;
        if points.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("dataset points".into()));
        }
        let weights = match weights {
            Some(w) => {
                if w.len() != n {
                    return Err(Error::DimensionMismatch {
                        expected: n,
                        got: w.len(),
                    });
                }
                w
            }
            None => vec![S::of(1.0 / n as f64); n],
        };
        if let Some((i, _)) = weights
            .iter()
            .enumerate()
            .find(|(_, w)| !w.is_finite() || **w <= S::zero())
        {
            return Err(Error::InvalidWeights(format!(
                "weight {i} is not strictly positive and finite"
            )));
        }
        let total = kahan_sum(weights.iter().map(|w| w.to64()));
        let tol = 1e-12f64.max(n as f64 * S::epsilon().to64());
        if (total - 1.0).abs() > tol {
            return Err(Error::InvalidWeights(format!(
                "weights sum to {total}, expected 1 within {tol:e}"
            )));
        }
        let class_ids = match class_ids {
            Some(c) => {
                if c.len() != n {
                    return Err(Error::DimensionMismatch {
                        expected: n,
                        got: c.len(),
                    });
                }
                c
            }
            None => vec![0; n],
        };
        Ok(Dataset {
            dim,
            points,
            weights,
            class_ids,
        })
    }

    /// Uniformly weighted, single-class dataset from a flat point buffer.
    pub fn uniform(dim: usize, points: Vec<S>) -> Result<Self> {
        Dataset::new(dim, points, None, None)
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        false // construction rejects empty datasets
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn point(&self, i: usize) -> &[S] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    pub fn points_flat(&self) -> &[S] {
        &self.points
    }

    pub fn weights(&self) -> &[S] {
        &self.weights
    }

    pub fn class_ids(&self) -> &[u32] {
        &self.class_ids
    }

    /// Distinct class ids in ascending order.
    pub fn classes(&self) -> Vec<u32> {
        let mut cs: Vec<u32> = self.class_ids.clone();
        cs.sort_unstable();
        cs.dedup();
        cs
    }

    /// Total weight carried by one class.
    pub fn class_mass(&self, class: u32) -> S {
        self.class_ids
            .iter()
            .zip(&self.weights)
            .filter(|(c, _)| **c == class)
            .map(|(_, w)| *w)
            .sum()
    }

    /// Global indices of a class's points, ascending.
    pub fn class_indices(&self, class: u32) -> Vec<usize> {
        (0..self.len())
            .filter(|&i| self.class_ids[i] == class)
            .collect()
    }

    /// The class's points as a standalone dataset with renormalized weights,
    /// along with the mapping from subset position to global index.
    pub fn class_subset(&self, class: u32) -> Result<(Vec<usize>, Dataset<S>)> {
        let idx = self.class_indices(class);
        if idx.is_empty() {
            return Err(Error::MissingClass(class));
        }
        let mass: S = idx.iter().map(|&i| self.weights[i]).sum();
        let mut points = Vec::with_capacity(idx.len() * self.dim);
        let mut weights = Vec::with_capacity(idx.len());
        for &i in &idx {
            points.extend_from_slice(self.point(i));
            weights.push(self.weights[i] / mass);
        }
        let subset = Dataset {
            dim: self.dim,
            points,
            weights,
            class_ids: vec![class; idx.len()],
        };
        Ok((idx, subset))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PriorKind {
    StandardNormal,
}

/// The source measure noise is drawn from. Only the standard normal is
/// supported; the field exists so files and configs name it explicitly.
#[derive(Clone, Copy, Debug)]
pub struct NoisePrior {
    dim: usize,
    kind: PriorKind,
}

impl NoisePrior {
    pub fn standard_normal(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("prior dimension must be at least 1"));
        }
        Ok(NoisePrior {
            dim,
            kind: PriorKind::StandardNormal,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn kind(&self) -> PriorKind {
        self.kind
    }

    /// Draw the deterministic noise vector for `seed` in this prior's
    /// dimension (see [`crate::rng::normal_vector`]).
    pub fn sample(&self, seed: u64) -> Vec<f64> {
        rng::normal_vector(seed, self.dim)
    }
}
