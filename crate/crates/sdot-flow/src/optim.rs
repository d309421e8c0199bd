//! Adam with bias correction, shared by the dual-weight ascent and network
//! training. Operates on flat parameter slices; moment buffers live in the
//! state so repeated steps do not allocate.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug)]
pub struct AdamConfig<S: Scalar = f64> {
    pub beta1: S,
    pub beta2: S,
    pub eps: S,
}

impl<S: Scalar> Default for AdamConfig<S> {
    fn default() -> Self {
        AdamConfig {
            beta1: S::of(0.9),
            beta2: S::of(0.999),
            eps: S::of(1e-8),
        }
    }
}

impl<S: Scalar> AdamConfig<S> {
    pub fn validate(&self) -> Result<()> {
        let in_unit = |b: S| b >= S::zero() && b < S::one();
        if !in_unit(self.beta1) || !in_unit(self.beta2) {
            return Err(Error::invalid("adam betas must lie in [0, 1)"));
        }
        if !(self.eps > S::zero()) {
            return Err(Error::invalid("adam eps must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct AdamState<S: Scalar = f64> {
    cfg: AdamConfig<S>,
    m: Vec<S>,
    v: Vec<S>,
    t: u64,
}

impl<S: Scalar> AdamState<S> {
    pub fn new(len: usize, cfg: AdamConfig<S>) -> Result<Self> {
        cfg.validate()?;
        Ok(AdamState {
            cfg,
            m: vec![S::zero(); len],
            v: vec![S::zero(); len],
            t: 0,
        })
    }

    pub fn steps_taken(&self) -> u64 {
        self.t
    }

    /// One descent step: `params -= lr * m_hat / (sqrt(v_hat) + eps)`.
    ///
    /// The update direction is odd in the gradient, so ascent is descent on
    /// the negated gradient.
    pub fn step(&mut self, params: &mut [S], grad: &[S], lr: S) -> Result<()> {
        if params.len() != self.m.len() || grad.len() != self.m.len() {
            return Err(Error::DimensionMismatch {
                expected: self.m.len(),
                got: if params.len() != self.m.len() {
                    params.len()
                } else {
                    grad.len()
                },
            });
        }
        if grad.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("adam gradient".into()));
        }
        self.t += 1;
        let b1 = self.cfg.beta1;
        let b2 = self.cfg.beta2;
        let c1 = S::one() - b1.powi(self.t as i32);
        let c2 = S::one() - b2.powi(self.t as i32);
        let one = S::one();
        for i in 0..params.len() {
            let gi = grad[i];
            self.m[i] = b1 * self.m[i] + (one - b1) * gi;
            self.v[i] = b2 * self.v[i] + (one - b2) * gi * gi;
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            params[i] -= lr * m_hat / (v_hat.sqrt() + self.cfg.eps);
        }
        Ok(())
    }
}
