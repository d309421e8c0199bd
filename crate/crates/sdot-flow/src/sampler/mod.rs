//! Inference and evaluation: fixed-step ODE integration of a learned
//! velocity field from noise to data, trajectory logging with function-
//! evaluation accounting, and the straightness / empirical transport-cost
//! metrics used to compare couplings.

mod assignment;

use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::{MlpParams, MlpWorkspace};
use crate::scalar::Scalar;

/// Fixed-step integration scheme.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scheme {
    /// One evaluation per step, first order.
    Euler,
    /// Two evaluations per step, second order.
    Midpoint,
    /// Four evaluations per step, fourth order.
    Rk4,
}

impl Scheme {
    /// Network evaluations per integration step.
    pub fn evals_per_step(self) -> usize {
        match self {
            Scheme::Euler => 1,
            Scheme::Midpoint => 2,
            Scheme::Rk4 => 4,
        }
    }
}

/// What the network's extra conditioning input receives during integration.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExtraPolicy {
    /// The network takes no extra input.
    None,
    /// Step-size conditioning: the extra input is the step size `h` at
    /// every evaluation.
    StepSize,
    /// Span conditioning for mean-velocity networks: step `k` advances
    /// `x += h * u(x, t_{k+1}, span start = t_k)`. Only defined for the
    /// one-evaluation-per-step scheme; with a single step this is
    /// `x(1) = x(0) + u(x(0), t = 1, span start = 0)`.
    SpanStart,
}

/// An integrated path: states at each grid time plus the number of network
/// forward passes spent producing it.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryLog<S: Scalar = f64> {
    /// Strictly increasing, starts at 0, ends at 1.
    pub times: Vec<S>,
    /// One state per time.
    pub states: Vec<Vec<S>>,
    /// Network forward passes used.
    pub nfe: usize,
}

impl<S: Scalar> TrajectoryLog<S> {
    pub fn dim(&self) -> usize {
        self.states.first().map_or(0, Vec::len)
    }
}

/// Integrates `dx/dt = u(x, t)` from `x0` at `t = 0` to `t = 1` on a
/// uniform grid of `steps` steps, logging every grid state.
pub fn integrate<S: Scalar>(
    params: &MlpParams<S>,
    x0: &[S],
    scheme: Scheme,
    steps: usize,
    policy: ExtraPolicy,
) -> Result<TrajectoryLog<S>> {
    if steps == 0 {
        return Err(Error::invalid("integration needs at least one step"));
    }
    let arch = params.arch();
    if x0.len() != arch.x_dim {
        return Err(Error::DimensionMismatch {
            expected: arch.x_dim,
            got: x0.len(),
        });
    }
    let needed_extra = match policy {
        ExtraPolicy::None => 0,
        ExtraPolicy::StepSize | ExtraPolicy::SpanStart => 1,
    };
    if arch.num_extra != needed_extra {
        return Err(Error::invalid(format!(
            "extra-input policy {policy:?} supplies {needed_extra} conditioning scalar(s) \
             but the network expects {}",
            arch.num_extra
        )));
    }
    if policy == ExtraPolicy::SpanStart && scheme != Scheme::Euler {
        return Err(Error::invalid(
            "span conditioning advances one evaluation per step; use the Euler scheme",
        ));
    }

    let dim = arch.x_dim;
    let h = S::of(1.0 / steps as f64);
    let grid = |k: usize| S::of(k as f64 / steps as f64);

    let mut ws = MlpWorkspace::new(arch);
    let mut x = x0.to_vec();
    let mut k1 = vec![S::zero(); dim];
    let mut k2 = vec![S::zero(); dim];
    let mut k3 = vec![S::zero(); dim];
    let mut xtmp = vec![S::zero(); dim];

    let mut times = Vec::with_capacity(steps + 1);
    let mut states = Vec::with_capacity(steps + 1);
    times.push(S::zero());
    states.push(x.clone());
    let mut nfe = 0usize;

    let half = S::of(0.5);
    let sixth = S::of(1.0 / 6.0);
    let two = S::of(2.0);

    for k in 0..steps {
        let t = grid(k);
        let t_next = grid(k + 1);
        let h_extra = [h];

        match (scheme, policy) {
            (Scheme::Euler, ExtraPolicy::SpanStart) => {
                params.forward_ws(&x, t_next, &[t], &mut ws)?;
                nfe += 1;
                for (xi, &v) in x.iter_mut().zip(ws.output()) {
                    *xi += h * v;
                }
            }
            (Scheme::Euler, _) => {
                let extra: &[S] = if policy == ExtraPolicy::StepSize {
                    &h_extra
                } else {
                    &[]
                };
                params.forward_ws(&x, t, extra, &mut ws)?;
                nfe += 1;
                for (xi, &v) in x.iter_mut().zip(ws.output()) {
                    *xi += h * v;
                }
            }
            (Scheme::Midpoint, _) => {
                let extra: &[S] = if policy == ExtraPolicy::StepSize {
                    &h_extra
                } else {
                    &[]
                };
                params.forward_ws(&x, t, extra, &mut ws)?;
                k1.copy_from_slice(ws.output());
                for ((m, &xi), &v) in xtmp.iter_mut().zip(&x).zip(&k1) {
                    *m = xi + half * h * v;
                }
                params.forward_ws(&xtmp, t + half * h, extra, &mut ws)?;
                nfe += 2;
                for (xi, &v) in x.iter_mut().zip(ws.output()) {
                    *xi += h * v;
                }
            }
            (Scheme::Rk4, _) => {
                let extra: &[S] = if policy == ExtraPolicy::StepSize {
                    &h_extra
                } else {
                    &[]
                };
                params.forward_ws(&x, t, extra, &mut ws)?;
                k1.copy_from_slice(ws.output());
                for ((m, &xi), &v) in xtmp.iter_mut().zip(&x).zip(&k1) {
                    *m = xi + half * h * v;
                }
                params.forward_ws(&xtmp, t + half * h, extra, &mut ws)?;
                k2.copy_from_slice(ws.output());
                for ((m, &xi), &v) in xtmp.iter_mut().zip(&x).zip(&k2) {
                    *m = xi + half * h * v;
                }
                params.forward_ws(&xtmp, t + half * h, extra, &mut ws)?;
                k3.copy_from_slice(ws.output());
                for ((m, &xi), &v) in xtmp.iter_mut().zip(&x).zip(&k3) {
                    *m = xi + h * v;
                }
                params.forward_ws(&xtmp, t_next, extra, &mut ws)?;
                nfe += 4;
                let k4 = ws.output();
                for i in 0..dim {
                    x[i] += h * sixth * (k1[i] + two * k2[i] + two * k3[i] + k4[i]);
                }
            }
        }

        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "the integration state at step {} of {steps}",
                k + 1
            )));
        }
        times.push(t_next);
        states.push(x.clone());
    }

    Ok(TrajectoryLog { times, states, nfe })
}

/// Mean Euclidean deviation of the interior logged states from the chord
/// connecting the endpoints. Returns `(0, true)` when the log has fewer
/// than 3 points (no interior), `(value, false)` otherwise.
pub fn straightness<S: Scalar>(traj: &TrajectoryLog<S>) -> (S, bool) {
    let n = traj.states.len();
    if n < 3 {
        return (S::zero(), true);
    }
    let first = &traj.states[0];
    let last = &traj.states[n - 1];
    let mut total = S::zero();
    for k in 1..n - 1 {
        let t = traj.times[k];
        let s = S::one() - t;
        let dev2: S = traj.states[k]
            .iter()
            .zip(first.iter().zip(last))
            .map(|(&xk, (&a, &b))| {
                let d = xk - (s * a + t * b);
                d * d
            })
            .sum();
        total += dev2.sqrt();
    }
    (total / S::of((n - 2) as f64), false)
}

/// Square root of the minimum mean squared pairing cost between two
/// equal-size sample sets, computed by an exact assignment solver.
/// Symmetric, zero iff the multisets coincide. `n` is capped at 2048 (the
/// exact solver's budget).
pub fn empirical_w2<S: Scalar>(samples_a: &[Vec<S>], samples_b: &[Vec<S>]) -> Result<S> {
    if samples_a.len() != samples_b.len() {
        return Err(Error::DimensionMismatch {
            expected: samples_a.len(),
            got: samples_b.len(),
        });
    }
    let n = samples_a.len();
    if n == 0 {
        return Ok(S::zero());
    }
    if n > 2048 {
        return Err(Error::invalid(format!(
            "exact transport cost is limited to 2048 samples per side, got {n}"
        )));
    }
    let dim = samples_a[0].len();
    for row in samples_a.iter().chain(samples_b) {
        if row.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: row.len(),
            });
        }
    }

    let mut costs = vec![0.0f64; n * n];
    for (i, a) in samples_a.iter().enumerate() {
        for (j, b) in samples_b.iter().enumerate() {
            let mut c = 0.0f64;
            for k in 0..dim {
                let d = a[k].to64() - b[k].to64();
                c += d * d;
            }
            costs[i * n + j] = c;
        }
    }
    let (_, total) = assignment::min_cost_assignment(&costs, n);
    Ok(S::of((total / n as f64).sqrt().max(0.0)))
}

/// Writes trajectories as `traj_id,t,x0,x1,...` CSV, one row per
/// (trajectory, grid time).
pub fn write_trajectories_csv<S: Scalar>(
    path: &Path,
    trajectories: &[TrajectoryLog<S>],
) -> Result<()> {
    let dim = trajectories
        .first()
        .map(TrajectoryLog::dim)
        .ok_or_else(|| Error::invalid("no trajectories to export"))?;
    let mut out = String::from("traj_id,t");
    for k in 0..dim {
        out.push_str(&format!(",x{k}"));
    }
    out.push('\n');
    for (id, traj) in trajectories.iter().enumerate() {
        for (t, state) in traj.times.iter().zip(&traj.states) {
            out.push_str(&format!("{id},{}", t.to64()));
            for v in state {
                out.push_str(&format!(",{}", v.to64()));
            }
            out.push('\n');
        }
    }
    std::fs::write(path, out)?;
    Ok(())
}
