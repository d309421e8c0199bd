//! Velocity-field training: straight-path interpolation, pluggable
//! regression targets (plain two-point difference, self-bootstrapped
//! step-conditioned, and span-averaged mean velocity), and a bitwise
//! deterministic minibatch loop over either independent couplings or a
//! precomputed noise-data pair stream.
//!
//! All per-sample randomness (noise, times, target-specific draws) is
//! derived from the master seed and the global sample index, so results are
//! independent of batching internals and identical across coupling modes
//! wherever the streams are shared.

use std::path::Path;

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::nn::{MlpParams, MlpWorkspace, Tangent};
use crate::optim::{AdamConfig, AdamState};
use crate::pairing::PairRecord;
use crate::rng;
use crate::scalar::Scalar;

/// How (noise, data) pairs are formed during training.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CouplingMode {
    /// Fresh noise and an independently drawn (weight-proportional) data
    /// point every sample.
    Independent,
    /// Consume a precomputed, deterministically aligned pair stream.
    Aligned,
}

/// The regression target the network learns.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TargetField {
    /// The two-point difference `x1 - x0`.
    Vanilla,
    /// Step-conditioned self-bootstrap: part of each batch trains the
    /// plain target at step size 0, the rest the average of two chained
    /// model evaluations `d` apart (no gradient flows through the target).
    Shortcut,
    /// Span-averaged velocity: `v - (t-r) * (v . d_x u + d_t u)` via a
    /// Jacobian-vector product (no gradient flows through the target).
    MeanFlow,
}

impl TargetField {
    /// Number of extra conditioning scalars the network must accept.
    pub fn num_extra(self) -> usize {
        match self {
            TargetField::Vanilla => 0,
            TargetField::Shortcut | TargetField::MeanFlow => 1,
        }
    }
}

/// Full training recipe. `shortcut_*` fields only matter for
/// [`TargetField::Shortcut`], `meanflow_equal_prob` only for
/// [`TargetField::MeanFlow`].
#[derive(Debug, Clone)]
pub struct TrainConfig<S: Scalar = f64> {
    pub arch: crate::nn::MlpArch,
    pub batch_size: usize,
    /// Number of optimizer steps; 0 is allowed and returns the freshly
    /// initialized parameters untouched.
    pub num_steps: usize,
    pub learning_rate: S,
    /// Exponent `p >= 1` of the per-coordinate loss `|r|^p`.
    pub loss_exponent: S,
    pub coupling: CouplingMode,
    pub target: TargetField,
    /// Samples per batch trained on the plain target at step size 0; the
    /// remaining `batch_size - kappa` samples use the bootstrap target.
    pub shortcut_kappa: usize,
    /// Candidate step sizes for the bootstrap; a draw keeps only candidates
    /// with `t + d <= 1` and falls back to a step-0 plain-target sample if
    /// none remain.
    pub shortcut_steps: Vec<f64>,
    /// Probability that the span start equals `t` (single-point span).
    pub meanflow_equal_prob: f64,
    pub master_seed: u64,
    pub adam: AdamConfig<S>,
}

impl<S: Scalar> TrainConfig<S> {
    /// Plain-target defaults used by the 2-D experiments.
    pub fn vanilla(arch: crate::nn::MlpArch, master_seed: u64) -> Self {
        TrainConfig {
            arch,
            batch_size: 256,
            num_steps: 20_000,
            learning_rate: S::of(1e-3),
            loss_exponent: S::of(2.0),
            coupling: CouplingMode::Independent,
            target: TargetField::Vanilla,
            shortcut_kappa: 0,
            shortcut_steps: vec![1.0 / 128.0, 1.0 / 64.0, 1.0 / 32.0, 1.0 / 16.0],
            meanflow_equal_prob: 0.75,
            master_seed,
            adam: AdamConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.arch.validate()?;
        self.adam.validate()?;
        if self.batch_size == 0 {
            return Err(Error::invalid("batch size must be >= 1"));
        }
        if !(self.loss_exponent >= S::one()) {
            return Err(Error::invalid(format!(
                "loss exponent must be >= 1, got {}",
                self.loss_exponent
            )));
        }
        if !self.learning_rate.is_finite() || self.learning_rate <= S::zero() {
            return Err(Error::invalid("learning rate must be positive and finite"));
        }
        if self.arch.num_extra != self.target.num_extra() {
            return Err(Error::invalid(format!(
                "target field needs {} extra network input(s), architecture has {}",
                self.target.num_extra(),
                self.arch.num_extra
            )));
        }
        if self.target == TargetField::Shortcut {
            if self.shortcut_kappa > self.batch_size {
                return Err(Error::invalid(format!(
                    "shortcut kappa {} exceeds batch size {}",
                    self.shortcut_kappa, self.batch_size
                )));
            }
            if self.shortcut_steps.is_empty() {
                return Err(Error::invalid("shortcut step-size list is empty"));
            }
            if self.shortcut_steps.iter().any(|&d| !(d > 0.0 && d <= 1.0)) {
                return Err(Error::invalid(
                    "shortcut step sizes must lie in (0, 1]",
                ));
            }
        }
        if !(0.0..=1.0).contains(&self.meanflow_equal_prob) {
            return Err(Error::invalid(
                "span-collapse probability must lie in [0, 1]",
            ));
        }
        Ok(())
    }
}

/// One row of the loss history CSV.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossRecord {
    pub step: usize,
    pub loss: f64,
    pub loss_ema: f64,
}

const LOSS_EMA_BETA: f64 = 0.99;

/// Salt for the per-sample time draws.
const TIME_SALT: u64 = 0x54_49_4D_45;
/// Salt for independent-mode data-index draws.
const DATA_SALT: u64 = 0x44_41_54_41;
/// Salt for per-sample target randomness (bootstrap step size, span start).
const TARGET_SALT: u64 = 0x54_47_52_54;
/// Salt for the parameter initialization seed.
const INIT_SALT: u64 = 0x4E_45_54_57;

/// The straight path `(1-t) x0 + t x1`.
pub fn interpolate<S: Scalar>(x0: &[S], x1: &[S], t: S) -> Result<Vec<S>> {
    if x0.len() != x1.len() {
        return Err(Error::DimensionMismatch {
            expected: x0.len(),
            got: x1.len(),
        });
    }
    if !(t >= S::zero() && t <= S::one()) {
        return Err(Error::invalid(format!(
            "interpolation time must lie in [0, 1], got {t}"
        )));
    }
    let mut out = vec![S::zero(); x0.len()];
    interpolate_into(x0, x1, t, &mut out);
    Ok(out)
}

fn interpolate_into<S: Scalar>(x0: &[S], x1: &[S], t: S, out: &mut [S]) {
    let s = S::one() - t;
    for ((o, &a), &b) in out.iter_mut().zip(x0).zip(x1) {
        *o = s * a + t * b;
    }
}

/// The plain two-point target `x1 - x0`.
pub fn target_vanilla<S: Scalar>(x0: &[S], x1: &[S]) -> Result<Vec<S>> {
    if x0.len() != x1.len() {
        return Err(Error::DimensionMismatch {
            expected: x0.len(),
            got: x1.len(),
        });
    }
    Ok(x0.iter().zip(x1).map(|(&a, &b)| b - a).collect())
}

/// Step-conditioned bootstrap target at `(x_t, t)` with step size `d_step`.
///
/// Plain slots (`is_plain_slot`) return `x1 - x0` without touching the
/// network. Bootstrap slots chain two model evaluations `d_step` apart and
/// average them. Either way the result is a constant with respect to the
/// parameters: no gradient flows through it.
pub fn target_shortcut<S: Scalar>(
    params: &MlpParams<S>,
    x0: &[S],
    x1: &[S],
    t: S,
    d_step: S,
    is_plain_slot: bool,
) -> Result<Vec<S>> {
    if is_plain_slot {
        return target_vanilla(x0, x1);
    }
    if t + d_step > S::one() {
        return Err(Error::invalid(format!(
            "bootstrap step leaves the unit interval: t = {t}, d = {d_step}"
        )));
    }
    let x_t = interpolate(x0, x1, t)?;
    let s_t = params.forward(&x_t, t, &[d_step])?;
    let x_next: Vec<S> = x_t
        .iter()
        .zip(&s_t)
        .map(|(&x, &s)| x + d_step * s)
        .collect();
    let s_next = params.forward(&x_next, t + d_step, &[d_step])?;
    Ok(s_t
        .iter()
        .zip(&s_next)
        .map(|(&a, &b)| (a + b) / S::of(2.0))
        .collect())
}

/// Span-averaged velocity target at `(x_t, t)` for span start `r <= t`:
/// `v - (t - r) * J(v, 1, 0)` where `v = x1 - x0` and `J` is the network's
/// directional derivative at `(x_t, t, r)`. The result is a constant with
/// respect to the parameters: no gradient flows through it.
pub fn target_meanflow<S: Scalar>(
    params: &MlpParams<S>,
    x0: &[S],
    x1: &[S],
    t: S,
    r: S,
) -> Result<Vec<S>> {
    if r > t || r < S::zero() {
        return Err(Error::invalid(format!(
            "span start must satisfy 0 <= r <= t, got r = {r}, t = {t}"
        )));
    }
    let v = target_vanilla(x0, x1)?;
    if r == t {
        return Ok(v);
    }
    let x_t = interpolate(x0, x1, t)?;
    let tangent = Tangent {
        dx: v.clone(),
        dt: S::one(),
        dextra: vec![S::zero()],
    };
    let jv = params.jvp(&x_t, t, &[r], &tangent)?;
    let span = t - r;
    Ok(v.iter().zip(&jv).map(|(&vi, &ji)| vi - span * ji).collect())
}

/// Mean over the batch of `sum_k |pred_k - target_k|^p`.
pub fn loss<S: Scalar>(predictions: &[Vec<S>], targets: &[Vec<S>], p: S) -> Result<S> {
    if predictions.len() != targets.len() {
        return Err(Error::DimensionMismatch {
            expected: targets.len(),
            got: predictions.len(),
        });
    }
    if predictions.is_empty() {
        return Ok(S::zero());
    }
    let mut total = S::zero();
    for (pred, tgt) in predictions.iter().zip(targets) {
        if pred.len() != tgt.len() {
            return Err(Error::DimensionMismatch {
                expected: tgt.len(),
                got: pred.len(),
            });
        }
        total += sample_power_loss(pred, tgt, p);
    }
    Ok(total / S::of(predictions.len() as f64))
}

fn sample_power_loss<S: Scalar>(pred: &[S], tgt: &[S], p: S) -> S {
    let two = S::of(2.0);
    pred.iter()
        .zip(tgt)
        .map(|(&a, &b)| {
            let d = a - b;
            if p == two {
                d * d
            } else {
                d.abs().powf(p)
            }
        })
        .sum()
}

/// Writes `d/dpred` of `sample_power_loss / batch` into `upstream`.
fn sample_power_loss_grad<S: Scalar>(
    pred: &[S],
    tgt: &[S],
    p: S,
    inv_batch: S,
    upstream: &mut [S],
) {
    let two = S::of(2.0);
    for ((u, &a), &b) in upstream.iter_mut().zip(pred).zip(tgt) {
        let d = a - b;
        *u = if p == two {
            two * d * inv_batch
        } else {
            p * d.abs().powf(p - S::one()) * d.signum() * inv_batch
        };
    }
}

/// Draws a data index proportionally to the dataset weights from one
/// uniform variate in (0, 1).
fn weighted_index(cumulative: &[f64], u: f64) -> usize {
    cumulative.partition_point(|&c| c <= u).min(cumulative.len() - 1)
}

/// Trains a freshly initialized network for `config.num_steps` optimizer
/// steps and returns it with the per-step loss history.
///
/// [`CouplingMode::Aligned`] consumes `pairs` sequentially (record
/// `step * B + b` feeds batch slot `b` of `step`) and requires at least
/// `num_steps * batch_size` records. [`CouplingMode::Independent`] draws
/// noise and data indices on the fly and rejects a supplied pair list so a
/// mismatched configuration cannot go unnoticed. Given equal master seeds
/// and a pair stream generated from the same master seed, both modes see
/// identical noise and time streams sample for sample.
pub fn train<S: Scalar>(
    dataset: &Dataset<S>,
    config: &TrainConfig<S>,
    pairs: Option<&[PairRecord]>,
) -> Result<(MlpParams<S>, Vec<LossRecord>)> {
    config.validate()?;
    let dim = dataset.dim();
    if dim != config.arch.x_dim {
        return Err(Error::DimensionMismatch {
            expected: config.arch.x_dim,
            got: dim,
        });
    }
    let needed = config.num_steps * config.batch_size;
    let pair_stream: Option<&[PairRecord]> = match (config.coupling, pairs) {
        (CouplingMode::Aligned, Some(p)) => {
            if p.len() < needed {
                return Err(Error::InsufficientPairs {
                    required: needed,
                    available: p.len(),
                });
            }
            if let Some(r) = p[..needed].iter().find(|r| r.data_index as usize >= dataset.len()) {
                return Err(Error::IndexOutOfRange {
                    index: r.data_index as usize,
                    size: dataset.len(),
                });
            }
            Some(p)
        }
        (CouplingMode::Aligned, None) => {
            return Err(Error::InsufficientPairs {
                required: needed,
                available: 0,
            });
        }
        (CouplingMode::Independent, Some(_)) => {
            return Err(Error::invalid(
                "independent coupling does not take a pair stream; drop it or switch to aligned mode",
            ));
        }
        (CouplingMode::Independent, None) => None,
    };

    let mut params = MlpParams::<S>::init(
        config.arch.clone(),
        rng::salted(config.master_seed, INIT_SALT),
    )?;
    let mut adam = AdamState::new(params.num_params(), config.adam.clone())?;
    let mut history = Vec::with_capacity(config.num_steps);

    // Cumulative weights for independent-mode index draws.
    let cumulative: Vec<f64> = {
        let mut acc = 0.0f64;
        let mut cum: Vec<f64> = dataset
            .weights()
            .iter()
            .map(|w| {
                acc += w.to64();
                acc
            })
            .collect();
        if let Some(last) = cum.last_mut() {
            *last = 1.0;
        }
        cum
    };

    let time_seed = rng::salted(config.master_seed, TIME_SALT);
    let data_seed = rng::salted(config.master_seed, DATA_SALT);
    let target_seed = rng::salted(config.master_seed, TARGET_SALT);

    let mut ws = MlpWorkspace::new(&config.arch);
    let mut ws_aux = MlpWorkspace::new(&config.arch);
    let mut grad = vec![S::zero(); params.num_params()];
    let mut noise64 = vec![0.0f64; dim];
    let mut x0 = vec![S::zero(); dim];
    let mut x_t = vec![S::zero(); dim];
    let mut x_next = vec![S::zero(); dim];
    let mut target = vec![S::zero(); dim];
    let mut upstream = vec![S::zero(); dim];
    let inv_batch = S::of(1.0 / config.batch_size as f64);
    let mut loss_ema = 0.0f64;

    for step in 0..config.num_steps {
        grad.fill(S::zero());
        let mut batch_loss = S::zero();

        for slot in 0..config.batch_size {
            let j = (step * config.batch_size + slot) as u64;

            // Noise and data point for this sample.
            let data_index = match pair_stream {
                Some(stream) => {
                    let rec = &stream[j as usize];
                    rng::normal_fill(rec.seed, &mut noise64);
                    rec.data_index as usize
                }
                None => {
                    rng::normal_fill(rng::derive(config.master_seed, j), &mut noise64);
                    weighted_index(&cumulative, rng::unit_at(data_seed, j))
                }
            };
            for (xs, &v) in x0.iter_mut().zip(noise64.iter()) {
                *xs = S::of(v);
            }
            let x1 = dataset.point(data_index);
            let t = S::of(rng::unit_at(time_seed, j));

            // Per-sample target draw stream (step size / span start).
            let mut tstream = rng::SplitMix64::new(rng::derive(target_seed, j));

            match config.target {
                TargetField::Vanilla => {
                    interpolate_into(&x0, x1, t, &mut x_t);
                    for ((o, &a), &b) in target.iter_mut().zip(&x0).zip(x1) {
                        *o = b - a;
                    }
                    params.forward_ws(&x_t, t, &[], &mut ws)?;
                }
                TargetField::Shortcut => {
                    let is_plain = slot < config.shortcut_kappa;
                    let d_step = if is_plain {
                        S::zero()
                    } else {
                        let t64 = t.to64();
                        let allowed: Vec<f64> = config
                            .shortcut_steps
                            .iter()
                            .copied()
                            .filter(|d| t64 + d <= 1.0)
                            .collect();
                        if allowed.is_empty() {
                            S::zero()
                        } else {
                            let pick = (tstream.next_unit() * allowed.len() as f64) as usize;
                            S::of(allowed[pick.min(allowed.len() - 1)])
                        }
                    };
                    interpolate_into(&x0, x1, t, &mut x_t);
                    params.forward_ws(&x_t, t, &[d_step], &mut ws)?;
                    if d_step == S::zero() {
                        for ((o, &a), &b) in target.iter_mut().zip(&x0).zip(x1) {
                            *o = b - a;
                        }
                    } else {
                        // Bootstrap: the prediction pass above doubles as the
                        // first chained evaluation.
                        for ((n, &x), &s) in
                            x_next.iter_mut().zip(&x_t).zip(ws.output())
                        {
                            *n = x + d_step * s;
                        }
                        params.forward_ws(&x_next, t + d_step, &[d_step], &mut ws_aux)?;
                        let half = S::of(0.5);
                        for ((o, &a), &b) in
                            target.iter_mut().zip(ws.output()).zip(ws_aux.output())
                        {
                            *o = half * (a + b);
                        }
                    }
                }
                TargetField::MeanFlow => {
                    let collapse = tstream.next_unit() < config.meanflow_equal_prob;
                    let (r, t_eff) = if collapse {
                        (t, t)
                    } else {
                        let other = S::of(tstream.next_unit());
                        (t.min(other), t.max(other))
                    };
                    interpolate_into(&x0, x1, t_eff, &mut x_t);
                    // One forward-mode pass yields the prediction, the
                    // directional derivative the target needs, and the cache
                    // the reverse pass consumes.
                    for ((o, &a), &b) in target.iter_mut().zip(&x0).zip(x1) {
                        *o = b - a;
                    }
                    let tangent = Tangent {
                        dx: target.clone(),
                        dt: S::one(),
                        dextra: vec![S::zero()],
                    };
                    params.jvp_ws(&x_t, t_eff, &[r], &tangent, &mut ws)?;
                    let span = t_eff - r;
                    for (o, &ji) in target.iter_mut().zip(ws.jvp_out()) {
                        *o -= span * ji;
                    }
                }
            }

            batch_loss += sample_power_loss(ws.output(), &target, config.loss_exponent);
            sample_power_loss_grad(
                ws.output(),
                &target,
                config.loss_exponent,
                inv_batch,
                &mut upstream,
            );
            params.backward_from_cache(&upstream, &mut ws, &mut grad);
        }

        if grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite(format!(
                "the training gradient at step {}",
                step + 1
            )));
        }
        adam.step(params.data_mut(), &grad, config.learning_rate)?;

        let loss_now = (batch_loss * inv_batch).to64();
        if !loss_now.is_finite() {
            return Err(Error::NonFinite(format!(
                "the training loss at step {}",
                step + 1
            )));
        }
        loss_ema = if step == 0 {
            loss_now
        } else {
            LOSS_EMA_BETA * loss_ema + (1.0 - LOSS_EMA_BETA) * loss_now
        };
        history.push(LossRecord {
            step: step + 1,
            loss: loss_now,
            loss_ema,
        });
    }

    Ok((params, history))
}

/// Writes the loss history as `step,loss,loss_ema` CSV.
pub fn write_loss_csv(path: &Path, history: &[LossRecord]) -> Result<()> {
    let mut out = String::from("step,loss,loss_ema\n");
    for rec in history {
        out.push_str(&format!("{},{},{}\n", rec.step, rec.loss, rec.loss_ema));
    }
    std::fs::write(path, out)?;
    Ok(())
}
