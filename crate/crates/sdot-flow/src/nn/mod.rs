//! A small fully-connected velocity network `u(x, t, extra)` with exactly
//! reproducible forward evaluation, reverse-mode gradients, and forward-mode
//! directional derivatives.
//!
//! The input layout is the concatenation of the spatial point `x`, a
//! sinusoidal embedding of the time scalar `t`, and one embedding per
//! optional extra conditioning scalar (for step-size or span inputs used by
//! some target fields). Hidden layers apply a smooth activation; the output
//! layer is linear and produces a vector of the same dimension as `x`.
//!
//! Parameters live in one flat buffer (weights row-major, then bias, per
//! layer) so the whole network can be driven by [`crate::optim::AdamState`]
//! and checkpointed losslessly.

mod io;

pub use io::{read_checkpoint, write_checkpoint};

use crate::error::{Error, Result};
use crate::rng;
use crate::scalar::Scalar;

/// Smooth hidden-layer nonlinearity.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    /// Hyperbolic tangent (the default).
    Tanh,
    /// `x * sigmoid(x)`.
    Silu,
}

impl Activation {
    fn apply<S: Scalar>(self, z: S) -> S {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Silu => z / (S::one() + (-z).exp()),
        }
    }

    /// Derivative at pre-activation `z`; `a` is the stored activation value
    /// `apply(z)` so tanh can reuse it.
    fn deriv<S: Scalar>(self, z: S, a: S) -> S {
        match self {
            Activation::Tanh => S::one() - a * a,
            Activation::Silu => {
                let sig = S::one() / (S::one() + (-z).exp());
                sig * (S::one() + z * (S::one() - sig))
            }
        }
    }

    pub(crate) fn code(self) -> u16 {
        match self {
            Activation::Tanh => 0,
            Activation::Silu => 1,
        }
    }

    pub(crate) fn from_code(code: u16) -> Option<Self> {
        match code {
            0 => Some(Activation::Tanh),
            1 => Some(Activation::Silu),
            _ => None,
        }
    }
}

/// Network shape: spatial dimension, hidden widths, embedding width shared
/// by `t` and every extra scalar, and the number of extra scalars.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MlpArch {
    pub x_dim: usize,
    pub hidden: Vec<usize>,
    /// Output width of each scalar embedding; must be even (sine/cosine
    /// pairs). Zero disables the embedding, leaving the raw `x` layout.
    pub embed_width: usize,
    pub num_extra: usize,
    pub activation: Activation,
}

impl MlpArch {
    pub fn new(
        x_dim: usize,
        hidden: Vec<usize>,
        embed_width: usize,
        num_extra: usize,
        activation: Activation,
    ) -> Result<Self> {
        let arch = MlpArch {
            x_dim,
            hidden,
            embed_width,
            num_extra,
            activation,
        };
        arch.validate()?;
        Ok(arch)
    }

    /// Three tanh layers of width 128 with 16-wide embeddings — large enough
    /// for low-dimensional densities, small enough to train on a CPU.
    pub fn with_defaults(x_dim: usize, num_extra: usize) -> Self {
        MlpArch {
            x_dim,
            hidden: vec![128, 128, 128],
            embed_width: 16,
            num_extra,
            activation: Activation::Tanh,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.x_dim == 0 {
            return Err(Error::invalid("network spatial dimension must be >= 1"));
        }
        if self.embed_width % 2 != 0 {
            return Err(Error::invalid(format!(
                "embedding width must be even (sine/cosine pairs), got {}",
                self.embed_width
            )));
        }
        if let Some(pos) = self.hidden.iter().position(|&h| h == 0) {
            return Err(Error::invalid(format!(
                "hidden layer {pos} has width 0"
            )));
        }
        Ok(())
    }

    /// Total width of the assembled input vector.
    pub fn input_width(&self) -> usize {
        self.x_dim + self.embed_width * (1 + self.num_extra)
    }

    /// `(rows, cols)` of every affine layer, first to last.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.hidden.len() + 1);
        let mut prev = self.input_width();
        for &h in &self.hidden {
            dims.push((h, prev));
            prev = h;
        }
        dims.push((self.x_dim, prev));
        dims
    }

    /// Flat parameter count: weights plus biases over all layers.
    pub fn num_params(&self) -> usize {
        self.layer_dims().iter().map(|&(r, c)| r * (c + 1)).sum()
    }

    fn widest(&self) -> usize {
        self.layer_dims()
            .iter()
            .flat_map(|&(r, c)| [r, c])
            .max()
            .unwrap_or(1)
    }
}

/// Offsets of one layer inside the flat parameter buffer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Layer {
    w: usize,
    b: usize,
    rows: usize,
    cols: usize,
}

/// The network: an architecture plus one flat parameter buffer
/// (per layer: row-major weights, then the bias vector).
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams<S: Scalar = f64> {
    arch: MlpArch,
    data: Vec<S>,
    layers: Vec<Layer>,
}

/// Reverse-mode gradients of `<upstream, forward(x, t, extra)>` with respect
/// to the parameters and all inputs. `dparams` mirrors the flat parameter
/// layout exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct GradBundle<S: Scalar = f64> {
    pub dparams: Vec<S>,
    pub dx: Vec<S>,
    pub dt: S,
    pub dextra: Vec<S>,
}

/// Direction for forward-mode differentiation, one component per input.
#[derive(Debug, Clone, PartialEq)]
pub struct Tangent<S: Scalar = f64> {
    pub dx: Vec<S>,
    pub dt: S,
    pub dextra: Vec<S>,
}

impl<S: Scalar> Tangent<S> {
    pub fn zeros(arch: &MlpArch) -> Self {
        Tangent {
            dx: vec![S::zero(); arch.x_dim],
            dt: S::zero(),
            dextra: vec![S::zero(); arch.num_extra],
        }
    }
}

/// Reusable buffers for one forward/backward/jvp evaluation, so batch loops
/// allocate nothing.
#[derive(Debug, Clone)]
pub struct MlpWorkspace<S: Scalar = f64> {
    input: Vec<S>,
    tin: Vec<S>,
    /// Activations per layer boundary: `acts[0]` is the assembled input,
    /// `acts[last]` the network output.
    acts: Vec<Vec<S>>,
    /// Pre-activations per layer.
    zs: Vec<Vec<S>>,
    /// Forward-mode tangents mirroring `acts`.
    tacts: Vec<Vec<S>>,
    delta: Vec<S>,
    dprev: Vec<S>,
    dinput: Vec<S>,
}

impl<S: Scalar> MlpWorkspace<S> {
    pub fn new(arch: &MlpArch) -> Self {
        let dims = arch.layer_dims();
        let mut acts = Vec::with_capacity(dims.len() + 1);
        acts.push(vec![S::zero(); arch.input_width()]);
        for &(rows, _) in &dims {
            acts.push(vec![S::zero(); rows]);
        }
        let zs = dims.iter().map(|&(rows, _)| vec![S::zero(); rows]).collect();
        let tacts = acts.clone();
        let widest = arch.widest();
        MlpWorkspace {
            input: vec![S::zero(); arch.input_width()],
            tin: vec![S::zero(); arch.input_width()],
            acts,
            zs,
            tacts,
            delta: vec![S::zero(); widest],
            dprev: vec![S::zero(); widest],
            dinput: vec![S::zero(); arch.input_width()],
        }
    }

    /// Network output of the most recent forward or jvp pass.
    pub fn output(&self) -> &[S] {
        self.acts.last().expect("workspace has at least one level")
    }

    /// Directional derivative from the most recent jvp pass.
    pub fn jvp_out(&self) -> &[S] {
        self.tacts.last().expect("workspace has at least one level")
    }
}

/// Angular frequency of embedding pair `k`: pi * 2^k. Geometric spacing
/// covers both slow and fast variation of scalars in [0, 1], and the
/// embedding stays smooth so time derivatives exist everywhere.
fn omega<S: Scalar>(k: usize) -> S {
    S::of(std::f64::consts::PI * (k as f64).exp2())
}

/// Writes `[sin(w_k s), cos(w_k s)]` pairs into `out`.
fn embed_scalar<S: Scalar>(s: S, out: &mut [S]) {
    for k in 0..out.len() / 2 {
        let arg = omega::<S>(k) * s;
        out[2 * k] = arg.sin();
        out[2 * k + 1] = arg.cos();
    }
}

/// Writes the derivative of the embedding with respect to `s`.
fn embed_scalar_deriv<S: Scalar>(s: S, out: &mut [S]) {
    for k in 0..out.len() / 2 {
        let w = omega::<S>(k);
        let arg = w * s;
        out[2 * k] = w * arg.cos();
        out[2 * k + 1] = -w * arg.sin();
    }
}

/// Chain-rule contraction of a cotangent over one embedded scalar block.
fn embed_scalar_pullback<S: Scalar>(s: S, cotangent: &[S]) -> S {
    let mut acc = S::zero();
    for k in 0..cotangent.len() / 2 {
        let w = omega::<S>(k);
        let arg = w * s;
        acc += cotangent[2 * k] * w * arg.cos();
        acc -= cotangent[2 * k + 1] * w * arg.sin();
    }
    acc
}

fn dot<S: Scalar>(a: &[S], b: &[S]) -> S {
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

impl<S: Scalar> MlpParams<S> {
    fn from_flat(arch: MlpArch, data: Vec<S>) -> Result<Self> {
        arch.validate()?;
        if data.len() != arch.num_params() {
            return Err(Error::DimensionMismatch {
                expected: arch.num_params(),
                got: data.len(),
            });
        }
        let mut layers = Vec::new();
        let mut off = 0;
        for (rows, cols) in arch.layer_dims() {
            layers.push(Layer {
                w: off,
                b: off + rows * cols,
                rows,
                cols,
            });
            off += rows * (cols + 1);
        }
        Ok(MlpParams { arch, data, layers })
    }

    /// All parameters zero.
    pub fn zeros(arch: MlpArch) -> Result<Self> {
        let n = arch.num_params();
        Self::from_flat(arch, vec![S::zero(); n])
    }

    /// Seeded initialization: weights uniform in (-1/sqrt(fan_in),
    /// 1/sqrt(fan_in)) drawn layer by layer in row-major order from one
    /// deterministic stream; biases zero. Bit-stable for a given seed.
    pub fn init(arch: MlpArch, seed: u64) -> Result<Self> {
        let mut params = Self::zeros(arch)?;
        let mut stream = rng::SplitMix64::new(rng::salted(seed, 0x4E4E_494E_4954_0001));
        for layer in &params.layers {
            let bound = S::of(1.0 / (layer.cols as f64).sqrt());
            for w in &mut params.data[layer.w..layer.w + layer.rows * layer.cols] {
                *w = S::of(stream.next_symmetric()) * bound;
            }
        }
        Ok(params)
    }

    pub fn arch(&self) -> &MlpArch {
        &self.arch
    }

    /// The flat parameter buffer (per layer: row-major weights, then bias).
    pub fn data(&self) -> &[S] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [S] {
        &mut self.data
    }

    pub fn num_params(&self) -> usize {
        self.data.len()
    }

    fn check_inputs(&self, x: &[S], extra: &[S]) -> Result<()> {
        if x.len() != self.arch.x_dim {
            return Err(Error::DimensionMismatch {
                expected: self.arch.x_dim,
                got: x.len(),
            });
        }
        if extra.len() != self.arch.num_extra {
            return Err(Error::DimensionMismatch {
                expected: self.arch.num_extra,
                got: extra.len(),
            });
        }
        Ok(())
    }

    /// Concatenates `x`, the embedding of `t`, and the embedding of each
    /// extra scalar into `out`.
    fn assemble_input(&self, x: &[S], t: S, extra: &[S], out: &mut [S]) {
        let d = self.arch.x_dim;
        let ew = self.arch.embed_width;
        out[..d].copy_from_slice(x);
        embed_scalar(t, &mut out[d..d + ew]);
        for (e, &s) in extra.iter().enumerate() {
            let base = d + ew * (1 + e);
            embed_scalar(s, &mut out[base..base + ew]);
        }
    }

    /// Input-space tangent matching `assemble_input`.
    fn assemble_tangent(&self, t: S, extra: &[S], tangent: &Tangent<S>, out: &mut [S]) {
        let d = self.arch.x_dim;
        let ew = self.arch.embed_width;
        out[..d].copy_from_slice(&tangent.dx);
        embed_scalar_deriv(t, &mut out[d..d + ew]);
        for v in &mut out[d..d + ew] {
            *v *= tangent.dt;
        }
        for (e, &s) in extra.iter().enumerate() {
            let base = d + ew * (1 + e);
            embed_scalar_deriv(s, &mut out[base..base + ew]);
            for v in &mut out[base..base + ew] {
                *v *= tangent.dextra[e];
            }
        }
    }

    /// Affine pass from `ws.acts[l]` to `ws.zs[l]`/`ws.acts[l+1]`; the last
    /// layer is linear, hidden layers apply the activation.
    fn forward_from_input(&self, ws: &mut MlpWorkspace<S>) {
        ws.acts[0].copy_from_slice(&ws.input);
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            let (lo, hi) = ws.acts.split_at_mut(l + 1);
            let a_in = lo[l].as_slice();
            let z = &mut ws.zs[l];
            for r in 0..layer.rows {
                let row = &self.data[layer.w + r * layer.cols..layer.w + (r + 1) * layer.cols];
                z[r] = self.data[layer.b + r] + dot(row, a_in);
            }
            let a_out = &mut hi[0];
            if l == last {
                a_out.copy_from_slice(z);
            } else {
                for (o, &zr) in a_out.iter_mut().zip(z.iter()) {
                    *o = self.arch.activation.apply(zr);
                }
            }
        }
    }

    /// Forward pass into a caller-provided workspace; the result is
    /// `ws.output()`.
    pub fn forward_ws(
        &self,
        x: &[S],
        t: S,
        extra: &[S],
        ws: &mut MlpWorkspace<S>,
    ) -> Result<()> {
        self.check_inputs(x, extra)?;
        self.assemble_input(x, t, extra, &mut ws.input);
        self.forward_from_input(ws);
        Ok(())
    }

    /// Evaluates the network at `(x, t, extra)`.
    pub fn forward(&self, x: &[S], t: S, extra: &[S]) -> Result<Vec<S>> {
        let mut ws = MlpWorkspace::new(&self.arch);
        self.forward_ws(x, t, extra, &mut ws)?;
        Ok(ws.output().to_vec())
    }

    /// Reverse pass over the workspace of a completed forward (or
    /// forward-mode) pass, accumulating parameter gradients of
    /// `<upstream, output>` into `dparams` (`+=`, callers zero it between
    /// uses) and leaving the assembled-input cotangent in `ws.dinput`.
    pub(crate) fn backward_from_cache(
        &self,
        upstream: &[S],
        ws: &mut MlpWorkspace<S>,
        dparams: &mut [S],
    ) {
        let last = self.layers.len() - 1;
        ws.delta[..upstream.len()].copy_from_slice(upstream);
        for (l, layer) in self.layers.iter().enumerate().rev() {
            // Hidden layers fold the activation derivative into delta.
            if l != last {
                for r in 0..layer.rows {
                    let d = self.arch.activation.deriv(ws.zs[l][r], ws.acts[l + 1][r]);
                    ws.delta[r] *= d;
                }
            }
            let a_in = &ws.acts[l];
            for r in 0..layer.rows {
                let dr = ws.delta[r];
                dparams[layer.b + r] += dr;
                let wrow = &mut dparams[layer.w + r * layer.cols..layer.w + (r + 1) * layer.cols];
                for (g, &a) in wrow.iter_mut().zip(a_in.iter()) {
                    *g += dr * a;
                }
            }
            let dprev = &mut ws.dprev[..layer.cols];
            dprev.fill(S::zero());
            for r in 0..layer.rows {
                let dr = ws.delta[r];
                let wrow = &self.data[layer.w + r * layer.cols..layer.w + (r + 1) * layer.cols];
                for (p, &w) in dprev.iter_mut().zip(wrow.iter()) {
                    *p += dr * w;
                }
            }
            ws.delta[..layer.cols].copy_from_slice(dprev);
        }
        let width = ws.dinput.len();
        ws.dinput.copy_from_slice(&ws.delta[..width]);
    }

    /// Batch-loop form of [`MlpParams::backward`]: runs forward + reverse and
    /// accumulates parameter gradients into `dparams` without allocating.
    /// Input gradients are skipped (training losses do not need them).
    pub fn backward_acc(
        &self,
        x: &[S],
        t: S,
        extra: &[S],
        upstream: &[S],
        ws: &mut MlpWorkspace<S>,
        dparams: &mut [S],
    ) -> Result<()> {
        if upstream.len() != self.arch.x_dim {
            return Err(Error::DimensionMismatch {
                expected: self.arch.x_dim,
                got: upstream.len(),
            });
        }
        if dparams.len() != self.data.len() {
            return Err(Error::DimensionMismatch {
                expected: self.data.len(),
                got: dparams.len(),
            });
        }
        self.forward_ws(x, t, extra, ws)?;
        self.backward_from_cache(upstream, ws, dparams);
        Ok(())
    }

    /// Exact reverse-mode gradients of `<upstream, forward(x, t, extra)>`
    /// with respect to every parameter and every input.
    pub fn backward(
        &self,
        x: &[S],
        t: S,
        extra: &[S],
        upstream: &[S],
    ) -> Result<GradBundle<S>> {
        let mut ws = MlpWorkspace::new(&self.arch);
        let mut dparams = vec![S::zero(); self.data.len()];
        self.backward_acc(x, t, extra, upstream, &mut ws, &mut dparams)?;

        let d = self.arch.x_dim;
        let ew = self.arch.embed_width;
        let dx = ws.dinput[..d].to_vec();
        let dt = embed_scalar_pullback(t, &ws.dinput[d..d + ew]);
        let dextra = extra
            .iter()
            .enumerate()
            .map(|(e, &s)| {
                let base = d + ew * (1 + e);
                embed_scalar_pullback(s, &ws.dinput[base..base + ew])
            })
            .collect();
        Ok(GradBundle {
            dparams,
            dx,
            dt,
            dextra,
        })
    }

    /// Forward-mode pass: leaves the value in `ws.output()` and the
    /// directional derivative along `tangent` in `ws.jvp_out()`.
    pub fn jvp_ws(
        &self,
        x: &[S],
        t: S,
        extra: &[S],
        tangent: &Tangent<S>,
        ws: &mut MlpWorkspace<S>,
    ) -> Result<()> {
        self.check_inputs(x, extra)?;
        if tangent.dx.len() != self.arch.x_dim {
            return Err(Error::DimensionMismatch {
                expected: self.arch.x_dim,
                got: tangent.dx.len(),
            });
        }
        if tangent.dextra.len() != self.arch.num_extra {
            return Err(Error::DimensionMismatch {
                expected: self.arch.num_extra,
                got: tangent.dextra.len(),
            });
        }
        self.assemble_input(x, t, extra, &mut ws.input);
        self.assemble_tangent(t, extra, tangent, &mut ws.tin);
        self.forward_from_input(ws);

        ws.tacts[0].copy_from_slice(&ws.tin);
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            let (lo, hi) = ws.tacts.split_at_mut(l + 1);
            let t_in = lo[l].as_slice();
            let t_out = &mut hi[0];
            for r in 0..layer.rows {
                let row = &self.data[layer.w + r * layer.cols..layer.w + (r + 1) * layer.cols];
                let tz = dot(row, t_in);
                t_out[r] = if l == last {
                    tz
                } else {
                    self.arch.activation.deriv(ws.zs[l][r], ws.acts[l + 1][r]) * tz
                };
            }
        }
        Ok(())
    }

    /// Directional derivative of the network along `tangent` at
    /// `(x, t, extra)`.
    pub fn jvp(&self, x: &[S], t: S, extra: &[S], tangent: &Tangent<S>) -> Result<Vec<S>> {
        let mut ws = MlpWorkspace::new(&self.arch);
        self.jvp_ws(x, t, extra, tangent, &mut ws)?;
        Ok(ws.jvp_out().to_vec())
    }
}

/// One Adam step over the flat parameter buffer using the gradients of a
/// [`GradBundle`]. `state` must have been created with the network's
/// parameter count.
pub fn adam_update<S: Scalar>(
    params: &mut MlpParams<S>,
    grads: &GradBundle<S>,
    state: &mut crate::optim::AdamState<S>,
    lr: S,
) -> Result<()> {
    state.step(&mut params.data, &grads.dparams, lr)
}
