//! Deterministic seeded randomness.
//!
//! Everything stochastic in this crate bottoms out here. The generator is a
//! fixed contract, not an implementation detail: pair files store only seeds
//! and rely on every reader reconstructing identical noise vectors, bit for
//! bit, on any platform. Concretely:
//!
//! * 64-bit words come from SplitMix64 (golden-gamma increment, xor-shift
//!   multiply finalizer).
//! * A word `w` maps to the open unit interval as
//!   `u = ((w >> 12) + 0.5) * 2^-52`, which is exactly representable and
//!   never reaches 0 or 1.
//! * Standard normals come from Box–Muller on consecutive word pairs:
//!   `r = sqrt(-2 ln u1)`, `theta = 2*pi*u2`, yielding `r cos theta` then
//!   `r sin theta`.
//!
//! Transcendentals go through [`libm`] so results do not depend on the
//! platform's math library. Derived streams are decorrelated by scrambling
//! the seed with the finalizer rather than by jumping a shared sequence, so
//! any element can be regenerated without state.

pub(crate) const GAMMA: u64 = 0x9E3779B97F4A7C15;

/// SplitMix64 finalizer: invertible avalanche mix of one word.
#[inline]
fn finalize(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

/// One SplitMix64 step taken from state `x`: advance by gamma, finalize.
#[inline]
pub fn mix64(x: u64) -> u64 {
    finalize(x.wrapping_add(GAMMA))
}

/// Sequential SplitMix64 word stream.
#[derive(Clone, Debug)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        SplitMix64 { state: seed }
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GAMMA);
        finalize(self.state)
    }

    /// Uniform draw in the open interval (0, 1).
    #[inline]
    pub fn next_unit(&mut self) -> f64 {
        unit_open(self.next_u64())
    }

    /// Uniform draw in (-1, 1).
    #[inline]
    pub fn next_symmetric(&mut self) -> f64 {
        2.0 * self.next_unit() - 1.0
    }
}

/// Stateless element seed for position `index` of the stream rooted at
/// `seed`. Adjacent indices land in unrelated parts of the mix space.
#[inline]
pub fn derive(seed: u64, index: u64) -> u64 {
    mix64(seed ^ index.wrapping_mul(GAMMA))
}

/// Independent sub-stream root obtained from a master seed and a purpose tag.
#[inline]
pub fn salted(seed: u64, salt: u64) -> u64 {
    mix64(seed ^ salt)
}

/// Map a word to (0, 1): top 52 bits plus a half-ulp offset, exact in f64.
#[inline]
pub fn unit_open(w: u64) -> f64 {
    ((w >> 12) as f64 + 0.5) * 2.0f64.powi(-52)
}

/// Uniform in (0,1) at position `index` of the stream rooted at `seed`.
#[inline]
pub fn unit_at(seed: u64, index: u64) -> f64 {
    unit_open(derive(seed, index))
}

/// Box–Muller transform of two words into two standard normals.
#[inline]
fn normal_pair(w1: u64, w2: u64) -> (f64, f64) {
    let u1 = unit_open(w1);
    let u2 = unit_open(w2);
    let r = (-2.0 * libm::log(u1)).sqrt();
    let theta = std::f64::consts::TAU * u2;
    (r * libm::cos(theta), r * libm::sin(theta))
}

/// The normative noise expansion: `dim` standard normals from one seed.
///
/// This is the function pair files refer to; changing it invalidates every
/// stored pair seed.
pub fn normal_vector(seed: u64, dim: usize) -> Vec<f64> {
    let mut out = vec![0.0; dim];
    normal_fill(seed, &mut out);
    out
}

/// [`normal_vector`] into an existing buffer (same values, no allocation).
pub fn normal_fill(seed: u64, out: &mut [f64]) {
    let mut rng = SplitMix64::new(seed);
    let dim = out.len();
    let mut i = 0;
    while i < dim {
        let (z0, z1) = normal_pair(rng.next_u64(), rng.next_u64());
        out[i] = z0;
        i += 1;
        if i < dim {
            out[i] = z1;
            i += 1;
        }
    }
}
