//! Noise–data couplings for flow-matching generative models via
//! semi-discrete optimal transport.
//!
//! The pipeline this crate implements: solve a semi-discrete transport
//! problem from a standard normal prior onto a weighted dataset
//! ([`sdot`]), materialize the optimal coupling as seed-addressed
//! noise/data pairs ([`pairing`]), train a small velocity-field MLP on
//! those pairs with flow matching ([`flow`] over [`nn`]), and integrate
//! the learned field to generate samples and measure trajectory quality
//! ([`sampler`]).
//!
//! All numerics are generic over [`Scalar`] (`f32` or `f64`); the `f64`
//! instantiations are the defaults and what the binary file formats store.
//! Every random quantity derives from explicit 64-bit seeds ([`rng`]), so
//! runs replay bit for bit.

// Negated comparisons like `!(x > 0)` are load-bearing: they reject NaN,
// which the un-negated `x <= 0` forms would silently accept.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
// Indexed loops in the numeric kernels mirror the subscripted math they
// implement; iterator rewrites obscure the index relationships.
#![allow(clippy::needless_range_loop)]

mod bytes;

pub mod dataset;
pub mod error;
pub mod flow;
pub mod nn;
pub mod optim;
pub mod pairing;
pub mod rng;
pub mod sampler;
pub mod scalar;
pub mod sdot;

pub use dataset::{Dataset, NoisePrior, PriorKind};
pub use error::{Error, Result};
pub use flow::{CouplingMode, LossRecord, TargetField, TrainConfig};
pub use nn::{Activation, GradBundle, MlpArch, MlpParams, MlpWorkspace, Tangent};
pub use optim::{AdamConfig, AdamState};
pub use pairing::{PairRecord, RebalanceReport};
pub use sampler::{ExtraPolicy, Scheme, TrajectoryLog};
pub use scalar::Scalar;
pub use sdot::{DualWeights, MetricsSnapshot, SdotConfig, SdotStage, DEFAULT_MRE_THRESHOLD};

/// `f32` aliases for the core types (the unqualified names default to `f64`).
pub type DatasetF32 = Dataset<f32>;
pub type DualWeightsF32 = DualWeights<f32>;
pub type SdotConfigF32 = SdotConfig<f32>;
