//! Desk-scale laboratory for temporal-aware trajectory self-distillation of
//! masked diffusion language models.
//!
//! The crate builds everything from first principles on top of a small
//! reverse-mode autodiff tape: a tiny bidirectional denoiser, Bernoulli
//! corruption, synthetic tasks with exact oracles, privileged teacher
//! rollouts, the near/distant dual-loss distillation objective, entropy
//! threshold parallel decoding, and the measurement suite (area under the
//! accuracy-parallelism curve, factorization gap, factorized-posterior
//! identity checks).
//!
//! Numerics are generic over the scalar type; the rest of the crate works
//! in `f64` through the aliases below.

pub mod config;
pub mod corruption;
pub mod decoder;
pub mod distill;
pub mod metrics;
pub mod model;
pub mod numerics;
pub mod tasks;
pub mod trajectory;

/// Concrete scalar used by everything outside `numerics`.
pub type Real = f64;
pub type Tensor = numerics::Tensor<Real>;
pub type Tape = numerics::Tape<Real>;
pub type Gradients = numerics::Gradients<Real>;

pub use numerics::Var;
