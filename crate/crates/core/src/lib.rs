//! Certification engine for randomized smoothing with anisotropic noise.
//!
//! The crate turns any isotropic-noise robustness certificate into an
//! anisotropic one by a linear change of variables, computes certified
//! radii and region volumes for five noise families under l1/l2/linf
//! threat models, and trains small noise-parameter generators that pick
//! per-dimension noise scales and offsets.
//!
//! The numeric core (`cert_math`, `stats`, `distributions`, pattern maps)
//! is generic over the scalar type through [`real::Real`]; the engine,
//! the neural-network kernel and all I/O instantiate it at `f64`. Concrete
//! aliases for the common types live at the crate root.

// Index-based loops for tensor/matrix kernels where they read better
// than iterator chains.
#![allow(clippy::needless_range_loop)]
// Validation uses negated comparisons (`!(x > 0)`) so NaN is rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cert_math;
pub mod data_io;
pub mod distributions;
pub mod linalg;
pub mod nn;
pub mod npg;
pub mod oracle;
pub mod real;
pub mod rng;
pub mod smoothing;
pub mod stats;

pub use real::Real;

/// Default scalar type used by the smoothing engine and the CLI.
pub type Scalar = f64;

pub type NoiseSpec = distributions::NoiseSpec<Scalar>;
pub type AnisoParams = distributions::AnisoParams<Scalar>;
pub type ProbBounds = cert_math::ProbBounds<Scalar>;
pub type Certificate = cert_math::Certificate<Scalar>;
pub type PatternSpec = npg::PatternSpec<Scalar>;
