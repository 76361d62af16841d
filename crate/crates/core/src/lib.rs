//! Posterior approximation on the sphere of square-root densities.
//!
//! A target density is approximated by a Gaussian via gradient descent on
//! the spherical Fisher distance (the arccosine of the root-density
//! overlap). The crate also ships the exact Normal-Gamma oracle, classical
//! baselines (Laplace, quadrature alpha-divergence minimizers), and the
//! matrix-calculus and Monte Carlo machinery the descent is built from.

// Validation uses `!(x > 0.0)` deliberately: unlike `x <= 0.0`, it also
// rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baselines;
pub mod conjugate;
pub mod error;
pub mod geometry;
pub mod matops;
pub mod mc;
pub mod optimizer;
pub mod rng;
pub mod simplex;
pub mod special;
pub mod tangent;
pub mod targets;
pub mod types;

pub use error::{GapError, Result};
pub use types::{GaussianModel, OptimizerConfig, ScalarGaussian, TargetDensity};
