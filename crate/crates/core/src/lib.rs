//! Simulation and estimation of heterogeneous interacting particle systems on
//! networks.
//!
//! Agents evolve under
//! `dX^i = sum_{j != i} a_ij Phi_{kappa_ij}(X^j - X^i) dt + sigma dW^i`
//! where `a` is a row-normalized weight matrix, `kappa` assigns one of `Q`
//! radial kernels to every ordered pair, and each kernel is a linear
//! combination of `K` basis functions. The estimator recovers `(a, kappa, c)`
//! from trajectories in three stages:
//!
//! 1. [`sensing::als_fit`]: low-rank matrix sensing of the embedding
//!    `Z = [a_ij c^(kappa_ij)]`.
//! 2. [`cluster`]: support thresholding and spherical k-means on the rows of
//!    `Z` to recover `kappa`.
//! 3. [`factorize`] and [`refine`]: split `Z` into `a` and `c`, then polish by
//!    alternating least squares with `kappa` frozen.
//!
//! Agent indices are 0-based; type labels are 1-based with 0 reserved for
//! "no type" (diagonal entries and pairs declared absent).

// Negated comparisons below are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod basis;
pub mod cluster;
pub mod config;
pub mod error;
pub mod experiment;
pub mod factorize;
pub mod io;
pub mod linalg;
pub mod metrics;
pub mod model;
pub mod pipeline;
pub mod presets;
pub mod refine;
pub mod rng;
pub mod sensing;
pub mod simulate;

pub use error::{Error, Result};
