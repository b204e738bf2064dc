//! Directed polymer in a Gaussian random environment that is white in time and
//! correlated in space.
//!
//! The crate covers the whole numerical pipeline around localization of the
//! polymer endpoint: kernels and block covariances ([`kernel`]), synthesis and
//! shifting of environments ([`environment`]), path ensembles and partition
//! functions ([`polymer`]), the localization vector and its Neumann-series
//! solution ([`localization`]), Girsanov path shifts ([`girsanov`]), and the
//! wandering-exponent experiments ([`experiments`]).

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod environment;
pub mod error;
pub mod experiments;
pub mod geometry;
pub mod girsanov;
pub mod kernel;
pub mod localization;
pub mod polymer;
pub mod quadrature;
pub mod rng;
pub mod special;
pub mod stats;

pub use error::{Error, Result};
pub use geometry::BlockGeometry;
pub use kernel::{block_covariance, check_hypothesis, BlockCovariance, Kernel};
