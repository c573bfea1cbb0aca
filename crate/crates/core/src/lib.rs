//! Nonlinear opinion dynamics on graphs: kernels, integrators, spectral
//! tools, attention-built adjacencies and a small training loop.

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod attention;
pub mod error;
pub mod exec;
pub mod fixtures;
pub mod graph;
pub mod integrator;
pub mod kernels;
pub mod matrix;
pub mod spectral;
pub mod train;
pub mod verify;

pub use error::{Error, Result};
pub use exec::Exec;
pub use graph::{laplacian, row_normalize, Graph};
pub use matrix::Matrix;
