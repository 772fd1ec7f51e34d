//! Curvature positivity functionals, Monge-Ampère densities, positivity
//! thresholds and a linearized Hermitian-Yang-Mills toolkit for hermitian
//! holomorphic vector bundles, with a desk-scale continuation solver on flat
//! complex tori.

// `!(x > 0.0)` rejects NaN along with nonpositive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod continuation;
pub mod error;
pub mod field;
pub mod functionals;
pub mod krylov;
pub mod linalg;
pub mod random;
pub mod spectral;
pub mod sphere;
pub mod tensor;
pub mod thresholds;
pub mod ym;

#[cfg(test)]
mod testutil;

pub use error::{Error, Result};
pub use tensor::{CurvatureTensor, EndoHerm, Form11, HermitianMatrix, Mode};
