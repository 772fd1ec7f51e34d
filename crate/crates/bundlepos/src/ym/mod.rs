//! Linearization of the Monge-Ampère-Yang-Mills system: distortion
//! constants, principal symbols, the matrix-logarithm differential and the
//! exact Jacobian-vector product of the discrete operator.

pub mod logdiff;
pub mod operator;
pub mod symbol;

pub use logdiff::{log_gamma, log_matrix_differential};
pub use operator::{linearized_curvature, linearized_q, Friction, Geometry, YMParams, YmPoint};
pub use symbol::{distortion, ellipticity_certificate, symbol_operator, xi_net, EllipticityCertificate, SymbolOperator};
