//! Parameter and linear-operator estimation for general-order ODE systems
//! from noisy trajectory samples.
//!
//! The numerical kernels ([`greens`], [`linalg`], [`quadrature`]) are generic
//! over the scalar type; the statistical pipeline runs in `f64`.

// NaN-rejecting guards are written as negated comparisons on purpose.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod discover;
pub mod error;
pub mod experiment;
pub mod greens;
pub mod infer;
pub mod io;
pub mod linalg;
pub mod matching;
pub mod pipeline;
pub mod quadrature;
pub mod scalar;
pub mod smooth;
pub mod systems;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type OperatorKernel64 = greens::OperatorKernel<f64>;
pub type OperatorKernel32 = greens::OperatorKernel<f32>;
