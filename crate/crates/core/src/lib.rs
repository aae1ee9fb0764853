//! Gradient-based hyperparameter optimization through the implicit function
//! theorem.
//!
//! The crate is organized bottom up:
//!
//! * [`ad`]: loss programs with gradients, Hessian-vector products and
//!   mixed-partial products.
//! * [`bilevel`]: the inner weight-optimization loop.
//! * [`hypergrad`]: inverse-Hessian-vector-product strategies, hypergradients,
//!   unrolled differentiation and the outer loop.
//! * [`problems`]: problems with closed-form oracles and dataset generators.
//! * [`expcli`]: experiment configs, commands and CSV output.

pub mod ad;
pub mod bilevel;
pub mod error;
pub mod expcli;
pub mod hypergrad;
pub mod problems;


pub use error::{Error, Result};
