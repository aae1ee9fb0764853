//! Reverse-mode automatic differentiation with second-order products.

mod dataset;
mod flat;
mod gradcheck;
mod matrix;
mod program;
mod scalar;
mod sweep;

pub use dataset::Dataset;
pub use flat::{cosine_similarity, dot, l2_distance, norm, FlatVector, Layout, Segment};
pub use gradcheck::{check_grad_fd, GradCheckReport};
pub use matrix::Mat;
pub use program::{LossProgram, ProgramBuilder, Var};
pub use scalar::{Dual, Scalar};
pub use sweep::{Gradients, SecondOrder};
