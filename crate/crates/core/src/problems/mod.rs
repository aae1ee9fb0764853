//! Problem zoo: closed-form quadratics, penalized models, distillation, and
//! the datasets they train on.

pub mod data;
mod distill;
mod penalized;
mod quadratic;

pub use data::{blob_centers, gen_blobs, gen_regression, load_csv, split_fraction, with_label_noise, TargetSpec};
pub use distill::{make_distillation, DistillationSpec};
pub use penalized::{make_penalized, Activation, DecayRegime, ModelKind, ModelShape, PenalizedModelSpec};
pub use quadratic::{exact_quadratic_hypergradient, make_quadratic, QuadraticBilevelSpec};
