//! Dataset distillation: the features of a small synthetic training set are
//! the hyperparameters, tuned so a model trained on them fits the real data.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::ad::{Dataset, FlatVector, Layout, Mat, ProgramBuilder};
use crate::bilevel::BilevelProblem;
use crate::error::{Error, Result};
use crate::problems::penalized::{ModelKind, ModelShape};

#[derive(Debug, Clone, PartialEq)]
pub struct DistillationSpec {
    pub classes: usize,
    pub per_class: usize,
    pub dim: usize,
    /// Fixed `½·ridge·‖w‖²` term in the training loss. Softmax regression has
    /// a flat direction (adding a constant to every logit), so without it the
    /// training Hessian is singular.
    pub ridge: f64,
}

impl DistillationSpec {
    pub fn new(classes: usize, per_class: usize, dim: usize) -> Self {
        DistillationSpec {
            classes,
            per_class,
            dim,
            ridge: 1e-2,
        }
    }

    pub fn points(&self) -> usize {
        self.classes * self.per_class
    }

    /// Class of distilled row `r`; rows are grouped by class.
    pub fn label_of(&self, r: usize) -> usize {
        r / self.per_class
    }

    pub fn lambda_layout(&self) -> Arc<Layout> {
        Arc::new(Layout::single("distilled", self.points() * self.dim))
    }

    /// Seeded standard-normal distilled features, scaled by `scale`.
    pub fn init_points(&self, scale: f64, seed: u64) -> FlatVector {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..self.points() * self.dim)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                scale * z
            })
            .collect();
        FlatVector::from_vec(self.lambda_layout(), data).expect("layout length")
    }

    /// Distilled features as a `points × dim` matrix.
    pub fn points_matrix(&self, lambda: &FlatVector) -> Result<Mat<f64>> {
        Mat::from_vec(self.points(), self.dim, lambda.as_slice().to_vec())
    }

    fn validate(&self) -> Result<()> {
        if self.classes < 2 || self.per_class == 0 || self.dim == 0 {
            return Err(Error::Validation(
                "distillation needs at least two classes, one point per class and one feature".into(),
            ));
        }
        if !(self.ridge > 0.0 && self.ridge.is_finite()) {
            return Err(Error::Validation(format!("ridge must be positive, got {}", self.ridge)));
        }
        Ok(())
    }
}

/// Logistic regression trained on the distilled points, validated on all of
/// `labeled`. The returned problem's training split carries only the fixed
/// distilled labels.
pub fn make_distillation(spec: &DistillationSpec, labeled: Dataset, test: Dataset) -> Result<BilevelProblem> {
    spec.validate()?;
    if labeled.is_empty() {
        return Err(Error::Validation("labeled set is empty".into()));
    }
    if labeled.classes() != Some(spec.classes) {
        return Err(Error::Validation(format!(
            "labeled set must have {} classes, has {:?}",
            spec.classes,
            labeled.classes()
        )));
    }
    if labeled.features() != spec.dim || (!test.is_empty() && test.features() != spec.dim) {
        return Err(Error::Dimension(format!(
            "distillation expects {} features, data has {}",
            spec.dim,
            labeled.features()
        )));
    }
    let shape = ModelShape::new(&ModelKind::LogisticRegression, spec.dim, spec.classes);
    let lambda_layout = spec.lambda_layout();
    let weights_layout = shape.layout();

    let labels: Vec<usize> = (0..spec.points()).map(|r| spec.label_of(r)).collect();
    let distilled_labels = Dataset::classification(
        Mat::zeros(spec.points(), 0),
        labels,
        spec.classes,
        "distilled labels",
    )?;

    let mut tb = ProgramBuilder::new(lambda_layout.clone(), weights_layout.clone());
    let x = tb.lambda("distilled", spec.points(), spec.dim)?;
    let y = tb.targets();
    let logits = shape.build(&mut tb, x)?;
    let loss = tb.softmax_cross_entropy(logits, y);
    let mut ridge = None;
    for seg in weights_layout.segments() {
        let w = tb.weights(&seg.name, 1, seg.len)?;
        let sq = tb.mul(w, w);
        let s = tb.sum(sq);
        ridge = Some(match ridge {
            None => s,
            Some(acc) => tb.add(acc, s),
        });
    }
    let ridge = tb.scale(ridge.expect("weights are non-empty"), 0.5 * spec.ridge);
    let out = tb.add(loss, ridge);
    let train_prog = tb.finish(out);

    let mut vb = ProgramBuilder::new(lambda_layout, weights_layout);
    let x = vb.inputs();
    let y = vb.targets();
    let logits = shape.build(&mut vb, x)?;
    let loss = vb.softmax_cross_entropy(logits, y);
    let val_prog = vb.finish_with_logits(loss, Some(logits));

    BilevelProblem::new(
        format!("distill_{}x{}", spec.classes, spec.per_class),
        train_prog,
        val_prog,
        distilled_labels,
        labeled,
        test,
    )
}
