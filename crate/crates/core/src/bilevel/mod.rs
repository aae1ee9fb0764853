//! The inner problem: training weights for fixed hyperparameters.

mod optimizer;

use std::sync::Arc;

use crate::ad::{Dataset, FlatVector, Layout, LossProgram, Mat};
use crate::error::{Error, Result};

pub use optimizer::{optimizer_step, OptimizerState, Rule};

/// Size limits for the memory-hungry hypergradient routes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverLimits {
    /// Largest weight dimension for which a dense Hessian is assembled.
    pub dense_max_dim: usize,
    /// Most weight iterates unrolled differentiation may store.
    pub max_stored_iterates: usize,
}

impl Default for SolverLimits {
    fn default() -> Self {
        SolverLimits {
            dense_max_dim: 2000,
            max_stored_iterates: 10_000,
        }
    }
}

/// A training loss `L_T(λ, w)` on the training split and a validation loss
/// `L_V(λ, w)` on the validation split, sharing hyperparameter and weight
/// layouts.
#[derive(Debug, Clone)]
pub struct BilevelProblem {
    pub name: String,
    pub train_loss: Arc<LossProgram>,
    pub val_loss: Arc<LossProgram>,
    pub train_data: Arc<Dataset>,
    pub val_data: Arc<Dataset>,
    pub test_data: Arc<Dataset>,
    pub limits: SolverLimits,
}

/// Losses and (for classifiers) accuracies at one `(λ, w)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    pub train_loss: f64,
    pub val_loss: f64,
    /// Absent when there is no test split.
    pub test_loss: Option<f64>,
    pub train_accuracy: Option<f64>,
    pub val_accuracy: Option<f64>,
    pub test_accuracy: Option<f64>,
}

impl BilevelProblem {
    pub fn new(
        name: impl Into<String>,
        train_loss: LossProgram,
        val_loss: LossProgram,
        train_data: Dataset,
        val_data: Dataset,
        test_data: Dataset,
    ) -> Result<Self> {
        if train_loss.lambda_layout() != val_loss.lambda_layout()
            || train_loss.weights_layout() != val_loss.weights_layout()
        {
            return Err(Error::Validation(
                "training and validation programs disagree on slot layouts".into(),
            ));
        }
        Ok(BilevelProblem {
            name: name.into(),
            train_loss: Arc::new(train_loss),
            val_loss: Arc::new(val_loss),
            train_data: Arc::new(train_data),
            val_data: Arc::new(val_data),
            test_data: Arc::new(test_data),
            limits: SolverLimits::default(),
        })
    }

    pub fn lambda_layout(&self) -> &Arc<Layout> {
        self.train_loss.lambda_layout()
    }

    pub fn weights_layout(&self) -> &Arc<Layout> {
        self.train_loss.weights_layout()
    }

    pub fn train_value(&self, lambda: &FlatVector, weights: &FlatVector, seed: u64) -> Result<f64> {
        self.train_loss.eval(lambda, weights, &self.train_data, seed)
    }

    pub fn val_value(&self, lambda: &FlatVector, weights: &FlatVector, seed: u64) -> Result<f64> {
        self.val_loss.eval(lambda, weights, &self.val_data, seed)
    }

    /// Fraction of rows of `data` the validation program's prediction node
    /// classifies correctly; `None` for regression problems.
    pub fn accuracy(&self, lambda: &FlatVector, weights: &FlatVector, data: &Dataset) -> Result<Option<f64>> {
        let Some(labels) = data.labels() else { return Ok(None) };
        if !self.val_loss.has_logits() || data.is_empty() {
            return Ok(None);
        }
        let logits = self.val_loss.predict(lambda, weights, data, 0)?;
        Ok(Some(accuracy(&logits, labels)))
    }

    pub fn metrics(&self, lambda: &FlatVector, weights: &FlatVector, seed: u64) -> Result<Metrics> {
        let train_loss = self.train_value(lambda, weights, seed)?;
        let val_loss = self.val_value(lambda, weights, seed)?;
        let test_loss = if self.test_data.is_empty() && !self.val_data.is_empty() {
            None
        } else {
            Some(self.val_loss.eval(lambda, weights, &self.test_data, seed)?)
        };
        // The training split only has a meaningful prediction when it shares
        // the validation split's feature space.
        let train_accuracy = if self.train_data.features() == self.val_data.features() {
            self.accuracy(lambda, weights, &self.train_data)?
        } else {
            None
        };
        Ok(Metrics {
            train_loss,
            val_loss,
            test_loss,
            train_accuracy,
            val_accuracy: self.accuracy(lambda, weights, &self.val_data)?,
            test_accuracy: self.accuracy(lambda, weights, &self.test_data)?,
        })
    }
}

/// Fraction of rows whose argmax column equals the label.
pub fn accuracy(logits: &Mat<f64>, labels: &[usize]) -> f64 {
    if labels.is_empty() {
        return f64::NAN;
    }
    let correct = (0..logits.rows)
        .filter(|&r| {
            let row = logits.row(r);
            let best = row
                .iter()
                .enumerate()
                .fold(0, |best, (c, &x)| if x > row[best] { c } else { best });
            best == labels[r]
        })
        .count();
    correct as f64 / labels.len() as f64
}

/// Result of an inner optimization run.
#[derive(Debug, Clone)]
pub struct InnerRun {
    pub weights: FlatVector,
    pub optimizer: OptimizerState,
    /// `L_T` before each step.
    pub trace: Vec<f64>,
}

fn at_step(step: usize, e: Error) -> Error {
    if e.is_numeric() {
        Error::NonFiniteStep {
            step,
            what: e.to_string(),
        }
    } else {
        e
    }
}

/// Runs `steps` optimizer steps on `L_T(λ, ·)` starting from `w0`.
///
/// Step `k` of the run uses seed `seed + (steps already taken by opt)`, so
/// splitting a run in two and threading the optimizer state reproduces the
/// single run exactly.
pub fn inner_optimize(
    problem: &BilevelProblem,
    lambda: &FlatVector,
    w0: &FlatVector,
    steps: usize,
    opt: OptimizerState,
    seed: u64,
) -> Result<InnerRun> {
    if steps == 0 {
        return Err(Error::Validation("inner optimization needs at least one step".into()));
    }
    let mut w = w0.clone();
    let mut opt = opt;
    let mut trace = Vec::with_capacity(steps);
    for k in 0..steps {
        let step_seed = seed.wrapping_add(opt.steps_taken());
        let g = problem
            .train_loss
            .gradients(lambda, &w, &problem.train_data, step_seed)
            .map_err(|e| at_step(k, e))?;
        trace.push(g.value);
        opt.step(&mut w, &g.weights).map_err(|e| at_step(k, e))?;
        if !w.is_finite() {
            return Err(Error::NonFiniteStep {
                step: k,
                what: "weights".into(),
            });
        }
    }
    Ok(InnerRun {
        weights: w,
        optimizer: opt,
        trace,
    })
}

/// `‖∂L_T/∂w‖₂` at `(λ, w)`: zero exactly at stationary points of the inner
/// problem.
pub fn fixed_point_residual(problem: &BilevelProblem, lambda: &FlatVector, weights: &FlatVector, seed: u64) -> Result<f64> {
    Ok(problem
        .train_loss
        .grad_w(lambda, weights, &problem.train_data, seed)?
        .norm())
}
