use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How the inverse training Hessian is applied to `∂L_V/∂w`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InverseStrategy {
    /// Treat `H` as the identity.
    Identity,
    /// `α·Σ_{j<terms} (I − αH)ʲ`.
    Neumann { terms: usize, alpha: f64 },
    /// Conjugate gradient on `H·u = v`.
    Cg { tol: f64, max_iter: usize },
    /// Dense Hessian assembled from Hessian-vector products, then solved.
    ExactDense,
    /// Differentiate through `steps` SGD steps with step size `alpha`.
    Unrolled { steps: usize, alpha: f64 },
    /// Like `Unrolled`, but only the last `kept` steps are differentiated.
    TruncatedUnrolled { steps: usize, kept: usize, alpha: f64 },
}

impl InverseStrategy {
    pub fn name(&self) -> &'static str {
        match self {
            InverseStrategy::Identity => "identity",
            InverseStrategy::Neumann { .. } => "neumann",
            InverseStrategy::Cg { .. } => "cg",
            InverseStrategy::ExactDense => "exact_dense",
            InverseStrategy::Unrolled { .. } => "unrolled",
            InverseStrategy::TruncatedUnrolled { .. } => "truncated_unrolled",
        }
    }

    /// Iteration budget: Neumann terms, CG iterations or unrolled steps.
    pub fn steps(&self) -> usize {
        match *self {
            InverseStrategy::Identity | InverseStrategy::ExactDense => 0,
            InverseStrategy::Neumann { terms, .. } => terms,
            InverseStrategy::Cg { max_iter, .. } => max_iter,
            InverseStrategy::Unrolled { steps, .. } => steps,
            InverseStrategy::TruncatedUnrolled { kept, .. } => kept,
        }
    }

    /// The same strategy with its iteration budget replaced; strategies
    /// without one are returned unchanged.
    pub fn with_steps(&self, n: usize) -> InverseStrategy {
        match *self {
            InverseStrategy::Neumann { alpha, .. } => InverseStrategy::Neumann { terms: n, alpha },
            InverseStrategy::Cg { tol, .. } => InverseStrategy::Cg { tol, max_iter: n },
            InverseStrategy::Unrolled { alpha, .. } => InverseStrategy::Unrolled { steps: n, alpha },
            InverseStrategy::TruncatedUnrolled { steps, alpha, .. } => InverseStrategy::TruncatedUnrolled {
                steps: steps.max(n),
                kept: n,
                alpha,
            },
            other => other,
        }
    }

    pub fn is_unrolled(&self) -> bool {
        matches!(
            self,
            InverseStrategy::Unrolled { .. } | InverseStrategy::TruncatedUnrolled { .. }
        )
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, x: f64| {
            if x > 0.0 && x.is_finite() {
                Ok(())
            } else {
                Err(Error::Validation(format!("{} {name} must be positive, got {x}", self.name())))
            }
        };
        match *self {
            InverseStrategy::Identity | InverseStrategy::ExactDense => Ok(()),
            InverseStrategy::Neumann { alpha, .. } | InverseStrategy::Unrolled { alpha, .. } => positive("alpha", alpha),
            InverseStrategy::Cg { tol, .. } => positive("tol", tol),
            InverseStrategy::TruncatedUnrolled { steps, kept, alpha } => {
                positive("alpha", alpha)?;
                if kept > steps {
                    return Err(Error::Validation(format!(
                        "truncated_unrolled keeps {kept} of {steps} steps"
                    )));
                }
                Ok(())
            }
        }
    }
}
