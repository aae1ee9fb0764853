//! Hypergradients of the validation loss through the inner optimum.
//!
//! At an approximately stationary `w`, the implicit function theorem gives
//!
//! ```text
//! dL_V/dλ = ∂L_V/∂λ − (∂L_V/∂w)·H⁻¹·∂²L_T/∂w∂λ,   H = ∂²L_T/∂w∂w
//! ```
//!
//! The first term is the direct gradient, the second the indirect one. The
//! strategies in [`InverseStrategy`] differ only in how `H⁻¹` is applied.

mod accuracy;
mod ihvp;
mod outer;
mod strategy;
mod unrolled;

use crate::ad::FlatVector;
use crate::bilevel::{fixed_point_residual, BilevelProblem};
use crate::error::Result;

pub use accuracy::{hypergrad_accuracy, AccuracyRow};
pub use ihvp::{
    approx_ihvp, dense_hessian, dense_inverse, dense_mixed, implicit_best_response_jacobian,
    neumann_inverse_matrix, newton_fixed_point, IhvpDiagnostics, NEUMANN_DIVERGENCE_FACTOR,
};
pub use outer::{run_ho, run_ho_observed, HoRun, HoSettings, RunRecord};
pub use strategy::InverseStrategy;
pub use unrolled::{truncated_unrolled_hypergradient, unrolled_hypergradient};

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Diagnostics {
    pub ihvp_iterations: usize,
    /// `‖H·u − ∂L_V/∂w‖`; absent for unrolled strategies, which never form `u`.
    pub ihvp_residual_norm: Option<f64>,
    /// `‖∂L_T/∂w‖` at the weights the hypergradient was taken at.
    pub fixed_point_residual: f64,
    pub diverged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HypergradReport {
    pub direct: FlatVector,
    pub indirect: FlatVector,
    pub total: FlatVector,
    pub diagnostics: Diagnostics,
}

/// Hypergradient at `(λ, w)`. Unrolled strategies treat `w` as the starting
/// point of the unrolled run.
pub fn hypergradient(
    problem: &BilevelProblem,
    lambda: &FlatVector,
    weights: &FlatVector,
    strategy: &InverseStrategy,
    seed: u64,
) -> Result<HypergradReport> {
    strategy.validate()?;
    let residual = fixed_point_residual(problem, lambda, weights, seed)?;
    let (direct, indirect, diagnostics) = match *strategy {
        InverseStrategy::Unrolled { steps, alpha } | InverseStrategy::TruncatedUnrolled { steps, alpha, .. } => {
            let kept = match *strategy {
                InverseStrategy::TruncatedUnrolled { kept, .. } => kept,
                _ => steps,
            };
            let (direct, indirect) = unrolled::unrolled_parts(problem, lambda, weights, steps, kept, alpha, seed)?;
            let diagnostics = Diagnostics {
                ihvp_iterations: kept,
                ihvp_residual_norm: None,
                fixed_point_residual: residual,
                diverged: false,
            };
            (direct, indirect, diagnostics)
        }
        _ => {
            let gv = problem
                .val_loss
                .gradients(lambda, weights, &problem.val_data, seed)?;
            let (indirect, ihvp_diag) = if gv.weights.as_slice().iter().all(|&x| x == 0.0) {
                (FlatVector::zeros(lambda.layout().clone()), IhvpDiagnostics::default())
            } else {
                let (u, d) = approx_ihvp(strategy, problem, lambda, weights, &gv.weights, seed)?;
                let mixed = problem
                    .train_loss
                    .mixed_vjp(lambda, weights, &problem.train_data, seed, &u)?;
                (mixed.scaled(-1.0), d)
            };
            let diagnostics = Diagnostics {
                ihvp_iterations: ihvp_diag.iterations,
                ihvp_residual_norm: Some(ihvp_diag.residual_norm),
                fixed_point_residual: residual,
                diverged: ihvp_diag.diverged,
            };
            (gv.lambda, indirect, diagnostics)
        }
    };
    let total = direct.add(&indirect);
    Ok(HypergradReport {
        direct,
        indirect,
        total,
        diagnostics,
    })
}
