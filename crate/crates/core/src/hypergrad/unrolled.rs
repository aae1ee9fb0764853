use crate::ad::FlatVector;
use crate::bilevel::BilevelProblem;
use crate::error::{Error, Result};

/// Exact derivative of `L_V(λ, w_steps(λ))` where `w_{k+1} = w_k − α∇_w L_T(λ, w_k)`.
pub fn unrolled_hypergradient(
    problem: &BilevelProblem,
    lambda: &FlatVector,
    w0: &FlatVector,
    steps: usize,
    alpha: f64,
    seed: u64,
) -> Result<FlatVector> {
    let (direct, indirect) = unrolled_parts(problem, lambda, w0, steps, steps, alpha, seed)?;
    Ok(direct.add(&indirect))
}

/// As [`unrolled_hypergradient`], but back-propagates through only the last
/// `kept` of the `steps` iterates.
pub fn truncated_unrolled_hypergradient(
    problem: &BilevelProblem,
    lambda: &FlatVector,
    w0: &FlatVector,
    steps: usize,
    kept: usize,
    alpha: f64,
    seed: u64,
) -> Result<FlatVector> {
    if kept > steps {
        return Err(Error::Validation(format!("cannot keep {kept} of {steps} steps")));
    }
    let (direct, indirect) = unrolled_parts(problem, lambda, w0, steps, kept, alpha, seed)?;
    Ok(direct.add(&indirect))
}

/// Direct and indirect parts of the (truncated) unrolled hypergradient.
///
/// SGD step `k` uses seed `seed + k`, matching a fresh inner optimizer.
pub(crate) fn unrolled_parts(
    problem: &BilevelProblem,
    lambda: &FlatVector,
    w0: &FlatVector,
    steps: usize,
    kept: usize,
    alpha: f64,
    seed: u64,
) -> Result<(FlatVector, FlatVector)> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::Validation(format!("unrolled step size must be positive, got {alpha}")));
    }
    let limit = problem.limits.max_stored_iterates;
    if kept > limit {
        return Err(Error::Capacity {
            what: "stored unrolled iterates",
            needed: kept,
            limit,
        });
    }
    let first_kept = steps - kept.min(steps);
    let mut w = w0.clone();
    let mut stored = Vec::with_capacity(kept);
    for k in 0..steps {
        let step_seed = seed.wrapping_add(k as u64);
        if k >= first_kept {
            stored.push(w.clone());
        }
        let g = problem.train_loss.grad_w(lambda, &w, &problem.train_data, step_seed)?;
        w.axpy(-alpha, &g);
        if !w.is_finite() {
            return Err(Error::NonFiniteStep {
                step: k,
                what: "unrolled weights".into(),
            });
        }
    }
    let gv = problem.val_loss.gradients(lambda, &w, &problem.val_data, seed)?;
    let mut a = gv.weights;
    let mut indirect = FlatVector::zeros(lambda.layout().clone());
    for (offset, wk) in stored.iter().enumerate().rev() {
        let k = first_kept + offset;
        let so = problem
            .train_loss
            .second_order(lambda, wk, &problem.train_data, seed.wrapping_add(k as u64), &a)?;
        indirect.axpy(-alpha, &so.mixed);
        a.axpy(-alpha, &so.hvp);
    }
    Ok((gv.lambda, indirect))
}
