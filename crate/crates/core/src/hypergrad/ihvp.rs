use nalgebra::{DMatrix, DVector};

use crate::ad::FlatVector;
use crate::bilevel::BilevelProblem;
use crate::error::{Error, Result};
use crate::hypergrad::InverseStrategy;

/// Growth of `‖v‖` over its initial norm at which a Neumann series is
/// declared divergent.
pub const NEUMANN_DIVERGENCE_FACTOR: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct IhvpDiagnostics {
    /// Hessian-vector products spent.
    pub iterations: usize,
    /// `‖H·u − v‖₂` for the returned `u`.
    pub residual_norm: f64,
    pub diverged: bool,
}

struct Hvp<'a> {
    problem: &'a BilevelProblem,
    lambda: &'a FlatVector,
    weights: &'a FlatVector,
    seed: u64,
}

impl Hvp<'_> {
    fn apply(&self, v: &FlatVector) -> Result<FlatVector> {
        self.problem
            .train_loss
            .hvp(self.lambda, self.weights, &self.problem.train_data, self.seed, v)
    }
}

/// Approximates `H⁻¹v` (equivalently `vᵀH⁻¹`, since `H` is symmetric) with
/// `H = ∂²L_T/∂w∂w` at `(λ, w)`.
pub fn approx_ihvp(
    strategy: &InverseStrategy,
    problem: &BilevelProblem,
    lambda: &FlatVector,
    weights: &FlatVector,
    v: &FlatVector,
    seed: u64,
) -> Result<(FlatVector, IhvpDiagnostics)> {
    strategy.validate()?;
    if v.len() != weights.len() {
        return Err(Error::Dimension(format!(
            "ihvp direction has {} entries, weights have {}",
            v.len(),
            weights.len()
        )));
    }
    let h = Hvp {
        problem,
        lambda,
        weights,
        seed,
    };
    let (u, iterations, diverged) = match *strategy {
        InverseStrategy::Identity => (v.clone(), 0, false),
        InverseStrategy::Neumann { terms, alpha } => neumann(&h, v, terms, alpha)?,
        InverseStrategy::Cg { tol, max_iter } => {
            let (u, it) = conjugate_gradient(&h, v, tol, max_iter)?;
            (u, it, false)
        }
        InverseStrategy::ExactDense => {
            let hm = dense_hessian(problem, lambda, weights, seed)?;
            let x = solve_dense(&hm, &DVector::from_column_slice(v.as_slice()))?;
            (FlatVector::from_vec(v.layout().clone(), x.iter().copied().collect())?, weights.len(), false)
        }
        InverseStrategy::Unrolled { .. } | InverseStrategy::TruncatedUnrolled { .. } => {
            return Err(Error::Validation(format!(
                "{} does not produce an inverse-Hessian-vector product",
                strategy.name()
            )))
        }
    };
    let residual_norm = if u.is_finite() {
        h.apply(&u)?.sub(v).norm()
    } else {
        f64::INFINITY
    };
    Ok((
        u,
        IhvpDiagnostics {
            iterations,
            residual_norm,
            diverged,
        },
    ))
}

/// Runs the recurrence `v ← v − α·H·v`, `p ← p + v`, returning `α·p`.
fn neumann(h: &Hvp, v0: &FlatVector, terms: usize, alpha: f64) -> Result<(FlatVector, usize, bool)> {
    if terms == 0 {
        return Ok((FlatVector::zeros(v0.layout().clone()), 0, false));
    }
    let limit = NEUMANN_DIVERGENCE_FACTOR * v0.norm();
    let mut v = v0.clone();
    let mut p = v0.clone();
    let mut iterations = 0;
    let mut diverged = false;
    for _ in 1..terms {
        let hv = h.apply(&v)?;
        v.axpy(-alpha, &hv);
        iterations += 1;
        if !v.is_finite() || v.norm() > limit {
            diverged = true;
            break;
        }
        p.axpy(1.0, &v);
    }
    p.scale(alpha);
    Ok((p, iterations, diverged))
}

/// Conjugate gradient for `H·u = b` from `u = 0`, stopping once
/// `‖r‖ ≤ tol·‖b‖` or after `max_iter` products.
fn conjugate_gradient(h: &Hvp, b: &FlatVector, tol: f64, max_iter: usize) -> Result<(FlatVector, usize)> {
    let mut u = FlatVector::zeros(b.layout().clone());
    let b_norm = b.norm();
    if b_norm == 0.0 {
        return Ok((u, 0));
    }
    let mut r = b.clone();
    let mut p = r.clone();
    let mut rr = r.dot(&r);
    let mut iterations = 0;
    while iterations < max_iter && rr.sqrt() > tol * b_norm {
        let hp = h.apply(&p)?;
        iterations += 1;
        let curvature = p.dot(&hp);
        if !(curvature > 0.0) {
            // Not positive definite along p; further steps are meaningless.
            break;
        }
        let step = rr / curvature;
        u.axpy(step, &p);
        r.axpy(-step, &hp);
        let rr_next = r.dot(&r);
        let beta = rr_next / rr;
        rr = rr_next;
        p = r.zip_map(&p, |ri, pi| ri + beta * pi);
    }
    Ok((u, iterations))
}

fn check_dense_cap(problem: &BilevelProblem, needed: usize) -> Result<()> {
    let limit = problem.limits.dense_max_dim;
    if needed > limit {
        return Err(Error::Capacity {
            what: "dense Hessian dimension",
            needed,
            limit,
        });
    }
    Ok(())
}

/// `∂²L_T/∂w∂w` at `(λ, w)`, one Hessian-vector product per column, then
/// symmetrized to remove rounding asymmetry.
pub fn dense_hessian(problem: &BilevelProblem, lambda: &FlatVector, weights: &FlatVector, seed: u64) -> Result<DMatrix<f64>> {
    let m = weights.len();
    check_dense_cap(problem, m)?;
    let h = Hvp {
        problem,
        lambda,
        weights,
        seed,
    };
    let mut hm = DMatrix::zeros(m, m);
    for j in 0..m {
        let col = h.apply(&FlatVector::basis(weights.layout().clone(), j))?;
        hm.column_mut(j).copy_from_slice(col.as_slice());
    }
    Ok((&hm + hm.transpose()) * 0.5)
}

/// `∂²L_T/∂w∂λ` at `(λ, w)` as a `dim(w) × dim(λ)` matrix.
pub fn dense_mixed(problem: &BilevelProblem, lambda: &FlatVector, weights: &FlatVector, seed: u64) -> Result<DMatrix<f64>> {
    let (m, n) = (weights.len(), lambda.len());
    check_dense_cap(problem, m)?;
    let mut mm = DMatrix::zeros(m, n);
    for i in 0..m {
        let row = problem.train_loss.mixed_vjp(
            lambda,
            weights,
            &problem.train_data,
            seed,
            &FlatVector::basis(weights.layout().clone(), i),
        )?;
        mm.row_mut(i).copy_from_slice(row.as_slice());
    }
    Ok(mm)
}

/// Best-response Jacobian `∂w*/∂λ = −H⁻¹·∂²L_T/∂w∂λ` by dense solves.
pub fn implicit_best_response_jacobian(
    problem: &BilevelProblem,
    lambda: &FlatVector,
    weights: &FlatVector,
    seed: u64,
) -> Result<DMatrix<f64>> {
    let h = dense_hessian(problem, lambda, weights, seed)?;
    let mixed = dense_mixed(problem, lambda, weights, seed)?;
    let lu = h.lu();
    lu.solve(&(-mixed))
        .ok_or_else(|| Error::Numeric("training Hessian is singular".into()))
}

fn solve_dense(h: &DMatrix<f64>, v: &DVector<f64>) -> Result<DVector<f64>> {
    let x = h
        .clone()
        .lu()
        .solve(v)
        .ok_or_else(|| Error::Numeric("training Hessian is singular".into()))?;
    if x.iter().all(|a| a.is_finite()) {
        Ok(x)
    } else {
        Err(Error::Numeric("dense Hessian solve produced non-finite values".into()))
    }
}

/// The matrix `α·Σ_{j<terms}(I − αH)ʲ` that the Neumann strategy applies.
pub fn neumann_inverse_matrix(h: &DMatrix<f64>, terms: usize, alpha: f64) -> DMatrix<f64> {
    let m = h.nrows();
    let step = DMatrix::identity(m, m) - h * alpha;
    let mut power = DMatrix::identity(m, m);
    let mut sum = DMatrix::zeros(m, m);
    for _ in 0..terms {
        sum += &power;
        power = &step * power;
    }
    sum * alpha
}

/// `H⁻¹` by dense inversion.
pub fn dense_inverse(h: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    h.clone()
        .try_inverse()
        .ok_or_else(|| Error::Numeric("training Hessian is singular".into()))
}

/// Newton iterations `w ← w − H⁻¹∇_w L_T` until `‖∇_w L_T‖ ≤ tol`. Used to
/// reach a tight inner optimum for problems under the dense cap.
pub fn newton_fixed_point(
    problem: &BilevelProblem,
    lambda: &FlatVector,
    w0: &FlatVector,
    tol: f64,
    max_iter: usize,
    seed: u64,
) -> Result<FlatVector> {
    let mut w = w0.clone();
    for _ in 0..max_iter {
        let g = problem.train_loss.grad_w(lambda, &w, &problem.train_data, seed)?;
        if g.norm() <= tol {
            return Ok(w);
        }
        let h = dense_hessian(problem, lambda, &w, seed)?;
        let step = solve_dense(&h, &DVector::from_column_slice(g.as_slice()))?;
        for (wi, si) in w.as_mut_slice().iter_mut().zip(step.iter()) {
            *wi -= si;
        }
    }
    let residual = problem.train_loss.grad_w(lambda, &w, &problem.train_data, seed)?.norm();
    if residual <= tol {
        Ok(w)
    } else {
        Err(Error::Numeric(format!(
            "Newton iterations stalled at residual {residual:e} (target {tol:e})"
        )))
    }
}
