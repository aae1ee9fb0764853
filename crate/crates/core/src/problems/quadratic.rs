//! Quadratic bilevel problems with closed-form best responses.
//!
//! `L_T(λ, w) = ½wᵀAw + wᵀ(Bλ + c)` and `L_V(λ, w) = ½‖w − t‖²`, so
//! `w*(λ) = −A⁻¹(Bλ + c)` and every hypergradient quantity has a dense
//! linear-algebra expression.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::ad::{Dataset, FlatVector, Layout, Mat, ProgramBuilder};
use crate::bilevel::BilevelProblem;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticBilevelSpec {
    /// SPD, `m×m`.
    pub a: DMatrix<f64>,
    /// `m×n`.
    pub b: DMatrix<f64>,
    pub c: DVector<f64>,
    /// Validation target.
    pub t: DVector<f64>,
}

impl QuadraticBilevelSpec {
    /// `A = I`, `B = I`, `c = 0`, `t = 0` in `n` dimensions.
    pub fn identity(n: usize) -> Self {
        QuadraticBilevelSpec {
            a: DMatrix::identity(n, n),
            b: DMatrix::identity(n, n),
            c: DVector::zeros(n),
            t: DVector::zeros(n),
        }
    }

    /// Seeded random instance with `A = GᵀG/m + ½I`.
    pub fn random(m: usize, n: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut normal = || -> f64 { StandardNormal.sample(&mut rng) };
        let g = DMatrix::from_fn(m, m, |_, _| normal());
        let a = (g.transpose() * &g) / m as f64 + DMatrix::identity(m, m) * 0.5;
        let b = DMatrix::from_fn(m, n, |_, _| normal());
        let c = DVector::from_fn(m, |_, _| normal());
        let t = DVector::from_fn(m, |_, _| normal());
        QuadraticBilevelSpec { a, b, c, t }
    }

    pub fn weights_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn lambda_dim(&self) -> usize {
        self.b.ncols()
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.a.nrows();
        if self.a.ncols() != m || self.b.nrows() != m || self.c.len() != m || self.t.len() != m {
            return Err(Error::Validation(format!(
                "quadratic spec shapes disagree: A {}x{}, B {}x{}, c {}, t {}",
                self.a.nrows(),
                self.a.ncols(),
                self.b.nrows(),
                self.b.ncols(),
                self.c.len(),
                self.t.len()
            )));
        }
        let scale = self.a.amax().max(1.0);
        if (&self.a - self.a.transpose()).amax() > 1e-12 * scale {
            return Err(Error::Validation("A is not symmetric".into()));
        }
        let eig = self.a.clone().symmetric_eigenvalues();
        if eig.min() <= 0.0 {
            return Err(Error::Validation(format!(
                "A is not positive definite (min eigenvalue {})",
                eig.min()
            )));
        }
        Ok(())
    }

    /// Extreme eigenvalues of the training Hessian `A`.
    pub fn hessian_spectrum(&self) -> (f64, f64) {
        let eig = self.a.clone().symmetric_eigenvalues();
        (eig.min(), eig.max())
    }

    pub fn lambda_layout(&self) -> Arc<Layout> {
        Arc::new(Layout::single("lambda", self.lambda_dim()))
    }

    pub fn weights_layout(&self) -> Arc<Layout> {
        Arc::new(Layout::single("w", self.weights_dim()))
    }

    /// Best-response Jacobian `∂w*/∂λ = −A⁻¹B`.
    pub fn best_response_jacobian(&self) -> Result<DMatrix<f64>> {
        let chol = self
            .a
            .clone()
            .cholesky()
            .ok_or_else(|| Error::Validation("A is not positive definite".into()))?;
        Ok(-chol.solve(&self.b))
    }

    /// Hyperparameters minimizing `L_V(λ, w*(λ))`, by least squares on
    /// `‖A⁻¹Bλ + A⁻¹c + t‖`. Requires `B` of full column rank.
    pub fn optimal_lambda(&self) -> Result<DVector<f64>> {
        let chol = self
            .a
            .clone()
            .cholesky()
            .ok_or_else(|| Error::Validation("A is not positive definite".into()))?;
        let j = chol.solve(&self.b);
        let r = chol.solve(&self.c) + &self.t;
        let normal = j.transpose() * &j;
        let rhs = -(j.transpose() * r);
        normal
            .cholesky()
            .map(|c| c.solve(&rhs))
            .ok_or_else(|| Error::Validation("B does not have full column rank".into()))
    }
}

fn to_mat(m: &DMatrix<f64>) -> Mat<f64> {
    let mut data = Vec::with_capacity(m.len());
    for r in 0..m.nrows() {
        for c in 0..m.ncols() {
            data.push(m[(r, c)]);
        }
    }
    Mat::from_vec(m.nrows(), m.ncols(), data).expect("shape")
}

pub fn make_quadratic(spec: &QuadraticBilevelSpec) -> Result<BilevelProblem> {
    spec.validate()?;
    let (m, n) = (spec.weights_dim(), spec.lambda_dim());
    let lambda_layout = spec.lambda_layout();
    let weights_layout = spec.weights_layout();

    let mut tb = ProgramBuilder::new(lambda_layout.clone(), weights_layout.clone());
    let w = tb.weights("w", m, 1)?;
    let lam = tb.lambda("lambda", n, 1)?;
    let a = tb.constant(to_mat(&spec.a));
    let b = tb.constant(to_mat(&spec.b));
    let c = tb.constant(Mat::column(spec.c.iter().copied().collect()));
    let aw = tb.matmul(a, w);
    let waw = tb.mul(w, aw);
    let quad = tb.sum(waw);
    let half = tb.scale(quad, 0.5);
    let bl = tb.matmul(b, lam);
    let shift = tb.add(bl, c);
    let ws = tb.mul(w, shift);
    let lin = tb.sum(ws);
    let out = tb.add(half, lin);
    let train = tb.finish(out);

    let mut vb = ProgramBuilder::new(lambda_layout, weights_layout);
    let w = vb.weights("w", m, 1)?;
    let t = vb.constant(Mat::column(spec.t.iter().copied().collect()));
    let d = vb.sub(w, t);
    let sq = vb.mul(d, d);
    let s = vb.sum(sq);
    let out = vb.scale(s, 0.5);
    let val = vb.finish(out);

    BilevelProblem::new(
        format!("quadratic_{m}x{n}"),
        train,
        val,
        Dataset::empty(),
        Dataset::empty(),
        Dataset::empty(),
    )
}

/// `w*(λ) = −A⁻¹(Bλ + c)` and `dL_V(λ, w*(λ))/dλ = (∂w*/∂λ)ᵀ(w* − t)`, by
/// dense linear algebra.
pub fn exact_quadratic_hypergradient(spec: &QuadraticBilevelSpec, lambda: &FlatVector) -> Result<(FlatVector, FlatVector)> {
    spec.validate()?;
    if lambda.len() != spec.lambda_dim() {
        return Err(Error::Dimension(format!(
            "lambda has {} entries, spec expects {}",
            lambda.len(),
            spec.lambda_dim()
        )));
    }
    let chol = spec
        .a
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Validation("A is not positive definite".into()))?;
    let lam = DVector::from_column_slice(lambda.as_slice());
    let w_star = -chol.solve(&(&spec.b * lam + &spec.c));
    let jac = -chol.solve(&spec.b);
    let hg = jac.transpose() * (&w_star - &spec.t);
    Ok((
        FlatVector::from_vec(spec.weights_layout(), w_star.iter().copied().collect())?,
        FlatVector::from_vec(spec.lambda_layout(), hg.iter().copied().collect())?,
    ))
}
