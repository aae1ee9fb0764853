//! Central-difference verification of first and second derivatives.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::ad::dataset::Dataset;
use crate::ad::flat::FlatVector;
use crate::ad::program::LossProgram;
use crate::error::{Error, Result};

const PROBES: usize = 3;
const PROBE_SEED: u64 = 0x5eed_9a7c;
/// Magnitudes below this are treated as absolute rather than relative error.
const FLOOR: f64 = 1e-6;

/// Max relative error of each derivative against central differences.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GradCheckReport {
    pub grad_w: f64,
    pub grad_lambda: f64,
    pub hvp: f64,
    pub mixed_vjp: f64,
    /// Evaluation failures; a failed check reports an infinite error.
    pub failures: Vec<String>,
}

impl GradCheckReport {
    pub fn max_first_order(&self) -> f64 {
        self.grad_w.max(self.grad_lambda)
    }

    pub fn max_second_order(&self) -> f64 {
        self.hvp.max(self.mixed_vjp)
    }

    pub fn passes(&self, grad_tol: f64, second_tol: f64) -> bool {
        self.failures.is_empty() && self.max_first_order() < grad_tol && self.max_second_order() < second_tol
    }
}

fn rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    let inf = |v: &[f64]| v.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
    let diff = analytic
        .iter()
        .zip(numeric)
        .fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()));
    if diff == 0.0 {
        return 0.0;
    }
    diff / inf(analytic).max(inf(numeric)).max(FLOOR)
}

fn unit_probe(rng: &mut ChaCha8Rng, like: &FlatVector) -> FlatVector {
    let data = (0..like.len()).map(|_| StandardNormal.sample(&mut *rng)).collect();
    let mut v = FlatVector::from_vec(like.layout().clone(), data).expect("same length");
    let n = v.norm();
    if n > 0.0 {
        v.scale(1.0 / n);
    }
    v
}

/// Checks `grad_w`, `grad_lambda`, `hvp` and `mixed_vjp` of `f` at `(λ, w)`
/// against central differences with step `eps` along random unit probes.
pub fn check_grad_fd(
    f: &LossProgram,
    lambda: &FlatVector,
    weights: &FlatVector,
    data: &Dataset,
    eps: f64,
    seed: u64,
) -> Result<GradCheckReport> {
    if !(eps > 0.0 && eps <= 1e-2) {
        return Err(Error::Validation(format!("finite-difference step {eps} outside (0, 1e-2]")));
    }
    let mut report = GradCheckReport::default();
    let mut rng = ChaCha8Rng::seed_from_u64(PROBE_SEED);
    let fail = |report: &mut GradCheckReport, what: &str, e: Error| {
        report.failures.push(format!("{what}: {e}"));
        f64::INFINITY
    };

    let base = match f.gradients(lambda, weights, data, seed) {
        Ok(g) => g,
        Err(e) => {
            let inf = fail(&mut report, "gradient", e);
            report.grad_w = inf;
            report.grad_lambda = inf;
            report.hvp = inf;
            report.mixed_vjp = inf;
            return Ok(report);
        }
    };

    for _ in 0..PROBES {
        // First order, weight slot: directional derivative along u.
        if !weights.is_empty() {
            let u = unit_probe(&mut rng, weights);
            let mut plus = weights.clone();
            plus.axpy(eps, &u);
            let mut minus = weights.clone();
            minus.axpy(-eps, &u);
            let err = match (f.eval(lambda, &plus, data, seed), f.eval(lambda, &minus, data, seed)) {
                (Ok(a), Ok(b)) => rel_err(&[base.weights.dot(&u)], &[(a - b) / (2.0 * eps)]),
                (Err(e), _) | (_, Err(e)) => fail(&mut report, "grad_w probe", e),
            };
            report.grad_w = report.grad_w.max(err);
        }

        if !lambda.is_empty() {
            let u = unit_probe(&mut rng, lambda);
            let mut plus = lambda.clone();
            plus.axpy(eps, &u);
            let mut minus = lambda.clone();
            minus.axpy(-eps, &u);
            let err = match (f.eval(&plus, weights, data, seed), f.eval(&minus, weights, data, seed)) {
                (Ok(a), Ok(b)) => rel_err(&[base.lambda.dot(&u)], &[(a - b) / (2.0 * eps)]),
                (Err(e), _) | (_, Err(e)) => fail(&mut report, "grad_lambda probe", e),
            };
            report.grad_lambda = report.grad_lambda.max(err);
        }

        // Second order: difference the gradients along v.
        if !weights.is_empty() {
            let v = unit_probe(&mut rng, weights);
            let mut plus = weights.clone();
            plus.axpy(eps, &v);
            let mut minus = weights.clone();
            minus.axpy(-eps, &v);
            let analytic = f.second_order(lambda, weights, data, seed, &v);
            let gp = f.gradients(lambda, &plus, data, seed);
            let gm = f.gradients(lambda, &minus, data, seed);
            match (analytic, gp, gm) {
                (Ok(so), Ok(gp), Ok(gm)) => {
                    let fd_h = gp.weights.sub(&gm.weights).scaled(1.0 / (2.0 * eps));
                    let fd_m = gp.lambda.sub(&gm.lambda).scaled(1.0 / (2.0 * eps));
                    report.hvp = report.hvp.max(rel_err(so.hvp.as_slice(), fd_h.as_slice()));
                    report.mixed_vjp = report.mixed_vjp.max(rel_err(so.mixed.as_slice(), fd_m.as_slice()));
                }
                (Err(e), _, _) | (_, Err(e), _) | (_, _, Err(e)) => {
                    let inf = fail(&mut report, "second-order probe", e);
                    report.hvp = inf;
                    report.mixed_vjp = inf;
                }
            }
        }
    }
    Ok(report)
}
