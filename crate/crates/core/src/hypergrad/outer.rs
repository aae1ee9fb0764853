use std::time::Instant;

use crate::ad::FlatVector;
use crate::bilevel::{inner_optimize, BilevelProblem, OptimizerState};
use crate::error::{Error, Result};
use crate::hypergrad::{hypergradient, InverseStrategy};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HoSettings {
    pub outer_iters: usize,
    /// Inner optimizer steps before each hypergradient.
    pub inner_steps: usize,
    pub strategy: InverseStrategy,
    pub seed: u64,
}

/// State after one outer iteration, measured at the weights the
/// hypergradient was taken at and the hyperparameters they were trained with.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub iteration: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub test_loss: Option<f64>,
    pub train_accuracy: Option<f64>,
    pub val_accuracy: Option<f64>,
    pub test_accuracy: Option<f64>,
    pub fixed_point_residual: f64,
    pub hypergrad_norm: f64,
    pub wall_clock_ms: f64,
    pub diverged: bool,
    pub failed: bool,
}

impl RunRecord {
    fn failure(iteration: usize, wall_clock_ms: f64) -> Self {
        RunRecord {
            iteration,
            train_loss: f64::NAN,
            val_loss: f64::NAN,
            test_loss: None,
            train_accuracy: None,
            val_accuracy: None,
            test_accuracy: None,
            fixed_point_residual: f64::NAN,
            hypergrad_norm: f64::NAN,
            wall_clock_ms,
            diverged: true,
            failed: true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct HoRun {
    pub records: Vec<RunRecord>,
    pub lambda: FlatVector,
    pub weights: FlatVector,
    pub weight_optimizer: OptimizerState,
    pub lambda_optimizer: OptimizerState,
    /// The run stopped early on a numeric failure; the last record says where.
    pub failed: bool,
}

/// Alternates `inner_steps` weight updates with one hyperparameter update.
///
/// Weights warm-start across outer iterations and both optimizer states are
/// threaded through the whole run. A numeric failure ends the run with a
/// failed record instead of an error.
pub fn run_ho(
    problem: &BilevelProblem,
    lambda0: &FlatVector,
    w0: &FlatVector,
    settings: &HoSettings,
    opt_w: OptimizerState,
    opt_lambda: OptimizerState,
) -> Result<HoRun> {
    run_ho_observed(problem, lambda0, w0, settings, opt_w, opt_lambda, &mut |_, _, _| Ok(()))
}

/// [`run_ho`] that also calls `observe(t, λ, w)` once per outer iteration,
/// after the inner steps and before the hyperparameter update.
pub fn run_ho_observed(
    problem: &BilevelProblem,
    lambda0: &FlatVector,
    w0: &FlatVector,
    settings: &HoSettings,
    opt_w: OptimizerState,
    opt_lambda: OptimizerState,
    observe: &mut dyn FnMut(usize, &FlatVector, &FlatVector) -> Result<()>,
) -> Result<HoRun> {
    settings.strategy.validate()?;
    if settings.inner_steps == 0 {
        return Err(Error::Validation("inner_steps must be positive".into()));
    }
    let mut run = HoRun {
        records: Vec::with_capacity(settings.outer_iters),
        lambda: lambda0.clone(),
        weights: w0.clone(),
        weight_optimizer: opt_w,
        lambda_optimizer: opt_lambda,
        failed: false,
    };
    for t in 0..settings.outer_iters {
        let start = Instant::now();
        match outer_step(problem, &mut run, settings, t, observe) {
            Ok(mut record) => {
                record.wall_clock_ms = start.elapsed().as_secs_f64() * 1e3;
                run.records.push(record);
            }
            Err(e) if e.is_numeric() => {
                log::warn!("{}: outer iteration {t} failed: {e}", problem.name);
                run.records
                    .push(RunRecord::failure(t, start.elapsed().as_secs_f64() * 1e3));
                run.failed = true;
                break;
            }
            Err(e) => return Err(e),
        }
    }
    Ok(run)
}

fn outer_step(
    problem: &BilevelProblem,
    run: &mut HoRun,
    settings: &HoSettings,
    t: usize,
    observe: &mut dyn FnMut(usize, &FlatVector, &FlatVector) -> Result<()>,
) -> Result<RunRecord> {
    let inner = inner_optimize(
        problem,
        &run.lambda,
        &run.weights,
        settings.inner_steps,
        run.weight_optimizer.clone(),
        settings.seed,
    )?;
    let w = inner.weights;
    observe(t, &run.lambda, &w)?;
    let hg_seed = settings.seed.wrapping_add(t as u64);
    let report = hypergradient(problem, &run.lambda, &w, &settings.strategy, hg_seed)?;
    let metrics = problem.metrics(&run.lambda, &w, hg_seed)?;
    let record = RunRecord {
        iteration: t,
        train_loss: metrics.train_loss,
        val_loss: metrics.val_loss,
        test_loss: metrics.test_loss,
        train_accuracy: metrics.train_accuracy,
        val_accuracy: metrics.val_accuracy,
        test_accuracy: metrics.test_accuracy,
        fixed_point_residual: report.diagnostics.fixed_point_residual,
        hypergrad_norm: report.total.norm(),
        wall_clock_ms: 0.0,
        diverged: report.diagnostics.diverged,
        failed: false,
    };
    let mut lambda = run.lambda.clone();
    let mut opt_lambda = run.lambda_optimizer.clone();
    opt_lambda.step(&mut lambda, &report.total)?;
    run.weights = w;
    run.weight_optimizer = inner.optimizer;
    run.lambda = lambda;
    run.lambda_optimizer = opt_lambda;
    Ok(record)
}
