use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;

use crate::ad::{Dataset, FlatVector, Mat};
use crate::bilevel::{fixed_point_residual, inner_optimize, BilevelProblem, OptimizerState};
use crate::error::{Error, Result};
use crate::expcli::config::{DataSource, ExperimentConfig, ExperimentKind, ModelName};
use crate::expcli::records::{fmt_f64, fmt_opt, records_table, summarize, Table, RECORD_COLUMNS};
use crate::hypergrad::{
    dense_hessian, dense_inverse, hypergrad_accuracy, neumann_inverse_matrix, newton_fixed_point, run_ho,
    run_ho_observed, HoRun, HoSettings, InverseStrategy,
};
use crate::problems::{
    gen_blobs, gen_regression, load_csv, make_distillation, make_penalized, make_quadratic,
    split_fraction, with_label_noise, DecayRegime, DistillationSpec, ModelShape, PenalizedModelSpec,
    QuadraticBilevelSpec, TargetSpec,
};

/// Environment variable capping the number of seeds run in parallel.
pub const THREADS_ENV: &str = "HYPERGRAD_THREADS";

#[derive(Debug, Clone, Default, PartialEq)]
pub struct CommandOutput {
    pub files: Vec<PathBuf>,
    /// Hyperparameter runs that stopped on a numeric failure.
    pub failed_runs: usize,
}

/// Runs the experiment the config names and writes its CSVs under
/// `cfg.out_dir`.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<CommandOutput> {
    std::fs::create_dir_all(&cfg.out_dir).map_err(|e| Error::io(&cfg.out_dir, e))?;
    let start = Instant::now();
    let out = match cfg.experiment {
        ExperimentKind::Accuracy => cmd_accuracy(cfg),
        ExperimentKind::HessianViz => cmd_hessian_viz(cfg),
        ExperimentKind::OverfitVal => cmd_overfit(cfg),
        ExperimentKind::Distill => cmd_distill(cfg),
        ExperimentKind::SplitStudy => cmd_split_study(cfg),
        ExperimentKind::Run => cmd_run(cfg),
    }?;
    log::info!(
        "{} finished in {:.1} s, wrote {} files",
        cfg.experiment.name(),
        start.elapsed().as_secs_f64(),
        out.files.len()
    );
    Ok(out)
}

fn thread_count() -> Option<usize> {
    let raw = std::env::var(THREADS_ENV).ok()?;
    match raw.trim().parse::<usize>() {
        Ok(n) if n > 0 => Some(n),
        _ => {
            log::warn!("ignoring {THREADS_ENV}={raw}");
            None
        }
    }
}

/// Maps `f` over `items` on a pool capped by `HYPERGRAD_THREADS`, keeping
/// input order. The first error in input order wins.
fn par_map<I: Sync, T: Send>(items: &[I], f: impl Fn(&I) -> Result<T> + Sync) -> Result<Vec<T>> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = thread_count() {
        builder = builder.num_threads(n);
    }
    let pool = builder
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker threads: {e}")))?;
    pool.install(|| items.par_iter().map(&f).collect::<Vec<_>>())
        .into_iter()
        .collect()
}

/// Independent stream for each `(seed, purpose)` pair; the `TAG_*`
/// constants name the purposes.
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    let mut z = seed ^ tag.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub const TAG_DATA: u64 = 1;
pub const TAG_NOISE: u64 = 2;
pub const TAG_SPLIT: u64 = 3;
pub const TAG_STUDY_SPLIT: u64 = 4;
pub const TAG_INIT: u64 = 5;
pub const TAG_DISTILL_INIT: u64 = 6;

struct Splits {
    train: Dataset,
    val: Dataset,
    test: Dataset,
}

fn load_pool(cfg: &ExperimentConfig, seed: u64) -> Result<Dataset> {
    let p = &cfg.problems;
    let pool = match p.source {
        DataSource::Regression => gen_regression(p.n, p.dim, p.noise, derive_seed(seed, TAG_DATA))?,
        DataSource::Blobs => {
            let per_class = p.n.div_ceil(p.classes.max(1));
            let blobs = gen_blobs(p.classes, per_class, p.dim, p.spread, derive_seed(seed, TAG_DATA))?;
            let rows: Vec<usize> = (0..p.n).collect();
            blobs.select(&rows, blobs.provenance().to_string())
        }
        DataSource::Csv => {
            let path = p.path.as_ref().expect("validated");
            load_csv(
                path,
                &TargetSpec {
                    column: p.target_col.clone(),
                    classification: p.classification,
                },
            )?
        }
        DataSource::Quadratic => {
            return Err(Error::Config("quadratic problems have no dataset".into()));
        }
    };
    if p.label_noise > 0.0 {
        with_label_noise(&pool, p.label_noise, derive_seed(seed, TAG_NOISE))
    } else {
        Ok(pool)
    }
}

fn rows_for(count: Option<usize>, fraction: Option<f64>, n: usize) -> usize {
    count.unwrap_or_else(|| (fraction.unwrap_or(0.0) * n as f64).round() as usize)
}

/// Seeded shuffle of the pool into test, validation and training rows.
fn make_splits(cfg: &ExperimentConfig, seed: u64, default_val_fraction: f64) -> Result<Splits> {
    let pool = load_pool(cfg, seed)?;
    let p = &cfg.problems;
    let n = pool.len();
    let n_test = rows_for(p.test_size, p.test_fraction, n);
    let n_val = rows_for(p.val_size, p.val_fraction.or(Some(default_val_fraction)), n);
    if n_test + n_val >= n {
        return Err(Error::Config(format!(
            "{n} rows cannot hold {n_val} validation and {n_test} test rows plus training rows"
        )));
    }
    let idx = crate::problems::data::shuffled_rows(n, derive_seed(seed, TAG_SPLIT));
    let (test, rest) = idx.split_at(n_test);
    let (val, train) = rest.split_at(n_val);
    let name = pool.provenance().to_string();
    Ok(Splits {
        train: pool.select(train, format!("{name}[train]")),
        val: pool.select(val, format!("{name}[val]")),
        test: pool.select(test, format!("{name}[test]")),
    })
}

struct Built {
    problem: BilevelProblem,
    lambda0: FlatVector,
    w0: FlatVector,
}

fn outputs_of(data: &Dataset) -> usize {
    data.classes().unwrap_or(data.targets().cols)
}

fn build_penalized(cfg: &ExperimentConfig, splits: Splits, regime: DecayRegime, seed: u64) -> Result<Built> {
    let model = cfg.problems.model_kind();
    let shape = ModelShape::new(&model, splits.train.features(), outputs_of(&splits.train));
    let spec = PenalizedModelSpec { model, decay: regime };
    let mut problem = make_penalized(&spec, splits.train, splits.val, splits.test)?;
    problem.limits = cfg.hypergrad.limits();
    let w0 = shape
        .init_weights(derive_seed(seed, TAG_INIT))
        .with_layout(problem.weights_layout().clone())?;
    let lambda0 = FlatVector::filled(problem.lambda_layout().clone(), cfg.problems.init_log_decay);
    Ok(Built { problem, lambda0, w0 })
}

fn build_problem(cfg: &ExperimentConfig, seed: u64) -> Result<Built> {
    if cfg.problems.source == DataSource::Quadratic {
        let spec = QuadraticBilevelSpec::random(cfg.problems.weights_dim, cfg.problems.lambda_dim, derive_seed(seed, TAG_DATA));
        let mut problem = make_quadratic(&spec)?;
        problem.limits = cfg.hypergrad.limits();
        return Ok(Built {
            lambda0: FlatVector::zeros(spec.lambda_layout()),
            w0: FlatVector::zeros(spec.weights_layout()),
            problem,
        });
    }
    let splits = make_splits(cfg, seed, 0.2)?;
    build_penalized(cfg, splits, cfg.problems.decay, seed)
}

fn settings(cfg: &ExperimentConfig, strategy: InverseStrategy, seed: u64) -> HoSettings {
    HoSettings {
        outer_iters: cfg.bilevel.outer_iters,
        inner_steps: cfg.bilevel.inner_steps,
        strategy,
        seed,
    }
}

/// Weights and optimizer state after the configured warm-up steps.
fn warm_start(cfg: &ExperimentConfig, b: &Built, seed: u64) -> Result<(FlatVector, OptimizerState)> {
    let opt = cfg.bilevel.weight_optimizer.state()?;
    if cfg.bilevel.warmup_steps == 0 {
        return Ok((b.w0.clone(), opt));
    }
    let run = inner_optimize(&b.problem, &b.lambda0, &b.w0, cfg.bilevel.warmup_steps, opt, seed)?;
    Ok((run.weights, run.optimizer))
}

fn run_configured(cfg: &ExperimentConfig, b: &Built, seed: u64) -> Result<HoRun> {
    let (w, opt_w) = warm_start(cfg, b, seed)?;
    run_ho(
        &b.problem,
        &b.lambda0,
        &w,
        &settings(cfg, cfg.strategy()?, seed),
        opt_w,
        cfg.bilevel.lambda_optimizer.state()?,
    )
}

fn write(out: &mut CommandOutput, dir: &Path, name: &str, table: &Table) -> Result<()> {
    let path = dir.join(name);
    table.write(&path)?;
    out.files.push(path);
    Ok(())
}

fn write_with_summary(
    cfg: &ExperimentConfig,
    out: &mut CommandOutput,
    name: &str,
    table: &Table,
    keys: &[&str],
    values: &[&str],
) -> Result<()> {
    write(out, &cfg.out_dir, &format!("{name}.csv"), table)?;
    if cfg.seeds.len() > 1 {
        let summary = summarize(table, keys, values)?;
        write(out, &cfg.out_dir, &format!("{name}_summary.csv"), &summary)?;
    }
    Ok(())
}

fn concat(tables: Vec<Table>, columns: &[&str]) -> Table {
    let mut all = Table::new(columns.iter().copied());
    for t in tables {
        all.extend(t);
    }
    all
}

const ACCURACY_COLUMNS: [&str; 6] = [
    "optimization_iter",
    "strategy",
    "inversion_steps",
    "cosine_similarity",
    "l2_distance",
    "seed",
];

fn default_comparisons(alpha: f64) -> Vec<InverseStrategy> {
    vec![
        InverseStrategy::Identity,
        InverseStrategy::Neumann { terms: 5, alpha },
        InverseStrategy::Cg { tol: 1e-12, max_iter: 5 },
    ]
}

fn check_dense(problem: &BilevelProblem) -> Result<()> {
    let dim = problem.weights_layout().len();
    if dim > problem.limits.dense_max_dim {
        return Err(Error::Config(format!(
            "{} weights exceed the dense Hessian cap of {}",
            dim, problem.limits.dense_max_dim
        )));
    }
    Ok(())
}

/// Approximate hypergradients against the exact one: along the optimization
/// trajectory at each strategy's own budget, then over `step_grid` at the
/// final point.
fn cmd_accuracy(cfg: &ExperimentConfig) -> Result<CommandOutput> {
    let mut strategies = cfg.comparison_strategies()?;
    if strategies.is_empty() {
        strategies = default_comparisons(cfg.bilevel.weight_optimizer.lr);
    }
    let per_seed = par_map(&cfg.seeds, |&seed| {
        let b = build_problem(cfg, seed)?;
        check_dense(&b.problem)?;
        let mut table = Table::new(ACCURACY_COLUMNS);
        let push = |table: &mut Table, t: usize, rows: Vec<crate::hypergrad::AccuracyRow>| {
            for r in rows {
                table.push(vec![
                    t.to_string(),
                    r.strategy.to_string(),
                    r.steps.to_string(),
                    fmt_f64(r.cosine_similarity),
                    fmt_f64(r.l2_distance),
                    seed.to_string(),
                ]);
            }
        };
        let (w, opt_w) = warm_start(cfg, &b, seed)?;
        let every = cfg.accuracy.every;
        let run = run_ho_observed(
            &b.problem,
            &b.lambda0,
            &w,
            &settings(cfg, cfg.strategy()?, seed),
            opt_w,
            cfg.bilevel.lambda_optimizer.state()?,
            &mut |t, lambda, w| {
                if t % every == 0 {
                    for s in &strategies {
                        let rows = hypergrad_accuracy(&b.problem, lambda, w, &[*s], &[s.steps()], seed)?;
                        push(&mut table, t, rows);
                    }
                }
                Ok(())
            },
        )?;
        let mut w = run.weights.clone();
        if cfg.accuracy.converge_final && !run.failed {
            match newton_fixed_point(&b.problem, &run.lambda, &w, 1e-10, 100, seed) {
                Ok(refined) => w = refined,
                Err(e) => log::warn!("seed {seed}: final point not refined: {e}"),
            }
        }
        if !run.failed {
            let rows = hypergrad_accuracy(&b.problem, &run.lambda, &w, &strategies, &cfg.hypergrad.step_grid, seed)?;
            push(&mut table, cfg.bilevel.outer_iters, rows);
        }
        Ok((table, run.failed))
    })?;
    let mut out = CommandOutput {
        failed_runs: per_seed.iter().filter(|(_, f)| *f).count(),
        ..CommandOutput::default()
    };
    let table = concat(per_seed.into_iter().map(|(t, _)| t).collect(), &ACCURACY_COLUMNS);
    write_with_summary(
        cfg,
        &mut out,
        "accuracy",
        &table,
        &["optimization_iter", "strategy", "inversion_steps"],
        &["cosine_similarity", "l2_distance"],
    )?;
    Ok(out)
}

fn matrix_table(m: &nalgebra::DMatrix<f64>) -> Table {
    let mut t = Table::new((0..m.ncols()).map(|j| format!("c{j}")));
    for i in 0..m.nrows() {
        t.push((0..m.ncols()).map(|j| fmt_f64(m[(i, j)].tanh())).collect());
    }
    t
}

/// Dense inverse Hessian and its Neumann approximations, `tanh` applied
/// elementwise, for a one-hidden-layer network.
fn cmd_hessian_viz(cfg: &ExperimentConfig) -> Result<CommandOutput> {
    if cfg.problems.model != ModelName::Mlp || cfg.problems.hidden.len() != 1 {
        return Err(Error::Config(
            "hessian-viz needs `model = \"mlp\"` with exactly one hidden layer".into(),
        ));
    }
    let seed = cfg.seeds[0];
    if cfg.seeds.len() > 1 {
        log::warn!("hessian-viz uses only the first seed ({seed})");
    }
    let b = build_problem(cfg, seed)?;
    check_dense(&b.problem)?;
    let w = if cfg.hessian_viz.train_steps > 0 {
        inner_optimize(
            &b.problem,
            &b.lambda0,
            &b.w0,
            cfg.hessian_viz.train_steps,
            cfg.bilevel.weight_optimizer.state()?,
            seed,
        )?
        .weights
    } else {
        b.w0.clone()
    };
    let h = dense_hessian(&b.problem, &b.lambda0, &w, seed)?;
    let alpha = cfg.hessian_viz.alpha.unwrap_or(cfg.bilevel.weight_optimizer.lr);
    let mut out = CommandOutput::default();
    for &terms in &cfg.hessian_viz.terms {
        let approx = neumann_inverse_matrix(&h, terms, alpha);
        write(&mut out, &cfg.out_dir, &format!("inv_neumann_{terms}.mat.csv"), &matrix_table(&approx))?;
    }
    let exact = dense_inverse(&h)?;
    write(&mut out, &cfg.out_dir, "inv_true.mat.csv", &matrix_table(&exact))?;
    Ok(out)
}

const OVERFIT_COLUMNS: [&str; 13] = [
    "regime",
    "iteration",
    "train_loss",
    "val_loss",
    "test_loss",
    "train_error",
    "val_error",
    "test_error",
    "fixed_point_residual",
    "hypergrad_norm",
    "diverged",
    "failed",
    "seed",
];

fn error_of(acc: Option<f64>) -> String {
    fmt_opt(acc.map(|a| 1.0 - a))
}

/// Per-iteration errors with learned per-parameter decay, and for a control
/// run whose hyperparameters stay at their initial values.
fn cmd_overfit(cfg: &ExperimentConfig) -> Result<CommandOutput> {
    let per_seed = par_map(&cfg.seeds, |&seed| {
        let b = build_problem(cfg, seed)?;
        if b.problem.val_data.labels().is_none() {
            return Err(Error::Config("overfit-val needs a classification dataset".into()));
        }
        let mut table = Table::new(OVERFIT_COLUMNS);
        let run = run_configured(cfg, &b, seed)?;
        for r in &run.records {
            table.push(vec![
                "hyper".into(),
                r.iteration.to_string(),
                fmt_f64(r.train_loss),
                fmt_f64(r.val_loss),
                fmt_opt(r.test_loss),
                error_of(r.train_accuracy),
                error_of(r.val_accuracy),
                error_of(r.test_accuracy),
                fmt_f64(r.fixed_point_residual),
                fmt_f64(r.hypergrad_norm),
                r.diverged.to_string(),
                r.failed.to_string(),
                seed.to_string(),
            ]);
        }
        if cfg.overfit.control {
            let (mut w, mut opt) = warm_start(cfg, &b, seed)?;
            for t in 0..cfg.bilevel.outer_iters {
                let inner = inner_optimize(&b.problem, &b.lambda0, &w, cfg.bilevel.inner_steps, opt, seed)?;
                w = inner.weights;
                opt = inner.optimizer;
                let m = b.problem.metrics(&b.lambda0, &w, seed)?;
                table.push(vec![
                    "frozen".into(),
                    t.to_string(),
                    fmt_f64(m.train_loss),
                    fmt_f64(m.val_loss),
                    fmt_opt(m.test_loss),
                    error_of(m.train_accuracy),
                    error_of(m.val_accuracy),
                    error_of(m.test_accuracy),
                    fmt_f64(fixed_point_residual(&b.problem, &b.lambda0, &w, seed)?),
                    fmt_f64(0.0),
                    "false".into(),
                    "false".into(),
                    seed.to_string(),
                ]);
            }
        }
        Ok((table, run.failed))
    })?;
    let mut out = CommandOutput {
        failed_runs: per_seed.iter().filter(|(_, f)| *f).count(),
        ..CommandOutput::default()
    };
    let table = concat(per_seed.into_iter().map(|(t, _)| t).collect(), &OVERFIT_COLUMNS);
    write_with_summary(
        cfg,
        &mut out,
        "overfit",
        &table,
        &["regime", "iteration"],
        &["train_error", "val_error", "test_error", "val_loss"],
    )?;
    Ok(out)
}

/// Index of the class mean nearest to `x`.
fn nearest_mean(means: &Mat<f64>, x: &[f64]) -> usize {
    (0..means.rows)
        .map(|c| {
            let d: f64 = means.row(c).iter().zip(x).map(|(a, b)| (a - b).powi(2)).sum();
            (c, d)
        })
        .fold((0, f64::INFINITY), |best, (c, d)| if d < best.1 { (c, d) } else { best })
        .0
}

/// Per-class feature means of a labeled dataset.
pub fn class_means(data: &Dataset) -> Result<Mat<f64>> {
    let (Some(labels), Some(k)) = (data.labels(), data.classes()) else {
        return Err(Error::Validation("class means need labels".into()));
    };
    let d = data.features();
    let mut sums = Mat::zeros(k, d);
    let mut counts = vec![0usize; k];
    for (r, &l) in labels.iter().enumerate() {
        counts[l] += 1;
        for (j, x) in data.inputs().row(r).iter().enumerate() {
            sums.data[l * d + j] += x;
        }
    }
    for (c, &n) in counts.iter().enumerate() {
        for j in 0..d {
            sums.data[c * d + j] /= n.max(1) as f64;
        }
    }
    Ok(sums)
}

/// Learns distilled training points, one block of rows per class.
fn cmd_distill(cfg: &ExperimentConfig) -> Result<CommandOutput> {
    let p = &cfg.problems;
    if p.source != DataSource::Blobs && !(p.source == DataSource::Csv && p.classification) {
        return Err(Error::Config("distill needs classification data".into()));
    }
    let per_seed = par_map(&cfg.seeds, |&seed| {
        let splits = make_splits(cfg, seed, 0.0)?;
        let labeled = splits.train.concat(&splits.val, "labeled")?;
        let classes = labeled
            .classes()
            .ok_or_else(|| Error::Config("distill needs class labels".into()))?;
        let spec = DistillationSpec {
            classes,
            per_class: cfg.distill.per_class,
            dim: labeled.features(),
            ridge: cfg.distill.ridge,
        };
        let means = class_means(&labeled)?;
        let mut problem = make_distillation(&spec, labeled, splits.test)?;
        problem.limits = cfg.hypergrad.limits();
        let b = Built {
            lambda0: spec.init_points(cfg.distill.init_scale, derive_seed(seed, TAG_DISTILL_INIT)),
            w0: FlatVector::zeros(problem.weights_layout().clone()),
            problem,
        };
        let run = run_configured(cfg, &b, seed)?;
        let records = records_table(&run.records, seed);
        let mut points = Table::new(point_columns(spec.dim));
        let m = spec.points_matrix(&run.lambda)?;
        for r in 0..m.rows {
            let mut row = vec![r.to_string(), spec.label_of(r).to_string()];
            row.extend(m.row(r).iter().map(|&x| fmt_f64(x)));
            row.push(nearest_mean(&means, m.row(r)).to_string());
            row.push(seed.to_string());
            points.push(row);
        }
        Ok((records, points, run.failed))
    })?;
    let dim = if let Some((_, p, _)) = per_seed.first() { p.columns.len() - 4 } else { 0 };
    let mut out = CommandOutput {
        failed_runs: per_seed.iter().filter(|(_, _, f)| *f).count(),
        ..CommandOutput::default()
    };
    let mut records = Table::new(RECORD_COLUMNS);
    let mut points = Table::new(point_columns(dim));
    for (r, p, _) in per_seed {
        records.extend(r);
        points.extend(p);
    }
    write_with_summary(
        cfg,
        &mut out,
        "distill",
        &records,
        &["iteration"],
        &["val_loss", "val_accuracy", "test_accuracy"],
    )?;
    write(&mut out, &cfg.out_dir, "distilled_points.csv", &points)?;
    Ok(out)
}

fn point_columns(dim: usize) -> Vec<String> {
    let mut cols = vec!["point".to_string(), "label".to_string()];
    cols.extend((0..dim).map(|j| format!("x{j}")));
    cols.push("nearest_class_mean".into());
    cols.push("seed".into());
    cols
}

const SPLIT_COLUMNS: [&str; 5] = ["validation_fraction", "regime", "retrained", "test_accuracy", "seed"];

/// Test accuracy as a function of the validation fraction, with and without
/// re-fitting the weights on all non-test data at the learned
/// hyperparameters.
fn cmd_split_study(cfg: &ExperimentConfig) -> Result<CommandOutput> {
    let mut tasks = Vec::new();
    for &seed in &cfg.seeds {
        for &regime in &cfg.split.regimes {
            for &fraction in &cfg.split.fractions {
                tasks.push((seed, regime, fraction));
            }
        }
    }
    let results = par_map(&tasks, |&(seed, regime, fraction)| {
        let splits = make_splits(cfg, seed, 0.0)?;
        let pool = splits.train.concat(&splits.val, "train+val")?;
        if pool.labels().is_none() {
            return Err(Error::Config("split-study needs a classification dataset".into()));
        }
        let (train, val) = split_fraction(&pool, fraction, derive_seed(seed, TAG_STUDY_SPLIT))?;
        let b = build_penalized(
            cfg,
            Splits {
                train,
                val,
                test: splits.test.clone(),
            },
            regime,
            seed,
        )?;
        let run = run_configured(cfg, &b, seed)?;
        let test = &b.problem.test_data;
        let plain = b.problem.accuracy(&run.lambda, &run.weights, test)?;

        let all = b.problem.train_data.concat(&b.problem.val_data, "train+val")?;
        let retrain = build_penalized(
            cfg,
            Splits {
                train: all,
                val: (*b.problem.val_data).clone(),
                test: splits.test,
            },
            regime,
            seed,
        )?;
        let steps = cfg
            .split
            .retrain_steps
            .unwrap_or(cfg.bilevel.warmup_steps + cfg.bilevel.outer_iters * cfg.bilevel.inner_steps)
            .max(1);
        let refit = inner_optimize(
            &retrain.problem,
            &run.lambda,
            &retrain.w0,
            steps,
            cfg.bilevel.weight_optimizer.state()?,
            seed,
        );
        let (retrained, refit_failed) = match refit {
            Ok(r) => (
                retrain
                    .problem
                    .accuracy(&run.lambda, &r.weights, &retrain.problem.test_data)?,
                false,
            ),
            Err(e) if e.is_numeric() => {
                log::warn!("seed {seed}, fraction {fraction}: re-training failed: {e}");
                (None, true)
            }
            Err(e) => return Err(e),
        };
        let plain = if run.failed { None } else { plain };
        let mut t = Table::new(SPLIT_COLUMNS);
        for (flag, acc) in [("no", plain), ("yes", retrained)] {
            t.push(vec![
                fmt_f64(fraction),
                regime.name().into(),
                flag.into(),
                fmt_opt(acc),
                seed.to_string(),
            ]);
        }
        Ok((t, run.failed || refit_failed))
    })?;
    let mut out = CommandOutput {
        failed_runs: results.iter().filter(|(_, f)| *f).count(),
        ..CommandOutput::default()
    };
    let table = concat(results.into_iter().map(|(t, _)| t).collect(), &SPLIT_COLUMNS);
    write(&mut out, &cfg.out_dir, "split.csv", &table)?;
    let summary = summarize(&table, &["validation_fraction", "regime", "retrained"], &["test_accuracy"])?;
    write(&mut out, &cfg.out_dir, "split_summary.csv", &summary)?;
    Ok(out)
}

const HYPER_COLUMNS: [&str; 4] = ["segment", "index", "value", "seed"];

/// A plain hyperparameter optimization run.
fn cmd_run(cfg: &ExperimentConfig) -> Result<CommandOutput> {
    let per_seed = par_map(&cfg.seeds, |&seed| {
        let b = build_problem(cfg, seed)?;
        let run = run_configured(cfg, &b, seed)?;
        let mut hyper = Table::new(HYPER_COLUMNS);
        for seg in run.lambda.layout().segments() {
            for (i, x) in run.lambda.segment(&seg.name).unwrap_or(&[]).iter().enumerate() {
                hyper.push(vec![seg.name.clone(), i.to_string(), fmt_f64(*x), seed.to_string()]);
            }
        }
        Ok((records_table(&run.records, seed), hyper, run.failed))
    })?;
    let mut out = CommandOutput {
        failed_runs: per_seed.iter().filter(|(_, _, f)| *f).count(),
        ..CommandOutput::default()
    };
    let mut records = Table::new(RECORD_COLUMNS);
    let mut hyper = Table::new(HYPER_COLUMNS);
    for (r, h, _) in per_seed {
        records.extend(r);
        hyper.extend(h);
    }
    write_with_summary(
        cfg,
        &mut out,
        "run",
        &records,
        &["iteration"],
        &["train_loss", "val_loss", "test_loss", "val_accuracy", "test_accuracy"],
    )?;
    write(&mut out, &cfg.out_dir, "hyperparameters.csv", &hyper)?;
    Ok(out)
}
