//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Experiment criteria run the configs shipped in `configs/` and judge only
//! the CSVs they emit.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use hypergrad::ad::{check_grad_fd, cosine_similarity, Dataset, FlatVector, LossProgram};
use hypergrad::bilevel::{fixed_point_residual, BilevelProblem};
use hypergrad::expcli::{parse_config, run_experiment, ExperimentConfig, Table, THREADS_ENV};
use hypergrad::hypergrad::{approx_ihvp, dense_hessian, hypergradient, newton_fixed_point, unrolled_hypergradient, InverseStrategy};
use hypergrad::problems::{
    blob_centers, exact_quadratic_hypergradient, gen_blobs, gen_regression, make_distillation, make_penalized,
    make_quadratic, Activation, DecayRegime, DistillationSpec, ModelKind, ModelShape, PenalizedModelSpec,
    QuadraticBilevelSpec,
};
use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = Result<String, String>;

fn ensure(ok: bool, msg: impl Into<String>) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn config(name: &str, out: &Path) -> Result<ExperimentConfig, String> {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name);
    let mut cfg = parse_config(&path).map_err(err)?;
    cfg.out_dir = out.to_path_buf();
    Ok(cfg)
}

fn run_timed(cfg: &ExperimentConfig) -> Result<Duration, String> {
    let start = Instant::now();
    let out = run_experiment(cfg).map_err(err)?;
    ensure(out.failed_runs == 0, format!("{} runs failed", out.failed_runs))?;
    Ok(start.elapsed())
}

fn read(dir: &Path, name: &str) -> Result<Table, String> {
    Table::read(&dir.join(name)).map_err(err)
}

fn floats(t: &Table, col: &str) -> Result<Vec<f64>, String> {
    Ok(t.floats(col).map_err(err)?.into_iter().map(|x| x.unwrap_or(f64::NAN)).collect())
}

fn quadratic_at_optimum(m: usize, n: usize, seed: u64) -> Result<(QuadraticBilevelSpec, BilevelProblem, FlatVector, FlatVector), String> {
    let spec = QuadraticBilevelSpec::random(m, n, seed);
    let p = make_quadratic(&spec).map_err(err)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let lam = FlatVector::from_vec(spec.lambda_layout(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).map_err(err)?;
    let w = newton_fixed_point(&p, &lam, &FlatVector::zeros(spec.weights_layout()), 1e-12, 50, 0).map_err(err)?;
    Ok((spec, p, lam, w))
}

fn ift_exactness() -> Check {
    let mut worst = 0.0_f64;
    let mut slowest = Duration::ZERO;
    let mut count = 0;
    for &(m, n) in &[(1, 1), (2, 2), (5, 3), (10, 10), (20, 1), (20, 5), (20, 10)] {
        for seed in 0..5 {
            let start = Instant::now();
            let (spec, p, lam, w) = quadratic_at_optimum(m, n, seed)?;
            let residual = fixed_point_residual(&p, &lam, &w, 0).map_err(err)?;
            ensure(residual < 1e-9, format!("m={m} n={n} seed={seed}: residual {residual:e}"))?;
            let report = hypergradient(&p, &lam, &w, &InverseStrategy::ExactDense, 0).map_err(err)?;
            let (_, oracle) = exact_quadratic_hypergradient(&spec, &lam).map_err(err)?;
            let diff = max_abs_diff(report.total.as_slice(), oracle.as_slice());
            slowest = slowest.max(start.elapsed());
            ensure(diff < 1e-10, format!("m={m} n={n} seed={seed}: max diff {diff:e}"))?;
            worst = worst.max(diff);
            count += 1;
        }
    }
    ensure(slowest < Duration::from_secs(1), format!("slowest instance {slowest:?}"))?;
    Ok(format!("{count} instances, max diff {worst:.1e}, slowest {slowest:.1?}"))
}

fn logistic_problem(seed: u64) -> Result<BilevelProblem, String> {
    // 3 classes × 8 features: 27 weights
    let train = gen_blobs(3, 15, 8, 0.8, seed).map_err(err)?;
    let val = gen_blobs(3, 15, 8, 0.8, seed + 100).map_err(err)?;
    let spec = PenalizedModelSpec {
        model: ModelKind::LogisticRegression,
        decay: DecayRegime::PerParam,
    };
    make_penalized(&spec, train, val, Dataset::empty()).map_err(err)
}

fn neumann_sgd_equivalence() -> Check {
    let start = Instant::now();
    let mut cases: Vec<(BilevelProblem, FlatVector, FlatVector, f64)> = Vec::new();
    for seed in 0..3 {
        let (spec, p, lam, w) = quadratic_at_optimum(8, 3, seed)?;
        let (_, lmax) = spec.hessian_spectrum();
        cases.push((p, lam, w, 0.5 / lmax));
    }
    for seed in 0..3 {
        let p = logistic_problem(seed)?;
        let lam = FlatVector::filled(p.lambda_layout().clone(), -1.0);
        let w0 = FlatVector::zeros(p.weights_layout().clone());
        let w = newton_fixed_point(&p, &lam, &w0, 1e-11, 50, 0).map_err(err)?;
        cases.push((p, lam, w, 0.5));
    }
    let mut worst = 0.0_f64;
    for (p, lam, w, alpha) in &cases {
        for i in [1, 3, 10] {
            let unrolled = unrolled_hypergradient(p, lam, w, i, *alpha, 0).map_err(err)?;
            let neumann = hypergradient(p, lam, w, &InverseStrategy::Neumann { terms: i, alpha: *alpha }, 0).map_err(err)?;
            let diff = max_abs_diff(unrolled.as_slice(), neumann.total.as_slice());
            ensure(diff < 1e-8, format!("{} i={i}: diff {diff:e}", p.name))?;
            worst = worst.max(diff);
        }
    }
    let elapsed = start.elapsed();
    ensure(elapsed < Duration::from_secs(10), format!("took {elapsed:?}"))?;
    Ok(format!("{} problems × 3 term counts, max diff {worst:.1e}, {elapsed:.1?}", cases.len()))
}

fn neumann_convergence() -> Check {
    let mut worst = 0.0_f64;
    for seed in 0..5 {
        let (spec, p, lam, w) = quadratic_at_optimum(10, 2, seed)?;
        let (_, lmax) = spec.hessian_spectrum();
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 50);
        let v = FlatVector::from_vec(spec.weights_layout(), (0..10).map(|_| rng.gen_range(-1.0..1.0)).collect()).map_err(err)?;
        let exact = spec.a.clone().lu().solve(&DVector::from_column_slice(v.as_slice())).ok_or("singular A")?;
        let (u, d) = approx_ihvp(&InverseStrategy::Neumann { terms: 200, alpha: 0.9 / lmax }, &p, &lam, &w, &v, 0).map_err(err)?;
        ensure(!d.diverged, format!("seed {seed}: diverged at α = 0.9/λmax"))?;
        let rel = (DVector::from_column_slice(u.as_slice()) - &exact).norm() / exact.norm();
        ensure(rel < 1e-3, format!("seed {seed}: relative error {rel:e}"))?;
        worst = worst.max(rel);
        let (_, d) = approx_ihvp(&InverseStrategy::Neumann { terms: 200, alpha: 3.0 / lmax }, &p, &lam, &w, &v, 0).map_err(err)?;
        ensure(d.diverged, format!("seed {seed}: no divergence flag at α = 3/λmax"))?;
    }
    Ok(format!("5 problems, max relative error {worst:.1e}; divergence flagged at 3/λmax"))
}

fn cg_exactness(dir: &Path) -> Check {
    let cfg = config("accuracy.toml", dir)?;
    let elapsed = run_timed(&cfg)?;
    ensure(elapsed < Duration::from_secs(60), format!("accuracy took {elapsed:?}"))?;
    let t = read(dir, "accuracy.csv")?;
    for col in ["optimization_iter", "strategy", "inversion_steps", "cosine_similarity", "l2_distance"] {
        t.column(col).map_err(err)?;
    }
    let dim = (cfg.problems.dim + 1).to_string();
    let final_iter = cfg.bilevel.outer_iters.to_string();
    let iters = t.strings("optimization_iter").map_err(err)?;
    let strategies = t.strings("strategy").map_err(err)?;
    let steps = t.strings("inversion_steps").map_err(err)?;
    let cos = floats(&t, "cosine_similarity")?;
    let mut found = 0;
    for r in 0..t.rows.len() {
        if strategies[r] == "cg" && steps[r] == dim && iters[r] == final_iter {
            ensure(cos[r] >= 1.0 - 1e-6, format!("cg at {dim} steps: cosine {}", cos[r]))?;
            found += 1;
        }
    }
    ensure(found > 0, format!("no cg row with {dim} steps at the converged point"))?;
    let trajectory = (0..t.rows.len()).filter(|&r| iters[r] != final_iter).count();
    ensure(trajectory > 0, "no rows along the optimization trajectory")?;

    // the library call at the converged point, independent of the CSV
    let p = logistic_problem(11)?;
    let lam = FlatVector::filled(p.lambda_layout().clone(), -1.0);
    let w = newton_fixed_point(&p, &lam, &FlatVector::zeros(p.weights_layout().clone()), 1e-11, 50, 0).map_err(err)?;
    let exact = hypergradient(&p, &lam, &w, &InverseStrategy::ExactDense, 0).map_err(err)?;
    let cg = hypergradient(&p, &lam, &w, &InverseStrategy::Cg { tol: 1e-14, max_iter: w.len() }, 0).map_err(err)?;
    let c = cosine_similarity(cg.total.as_slice(), exact.total.as_slice());
    ensure(c >= 1.0 - 1e-6, format!("logistic cg cosine {c}"))?;
    Ok(format!(
        "cg at dim(w) = {dim}: cosine {:.12}; accuracy.csv with {} rows in {elapsed:.1?}",
        cos.iter()
            .zip(&strategies)
            .zip(&steps)
            .filter(|((_, s), k)| **s == "cg" && **k == dim)
            .map(|((c, _), _)| *c)
            .fold(1.0, f64::min),
        t.rows.len()
    ))
}

fn perturbed(v: FlatVector, scale: f64, seed: u64) -> FlatVector {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v = v;
    for x in v.as_mut_slice() {
        *x += scale * rng.gen_range(-1.0..1.0);
    }
    v
}

fn second_order_correctness() -> Check {
    let mut checked: Vec<String> = Vec::new();
    let mut worst = (0.0_f64, 0.0_f64);
    let mut check = |name: &str, f: &LossProgram, lam: &FlatVector, w: &FlatVector, data: &Dataset, grad_tol: f64| -> Result<(), String> {
        let r = check_grad_fd(f, lam, w, data, 1e-5, 0).map_err(err)?;
        ensure(
            r.passes(grad_tol, 1e-4),
            format!("{name}: first order {:e}, second order {:e} {:?}", r.max_first_order(), r.max_second_order(), r.failures),
        )?;
        worst.0 = worst.0.max(r.max_first_order());
        worst.1 = worst.1.max(r.max_second_order());
        checked.push(name.to_string());
        Ok(())
    };

    let spec = QuadraticBilevelSpec::random(8, 3, 4);
    let p = make_quadratic(&spec).map_err(err)?;
    let lam = perturbed(FlatVector::zeros(spec.lambda_layout()), 1.0, 1);
    let w = perturbed(FlatVector::zeros(spec.weights_layout()), 1.0, 2);
    check("quadratic L_T", &p.train_loss, &lam, &w, &p.train_data, 1e-6)?;
    check("quadratic L_V", &p.val_loss, &lam, &w, &p.val_data, 1e-6)?;

    let reg = gen_regression(40, 5, 0.1, 3).map_err(err)?;
    let blobs = gen_blobs(3, 12, 4, 0.8, 5).map_err(err)?;
    let models: Vec<(&str, ModelKind, &Dataset)> = vec![
        ("linear", ModelKind::LinearRegression, &reg),
        ("logistic", ModelKind::LogisticRegression, &blobs),
        (
            "mlp-tanh",
            ModelKind::Mlp {
                hidden: vec![6],
                activation: Activation::Tanh,
            },
            &blobs,
        ),
        (
            "mlp-sigmoid",
            ModelKind::Mlp {
                hidden: vec![5, 4],
                activation: Activation::Sigmoid,
            },
            &blobs,
        ),
    ];
    for (name, model, data) in models {
        for regime in [DecayRegime::PerParam, DecayRegime::Global] {
            let outputs = data.classes().unwrap_or(data.targets().cols);
            let shape = ModelShape::new(&model, data.features(), outputs);
            let spec = PenalizedModelSpec {
                model: model.clone(),
                decay: regime,
            };
            let p = make_penalized(&spec, data.clone(), data.clone(), Dataset::empty()).map_err(err)?;
            let lam = perturbed(FlatVector::filled(p.lambda_layout().clone(), -1.0), 0.5, 6);
            let w = perturbed(
                shape.init_weights(7).with_layout(p.weights_layout().clone()).map_err(err)?,
                0.3,
                8,
            );
            let label = format!("{name} {} L_T", regime.name());
            check(&label, &p.train_loss, &lam, &w, &p.train_data, 1e-4)?;
            check(&format!("{name} {} L_V", regime.name()), &p.val_loss, &lam, &w, &p.val_data, 1e-4)?;
        }
    }

    let dspec = DistillationSpec::new(3, 2, 4);
    let p = make_distillation(&dspec, blobs.clone(), Dataset::empty()).map_err(err)?;
    let lam = dspec.init_points(1.0, 9);
    let w = perturbed(FlatVector::zeros(p.weights_layout().clone()), 0.5, 10);
    check("distillation L_T", &p.train_loss, &lam, &w, &p.train_data, 1e-4)?;
    check("distillation L_V", &p.val_loss, &lam, &w, &p.val_data, 1e-4)?;

    // dense Hessian built from hvp is symmetric to rounding on the MLP
    let mlp = PenalizedModelSpec {
        model: ModelKind::Mlp {
            hidden: vec![4],
            activation: Activation::Tanh,
        },
        decay: DecayRegime::PerParam,
    };
    let p = make_penalized(&mlp, blobs.clone(), blobs, Dataset::empty()).map_err(err)?;
    let lam = FlatVector::filled(p.lambda_layout().clone(), -1.0);
    let shape = ModelShape::new(&mlp.model, 4, 3);
    let w = shape.init_weights(3).with_layout(p.weights_layout().clone()).map_err(err)?;
    let h = dense_hessian(&p, &lam, &w, 0).map_err(err)?;
    let asym = (&h - h.transpose()).amax() / h.amax();
    ensure(asym < 1e-10, format!("mlp Hessian asymmetry {asym:e}"))?;

    Ok(format!(
        "{} losses; worst first order {:.1e}, second order {:.1e}",
        checked.len(),
        worst.0,
        worst.1
    ))
}

fn validation_overfitting(dir: &Path) -> Check {
    let cfg = config("overfit.toml", dir)?;
    ensure(cfg.bilevel.outer_iters <= 1000, "config exceeds 1000 outer iterations")?;
    run_timed(&cfg)?;
    let t = read(dir, "overfit.csv")?;
    let regime = t.strings("regime").map_err(err)?;
    let seed = t.strings("seed").map_err(err)?;
    let val = floats(&t, "val_error")?;
    let test = floats(&t, "test_error")?;
    let mut first_zero = Vec::new();
    for s in cfg.seeds.iter().map(|s| s.to_string()) {
        let hyper: Vec<usize> = (0..t.rows.len()).filter(|&r| regime[r] == "hyper" && seed[r] == s).collect();
        let frozen: Vec<usize> = (0..t.rows.len()).filter(|&r| regime[r] == "frozen" && seed[r] == s).collect();
        ensure(!hyper.is_empty() && !frozen.is_empty(), format!("seed {s}: missing rows"))?;
        let zero = hyper.iter().position(|&r| val[r] == 0.0);
        let Some(k) = zero else {
            let best = hyper.iter().map(|&r| val[r]).fold(f64::INFINITY, f64::min);
            return Err(format!("seed {s}: validation error never 0 (best {best})"));
        };
        first_zero.push(k);
        let min_test = hyper.iter().map(|&r| test[r]).fold(f64::INFINITY, f64::min);
        ensure(min_test >= 0.05, format!("seed {s}: test error fell to {min_test}"))?;
        let min_frozen = frozen.iter().map(|&r| val[r]).fold(f64::INFINITY, f64::min);
        ensure(min_frozen > 0.0, format!("seed {s}: frozen control reached 0"))?;
    }
    Ok(format!(
        "{} seeds: validation error 0 first at iterations {first_zero:?}; test error ≥ 0.05; frozen control > 0",
        cfg.seeds.len()
    ))
}

fn distillation(dir: &Path) -> Check {
    let cfg = config("distill.toml", dir)?;
    run_timed(&cfg)?;
    let records = read(dir, "distill.csv")?;
    let points = read(dir, "distilled_points.csv")?;
    let it = records.strings("iteration").map_err(err)?;
    let seed = records.strings("seed").map_err(err)?;
    let acc = floats(&records, "val_accuracy")?;
    let last = (cfg.bilevel.outer_iters - 1).to_string();
    let mut finals = Vec::new();
    for s in cfg.seeds.iter().map(|s| s.to_string()) {
        let r = (0..records.rows.len())
            .find(|&r| it[r] == last && seed[r] == s)
            .ok_or(format!("seed {s}: no final record"))?;
        ensure(acc[r] >= 0.95, format!("seed {s}: validation accuracy {}", acc[r]))?;
        finals.push(acc[r]);
    }
    // brute force against the recorded data means and the generator centers
    let dim = cfg.problems.dim;
    let centers = blob_centers(cfg.problems.classes, dim);
    let labels = points.strings("label").map_err(err)?;
    let nearest = points.strings("nearest_class_mean").map_err(err)?;
    let xs: Vec<Vec<f64>> = (0..dim).map(|j| floats(&points, &format!("x{j}"))).collect::<Result<_, _>>()?;
    for r in 0..points.rows.len() {
        ensure(labels[r] == nearest[r], format!("point {r}: nearest data mean is class {}", nearest[r]))?;
        let x: Vec<f64> = xs.iter().map(|c| c[r]).collect();
        let closest = (0..centers.rows)
            .min_by(|&a, &b| {
                let da: f64 = centers.row(a).iter().zip(&x).map(|(c, v)| (c - v).powi(2)).sum();
                let db: f64 = centers.row(b).iter().zip(&x).map(|(c, v)| (c - v).powi(2)).sum();
                da.total_cmp(&db)
            })
            .unwrap();
        ensure(closest.to_string() == labels[r], format!("point {r}: nearest center is {closest}"))?;
    }
    Ok(format!("final validation accuracy {finals:?}; {} points nearest their own class", points.rows.len()))
}

fn split_study(dir: &Path) -> Check {
    let cfg = config("split.toml", dir)?;
    ensure(cfg.seeds.len() >= 5, "fewer than 5 seeds")?;
    let elapsed = run_timed(&cfg)?;
    ensure(elapsed < Duration::from_secs(15 * 60), format!("took {elapsed:?}"))?;
    let t = read(dir, "split.csv")?;
    let expected = cfg.split.fractions.len() * 2 * 2 * cfg.seeds.len();
    ensure(t.rows.len() == expected, format!("{} rows, expected {expected}", t.rows.len()))?;
    let s = read(dir, "split_summary.csv")?;
    let frac = floats(&s, "validation_fraction")?;
    let regime = s.strings("regime").map_err(err)?;
    let retrained = s.strings("retrained").map_err(err)?;
    let mean = floats(&s, "mean_test_accuracy")?;
    let mut argmax: BTreeMap<(String, String), (f64, f64)> = BTreeMap::new();
    for r in 0..s.rows.len() {
        let e = argmax.entry((regime[r].to_string(), retrained[r].to_string())).or_insert((f64::NAN, f64::NEG_INFINITY));
        if mean[r] > e.1 {
            *e = (frac[r], mean[r]);
        }
    }
    let get = |reg: &str, re: &str| argmax.get(&(reg.to_string(), re.to_string())).map(|v| v.0).unwrap_or(f64::NAN);
    let (pp_no, pp_yes) = (get("per_param_decay", "no"), get("per_param_decay", "yes"));
    let (gl_no, gl_yes) = (get("global_decay", "no"), get("global_decay", "yes"));
    let step = cfg.split.fractions.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min);
    let detail = format!(
        "argmax fractions: per_param no {pp_no} / yes {pp_yes}; global no {gl_no} / yes {gl_yes}; {elapsed:.1?}"
    );
    ensure(pp_yes > pp_no, format!("per-param retrained argmax not larger; {detail}"))?;
    ensure((gl_yes - gl_no).abs() <= step + 1e-9, format!("global argmaxes more than one step apart; {detail}"))?;
    Ok(detail)
}

fn same_files(a: &Path, b: &Path) -> Result<usize, String> {
    let mut names: Vec<_> = std::fs::read_dir(a).map_err(err)?.map(|e| e.map(|e| e.file_name())).collect::<Result<_, _>>().map_err(err)?;
    names.sort();
    let mut other: Vec<_> = std::fs::read_dir(b).map_err(err)?.map(|e| e.map(|e| e.file_name())).collect::<Result<_, _>>().map_err(err)?;
    other.sort();
    ensure(names == other, format!("file sets differ: {names:?} vs {other:?}"))?;
    for n in &names {
        let x = std::fs::read(a.join(n)).map_err(err)?;
        let y = std::fs::read(b.join(n)).map_err(err)?;
        ensure(x == y, format!("{} differs between runs", n.to_string_lossy()))?;
    }
    Ok(names.len())
}

fn determinism(dir: &Path) -> Check {
    let mut files = 0;
    for name in ["accuracy.toml", "hessian_viz.toml", "overfit.toml", "distill.toml", "split.toml", "run.toml"] {
        let mut cfg = config(name, dir)?;
        // shortened runs keep the suite quick; seeds and code paths are unchanged
        cfg.bilevel.outer_iters = cfg.bilevel.outer_iters.min(50);
        cfg.hessian_viz.train_steps = cfg.hessian_viz.train_steps.min(200);
        cfg.split.fractions.truncate(3);
        if cfg.seeds.len() < 2 {
            cfg.seeds.push(cfg.seeds[0] + 1);
        }
        let first = dir.join(format!("{name}.a"));
        let second = dir.join(format!("{name}.b"));
        cfg.out_dir = first.clone();
        std::env::remove_var(THREADS_ENV);
        run_experiment(&cfg).map_err(err)?;
        cfg.out_dir = second.clone();
        std::env::set_var(THREADS_ENV, "1");
        let rerun = run_experiment(&cfg);
        std::env::remove_var(THREADS_ENV);
        rerun.map_err(err)?;
        files += same_files(&first, &second).map_err(|e| format!("{name}: {e}"))?;
    }
    Ok(format!("6 commands, {files} files byte-identical across reruns"))
}

fn main() -> ExitCode {
    // `cargo test -- --list` and friends expect no work
    if std::env::args().any(|a| a == "--list") {
        return ExitCode::SUCCESS;
    }
    let tmp = tempfile::tempdir().expect("temporary directory");
    let dir = |name: &str| -> PathBuf {
        let d = tmp.path().join(name);
        std::fs::create_dir_all(&d).expect("create output directory");
        d
    };
    let criteria: Vec<(&str, Box<dyn Fn() -> Check>)> = vec![
        ("IFT exactness", Box::new(ift_exactness)),
        ("Neumann-SGD equivalence", Box::new(neumann_sgd_equivalence)),
        ("Neumann convergence/divergence", Box::new(neumann_convergence)),
        ("CG exactness", Box::new(move || cg_exactness(&dir("accuracy")))),
        ("Second-order correctness", Box::new(second_order_correctness)),
        ("Validation overfitting", Box::new(move || validation_overfitting(&dir("overfit")))),
        ("Distillation", Box::new(move || distillation(&dir("distill")))),
        ("Split study", Box::new(move || split_study(&dir("split")))),
        ("Determinism", Box::new(move || determinism(&dir("determinism")))),
    ];
    let mut failed = 0;
    for (name, check) in &criteria {
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(std::panic::AssertUnwindSafe(check)).unwrap_or_else(|_| Err("panicked".into()));
        match outcome {
            Ok(detail) => println!("PASS {name}: {detail} [{:.1?}]", start.elapsed()),
            Err(detail) => {
                failed += 1;
                println!("FAIL {name}: {detail} [{:.1?}]", start.elapsed());
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
