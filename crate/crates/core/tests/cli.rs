use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use hypergrad::expcli::commands::TAG_DISTILL_INIT;
use hypergrad::expcli::{derive_seed, Table, SCHEMA_LINE};
use hypergrad::problems::DistillationSpec;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_hypergrad"));
    c.env("RUST_LOG", "warn");
    c
}

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn run(args: &[&str], config: &Path, out: &Path) -> Output {
    bin()
        .args(args)
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .output()
        .unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn read(dir: &Path, name: &str) -> Table {
    Table::read(&dir.join(name)).unwrap()
}

const SMALL_RUN: &str = r#"
experiment = "run"
seeds = [3]

[problems]
source = "regression"
n = 60
dim = 3
val_fraction = 0.25
test_fraction = 0.25

[bilevel]
inner_steps = 5
outer_iters = 4
weight_optimizer = { rule = "sgd", lr = 0.05 }

[hypergrad]
strategy = { kind = "cg", max_iter = 4 }
"#;

#[test]
fn run_writes_versioned_csvs_and_honours_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "run.toml", SMALL_RUN);
    let out = dir.path().join("out");
    let o = run(&["run", "--seed", "5", "6"], &cfg, &out);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = std::fs::read_to_string(out.join("run.csv")).unwrap();
    assert!(text.starts_with(&format!("{SCHEMA_LINE}\n")));
    let t = read(&out, "run.csv");
    assert_eq!(t.rows.len(), 8);
    let seeds: Vec<&str> = t.strings("seed").unwrap();
    assert_eq!(&seeds[..4], &["5"; 4]);
    assert_eq!(&seeds[4..], &["6"; 4]);
    assert!(out.join("run_summary.csv").is_file());
    let h = read(&out, "hyperparameters.csv");
    // per-parameter decay of 3 weights and a bias, for each seed
    assert_eq!(h.rows.len(), 8);
}

#[test]
fn config_errors_exit_with_one_and_name_the_problem() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let cases = [
        ("unknown.toml", format!("{SMALL_RUN}\n[distill]\npoints = 3\n"), "points"),
        ("missing.toml", "seeds = [0]\n".to_string(), "experiment"),
        ("nodata.toml", "experiment = \"run\"\n[problems]\nsource = \"csv\"\npath = \"absent.csv\"\n".to_string(), "absent.csv"),
        (
            "fractions.toml",
            "experiment = \"split-study\"\n[split]\nfractions = [0.0, 0.5]\n".to_string(),
            "fraction",
        ),
    ];
    for (name, text, needle) in cases {
        let cfg = write_config(dir.path(), name, &text);
        let kind = if name == "fractions.toml" { "split-study" } else { "run" };
        let o = run(&[kind], &cfg, &out);
        assert_eq!(o.status.code(), Some(1), "{name}: {}", stderr(&o));
        assert!(stderr(&o).contains(needle), "{name}: {}", stderr(&o));
    }
    let cfg = write_config(dir.path(), "run.toml", SMALL_RUN);
    let o = run(&["distill"], &cfg, &out);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("`run` experiment"), "{}", stderr(&o));
}

#[test]
fn numeric_failure_exits_with_two_and_keeps_the_records() {
    let dir = tempfile::tempdir().unwrap();
    let text = SMALL_RUN.replace("lr = 0.05", "lr = 1e40");
    let cfg = write_config(dir.path(), "bad.toml", &text);
    let out = dir.path().join("out");
    let o = run(&["run"], &cfg, &out);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    let t = read(&out, "run.csv");
    let failed = t.strings("failed").unwrap();
    assert_eq!(failed.last(), Some(&"true"));
    assert!(t.floats("val_loss").unwrap().last().unwrap().unwrap().is_nan());
}

#[test]
fn accuracy_rows_for_exact_strategy_are_perfect() {
    let dir = tempfile::tempdir().unwrap();
    let text = r#"
experiment = "accuracy"
[problems]
source = "regression"
n = 80
dim = 4
val_fraction = 0.25
[bilevel]
inner_steps = 5
outer_iters = 6
weight_optimizer = { rule = "sgd", lr = 0.05 }
[hypergrad]
strategies = [{ kind = "exact_dense" }, { kind = "cg" }, { kind = "neumann" }]
step_grid = [1, 5]
[accuracy]
every = 2
"#;
    let cfg = write_config(dir.path(), "acc.toml", text);
    let out = dir.path().join("out");
    let o = run(&["accuracy"], &cfg, &out);
    assert!(o.status.success(), "{}", stderr(&o));
    let t = read(&out, "accuracy.csv");
    let strategy = t.strings("strategy").unwrap();
    let iters = t.strings("optimization_iter").unwrap();
    let cos = t.floats("cosine_similarity").unwrap();
    let l2 = t.floats("l2_distance").unwrap();
    let mut exact_rows = 0;
    for r in 0..t.rows.len() {
        if strategy[r] == "exact_dense" {
            exact_rows += 1;
            assert!((cos[r].unwrap() - 1.0).abs() < 1e-12);
            assert!(l2[r].unwrap() < 1e-12);
        }
    }
    // iterations 0, 2, 4 plus the converged point
    assert_eq!(exact_rows, 4);
    let final_rows = iters.iter().filter(|&&i| i == "6").count();
    assert_eq!(final_rows, 1 + 2 + 2);
}

#[test]
fn hessian_viz_matches_direct_matrix_formulas() {
    let dir = tempfile::tempdir().unwrap();
    let text = r#"
experiment = "hessian-viz"
[problems]
source = "blobs"
n = 40
dim = 2
spread = 0.5
val_fraction = 0.25
model = "mlp"
hidden = [3]
init_log_decay = -1.0
[bilevel]
weight_optimizer = { rule = "sgd", lr = 0.1 }
[hessian_viz]
train_steps = 100
alpha = 0.2
terms = [1, 5]
"#;
    let cfg = write_config(dir.path(), "viz.toml", text);
    let out = dir.path().join("out");
    let o = run(&["hessian-viz"], &cfg, &out);
    assert!(o.status.success(), "{}", stderr(&o));
    let load = |name: &str| -> Vec<Vec<f64>> {
        let t = read(&out, name);
        t.rows.iter().map(|r| r.iter().map(|x| x.parse().unwrap()).collect()).collect()
    };
    let one = load("inv_neumann_1.mat.csv");
    let five = load("inv_neumann_5.mat.csv");
    let exact = load("inv_true.mat.csv");
    // 2·3 + 3 + 3·2 + 2 weights
    assert_eq!(exact.len(), 17);
    assert!(exact.iter().all(|r| r.len() == 17));
    // one term is α·I
    for (i, row) in one.iter().enumerate() {
        for (j, &x) in row.iter().enumerate() {
            let want = if i == j { 0.2f64.tanh() } else { 0.0 };
            assert!((x - want).abs() < 1e-15, "({i},{j}) {x}");
        }
    }
    let dist = |a: &[Vec<f64>]| -> f64 {
        a.iter().flatten().zip(exact.iter().flatten()).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
    };
    assert!(dist(&five) < dist(&one));
}

#[test]
fn distill_with_no_outer_iterations_keeps_the_initial_points() {
    let dir = tempfile::tempdir().unwrap();
    let text = r#"
experiment = "distill"
seeds = [4]
[problems]
source = "blobs"
n = 60
classes = 3
dim = 2
test_fraction = 0.2
[bilevel]
outer_iters = 0
[distill]
per_class = 2
init_scale = 0.5
"#;
    let cfg = write_config(dir.path(), "d.toml", text);
    let out = dir.path().join("out");
    let o = run(&["distill"], &cfg, &out);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(read(&out, "distill.csv").rows.is_empty());
    let points = read(&out, "distilled_points.csv");
    assert_eq!(points.strings("label").unwrap(), vec!["0", "0", "1", "1", "2", "2"]);
    let init = DistillationSpec::new(3, 2, 2).init_points(0.5, derive_seed(4, TAG_DISTILL_INIT));
    let x0 = points.floats("x0").unwrap();
    let x1 = points.floats("x1").unwrap();
    for r in 0..6 {
        assert_eq!(x0[r].unwrap(), init.as_slice()[2 * r]);
        assert_eq!(x1[r].unwrap(), init.as_slice()[2 * r + 1]);
    }
}

#[test]
fn split_study_writes_the_full_factorial() {
    let dir = tempfile::tempdir().unwrap();
    let text = r#"
experiment = "split-study"
seeds = [0, 1, 2]
[problems]
source = "blobs"
n = 120
dim = 3
test_size = 60
model = "logistic_regression"
[bilevel]
inner_steps = 3
outer_iters = 3
weight_optimizer = { rule = "adam", lr = 0.01 }
[split]
fractions = [0.3, 0.6]
retrain_steps = 5
"#;
    let cfg = write_config(dir.path(), "s.toml", text);
    let out = dir.path().join("out");
    let o = run(&["split-study"], &cfg, &out);
    assert!(o.status.success(), "{}", stderr(&o));
    let t = read(&out, "split.csv");
    assert_eq!(
        t.columns,
        vec!["validation_fraction", "regime", "retrained", "test_accuracy", "seed"]
    );
    assert_eq!(t.rows.len(), 2 * 2 * 2 * 3);
    let s = read(&out, "split_summary.csv");
    assert_eq!(s.rows.len(), 2 * 2 * 2);
    assert!(s.strings("n").unwrap().iter().all(|&n| n == "3"));
}

#[test]
fn reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "run.toml", SMALL_RUN);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    assert!(run(&["run", "--seed", "1", "2", "3"], &cfg, &a).status.success());
    let o = bin()
        .env("HYPERGRAD_THREADS", "1")
        .args(["run", "--seed", "1", "2", "3", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&b)
        .output()
        .unwrap();
    assert!(o.status.success());
    for f in ["run.csv", "run_summary.csv", "hyperparameters.csv"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
}
