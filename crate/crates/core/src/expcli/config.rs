//! Experiment configuration, read from TOML.
//!
//! ```toml
//! experiment = "overfit-val"
//! seeds = [0, 1, 2]
//! out_dir = "results/overfit"
//!
//! [problems]
//! source = "blobs"
//! n = 600
//! classes = 2
//! dim = 50
//! val_size = 50
//! test_size = 500
//! label_noise = 0.2
//! model = "logistic_regression"
//! decay = "per_param"
//!
//! [bilevel]
//! inner_steps = 10
//! outer_iters = 1000
//! weight_optimizer = { rule = "sgd", lr = 0.5 }
//! lambda_optimizer = { rule = "rmsprop", lr = 0.05 }
//!
//! [hypergrad]
//! strategy = { kind = "neumann", terms = 20 }
//! ```
//!
//! Unknown keys are rejected everywhere.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::bilevel::{OptimizerState, Rule, SolverLimits};
use crate::error::{Error, Result};
use crate::hypergrad::InverseStrategy;
use crate::problems::{Activation, DecayRegime, ModelKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Accuracy,
    HessianViz,
    OverfitVal,
    Distill,
    SplitStudy,
    Run,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::Accuracy => "accuracy",
            ExperimentKind::HessianViz => "hessian-viz",
            ExperimentKind::OverfitVal => "overfit-val",
            ExperimentKind::Distill => "distill",
            ExperimentKind::SplitStudy => "split-study",
            ExperimentKind::Run => "run",
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    #[serde(default)]
    pub problems: ProblemsConfig,
    #[serde(default)]
    pub bilevel: BilevelConfig,
    #[serde(default)]
    pub hypergrad: HypergradConfig,
    #[serde(default)]
    pub accuracy: AccuracyConfig,
    #[serde(default)]
    pub hessian_viz: HessianVizConfig,
    #[serde(default)]
    pub overfit: OverfitConfig,
    #[serde(default)]
    pub distill: DistillConfig,
    #[serde(default)]
    pub split: SplitConfig,
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("results")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    #[default]
    Regression,
    Blobs,
    Csv,
    Quadratic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ModelName {
    #[default]
    LinearRegression,
    LogisticRegression,
    Mlp,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProblemsConfig {
    pub source: DataSource,
    /// Rows generated for synthetic sources.
    pub n: usize,
    pub dim: usize,
    /// Regression target noise.
    pub noise: f64,
    pub classes: usize,
    /// Blob standard deviation around the unit-circle class centers.
    pub spread: f64,
    /// Fraction of labels reassigned to a different class, in every split.
    pub label_noise: f64,
    pub path: Option<PathBuf>,
    pub target_col: Option<String>,
    pub classification: bool,
    /// Validation rows, as a count or as a fraction of all rows.
    pub val_size: Option<usize>,
    pub val_fraction: Option<f64>,
    /// Test rows, as a count or as a fraction of all rows.
    pub test_size: Option<usize>,
    pub test_fraction: Option<f64>,
    pub model: ModelName,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub decay: DecayRegime,
    /// Initial log weight-decay rate for every hyperparameter.
    pub init_log_decay: f64,
    /// Quadratic problems: weight and hyperparameter dimensions.
    pub weights_dim: usize,
    pub lambda_dim: usize,
}

impl Default for ProblemsConfig {
    fn default() -> Self {
        ProblemsConfig {
            source: DataSource::Regression,
            n: 506,
            dim: 13,
            noise: 0.1,
            classes: 2,
            spread: 0.5,
            label_noise: 0.0,
            path: None,
            target_col: None,
            classification: false,
            val_size: None,
            val_fraction: None,
            test_size: None,
            test_fraction: None,
            model: ModelName::LinearRegression,
            hidden: Vec::new(),
            activation: Activation::Tanh,
            decay: DecayRegime::PerParam,
            init_log_decay: -3.0,
            weights_dim: 10,
            lambda_dim: 3,
        }
    }
}

impl ProblemsConfig {
    pub fn model_kind(&self) -> ModelKind {
        match self.model {
            ModelName::LinearRegression => ModelKind::LinearRegression,
            ModelName::LogisticRegression => ModelKind::LogisticRegression,
            ModelName::Mlp => ModelKind::Mlp {
                hidden: self.hidden.clone(),
                activation: self.activation,
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RuleName {
    Sgd,
    Adam,
    Rmsprop,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    pub rule: RuleName,
    pub lr: f64,
    pub beta1: Option<f64>,
    pub beta2: Option<f64>,
    pub decay: Option<f64>,
    pub eps: Option<f64>,
}

impl OptimizerConfig {
    fn new(rule: RuleName, lr: f64) -> Self {
        OptimizerConfig {
            rule,
            lr,
            beta1: None,
            beta2: None,
            decay: None,
            eps: None,
        }
    }

    pub fn rule(&self) -> Rule {
        match (self.rule, Rule::adam(), Rule::rmsprop()) {
            (RuleName::Sgd, _, _) => Rule::Sgd,
            (RuleName::Adam, Rule::Adam { beta1, beta2, eps }, _) => Rule::Adam {
                beta1: self.beta1.unwrap_or(beta1),
                beta2: self.beta2.unwrap_or(beta2),
                eps: self.eps.unwrap_or(eps),
            },
            (RuleName::Rmsprop, _, Rule::Rmsprop { decay, eps }) => Rule::Rmsprop {
                decay: self.decay.unwrap_or(decay),
                eps: self.eps.unwrap_or(eps),
            },
            _ => unreachable!("default constructors return their own variants"),
        }
    }

    pub fn state(&self) -> Result<OptimizerState> {
        OptimizerState::new(self.rule(), self.lr)
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BilevelConfig {
    /// Inner optimizer steps per outer iteration.
    pub inner_steps: usize,
    pub outer_iters: usize,
    /// Inner steps taken at the initial hyperparameters before the first
    /// outer iteration.
    pub warmup_steps: usize,
    pub weight_optimizer: OptimizerConfig,
    pub lambda_optimizer: OptimizerConfig,
}

impl Default for BilevelConfig {
    fn default() -> Self {
        BilevelConfig {
            inner_steps: 10,
            outer_iters: 100,
            warmup_steps: 0,
            weight_optimizer: OptimizerConfig::new(RuleName::Adam, 1e-4),
            lambda_optimizer: OptimizerConfig::new(RuleName::Rmsprop, 1e-2),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyKind {
    Identity,
    Neumann,
    Cg,
    ExactDense,
    Unrolled,
    TruncatedUnrolled,
}

/// A strategy as written in a config file. Step sizes left out default to
/// the weight optimizer's learning rate.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StrategyConfig {
    pub kind: StrategyKind,
    pub terms: Option<usize>,
    pub alpha: Option<f64>,
    pub tol: Option<f64>,
    pub max_iter: Option<usize>,
    pub steps: Option<usize>,
    pub kept: Option<usize>,
}

impl StrategyConfig {
    fn of(kind: StrategyKind) -> Self {
        StrategyConfig {
            kind,
            terms: None,
            alpha: None,
            tol: None,
            max_iter: None,
            steps: None,
            kept: None,
        }
    }

    pub fn resolve(&self, default_alpha: f64) -> Result<InverseStrategy> {
        let alpha = self.alpha.unwrap_or(default_alpha);
        let s = match self.kind {
            StrategyKind::Identity => InverseStrategy::Identity,
            StrategyKind::ExactDense => InverseStrategy::ExactDense,
            StrategyKind::Neumann => InverseStrategy::Neumann {
                terms: self.terms.unwrap_or(5),
                alpha,
            },
            StrategyKind::Cg => InverseStrategy::Cg {
                tol: self.tol.unwrap_or(1e-10),
                max_iter: self.max_iter.unwrap_or(20),
            },
            StrategyKind::Unrolled => InverseStrategy::Unrolled {
                steps: self.steps.unwrap_or(5),
                alpha,
            },
            StrategyKind::TruncatedUnrolled => {
                let steps = self.steps.unwrap_or(5);
                InverseStrategy::TruncatedUnrolled {
                    steps,
                    kept: self.kept.unwrap_or(steps),
                    alpha,
                }
            }
        };
        s.validate().map_err(|e| Error::Config(e.to_string()))?;
        Ok(s)
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HypergradConfig {
    /// Strategy used for hyperparameter updates.
    pub strategy: StrategyConfig,
    /// Strategies compared against the exact hypergradient.
    pub strategies: Vec<StrategyConfig>,
    /// Iteration budgets swept at the final point of the accuracy experiment.
    pub step_grid: Vec<usize>,
    pub dense_max_dim: usize,
    pub max_stored_iterates: usize,
}

impl Default for HypergradConfig {
    fn default() -> Self {
        let limits = SolverLimits::default();
        HypergradConfig {
            strategy: StrategyConfig::of(StrategyKind::ExactDense),
            strategies: Vec::new(),
            step_grid: vec![1, 2, 5, 10, 20],
            dense_max_dim: limits.dense_max_dim,
            max_stored_iterates: limits.max_stored_iterates,
        }
    }
}

impl HypergradConfig {
    pub fn limits(&self) -> SolverLimits {
        SolverLimits {
            dense_max_dim: self.dense_max_dim,
            max_stored_iterates: self.max_stored_iterates,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AccuracyConfig {
    /// Compare strategies every `every` outer iterations.
    pub every: usize,
    /// Newton-refine the weights before the final step-count sweep.
    pub converge_final: bool,
}

impl Default for AccuracyConfig {
    fn default() -> Self {
        AccuracyConfig {
            every: 1,
            converge_final: true,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HessianVizConfig {
    /// Inner optimizer steps before the Hessian is taken.
    pub train_steps: usize,
    /// Neumann step size; the weight optimizer's learning rate when absent.
    pub alpha: Option<f64>,
    /// Neumann term counts, one output file each.
    pub terms: Vec<usize>,
}

impl Default for HessianVizConfig {
    fn default() -> Self {
        HessianVizConfig {
            train_steps: 2000,
            alpha: None,
            terms: vec![1, 5],
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OverfitConfig {
    /// Also run the frozen-hyperparameter control.
    pub control: bool,
}

impl Default for OverfitConfig {
    fn default() -> Self {
        OverfitConfig { control: true }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DistillConfig {
    pub per_class: usize,
    pub ridge: f64,
    /// Standard deviation of the initial distilled features.
    pub init_scale: f64,
}

impl Default for DistillConfig {
    fn default() -> Self {
        DistillConfig {
            per_class: 1,
            ridge: 1.0,
            init_scale: 1.0,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitConfig {
    pub fractions: Vec<f64>,
    pub regimes: Vec<DecayRegime>,
    /// Inner steps when re-fitting on all non-test data; defaults to the
    /// number of inner steps the hyperparameter run took.
    pub retrain_steps: Option<usize>,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig {
            fractions: (1..10).map(|i| i as f64 / 10.0).collect(),
            regimes: vec![DecayRegime::Global, DecayRegime::PerParam],
            retrain_steps: None,
        }
    }
}

/// Reads and validates a config file.
pub fn parse_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let cfg = parse_config_str(&text).map_err(|e| match e {
        Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
        other => other,
    })?;
    if let Some(data) = &cfg.problems.path {
        let resolved = resolve_relative(path, data);
        if !resolved.is_file() {
            return Err(Error::Config(format!("data file {} does not exist", resolved.display())));
        }
        let mut cfg = cfg;
        cfg.problems.path = Some(resolved);
        return Ok(cfg);
    }
    Ok(cfg)
}

fn resolve_relative(config_path: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        config_path.parent().map(|d| d.join(p)).unwrap_or_else(|| p.to_path_buf())
    }
}

pub fn parse_config_str(text: &str) -> Result<ExperimentConfig> {
    let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.seeds.is_empty() {
            return bad("`seeds` must not be empty".into());
        }
        if self.bilevel.inner_steps == 0 {
            return bad("`bilevel.inner_steps` must be positive".into());
        }
        for (name, o) in [
            ("weight_optimizer", &self.bilevel.weight_optimizer),
            ("lambda_optimizer", &self.bilevel.lambda_optimizer),
        ] {
            if !(o.lr > 0.0 && o.lr.is_finite()) {
                return bad(format!("`bilevel.{name}.lr` must be positive"));
            }
        }
        let p = &self.problems;
        if p.source == DataSource::Csv && p.path.is_none() {
            return bad("`problems.path` is required for csv data".into());
        }
        if !(0.0..=1.0).contains(&p.label_noise) {
            return bad("`problems.label_noise` must lie in [0, 1]".into());
        }
        for (name, f) in [("val_fraction", p.val_fraction), ("test_fraction", p.test_fraction)] {
            if let Some(f) = f {
                if !(0.0..1.0).contains(&f) {
                    return bad(format!("`problems.{name}` must lie in [0, 1)"));
                }
            }
        }
        if self.accuracy.every == 0 {
            return bad("`accuracy.every` must be positive".into());
        }
        if let Some(f) = self.split.fractions.iter().find(|f| !(**f > 0.0 && **f < 1.0)) {
            return bad(format!("split fraction {f} outside (0, 1)"));
        }
        if self.split.fractions.is_empty() || self.split.regimes.is_empty() {
            return bad("`split.fractions` and `split.regimes` must not be empty".into());
        }
        let alpha = self.bilevel.weight_optimizer.lr;
        self.hypergrad.strategy.resolve(alpha)?;
        for s in &self.hypergrad.strategies {
            s.resolve(alpha)?;
        }
        if self.distill.per_class == 0 || !(self.distill.ridge > 0.0) {
            return bad("`distill.per_class` and `distill.ridge` must be positive".into());
        }
        Ok(())
    }

    /// The update strategy, with Neumann/unrolled step sizes defaulting to the
    /// weight learning rate.
    pub fn strategy(&self) -> Result<InverseStrategy> {
        self.hypergrad.strategy.resolve(self.bilevel.weight_optimizer.lr)
    }

    pub fn comparison_strategies(&self) -> Result<Vec<InverseStrategy>> {
        self.hypergrad
            .strategies
            .iter()
            .map(|s| s.resolve(self.bilevel.weight_optimizer.lr))
            .collect()
    }
}
