//! Models with learned weight decay.
//!
//! The training loss adds `½ Σⱼ e^{λⱼ} wⱼ²` to the prediction loss; the
//! validation loss is the bare prediction loss, so these problems are pure
//! response (no direct hyperparameter gradient).

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::ad::{Dataset, FlatVector, Layout, ProgramBuilder, Var};
use crate::bilevel::BilevelProblem;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Tanh,
    Sigmoid,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    LinearRegression,
    LogisticRegression,
    Mlp { hidden: Vec<usize>, activation: Activation },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecayRegime {
    /// One rate per weight entry.
    PerParam,
    /// A single rate shared by all weights.
    Global,
}

impl DecayRegime {
    pub fn name(self) -> &'static str {
        match self {
            DecayRegime::PerParam => "per_param_decay",
            DecayRegime::Global => "global_decay",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PenalizedModelSpec {
    pub model: ModelKind,
    pub decay: DecayRegime,
}

/// Layer sizes of a dense network; linear models are the one-layer case.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelShape {
    /// `(fan_in, fan_out)` per layer.
    layers: Vec<(usize, usize)>,
    activation: Option<Activation>,
}

impl ModelShape {
    pub fn new(model: &ModelKind, features: usize, outputs: usize) -> Self {
        match model {
            ModelKind::LinearRegression | ModelKind::LogisticRegression => ModelShape {
                layers: vec![(features, outputs)],
                activation: None,
            },
            ModelKind::Mlp { hidden, activation } => {
                let mut sizes = vec![features];
                sizes.extend(hidden);
                sizes.push(outputs);
                ModelShape {
                    layers: sizes.windows(2).map(|w| (w[0], w[1])).collect(),
                    activation: Some(*activation),
                }
            }
        }
    }

    fn names(&self, i: usize) -> (String, String) {
        if self.layers.len() == 1 {
            ("W".into(), "b".into())
        } else {
            (format!("W{}", i + 1), format!("b{}", i + 1))
        }
    }

    pub fn layout(&self) -> Arc<Layout> {
        let mut parts = Vec::new();
        for (i, &(fan_in, fan_out)) in self.layers.iter().enumerate() {
            let (w, b) = self.names(i);
            parts.push((w, fan_in * fan_out));
            parts.push((b, fan_out));
        }
        Arc::new(Layout::from_lengths(parts).expect("distinct layer names"))
    }

    pub fn weight_count(&self) -> usize {
        self.layers.iter().map(|(i, o)| i * o + o).sum()
    }

    /// Zero weights for linear models; `N(0, 1/fan_in)` matrices and zero
    /// biases for networks.
    pub fn init_weights(&self, seed: u64) -> FlatVector {
        let layout = self.layout();
        let mut w = FlatVector::zeros(layout.clone());
        if self.layers.len() == 1 {
            return w;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for (i, &(fan_in, _)) in self.layers.iter().enumerate() {
            let seg = layout.segment(&self.names(i).0).expect("layer segment").clone();
            let scale = 1.0 / (fan_in as f64).sqrt();
            for x in &mut w.as_mut_slice()[seg.offset..seg.offset + seg.len] {
                let z: f64 = StandardNormal.sample(&mut rng);
                *x = scale * z;
            }
        }
        w
    }

    /// Emits the forward pass for inputs `x`, returning the output node.
    pub fn build(&self, b: &mut ProgramBuilder, x: Var) -> Result<Var> {
        let mut h = x;
        for (i, &(fan_in, fan_out)) in self.layers.iter().enumerate() {
            let (wn, bn) = self.names(i);
            let w = b.weights(&wn, fan_in, fan_out)?;
            let bias = b.weights(&bn, 1, fan_out)?;
            let z = b.matmul(h, w);
            h = b.add(z, bias);
            if i + 1 < self.layers.len() {
                h = match self.activation {
                    Some(Activation::Sigmoid) => b.sigmoid(h),
                    _ => b.tanh(h),
                };
            }
        }
        Ok(h)
    }

    /// `½ Σ e^{λ} w²` over every weight segment.
    pub fn penalty(&self, b: &mut ProgramBuilder, regime: DecayRegime) -> Result<Var> {
        let mut terms = Vec::new();
        let global = match regime {
            DecayRegime::Global => {
                let l = b.lambda("decay", 1, 1)?;
                Some(b.exp(l))
            }
            DecayRegime::PerParam => None,
        };
        for (i, &(fan_in, fan_out)) in self.layers.iter().enumerate() {
            let (wn, bn) = self.names(i);
            for (name, rows, cols) in [(wn, fan_in, fan_out), (bn, 1, fan_out)] {
                let w = b.weights(&name, rows, cols)?;
                let sq = b.mul(w, w);
                let rate = match global {
                    Some(r) => r,
                    None => {
                        let l = b.lambda(&format!("decay.{name}"), rows, cols)?;
                        b.exp(l)
                    }
                };
                let weighted = b.mul(rate, sq);
                terms.push(b.sum(weighted));
            }
        }
        let mut total = terms[0];
        for &t in &terms[1..] {
            total = b.add(total, t);
        }
        Ok(b.scale(total, 0.5))
    }

    pub fn lambda_layout(&self, regime: DecayRegime) -> Arc<Layout> {
        match regime {
            DecayRegime::Global => Arc::new(Layout::single("decay", 1)),
            DecayRegime::PerParam => {
                let w = self.layout();
                Arc::new(
                    Layout::from_lengths(w.segments().iter().map(|s| (format!("decay.{}", s.name), s.len)))
                        .expect("distinct names"),
                )
            }
        }
    }
}

fn output_width(model: &ModelKind, data: &Dataset) -> Result<usize> {
    match (model, data.classes()) {
        (ModelKind::LogisticRegression, None) => {
            Err(Error::Validation("logistic regression needs class labels".into()))
        }
        (ModelKind::LinearRegression, Some(_)) => {
            Err(Error::Validation("linear regression needs real-valued targets".into()))
        }
        (_, Some(k)) => Ok(k),
        (_, None) => Ok(data.targets().cols),
    }
}

/// The model's prediction loss on the program's data slot.
fn prediction_loss(b: &mut ProgramBuilder, shape: &ModelShape, classification: bool) -> Result<(Var, Var)> {
    let x = b.inputs();
    let y = b.targets();
    let out = shape.build(b, x)?;
    let loss = if classification {
        b.softmax_cross_entropy(out, y)
    } else {
        b.squared_error(out, y)
    };
    Ok((loss, out))
}

pub fn make_penalized(spec: &PenalizedModelSpec, train: Dataset, val: Dataset, test: Dataset) -> Result<BilevelProblem> {
    for (name, d) in [("training", &train), ("validation", &val)] {
        if d.is_empty() {
            return Err(Error::Validation(format!("{name} set is empty")));
        }
    }
    if train.features() != val.features() || (!test.is_empty() && test.features() != train.features()) {
        return Err(Error::Dimension("splits have different feature counts".into()));
    }
    let outputs = output_width(&spec.model, &train)?;
    let classification = train.classes().is_some();
    let shape = ModelShape::new(&spec.model, train.features(), outputs);
    let lambda_layout = shape.lambda_layout(spec.decay);
    let weights_layout = shape.layout();

    let mut tb = ProgramBuilder::new(lambda_layout.clone(), weights_layout.clone());
    let (loss, _) = prediction_loss(&mut tb, &shape, classification)?;
    let pen = shape.penalty(&mut tb, spec.decay)?;
    let out = tb.add(loss, pen);
    let train_prog = tb.finish(out);

    let mut vb = ProgramBuilder::new(lambda_layout, weights_layout);
    let (loss, logits) = prediction_loss(&mut vb, &shape, classification)?;
    let val_prog = vb.finish_with_logits(loss, Some(logits));

    let name = format!(
        "penalized_{}_{}",
        match spec.model {
            ModelKind::LinearRegression => "linear",
            ModelKind::LogisticRegression => "logistic",
            ModelKind::Mlp { .. } => "mlp",
        },
        spec.decay.name()
    );
    BilevelProblem::new(name, train_prog, val_prog, train, val, test)
}
