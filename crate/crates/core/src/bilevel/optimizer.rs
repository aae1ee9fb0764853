use serde::{Deserialize, Serialize};

use crate::ad::FlatVector;
use crate::error::{Error, Result};

/// Update rule with its moment constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "lowercase", deny_unknown_fields)]
pub enum Rule {
    Sgd,
    Adam {
        #[serde(default = "defaults::beta1")]
        beta1: f64,
        #[serde(default = "defaults::beta2")]
        beta2: f64,
        #[serde(default = "defaults::eps")]
        eps: f64,
    },
    Rmsprop {
        #[serde(default = "defaults::decay")]
        decay: f64,
        #[serde(default = "defaults::eps")]
        eps: f64,
    },
}

mod defaults {
    pub fn beta1() -> f64 {
        0.9
    }
    pub fn beta2() -> f64 {
        0.999
    }
    pub fn decay() -> f64 {
        0.99
    }
    pub fn eps() -> f64 {
        1e-8
    }
}

impl Rule {
    pub fn adam() -> Rule {
        Rule::Adam {
            beta1: defaults::beta1(),
            beta2: defaults::beta2(),
            eps: defaults::eps(),
        }
    }

    pub fn rmsprop() -> Rule {
        Rule::Rmsprop {
            decay: defaults::decay(),
            eps: defaults::eps(),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Rule::Sgd => "sgd",
            Rule::Adam { .. } => "adam",
            Rule::Rmsprop { .. } => "rmsprop",
        }
    }
}

/// Optimizer state threaded through successive steps.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    rule: Rule,
    lr: f64,
    first: Option<FlatVector>,
    second: Option<FlatVector>,
    step: u64,
}

impl OptimizerState {
    pub fn new(rule: Rule, lr: f64) -> Result<Self> {
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(Error::Validation(format!("step size must be positive, got {lr}")));
        }
        Ok(OptimizerState {
            rule,
            lr,
            first: None,
            second: None,
            step: 0,
        })
    }

    pub fn sgd(lr: f64) -> Result<Self> {
        Self::new(Rule::Sgd, lr)
    }

    pub fn rule(&self) -> Rule {
        self.rule
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    /// Number of steps taken so far.
    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Applies one update to `x` in place.
    pub fn step(&mut self, x: &mut FlatVector, g: &FlatVector) -> Result<()> {
        x.check_layout(g, "optimizer step")?;
        if !g.is_finite() {
            return Err(Error::NonFiniteStep {
                step: self.step as usize,
                what: "gradient".into(),
            });
        }
        let lr = self.lr;
        match self.rule {
            Rule::Sgd => x.axpy(-lr, g),
            Rule::Adam { beta1, beta2, eps } => {
                let t = (self.step + 1) as i32;
                let m = moment(&mut self.first, g)?;
                for (mi, gi) in m.as_mut_slice().iter_mut().zip(g.as_slice()) {
                    *mi = beta1 * *mi + (1.0 - beta1) * gi;
                }
                let v = moment(&mut self.second, g)?;
                for (vi, gi) in v.as_mut_slice().iter_mut().zip(g.as_slice()) {
                    *vi = beta2 * *vi + (1.0 - beta2) * gi * gi;
                }
                let bc1 = 1.0 - beta1.powi(t);
                let bc2 = 1.0 - beta2.powi(t);
                let (m, v) = (self.first.as_ref().unwrap(), self.second.as_ref().unwrap());
                for ((xi, mi), vi) in x.as_mut_slice().iter_mut().zip(m.as_slice()).zip(v.as_slice()) {
                    *xi -= lr * (mi / bc1) / ((vi / bc2).sqrt() + eps);
                }
            }
            Rule::Rmsprop { decay, eps } => {
                let v = moment(&mut self.second, g)?;
                for (vi, gi) in v.as_mut_slice().iter_mut().zip(g.as_slice()) {
                    *vi = decay * *vi + (1.0 - decay) * gi * gi;
                }
                let v = self.second.as_ref().unwrap();
                for ((xi, gi), vi) in x.as_mut_slice().iter_mut().zip(g.as_slice()).zip(v.as_slice()) {
                    *xi -= lr * gi / (vi.sqrt() + eps);
                }
            }
        }
        self.step += 1;
        Ok(())
    }
}

fn moment<'a>(slot: &'a mut Option<FlatVector>, like: &FlatVector) -> Result<&'a mut FlatVector> {
    match slot {
        Some(m) => {
            m.check_layout(like, "optimizer moments")?;
            Ok(m)
        }
        None => Ok(slot.insert(FlatVector::zeros(like.layout().clone()))),
    }
}

/// Functional form of [`OptimizerState::step`].
pub fn optimizer_step(state: &OptimizerState, x: &FlatVector, g: &FlatVector) -> Result<(FlatVector, OptimizerState)> {
    let mut state = state.clone();
    let mut x = x.clone();
    state.step(&mut x, g)?;
    Ok((x, state))
}
