//! Loss programs: immutable computation graphs over matrices.
//!
//! A program reads three slots (hyperparameters, weights, data) and produces
//! a scalar. Nodes are stored in topological order, so evaluation is a single
//! forward pass and differentiation a single reverse pass.

use std::sync::Arc;

use crate::ad::flat::Layout;
use crate::ad::matrix::Mat;
use crate::error::{Error, Result};

/// Handle to a node inside a [`ProgramBuilder`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
pub(crate) enum Op {
    Lambda { offset: usize, rows: usize, cols: usize },
    Weights { offset: usize, rows: usize, cols: usize },
    Inputs,
    Targets,
    Constant(Arc<Mat<f64>>),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    MatMul(usize, usize),
    Transpose(usize),
    Neg(usize),
    Scale(usize, f64),
    Exp(usize),
    Log(usize),
    Tanh(usize),
    Sigmoid(usize),
    Pow(usize, f64),
    Sum(usize),
    Mean(usize),
    SoftmaxCrossEntropy { logits: usize, targets: usize },
    SquaredError { pred: usize, target: usize },
    SampleRows { src: usize, batch: usize, stream: u64 },
}

impl Op {
    pub(crate) fn name(&self) -> &'static str {
        match self {
            Op::Lambda { .. } => "lambda",
            Op::Weights { .. } => "weights",
            Op::Inputs => "inputs",
            Op::Targets => "targets",
            Op::Constant(_) => "constant",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Div(..) => "div",
            Op::MatMul(..) => "matmul",
            Op::Transpose(_) => "transpose",
            Op::Neg(_) => "neg",
            Op::Scale(..) => "scale",
            Op::Exp(_) => "exp",
            Op::Log(_) => "log",
            Op::Tanh(_) => "tanh",
            Op::Sigmoid(_) => "sigmoid",
            Op::Pow(..) => "pow",
            Op::Sum(_) => "sum",
            Op::Mean(_) => "mean",
            Op::SoftmaxCrossEntropy { .. } => "softmax_cross_entropy",
            Op::SquaredError { .. } => "squared_error",
            Op::SampleRows { .. } => "sample_rows",
        }
    }

    pub(crate) fn operands(&self) -> Vec<usize> {
        match *self {
            Op::Lambda { .. } | Op::Weights { .. } | Op::Inputs | Op::Targets | Op::Constant(_) => vec![],
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::Div(a, b) | Op::MatMul(a, b) => vec![a, b],
            Op::SoftmaxCrossEntropy { logits, targets } => vec![logits, targets],
            Op::SquaredError { pred, target } => vec![pred, target],
            Op::Transpose(a)
            | Op::Neg(a)
            | Op::Scale(a, _)
            | Op::Exp(a)
            | Op::Log(a)
            | Op::Tanh(a)
            | Op::Sigmoid(a)
            | Op::Pow(a, _)
            | Op::Sum(a)
            | Op::Mean(a)
            | Op::SampleRows { src: a, .. } => vec![a],
        }
    }

    fn remap(&self, map: &[usize]) -> Op {
        let m = |i: usize| map[i];
        match self {
            Op::Add(a, b) => Op::Add(m(*a), m(*b)),
            Op::Sub(a, b) => Op::Sub(m(*a), m(*b)),
            Op::Mul(a, b) => Op::Mul(m(*a), m(*b)),
            Op::Div(a, b) => Op::Div(m(*a), m(*b)),
            Op::MatMul(a, b) => Op::MatMul(m(*a), m(*b)),
            Op::Transpose(a) => Op::Transpose(m(*a)),
            Op::Neg(a) => Op::Neg(m(*a)),
            Op::Scale(a, c) => Op::Scale(m(*a), *c),
            Op::Exp(a) => Op::Exp(m(*a)),
            Op::Log(a) => Op::Log(m(*a)),
            Op::Tanh(a) => Op::Tanh(m(*a)),
            Op::Sigmoid(a) => Op::Sigmoid(m(*a)),
            Op::Pow(a, p) => Op::Pow(m(*a), *p),
            Op::Sum(a) => Op::Sum(m(*a)),
            Op::Mean(a) => Op::Mean(m(*a)),
            Op::SoftmaxCrossEntropy { logits, targets } => Op::SoftmaxCrossEntropy {
                logits: m(*logits),
                targets: m(*targets),
            },
            Op::SquaredError { pred, target } => Op::SquaredError {
                pred: m(*pred),
                target: m(*target),
            },
            Op::SampleRows { src, batch, stream } => Op::SampleRows {
                src: m(*src),
                batch: *batch,
                stream: *stream,
            },
            leaf => leaf.clone(),
        }
    }
}

/// Records operations into a new program.
///
/// Shapes are checked when the program runs, because the number of data rows
/// is only known then.
#[derive(Debug)]
pub struct ProgramBuilder {
    ops: Vec<Op>,
    lambda_layout: Arc<Layout>,
    weights_layout: Arc<Layout>,
}

macro_rules! unary {
    ($($name:ident => $op:ident),* $(,)?) => {
        $(pub fn $name(&mut self, a: Var) -> Var { self.push(Op::$op(a.0)) })*
    };
}

macro_rules! binary {
    ($($name:ident => $op:ident),* $(,)?) => {
        $(pub fn $name(&mut self, a: Var, b: Var) -> Var { self.push(Op::$op(a.0, b.0)) })*
    };
}

impl ProgramBuilder {
    pub fn new(lambda_layout: Arc<Layout>, weights_layout: Arc<Layout>) -> Self {
        ProgramBuilder {
            ops: Vec::new(),
            lambda_layout,
            weights_layout,
        }
    }

    fn push(&mut self, op: Op) -> Var {
        self.ops.push(op);
        Var(self.ops.len() - 1)
    }

    fn slot(layout: &Layout, segment: &str, rows: usize, cols: usize, slot: &str) -> Result<usize> {
        let seg = layout
            .segment(segment)
            .ok_or_else(|| Error::Validation(format!("{slot} layout has no segment `{segment}`")))?;
        if seg.len != rows * cols {
            return Err(Error::Dimension(format!(
                "{slot} segment `{segment}` has {} entries, requested {rows}x{cols}",
                seg.len
            )));
        }
        Ok(seg.offset)
    }

    /// Views a hyperparameter segment as a `rows×cols` matrix.
    pub fn lambda(&mut self, segment: &str, rows: usize, cols: usize) -> Result<Var> {
        let offset = Self::slot(&self.lambda_layout, segment, rows, cols, "lambda")?;
        Ok(self.push(Op::Lambda { offset, rows, cols }))
    }

    /// Views a weight segment as a `rows×cols` matrix.
    pub fn weights(&mut self, segment: &str, rows: usize, cols: usize) -> Result<Var> {
        let offset = Self::slot(&self.weights_layout, segment, rows, cols, "weights")?;
        Ok(self.push(Op::Weights { offset, rows, cols }))
    }

    pub fn inputs(&mut self) -> Var {
        self.push(Op::Inputs)
    }

    pub fn targets(&mut self) -> Var {
        self.push(Op::Targets)
    }

    pub fn constant(&mut self, value: Mat<f64>) -> Var {
        self.push(Op::Constant(Arc::new(value)))
    }

    pub fn scalar(&mut self, value: f64) -> Var {
        self.constant(Mat::filled(1, 1, value))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        self.push(Op::Scale(a.0, c))
    }

    pub fn pow(&mut self, a: Var, p: f64) -> Var {
        self.push(Op::Pow(a.0, p))
    }

    binary! {
        add => Add,
        sub => Sub,
        mul => Mul,
        div => Div,
        matmul => MatMul,
    }

    unary! {
        transpose => Transpose,
        neg => Neg,
        exp => Exp,
        log => Log,
        tanh => Tanh,
        sigmoid => Sigmoid,
        sum => Sum,
        mean => Mean,
    }

    /// Mean over rows of the cross-entropy between `softmax(logits)` and
    /// the target distribution.
    pub fn softmax_cross_entropy(&mut self, logits: Var, targets: Var) -> Var {
        self.push(Op::SoftmaxCrossEntropy {
            logits: logits.0,
            targets: targets.0,
        })
    }

    /// `(1/2n) Σ ‖pred_i − target_i‖²` over the `n` rows.
    pub fn squared_error(&mut self, pred: Var, target: Var) -> Var {
        self.push(Op::SquaredError {
            pred: pred.0,
            target: target.0,
        })
    }

    /// Draws `batch` rows without replacement. Nodes sharing a `stream` draw
    /// the same rows for a given seed, so inputs and targets stay aligned.
    pub fn sample_rows(&mut self, src: Var, batch: usize, stream: u64) -> Var {
        self.push(Op::SampleRows { src: src.0, batch, stream })
    }

    pub fn finish(self, output: Var) -> LossProgram {
        self.finish_with_logits(output, None)
    }

    /// Finishes the program, additionally tagging a node whose value is the
    /// model's prediction matrix (see [`LossProgram::predict`]).
    pub fn finish_with_logits(self, output: Var, logits: Option<Var>) -> LossProgram {
        let n = self.ops.len();
        let mut live = vec![false; n];
        live[output.0] = true;
        if let Some(l) = logits {
            live[l.0] = true;
        }
        for i in (0..n).rev() {
            if live[i] {
                for j in self.ops[i].operands() {
                    live[j] = true;
                }
            }
        }
        let mut map = vec![usize::MAX; n];
        let mut ops = Vec::new();
        for i in 0..n {
            if live[i] {
                map[i] = ops.len();
                ops.push(self.ops[i].remap(&map));
            }
        }
        LossProgram {
            ops,
            output: map[output.0],
            logits: logits.map(|l| map[l.0]),
            lambda_layout: self.lambda_layout,
            weights_layout: self.weights_layout,
        }
    }
}

/// An immutable scalar-valued program `L(λ, w; data)`.
#[derive(Debug, Clone)]
pub struct LossProgram {
    pub(crate) ops: Vec<Op>,
    pub(crate) output: usize,
    pub(crate) logits: Option<usize>,
    lambda_layout: Arc<Layout>,
    weights_layout: Arc<Layout>,
}

impl LossProgram {
    pub fn lambda_layout(&self) -> &Arc<Layout> {
        &self.lambda_layout
    }

    pub fn weights_layout(&self) -> &Arc<Layout> {
        &self.weights_layout
    }

    pub fn node_count(&self) -> usize {
        self.ops.len()
    }

    /// True when no node reads the hyperparameter slot.
    pub fn ignores_lambda(&self) -> bool {
        !self.ops.iter().any(|op| matches!(op, Op::Lambda { .. }))
    }

    /// True when no node reads the weight slot.
    pub fn ignores_weights(&self) -> bool {
        !self.ops.iter().any(|op| matches!(op, Op::Weights { .. }))
    }

    pub fn has_logits(&self) -> bool {
        self.logits.is_some()
    }
}
