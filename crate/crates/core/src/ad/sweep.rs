//! Forward evaluation and reverse accumulation over a [`LossProgram`].
//!
//! Both sweeps are generic over [`Scalar`]: with `f64` they give the loss and
//! its gradient, with [`Dual`] (weights seeded by a direction `v`) the tangent
//! of the gradient gives `H·v` in the weight slot and `vᵀ∂²L/∂w∂λ` in the
//! hyperparameter slot.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::ad::dataset::Dataset;
use crate::ad::flat::FlatVector;
use crate::ad::matrix::Mat;
use crate::ad::program::{LossProgram, Op};
use crate::ad::scalar::{Dual, Scalar};
use crate::error::{Error, Result};

/// Loss value plus gradients with respect to both parameter slots.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub value: f64,
    pub lambda: FlatVector,
    pub weights: FlatVector,
}

/// Directional second derivatives along a weight-space direction `v`.
#[derive(Debug, Clone)]
pub struct SecondOrder {
    /// `H·v` with `H = ∂²L/∂w∂w` (weight layout).
    pub hvp: FlatVector,
    /// `vᵀ·∂²L/∂w∂λ` (hyperparameter layout).
    pub mixed: FlatVector,
}

impl LossProgram {
    fn check_slots(&self, lambda: &FlatVector, weights: &FlatVector) -> Result<()> {
        if lambda.len() != self.lambda_layout().len() {
            return Err(Error::Dimension(format!(
                "lambda has {} entries, program expects {}",
                lambda.len(),
                self.lambda_layout().len()
            )));
        }
        if weights.len() != self.weights_layout().len() {
            return Err(Error::Dimension(format!(
                "weights have {} entries, program expects {}",
                weights.len(),
                self.weights_layout().len()
            )));
        }
        Ok(())
    }

    /// Evaluates the program. Identical arguments give bit-identical results.
    pub fn eval(&self, lambda: &FlatVector, weights: &FlatVector, data: &Dataset, seed: u64) -> Result<f64> {
        self.check_slots(lambda, weights)?;
        let values = forward::<f64>(self, lambda.as_slice(), weights.as_slice(), data, seed)?;
        Ok(values[self.output].data[0])
    }

    /// Value of the node tagged as the model prediction.
    pub fn predict(&self, lambda: &FlatVector, weights: &FlatVector, data: &Dataset, seed: u64) -> Result<Mat<f64>> {
        self.check_slots(lambda, weights)?;
        let node = self
            .logits
            .ok_or_else(|| Error::Validation("program has no prediction node".into()))?;
        let mut values = forward::<f64>(self, lambda.as_slice(), weights.as_slice(), data, seed)?;
        Ok(values.swap_remove(node))
    }

    pub fn gradients(&self, lambda: &FlatVector, weights: &FlatVector, data: &Dataset, seed: u64) -> Result<Gradients> {
        self.check_slots(lambda, weights)?;
        let values = forward::<f64>(self, lambda.as_slice(), weights.as_slice(), data, seed)?;
        let (gl, gw) = backward(self, &values, lambda.len(), weights.len(), seed);
        let value = values[self.output].data[0];
        let lambda_grad = FlatVector::from_vec(self.lambda_layout().clone(), gl)?;
        let weights_grad = FlatVector::from_vec(self.weights_layout().clone(), gw)?;
        if !lambda_grad.is_finite() || !weights_grad.is_finite() {
            return Err(Error::Numeric("non-finite gradient".into()));
        }
        Ok(Gradients {
            value,
            lambda: lambda_grad,
            weights: weights_grad,
        })
    }

    /// `∂L/∂w`, laid out like the weights.
    pub fn grad_w(&self, lambda: &FlatVector, weights: &FlatVector, data: &Dataset, seed: u64) -> Result<FlatVector> {
        Ok(self.gradients(lambda, weights, data, seed)?.weights)
    }

    /// `∂L/∂λ`, laid out like the hyperparameters.
    pub fn grad_lambda(&self, lambda: &FlatVector, weights: &FlatVector, data: &Dataset, seed: u64) -> Result<FlatVector> {
        Ok(self.gradients(lambda, weights, data, seed)?.lambda)
    }

    /// Both second-order products along `v` from one forward-over-reverse pass.
    pub fn second_order(
        &self,
        lambda: &FlatVector,
        weights: &FlatVector,
        data: &Dataset,
        seed: u64,
        v: &FlatVector,
    ) -> Result<SecondOrder> {
        self.check_slots(lambda, weights)?;
        if v.len() != weights.len() {
            return Err(Error::Dimension(format!(
                "direction has {} entries, weights have {}",
                v.len(),
                weights.len()
            )));
        }
        let lam: Vec<Dual> = lambda.as_slice().iter().map(|&x| Dual::new(x, 0.0)).collect();
        let w: Vec<Dual> = weights
            .as_slice()
            .iter()
            .zip(v.as_slice())
            .map(|(&x, &dx)| Dual::new(x, dx))
            .collect();
        let values = forward::<Dual>(self, &lam, &w, data, seed)?;
        let (gl, gw) = backward(self, &values, lam.len(), w.len(), seed);
        let hvp = FlatVector::from_vec(self.weights_layout().clone(), gw.iter().map(|d| d.eps).collect())?;
        let mixed = FlatVector::from_vec(self.lambda_layout().clone(), gl.iter().map(|d| d.eps).collect())?;
        if !hvp.is_finite() || !mixed.is_finite() {
            return Err(Error::Numeric("non-finite second-order product".into()));
        }
        Ok(SecondOrder { hvp, mixed })
    }

    /// Hessian-vector product `H·v`, `H = ∂²L/∂w∂w`, without forming `H`.
    pub fn hvp(&self, lambda: &FlatVector, weights: &FlatVector, data: &Dataset, seed: u64, v: &FlatVector) -> Result<FlatVector> {
        Ok(self.second_order(lambda, weights, data, seed, v)?.hvp)
    }

    /// Mixed-partial product `vᵀ·∂²L/∂w∂λ`.
    pub fn mixed_vjp(
        &self,
        lambda: &FlatVector,
        weights: &FlatVector,
        data: &Dataset,
        seed: u64,
        v: &FlatVector,
    ) -> Result<FlatVector> {
        Ok(self.second_order(lambda, weights, data, seed, v)?.mixed)
    }
}

/// Output shape of a broadcasting elementwise op: each dimension must match
/// or be 1 on one side.
fn broadcast_shape(a: (usize, usize), b: (usize, usize), node: usize) -> Result<(usize, usize)> {
    let dim = |x: usize, y: usize| -> Option<usize> {
        if x == y {
            Some(x)
        } else if x == 1 {
            Some(y)
        } else if y == 1 {
            Some(x)
        } else {
            None
        }
    };
    match (dim(a.0, b.0), dim(a.1, b.1)) {
        (Some(r), Some(c)) => Ok((r, c)),
        _ => Err(Error::Dimension(format!(
            "node {node}: cannot broadcast {}x{} with {}x{}",
            a.0, a.1, b.0, b.1
        ))),
    }
}

#[inline]
fn bidx<T>(m: &Mat<T>, r: usize, c: usize) -> usize {
    (if m.rows == 1 { 0 } else { r }) * m.cols + if m.cols == 1 { 0 } else { c }
}

fn zip_broadcast<T: Scalar>(a: &Mat<T>, b: &Mat<T>, node: usize, f: impl Fn(T, T) -> T) -> Result<Mat<T>> {
    let (rows, cols) = broadcast_shape(a.shape(), b.shape(), node)?;
    if a.shape() == b.shape() {
        let data = a.data.iter().zip(&b.data).map(|(&x, &y)| f(x, y)).collect();
        return Ok(Mat { rows, cols, data });
    }
    let mut data = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        for c in 0..cols {
            data.push(f(a.data[bidx(a, r, c)], b.data[bidx(b, r, c)]));
        }
    }
    Ok(Mat { rows, cols, data })
}

fn sample_indices(n: usize, batch: usize, seed: u64, stream: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    rand::seq::index::sample(&mut rng, n, batch).into_vec()
}

/// Row-wise log-sum-exp with max shift.
fn log_sum_exp_rows<T: Scalar>(z: &Mat<T>) -> Vec<T> {
    (0..z.rows)
        .map(|r| {
            let row = z.row(r);
            let mut m = row[0];
            for &x in row {
                if x.value() > m.value() {
                    m = x;
                }
            }
            let mut s = T::zero();
            for &x in row {
                s += (x - m).exp();
            }
            m + s.ln()
        })
        .collect()
}

pub(crate) fn forward<T: Scalar>(
    prog: &LossProgram,
    lambda: &[T],
    weights: &[T],
    data: &Dataset,
    seed: u64,
) -> Result<Vec<Mat<T>>> {
    let mut vals: Vec<Mat<T>> = Vec::with_capacity(prog.ops.len());
    for (id, op) in prog.ops.iter().enumerate() {
        let v = match op {
            Op::Lambda { offset, rows, cols } => Mat {
                rows: *rows,
                cols: *cols,
                data: lambda[*offset..offset + rows * cols].to_vec(),
            },
            Op::Weights { offset, rows, cols } => Mat {
                rows: *rows,
                cols: *cols,
                data: weights[*offset..offset + rows * cols].to_vec(),
            },
            Op::Inputs => data.inputs().lift(),
            Op::Targets => data.targets().lift(),
            Op::Constant(c) => c.lift(),
            Op::Add(a, b) => zip_broadcast(&vals[*a], &vals[*b], id, |x, y| x + y)?,
            Op::Sub(a, b) => zip_broadcast(&vals[*a], &vals[*b], id, |x, y| x - y)?,
            Op::Mul(a, b) => zip_broadcast(&vals[*a], &vals[*b], id, |x, y| x * y)?,
            Op::Div(a, b) => zip_broadcast(&vals[*a], &vals[*b], id, |x, y| x / y)?,
            Op::MatMul(a, b) => vals[*a]
                .matmul(&vals[*b])
                .map_err(|e| Error::Dimension(format!("node {id}: {e}")))?,
            Op::Transpose(a) => vals[*a].transpose(),
            Op::Neg(a) => vals[*a].map(|x| -x),
            Op::Scale(a, c) => vals[*a].map(|x| x.scale(*c)),
            Op::Exp(a) => vals[*a].map(T::exp),
            Op::Log(a) => vals[*a].map(T::ln),
            Op::Tanh(a) => vals[*a].map(T::tanh),
            Op::Sigmoid(a) => vals[*a].map(T::sigmoid),
            Op::Pow(a, p) => vals[*a].map(|x| x.powf(*p)),
            Op::Sum(a) => Mat::filled(1, 1, vals[*a].sum()),
            Op::Mean(a) => {
                let m = &vals[*a];
                if m.data.is_empty() {
                    return Err(Error::Dimension(format!("node {id}: mean of empty matrix")));
                }
                Mat::filled(1, 1, m.sum().scale(1.0 / m.data.len() as f64))
            }
            Op::SoftmaxCrossEntropy { logits, targets } => {
                let (z, t) = (&vals[*logits], &vals[*targets]);
                if z.shape() != t.shape() || z.rows == 0 || z.cols == 0 {
                    return Err(Error::Dimension(format!(
                        "node {id}: cross-entropy logits {}x{} vs targets {}x{}",
                        z.rows, z.cols, t.rows, t.cols
                    )));
                }
                let lse = log_sum_exp_rows(z);
                let mut acc = T::zero();
                for r in 0..z.rows {
                    for c in 0..z.cols {
                        let tv = t.at(r, c);
                        acc += tv * (lse[r] - z.at(r, c));
                    }
                }
                Mat::filled(1, 1, acc.scale(1.0 / z.rows as f64))
            }
            Op::SquaredError { pred, target } => {
                let (p, t) = (&vals[*pred], &vals[*target]);
                if p.shape() != t.shape() || p.rows == 0 {
                    return Err(Error::Dimension(format!(
                        "node {id}: squared error {}x{} vs {}x{}",
                        p.rows, p.cols, t.rows, t.cols
                    )));
                }
                let mut acc = T::zero();
                for (&x, &y) in p.data.iter().zip(&t.data) {
                    let d = x - y;
                    acc += d * d;
                }
                Mat::filled(1, 1, acc.scale(0.5 / p.rows as f64))
            }
            Op::SampleRows { src, batch, stream } => {
                let m = &vals[*src];
                if *batch > m.rows {
                    return Err(Error::Dimension(format!(
                        "node {id}: batch of {batch} from {} rows",
                        m.rows
                    )));
                }
                m.select_rows(&sample_indices(m.rows, *batch, seed, *stream))
            }
        };
        if v.data.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFiniteNode { node: id, op: op.name() });
        }
        vals.push(v);
    }
    if vals[prog.output].shape() != (1, 1) {
        let (r, c) = vals[prog.output].shape();
        return Err(Error::Dimension(format!("program output is {r}x{c}, expected a scalar")));
    }
    Ok(vals)
}

fn accumulate<T: Scalar>(slot: &mut Option<Mat<T>>, rows: usize, cols: usize) -> &mut Mat<T> {
    slot.get_or_insert_with(|| Mat::zeros_of(rows, cols))
}

/// Adds `g` into `target`, summing over broadcast dimensions.
fn add_reduced<T: Scalar>(target: &mut Mat<T>, g: &Mat<T>, f: impl Fn(usize, T) -> T) {
    if target.shape() == g.shape() {
        for (i, (t, &x)) in target.data.iter_mut().zip(&g.data).enumerate() {
            *t += f(i, x);
        }
        return;
    }
    for r in 0..g.rows {
        for c in 0..g.cols {
            let k = r * g.cols + c;
            let i = bidx(target, r, c);
            target.data[i] += f(k, g.data[k]);
        }
    }
}

/// Reverse accumulation from the program output. Returns the adjoints of the
/// hyperparameter and weight slots.
pub(crate) fn backward<T: Scalar>(
    prog: &LossProgram,
    vals: &[Mat<T>],
    lambda_len: usize,
    weights_len: usize,
    seed: u64,
) -> (Vec<T>, Vec<T>) {
    let n = prog.ops.len();
    let mut adj: Vec<Option<Mat<T>>> = (0..n).map(|_| None).collect();
    adj[prog.output] = Some(Mat::filled(1, 1, T::one()));
    let mut gl = vec![T::zero(); lambda_len];
    let mut gw = vec![T::zero(); weights_len];

    for id in (0..n).rev() {
        let Some(g) = adj[id].take() else { continue };
        let shape_of = |i: usize| vals[i].shape();
        match &prog.ops[id] {
            Op::Lambda { offset, .. } => {
                for (k, &x) in g.data.iter().enumerate() {
                    gl[offset + k] += x;
                }
            }
            Op::Weights { offset, .. } => {
                for (k, &x) in g.data.iter().enumerate() {
                    gw[offset + k] += x;
                }
            }
            Op::Inputs | Op::Targets | Op::Constant(_) => {}
            Op::Add(a, b) => {
                let (ra, ca) = shape_of(*a);
                add_reduced(accumulate(&mut adj[*a], ra, ca), &g, |_, x| x);
                let (rb, cb) = shape_of(*b);
                add_reduced(accumulate(&mut adj[*b], rb, cb), &g, |_, x| x);
            }
            Op::Sub(a, b) => {
                let (ra, ca) = shape_of(*a);
                add_reduced(accumulate(&mut adj[*a], ra, ca), &g, |_, x| x);
                let (rb, cb) = shape_of(*b);
                add_reduced(accumulate(&mut adj[*b], rb, cb), &g, |_, x| -x);
            }
            Op::Mul(a, b) => {
                let (va, vb) = (&vals[*a], &vals[*b]);
                let cols = g.cols;
                let (ra, ca) = va.shape();
                add_reduced(accumulate(&mut adj[*a], ra, ca), &g, |k, x| {
                    x * vb.data[bidx(vb, k / cols, k % cols)]
                });
                let (rb, cb) = vb.shape();
                add_reduced(accumulate(&mut adj[*b], rb, cb), &g, |k, x| {
                    x * va.data[bidx(va, k / cols, k % cols)]
                });
            }
            Op::Div(a, b) => {
                let (va, vb) = (&vals[*a], &vals[*b]);
                let cols = g.cols;
                let (ra, ca) = va.shape();
                add_reduced(accumulate(&mut adj[*a], ra, ca), &g, |k, x| {
                    x / vb.data[bidx(vb, k / cols, k % cols)]
                });
                let (rb, cb) = vb.shape();
                add_reduced(accumulate(&mut adj[*b], rb, cb), &g, |k, x| {
                    let y = vb.data[bidx(vb, k / cols, k % cols)];
                    -(x * va.data[bidx(va, k / cols, k % cols)]) / (y * y)
                });
            }
            Op::MatMul(a, b) => {
                let ga = g.matmul_t(&vals[*b]);
                let gb = vals[*a].t_matmul(&g);
                let (ra, ca) = shape_of(*a);
                add_reduced(accumulate(&mut adj[*a], ra, ca), &ga, |_, x| x);
                let (rb, cb) = shape_of(*b);
                add_reduced(accumulate(&mut adj[*b], rb, cb), &gb, |_, x| x);
            }
            Op::Transpose(a) => {
                let gt = g.transpose();
                let (ra, ca) = shape_of(*a);
                add_reduced(accumulate(&mut adj[*a], ra, ca), &gt, |_, x| x);
            }
            Op::Neg(a) => {
                let (ra, ca) = shape_of(*a);
                add_reduced(accumulate(&mut adj[*a], ra, ca), &g, |_, x| -x);
            }
            Op::Scale(a, c) => {
                let (ra, ca) = shape_of(*a);
                add_reduced(accumulate(&mut adj[*a], ra, ca), &g, |_, x| x.scale(*c));
            }
            Op::Exp(a) => {
                let y = &vals[id];
                let (ra, ca) = shape_of(*a);
                add_reduced(accumulate(&mut adj[*a], ra, ca), &g, |k, x| x * y.data[k]);
            }
            Op::Log(a) => {
                let va = &vals[*a];
                let (ra, ca) = shape_of(*a);
                add_reduced(accumulate(&mut adj[*a], ra, ca), &g, |k, x| x / va.data[k]);
            }
            Op::Tanh(a) => {
                let y = &vals[id];
                let (ra, ca) = shape_of(*a);
                add_reduced(accumulate(&mut adj[*a], ra, ca), &g, |k, x| {
                    x * (T::one() - y.data[k] * y.data[k])
                });
            }
            Op::Sigmoid(a) => {
                let y = &vals[id];
                let (ra, ca) = shape_of(*a);
                add_reduced(accumulate(&mut adj[*a], ra, ca), &g, |k, x| {
                    x * y.data[k] * (T::one() - y.data[k])
                });
            }
            Op::Pow(a, p) => {
                let va = &vals[*a];
                let (ra, ca) = shape_of(*a);
                add_reduced(accumulate(&mut adj[*a], ra, ca), &g, |k, x| {
                    x * va.data[k].powf(p - 1.0).scale(*p)
                });
            }
            Op::Sum(a) => {
                let (ra, ca) = shape_of(*a);
                let s = g.data[0];
                for t in &mut accumulate(&mut adj[*a], ra, ca).data {
                    *t += s;
                }
            }
            Op::Mean(a) => {
                let (ra, ca) = shape_of(*a);
                let s = g.data[0].scale(1.0 / (ra * ca) as f64);
                for t in &mut accumulate(&mut adj[*a], ra, ca).data {
                    *t += s;
                }
            }
            Op::SoftmaxCrossEntropy { logits, targets } => {
                let (z, t) = (&vals[*logits], &vals[*targets]);
                let s = g.data[0].scale(1.0 / z.rows as f64);
                let lse = log_sum_exp_rows(z);
                let (rows, cols) = z.shape();
                {
                    let gz = accumulate(&mut adj[*logits], rows, cols);
                    for r in 0..rows {
                        let mass = {
                            let mut m = T::zero();
                            for &x in t.row(r) {
                                m += x;
                            }
                            m
                        };
                        for c in 0..cols {
                            let p = (z.at(r, c) - lse[r]).exp();
                            gz.data[r * cols + c] += s * (p * mass - t.at(r, c));
                        }
                    }
                }
                let gt = accumulate(&mut adj[*targets], rows, cols);
                for r in 0..rows {
                    for c in 0..cols {
                        gt.data[r * cols + c] += s * (lse[r] - z.at(r, c));
                    }
                }
            }
            Op::SquaredError { pred, target } => {
                let (p, t) = (&vals[*pred], &vals[*target]);
                let s = g.data[0].scale(1.0 / p.rows as f64);
                let (rows, cols) = p.shape();
                {
                    let gp = accumulate(&mut adj[*pred], rows, cols);
                    for k in 0..p.data.len() {
                        gp.data[k] += s * (p.data[k] - t.data[k]);
                    }
                }
                let gt = accumulate(&mut adj[*target], rows, cols);
                for k in 0..p.data.len() {
                    gt.data[k] -= s * (p.data[k] - t.data[k]);
                }
            }
            Op::SampleRows { src, .. } => {
                // Recover the row indices by re-running the same draw.
                let (rows, cols) = shape_of(*src);
                let Op::SampleRows { stream, .. } = &prog.ops[id] else { unreachable!() };
                let idx = sample_indices(rows, g.rows, seed, *stream);
                let gs = accumulate(&mut adj[*src], rows, cols);
                for (r, &src_row) in idx.iter().enumerate() {
                    for c in 0..cols {
                        gs.data[src_row * cols + c] += g.data[r * cols + c];
                    }
                }
            }
        }
    }
    (gl, gw)
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::ad::flat::Layout;
    use crate::ad::program::ProgramBuilder;

    fn half_norm_sq(n: usize) -> LossProgram {
        let mut b = ProgramBuilder::new(Arc::new(Layout::default()), Arc::new(Layout::single("w", n)));
        let w = b.weights("w", n, 1).unwrap();
        let sq = b.mul(w, w);
        let s = b.sum(sq);
        let out = b.scale(s, 0.5);
        b.finish(out)
    }

    fn no_lambda() -> FlatVector {
        FlatVector::from_slice("lambda", &[])
    }

    /// `½wᵀAw + wᵀBλ` with caller-supplied A (m×m) and B (m×n).
    fn bilinear(a: Mat<f64>, bm: Mat<f64>) -> LossProgram {
        let (m, n) = (a.rows, bm.cols);
        let mut b = ProgramBuilder::new(Arc::new(Layout::single("lambda", n)), Arc::new(Layout::single("w", m)));
        let w = b.weights("w", m, 1).unwrap();
        let lam = b.lambda("lambda", n, 1).unwrap();
        let ac = b.constant(a);
        let bc = b.constant(bm);
        let aw = b.matmul(ac, w);
        let waw = b.mul(w, aw);
        let quad = b.sum(waw);
        let half = b.scale(quad, 0.5);
        let bl = b.matmul(bc, lam);
        let wbl = b.mul(w, bl);
        let lin = b.sum(wbl);
        let out = b.add(half, lin);
        b.finish(out)
    }

    fn mat(rows: usize, cols: usize, data: &[f64]) -> Mat<f64> {
        Mat::from_vec(rows, cols, data.to_vec()).unwrap()
    }

    #[test]
    fn half_norm_values_and_gradient() {
        let f = half_norm_sq(2);
        let d = Dataset::empty();
        let zero = FlatVector::from_slice("w", &[0.0, 0.0]);
        assert_eq!(f.eval(&no_lambda(), &zero, &d, 0).unwrap(), 0.0);
        let w = FlatVector::from_slice("w", &[3.0, 4.0]);
        assert_eq!(f.eval(&no_lambda(), &w, &d, 0).unwrap(), 12.5);
        assert_eq!(f.grad_w(&no_lambda(), &w, &d, 0).unwrap().as_slice(), &[3.0, 4.0]);
        let v = FlatVector::from_slice("w", &[1.0, 2.0]);
        assert_eq!(f.hvp(&no_lambda(), &w, &d, 0, &v).unwrap().as_slice(), &[1.0, 2.0]);
        assert!(f.mixed_vjp(&no_lambda(), &w, &d, 0, &v).unwrap().is_empty());
    }

    #[test]
    fn bilinear_hvp_and_mixed_products_are_exact() {
        let a = mat(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let bm = mat(2, 3, &[1.0, -1.0, 0.0, 0.5, 2.0, 3.0]);
        let f = bilinear(a, bm);
        let d = Dataset::empty();
        let lam = FlatVector::from_slice("lambda", &[0.3, -0.2, 1.0]);
        let w = FlatVector::from_slice("w", &[0.7, -1.1]);
        let v = FlatVector::from_slice("w", &[1.0, 2.0]);
        let so = f.second_order(&lam, &w, &d, 0, &v).unwrap();
        // A·v
        assert_eq!(so.hvp.as_slice(), &[3.0, 2.5]);
        // Bᵀ·v
        assert_eq!(so.mixed.as_slice(), &[2.0, 3.0, 6.0]);
        // ∂/∂λ = Bᵀw
        let gl = f.grad_lambda(&lam, &w, &d, 0).unwrap();
        let expect = [0.7 + 0.5 * -1.1, -0.7 + 2.0 * -1.1, 3.0 * -1.1];
        for (g, e) in gl.as_slice().iter().zip(expect) {
            assert!((g - e).abs() < 1e-15);
        }
    }

    #[test]
    fn lambda_independent_program_has_zero_lambda_gradient() {
        let mut b = ProgramBuilder::new(Arc::new(Layout::single("lambda", 2)), Arc::new(Layout::single("w", 2)));
        let w = b.weights("w", 2, 1).unwrap();
        let e = b.exp(w);
        let out = b.sum(e);
        let f = b.finish(out);
        let lam = FlatVector::from_slice("lambda", &[1.0, 2.0]);
        let w = FlatVector::from_slice("w", &[0.1, 0.2]);
        let d = Dataset::empty();
        let g = f.gradients(&lam, &w, &d, 0).unwrap();
        assert!(g.lambda.as_slice().iter().all(|&x| x == 0.0));
        let m = f.mixed_vjp(&lam, &w, &d, 0, &w).unwrap();
        assert!(m.as_slice().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn weight_decay_mixed_product_matches_hand_derivation() {
        // ½ Σ e^{λⱼ} wⱼ²  ⇒  vᵀ ∂²/∂w∂λ = e^{λⱼ} wⱼ vⱼ
        let mut b = ProgramBuilder::new(Arc::new(Layout::single("decay", 3)), Arc::new(Layout::single("w", 3)));
        let w = b.weights("w", 3, 1).unwrap();
        let lam = b.lambda("decay", 3, 1).unwrap();
        let rate = b.exp(lam);
        let sq = b.mul(w, w);
        let pen = b.mul(rate, sq);
        let s = b.sum(pen);
        let out = b.scale(s, 0.5);
        let f = b.finish(out);
        let lam = FlatVector::from_slice("decay", &[0.5, -1.0, 0.0]);
        let wv = FlatVector::from_slice("w", &[1.5, -2.0, 0.25]);
        let v = FlatVector::from_slice("w", &[0.3, 0.7, -1.0]);
        let d = Dataset::empty();
        let mixed = f.mixed_vjp(&lam, &wv, &d, 0, &v).unwrap();
        for j in 0..3 {
            let expect = lam.as_slice()[j].exp() * wv.as_slice()[j] * v.as_slice()[j];
            assert!((mixed.as_slice()[j] - expect).abs() < 1e-14);
        }
        // and the same number by differencing grad_λ along v
        let eps = 1e-6;
        let mut p = wv.clone();
        p.axpy(eps, &v);
        let mut m = wv.clone();
        m.axpy(-eps, &v);
        let fd = f
            .grad_lambda(&lam, &p, &d, 0)
            .unwrap()
            .sub(&f.grad_lambda(&lam, &m, &d, 0).unwrap())
            .scaled(0.5 / eps);
        for (a, b) in mixed.as_slice().iter().zip(fd.as_slice()) {
            assert!((a - b).abs() < 1e-8);
        }
    }

    #[test]
    fn softmax_cross_entropy_at_zero_logits_is_ln_k() {
        let x = mat(4, 2, &[1.0, 0.0, 0.0, 1.0, -1.0, 0.5, 0.2, -0.3]);
        let data = Dataset::classification(x, vec![0, 1, 0, 1], 2, "blob").unwrap();
        let mut b = ProgramBuilder::new(Arc::new(Layout::default()), Arc::new(Layout::single("W", 4)));
        let wv = b.weights("W", 2, 2).unwrap();
        let xs = b.inputs();
        let ys = b.targets();
        let z = b.matmul(xs, wv);
        let out = b.softmax_cross_entropy(z, ys);
        let f = b.finish(out);
        let w = FlatVector::from_slice("W", &[0.0; 4]);
        let l = f.eval(&no_lambda(), &w, &data, 0).unwrap();
        assert!((l - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn shape_mismatch_and_non_finite_are_reported() {
        let f = half_norm_sq(2);
        let d = Dataset::empty();
        let short = FlatVector::from_slice("w", &[1.0]);
        assert!(matches!(f.eval(&no_lambda(), &short, &d, 0), Err(Error::Dimension(_))));

        let mut b = ProgramBuilder::new(Arc::new(Layout::default()), Arc::new(Layout::single("w", 1)));
        let w = b.weights("w", 1, 1).unwrap();
        let l = b.log(w);
        let out = b.sum(l);
        let f = b.finish(out);
        let neg = FlatVector::from_slice("w", &[-1.0]);
        match f.eval(&no_lambda(), &neg, &d, 0) {
            Err(Error::NonFiniteNode { node, op }) => {
                assert_eq!(op, "log");
                assert_eq!(node, 1);
            }
            other => panic!("expected non-finite error, got {other:?}"),
        }
    }

    #[test]
    fn row_sampling_is_seeded_and_differentiable() {
        let x = mat(6, 1, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let y = mat(6, 1, &[0.5, 1.0, 1.5, 2.0, 2.5, 3.0]);
        let data = Dataset::regression(x, y, "line").unwrap();
        let mut b = ProgramBuilder::new(Arc::new(Layout::default()), Arc::new(Layout::single("w", 1)));
        let w = b.weights("w", 1, 1).unwrap();
        let xs = b.inputs();
        let ys = b.targets();
        let xb = b.sample_rows(xs, 3, 7);
        let yb = b.sample_rows(ys, 3, 7);
        let pred = b.matmul(xb, w);
        let out = b.squared_error(pred, yb);
        let f = b.finish(out);
        let wv = FlatVector::from_slice("w", &[0.2]);
        let a = f.eval(&no_lambda(), &wv, &data, 11).unwrap();
        assert_eq!(a.to_bits(), f.eval(&no_lambda(), &wv, &data, 11).unwrap().to_bits());
        // Aligned streams: the exact fit w = 0.5 has zero loss on any batch.
        let exact = FlatVector::from_slice("w", &[0.5]);
        assert_eq!(f.eval(&no_lambda(), &exact, &data, 3).unwrap(), 0.0);
        let report = crate::ad::check_grad_fd(&f, &no_lambda(), &wv, &data, 1e-5, 11).unwrap();
        assert!(report.passes(1e-6, 1e-6), "{report:?}");
    }
}
