//! Reverse-mode differentiation over dense matrices.
//!
//! A [`Tape`] records every primitive applied during one forward pass. Each
//! recorded value is addressed by a [`Var`]. Calling [`Tape::backward`] on a
//! scalar loss walks the record in reverse, accumulates `∂loss/∂θ` into the
//! gradients of every parameter registered from a [`ParamStore`], and clears
//! the tape.
//!
//! Operations that do not fit the fixed primitive set (the hypergraph
//! aggregation, for one) implement [`CustomOp`] and are recorded with
//! [`Tape::custom`].

use alloc::boxed::Box;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng as _;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::float;
use crate::matrix::Matrix;

/// Rows whose L2 norm is below this are left unnormalized.
pub const NORM_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TensorError {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },
    #[error("non-finite value produced by {op}")]
    NonFiniteValue { op: &'static str },
    #[error("loss must be a 1x1 tensor, got {0:?}")]
    NotScalarLoss((usize, usize)),
    #[error("invalid argument to {op}: {reason}")]
    InvalidArgument { op: &'static str, reason: &'static str },
}

/// Elementwise nonlinearity applied after a dense layer.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Relu,
    Tanh,
    Identity,
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Handle to a parameter in a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ParamId(pub usize);

/// Named trainable matrices and their gradient accumulators.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Matrix>,
    #[serde(skip)]
    grads: Vec<Option<Matrix>>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Matrix) -> ParamId {
        self.names.push(name.into());
        self.values.push(value);
        self.grads.push(None);
        ParamId(self.values.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn value(&self, id: ParamId) -> &Matrix {
        &self.values[id.0]
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Matrix {
        &mut self.values[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn id_of(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    /// Accumulated gradient, `None` until a backward pass has reached the parameter.
    pub fn grad(&self, id: ParamId) -> Option<&Matrix> {
        self.grads.get(id.0).and_then(Option::as_ref)
    }

    pub fn zero_grads(&mut self) {
        self.grads = vec![None; self.values.len()];
    }

    fn accumulate(&mut self, id: ParamId, g: &Matrix) {
        if self.grads.len() < self.values.len() {
            self.grads.resize(self.values.len(), None);
        }
        match &mut self.grads[id.0] {
            Some(acc) => acc.add_assign(g),
            slot @ None => *slot = Some(g.clone()),
        }
    }

    /// Total number of scalar parameters.
    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(Matrix::len).sum()
    }
}

/// A differentiable operation with a hand-written backward rule.
pub trait CustomOp {
    fn name(&self) -> &'static str;

    /// Returns one gradient per input (in the order the inputs were recorded);
    /// `None` means the input receives no gradient.
    fn backward(&self, inputs: &[&Matrix], output: &Matrix, grad_out: &Matrix) -> Vec<Option<Matrix>>;
}

enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    RowL2Normalize(Var, Vec<f64>),
    Relu(Var),
    Softplus(Var),
    Tanh(Var),
    Dropout(Var, Vec<f64>),
    SignedPow(Var, f64),
    MeanRows(Var),
    Sum(Var),
    GatherRows(Var, Vec<usize>),
    SoftmaxCrossEntropy(Var, Vec<usize>, Matrix),
    SigmoidBce(Var, Matrix),
    Custom(Vec<Var>, Box<dyn CustomOp>),
}

struct Node {
    value: Matrix,
    op: Op,
    requires_grad: bool,
    param: Option<ParamId>,
}

/// Record of one forward pass.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Matrix, op: Op, requires_grad: bool, name: &'static str) -> Result<Var, TensorError> {
        if cfg!(debug_assertions) && !value.is_finite() {
            return Err(TensorError::NonFiniteValue { op: name });
        }
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            param: None,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// A constant or input value.
    pub fn leaf(&mut self, value: Matrix, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
            param: None,
        });
        Var(self.nodes.len() - 1)
    }

    /// Records the current value of a parameter; its gradient flows back into `store`.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        let v = self.leaf(store.value(id).clone(), true);
        self.nodes[v.0].param = Some(id);
        v
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (va, vb) = (self.value(a), self.value(b));
        let out = va.matmul(vb).ok_or(TensorError::ShapeMismatch {
            op: "matmul",
            left: va.shape(),
            right: vb.shape(),
        })?;
        let rg = self.rg(&[a, b]);
        self.push(out, Op::MatMul(a, b), rg, "matmul")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(TensorError::ShapeMismatch {
                op: "add",
                left: va.shape(),
                right: vb.shape(),
            });
        }
        let mut out = va.clone();
        out.add_assign(vb);
        let rg = self.rg(&[a, b]);
        self.push(out, Op::Add(a, b), rg, "add")
    }

    /// Adds the `1 x c` row `bias` to every row of `a`.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var, TensorError> {
        let (va, vb) = (self.value(a), self.value(bias));
        if vb.rows() != 1 || vb.cols() != va.cols() {
            return Err(TensorError::ShapeMismatch {
                op: "add_row",
                left: va.shape(),
                right: vb.shape(),
            });
        }
        let mut out = va.clone();
        for i in 0..out.rows() {
            for (o, b) in out.row_mut(i).iter_mut().zip(vb.as_slice()) {
                *o += b;
            }
        }
        let rg = self.rg(&[a, bias]);
        self.push(out, Op::AddRow(a, bias), rg, "add_row")
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var, TensorError> {
        let out = self.value(a).map(|v| v * s);
        let rg = self.rg(&[a]);
        self.push(out, Op::Scale(a, s), rg, "scale")
    }

    /// Divides every row by its L2 norm. Rows with norm below [`NORM_EPS`]
    /// pass through unchanged and receive zero gradient.
    pub fn row_l2_normalize(&mut self, a: Var) -> Result<Var, TensorError> {
        let va = self.value(a);
        let mut out = va.clone();
        let mut norms = Vec::with_capacity(va.rows());
        for i in 0..va.rows() {
            let n = float::sqrt(va.row(i).iter().map(|v| v * v).sum());
            norms.push(n);
            if n >= NORM_EPS {
                for o in out.row_mut(i) {
                    *o /= n;
                }
            }
        }
        let rg = self.rg(&[a]);
        self.push(out, Op::RowL2Normalize(a, norms), rg, "row_l2_normalize")
    }

    pub fn relu(&mut self, a: Var) -> Result<Var, TensorError> {
        let out = self.value(a).map(|v| if v > 0.0 { v } else { 0.0 });
        let rg = self.rg(&[a]);
        self.push(out, Op::Relu(a), rg, "relu")
    }

    /// `ln(1 + e^x)`, strictly positive.
    pub fn softplus(&mut self, a: Var) -> Result<Var, TensorError> {
        let out = self.value(a).map(float::softplus);
        let rg = self.rg(&[a]);
        self.push(out, Op::Softplus(a), rg, "softplus")
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var, TensorError> {
        let out = self.value(a).map(libm::tanh);
        let rg = self.rg(&[a]);
        self.push(out, Op::Tanh(a), rg, "tanh")
    }

    /// Applies `act`; [`Activation::Identity`] records nothing.
    pub fn activate(&mut self, a: Var, act: Activation) -> Result<Var, TensorError> {
        match act {
            Activation::Relu => self.relu(a),
            Activation::Tanh => self.tanh(a),
            Activation::Identity => Ok(a),
        }
    }

    /// Inverted dropout. With `rng = None` (evaluation) or `rate = 0` this is the identity.
    pub fn dropout(&mut self, a: Var, rate: f64, rng: Option<&mut crate::Rng>) -> Result<Var, TensorError> {
        if !(0.0..1.0).contains(&rate) {
            return Err(TensorError::InvalidArgument {
                op: "dropout",
                reason: "rate must lie in [0, 1)",
            });
        }
        let Some(rng) = rng.filter(|_| rate > 0.0) else {
            return Ok(a);
        };
        let keep = 1.0 / (1.0 - rate);
        let va = self.value(a);
        let mask: Vec<f64> = (0..va.len()).map(|_| if rng.gen::<f64>() < rate { 0.0 } else { keep }).collect();
        let mut out = va.clone();
        for (o, m) in out.as_mut_slice().iter_mut().zip(&mask) {
            *o *= m;
        }
        let rg = self.rg(&[a]);
        self.push(out, Op::Dropout(a, mask), rg, "dropout")
    }

    /// Sign-preserving power `sgn(x) |x|^p`.
    pub fn signed_pow(&mut self, a: Var, p: f64) -> Result<Var, TensorError> {
        if p == 0.0 || !p.is_finite() {
            return Err(TensorError::InvalidArgument {
                op: "signed_pow",
                reason: "exponent must be finite and nonzero",
            });
        }
        let out = self.value(a).map(|v| float::signed_pow(v, p));
        let rg = self.rg(&[a]);
        self.push(out, Op::SignedPow(a, p), rg, "signed_pow")
    }

    /// Column means, `n x c -> 1 x c`.
    pub fn mean_rows(&mut self, a: Var) -> Result<Var, TensorError> {
        let va = self.value(a);
        if va.rows() == 0 {
            return Err(TensorError::InvalidArgument {
                op: "mean_rows",
                reason: "no rows",
            });
        }
        let mut out = Matrix::zeros(1, va.cols());
        for i in 0..va.rows() {
            for (o, v) in out.as_mut_slice().iter_mut().zip(va.row(i)) {
                *o += v;
            }
        }
        out.scale_assign(1.0 / va.rows() as f64);
        let rg = self.rg(&[a]);
        self.push(out, Op::MeanRows(a), rg, "mean_rows")
    }

    /// Sum of all entries, `1 x 1`.
    pub fn sum(&mut self, a: Var) -> Result<Var, TensorError> {
        let s = self.value(a).as_slice().iter().sum();
        let rg = self.rg(&[a]);
        self.push(Matrix::filled(1, 1, s), Op::Sum(a), rg, "sum")
    }

    pub fn gather_rows(&mut self, a: Var, idx: &[usize]) -> Result<Var, TensorError> {
        let va = self.value(a);
        if let Some(&bad) = idx.iter().find(|&&i| i >= va.rows()) {
            return Err(TensorError::ShapeMismatch {
                op: "gather_rows",
                left: va.shape(),
                right: (bad, 0),
            });
        }
        let out = va.select_rows(idx);
        let rg = self.rg(&[a]);
        self.push(out, Op::GatherRows(a, idx.to_vec()), rg, "gather_rows")
    }

    /// Mean over rows of `-log softmax(logits_i)[target_i]`.
    pub fn softmax_cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var, TensorError> {
        let z = self.value(logits);
        if z.rows() != targets.len() || z.rows() == 0 {
            return Err(TensorError::ShapeMismatch {
                op: "softmax_cross_entropy",
                left: z.shape(),
                right: (targets.len(), 1),
            });
        }
        if targets.iter().any(|&t| t >= z.cols()) {
            return Err(TensorError::InvalidArgument {
                op: "softmax_cross_entropy",
                reason: "target class out of range",
            });
        }
        let mut probs = Matrix::zeros(z.rows(), z.cols());
        let mut loss = 0.0;
        for (i, &t) in targets.iter().enumerate() {
            let row = z.row(i);
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut denom = 0.0;
            for (j, &v) in row.iter().enumerate() {
                let e = float::exp(v - m);
                probs.set(i, j, e);
                denom += e;
            }
            for p in probs.row_mut(i) {
                *p /= denom;
            }
            loss += -(row[t] - m - float::ln(denom));
        }
        loss /= targets.len() as f64;
        let rg = self.rg(&[logits]);
        self.push(
            Matrix::filled(1, 1, loss),
            Op::SoftmaxCrossEntropy(logits, targets.to_vec(), probs),
            rg,
            "softmax_cross_entropy",
        )
    }

    /// Per-entry logistic loss against 0/1 `targets`, summed over columns and
    /// averaged over rows.
    pub fn sigmoid_bce(&mut self, logits: Var, targets: &Matrix) -> Result<Var, TensorError> {
        let z = self.value(logits);
        if z.shape() != targets.shape() || z.rows() == 0 {
            return Err(TensorError::ShapeMismatch {
                op: "sigmoid_bce",
                left: z.shape(),
                right: targets.shape(),
            });
        }
        let mut loss = 0.0;
        for (&x, &t) in z.as_slice().iter().zip(targets.as_slice()) {
            // max(x,0) - x t + ln(1 + e^{-|x|})
            loss += x.max(0.0) - x * t + float::ln_1p(float::exp(-x.abs()));
        }
        loss /= z.rows() as f64;
        let rg = self.rg(&[logits]);
        self.push(
            Matrix::filled(1, 1, loss),
            Op::SigmoidBce(logits, targets.clone()),
            rg,
            "sigmoid_bce",
        )
    }

    /// Records a custom operation whose forward value was computed by the caller.
    pub fn custom(&mut self, inputs: &[Var], output: Matrix, op: Box<dyn CustomOp>) -> Result<Var, TensorError> {
        let rg = self.rg(inputs);
        let name = op.name();
        self.push(output, Op::Custom(inputs.to_vec(), op), rg, name)
    }

    /// Gradients of `loss` with respect to every recorded value (`None` where
    /// no gradient flows). The tape is left intact.
    pub fn gradients(&self, loss: Var) -> Result<Vec<Option<Matrix>>, TensorError> {
        let shape = self.value(loss).shape();
        if shape != (1, 1) {
            return Err(TensorError::NotScalarLoss(shape));
        }
        let mut grads: Vec<Option<Matrix>> = Vec::new();
        grads.resize_with(loss.0 + 1, || None);
        grads[loss.0] = Some(Matrix::filled(1, 1, 1.0));
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if node.requires_grad {
                self.propagate(node, &g, &mut grads);
            }
            grads[i] = Some(g);
        }
        Ok(grads)
    }

    /// Accumulates `∂loss/∂θ` into `store` for every registered parameter and
    /// clears the tape.
    pub fn backward(&mut self, loss: Var, store: &mut ParamStore) -> Result<(), TensorError> {
        let grads = self.gradients(loss)?;
        for (i, node) in self.nodes.iter().enumerate() {
            let Some(id) = node.param else { continue };
            match grads.get(i).and_then(Option::as_ref) {
                Some(g) => store.accumulate(id, g),
                None => {
                    let (r, c) = node.value.shape();
                    store.accumulate(id, &Matrix::zeros(r, c));
                }
            }
        }
        self.nodes.clear();
        Ok(())
    }

    fn acc(&self, grads: &mut [Option<Matrix>], v: Var, g: Matrix) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(a) => a.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn propagate(&self, node: &Node, g: &Matrix, grads: &mut [Option<Matrix>]) {
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                if self.requires_grad(*a) {
                    self.acc(grads, *a, g.matmul_t(vb).expect("shapes checked on forward"));
                }
                if self.requires_grad(*b) {
                    self.acc(grads, *b, va.t_matmul(g).expect("shapes checked on forward"));
                }
            }
            Op::Add(a, b) => {
                self.acc(grads, *a, g.clone());
                self.acc(grads, *b, g.clone());
            }
            Op::AddRow(a, b) => {
                self.acc(grads, *a, g.clone());
                let mut gb = Matrix::zeros(1, g.cols());
                for i in 0..g.rows() {
                    for (o, v) in gb.as_mut_slice().iter_mut().zip(g.row(i)) {
                        *o += v;
                    }
                }
                self.acc(grads, *b, gb);
            }
            Op::Scale(a, s) => self.acc(grads, *a, g.map(|v| v * s)),
            Op::RowL2Normalize(a, norms) => {
                let y = &node.value;
                let mut ga = Matrix::zeros(g.rows(), g.cols());
                for (i, &n) in norms.iter().enumerate() {
                    if n < NORM_EPS {
                        continue;
                    }
                    let dot: f64 = y.row(i).iter().zip(g.row(i)).map(|(a, b)| a * b).sum();
                    for ((o, &gi), &yi) in ga.row_mut(i).iter_mut().zip(g.row(i)).zip(y.row(i)) {
                        *o = (gi - yi * dot) / n;
                    }
                }
                self.acc(grads, *a, ga);
            }
            Op::Relu(a) => {
                let x = self.value(*a);
                let mut ga = g.clone();
                for (o, &xv) in ga.as_mut_slice().iter_mut().zip(x.as_slice()) {
                    if xv <= 0.0 {
                        *o = 0.0;
                    }
                }
                self.acc(grads, *a, ga);
            }
            Op::Softplus(a) => {
                let x = self.value(*a);
                let mut ga = g.clone();
                for (o, &xv) in ga.as_mut_slice().iter_mut().zip(x.as_slice()) {
                    *o *= float::sigmoid(xv);
                }
                self.acc(grads, *a, ga);
            }
            Op::Tanh(a) => {
                let mut ga = g.clone();
                for (o, &y) in ga.as_mut_slice().iter_mut().zip(node.value.as_slice()) {
                    *o *= 1.0 - y * y;
                }
                self.acc(grads, *a, ga);
            }
            Op::Dropout(a, mask) => {
                let mut ga = g.clone();
                for (o, m) in ga.as_mut_slice().iter_mut().zip(mask) {
                    *o *= m;
                }
                self.acc(grads, *a, ga);
            }
            Op::SignedPow(a, p) => {
                let x = self.value(*a);
                let mut ga = g.clone();
                for (o, &xv) in ga.as_mut_slice().iter_mut().zip(x.as_slice()) {
                    let d = if *p == 1.0 {
                        1.0
                    } else if xv == 0.0 {
                        0.0
                    } else {
                        p * float::powf(xv.abs(), p - 1.0)
                    };
                    *o *= d;
                }
                self.acc(grads, *a, ga);
            }
            Op::MeanRows(a) => {
                let x = self.value(*a);
                let inv = 1.0 / x.rows() as f64;
                let ga = Matrix::from_fn(x.rows(), x.cols(), |_, j| g.get(0, j) * inv);
                self.acc(grads, *a, ga);
            }
            Op::Sum(a) => {
                let x = self.value(*a);
                self.acc(grads, *a, Matrix::filled(x.rows(), x.cols(), g.get(0, 0)));
            }
            Op::GatherRows(a, idx) => {
                let x = self.value(*a);
                let mut ga = Matrix::zeros(x.rows(), x.cols());
                for (k, &i) in idx.iter().enumerate() {
                    for (o, v) in ga.row_mut(i).iter_mut().zip(g.row(k)) {
                        *o += v;
                    }
                }
                self.acc(grads, *a, ga);
            }
            Op::SoftmaxCrossEntropy(a, targets, probs) => {
                let scale = g.get(0, 0) / targets.len() as f64;
                let mut ga = probs.clone();
                for (i, &t) in targets.iter().enumerate() {
                    let v = ga.get(i, t);
                    ga.set(i, t, v - 1.0);
                }
                ga.scale_assign(scale);
                self.acc(grads, *a, ga);
            }
            Op::SigmoidBce(a, targets) => {
                let z = self.value(*a);
                let scale = g.get(0, 0) / z.rows() as f64;
                let mut ga = z.map(float::sigmoid);
                for (o, t) in ga.as_mut_slice().iter_mut().zip(targets.as_slice()) {
                    *o = (*o - t) * scale;
                }
                self.acc(grads, *a, ga);
            }
            Op::Custom(inputs, op) => {
                let vals: Vec<&Matrix> = inputs.iter().map(|v| self.value(*v)).collect();
                let gs = op.backward(&vals, &node.value, g);
                for (v, gi) in inputs.iter().zip(gs) {
                    if let Some(gi) = gi {
                        self.acc(grads, *v, gi);
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{finite_diff_check, GradCheckConfig};
    use crate::rng_from_seed;

    fn random(rows: usize, cols: usize, seed: u64) -> Matrix {
        let mut rng = rng_from_seed(seed);
        Matrix::from_fn(rows, cols, |_, _| rng.gen_range(-1.0..1.0))
    }

    #[test]
    fn forward_values() {
        let mut t = Tape::new();
        let a = t.leaf(Matrix::from_rows(&[[3.0, 4.0]]).unwrap(), false);
        let n = t.row_l2_normalize(a).unwrap();
        assert_eq!(t.value(n).as_slice(), &[0.6, 0.8]);
        let b = t.leaf(Matrix::from_rows(&[[-1.0, 2.0]]).unwrap(), false);
        let r = t.relu(b).unwrap();
        assert_eq!(t.value(r).as_slice(), &[0.0, 2.0]);
        let c = t.leaf(Matrix::from_rows(&[[-2.0]]).unwrap(), false);
        let p = t.signed_pow(c, 2.0).unwrap();
        assert_eq!(t.value(p).as_slice(), &[-4.0]);
    }

    #[test]
    fn zero_row_passes_through_normalization() {
        let mut t = Tape::new();
        let a = t.leaf(Matrix::from_rows(&[[0.0, 0.0], [0.0, 2.0]]).unwrap(), false);
        let n = t.row_l2_normalize(a).unwrap();
        assert_eq!(t.value(n).as_slice(), &[0.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn dropout_eval_is_identity_and_train_rescales() {
        let mut t = Tape::new();
        let a = t.leaf(Matrix::filled(10, 10, 1.0), false);
        assert_eq!(t.dropout(a, 0.5, None).unwrap(), a);
        let mut rng = rng_from_seed(1);
        let d = t.dropout(a, 0.5, Some(&mut rng)).unwrap();
        assert!(t.value(d).as_slice().iter().all(|&v| v == 0.0 || v == 2.0));
        assert!(t.dropout(a, 1.0, None).is_err());
    }

    #[test]
    fn backward_requires_scalar() {
        let mut t = Tape::new();
        let mut store = ParamStore::new();
        let a = t.leaf(Matrix::zeros(2, 2), true);
        assert_eq!(t.backward(a, &mut store), Err(TensorError::NotScalarLoss((2, 2))));
    }

    #[test]
    fn sum_of_product_gradient() {
        let mut store = ParamStore::new();
        let w = store.insert("w", Matrix::from_rows(&[[1.0, 2.0]]).unwrap());
        let mut t = Tape::new();
        let wv = t.param(&store, w);
        let x = t.leaf(Matrix::from_rows(&[[3.0], [5.0]]).unwrap(), false);
        let y = t.matmul(wv, x).unwrap();
        let l = t.sum(y).unwrap();
        t.backward(l, &mut store).unwrap();
        assert_eq!(store.grad(w).unwrap().as_slice(), &[3.0, 5.0]);
        assert!(t.is_empty());
    }

    #[test]
    fn independent_loss_has_no_gradient() {
        let mut store = ParamStore::new();
        let w = store.insert("w", Matrix::filled(1, 1, 2.0));
        let mut t = Tape::new();
        let _ = t.param(&store, w);
        let c = t.leaf(Matrix::filled(1, 1, 7.0), false);
        let l = t.sum(c).unwrap();
        t.backward(l, &mut store).unwrap();
        assert_eq!(store.grad(w).unwrap().as_slice(), &[0.0]);
    }

    #[test]
    fn uniform_logits_give_ln_k() {
        let mut t = Tape::new();
        let z = t.leaf(Matrix::zeros(3, 4), false);
        let l = t.softmax_cross_entropy(z, &[0, 1, 3]).unwrap();
        assert!((t.value(l).get(0, 0) - libm::log(4.0)).abs() < 1e-12);
    }

    /// Every primitive against central differences on a small random input.
    #[test]
    fn primitive_gradients_match_finite_differences() {
        type Build = fn(&mut Tape, Var) -> Result<Var, TensorError>;
        let cases: [(&str, Build); 10] = [
            ("tanh", |t, a| t.tanh(a)),
            ("matmul", |t, a| {
                let b = t.leaf(random(3, 2, 9), false);
                t.matmul(a, b)
            }),
            ("add", |t, a| t.add(a, a)),
            ("scale", |t, a| t.scale(a, -1.7)),
            ("normalize", |t, a| t.row_l2_normalize(a)),
            ("relu", |t, a| t.relu(a)),
            ("softplus", |t, a| t.softplus(a)),
            ("signed_pow", |t, a| t.signed_pow(a, 2.5)),
            ("mean_rows", |t, a| t.mean_rows(a)),
            ("gather", |t, a| t.gather_rows(a, &[2, 0, 2])),
        ];
        for (k, (name, build)) in cases.iter().enumerate() {
            let mut store = ParamStore::new();
            let id = store.insert("a", random(4, 3, 100 + k as u64));
            let weights = random(8, 8, 7);
            let f = |store: &ParamStore, tape: &mut Tape| -> Result<Var, TensorError> {
                let a = tape.param(store, id);
                let y = build(tape, a)?;
                let c = tape.value(y).cols();
                let wz = tape.leaf(Matrix::from_fn(c, 1, |j, _| weights.get(j, 0)), false);
                let s = tape.matmul(y, wz)?;
                tape.sum(s)
            };
            let report = finite_diff_check(&f, &mut store, &GradCheckConfig::tight()).unwrap();
            assert!(report.passed, "{name}: {report:?}");
        }
    }

    #[test]
    fn loss_gradients_match_finite_differences() {
        let mut store = ParamStore::new();
        let id = store.insert("z", random(5, 3, 42));
        let targets = Matrix::from_fn(5, 3, |i, j| ((i + j) % 2) as f64);
        let ce = |store: &ParamStore, t: &mut Tape| {
            let z = t.param(store, id);
            t.softmax_cross_entropy(z, &[0, 1, 2, 1, 0])
        };
        assert!(finite_diff_check(&ce, &mut store, &GradCheckConfig::tight()).unwrap().passed);
        let bce = |store: &ParamStore, t: &mut Tape| {
            let z = t.param(store, id);
            t.sigmoid_bce(z, &targets)
        };
        assert!(finite_diff_check(&bce, &mut store, &GradCheckConfig::tight()).unwrap().passed);
    }
}
