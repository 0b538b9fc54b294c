//! Reverse-mode differentiation over a linear tape of primitive operations.
//!
//! Every operation appends one node whose inputs are earlier nodes, so the
//! tape is always in topological order and a backward pass is a single
//! reverse sweep.

use super::tensor::{self, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Exp(Var),
    Log(Var),
    Relu(Var),
    Sum(Var),
    LogSoftmax(Var),
    L2Normalize(Var),
    GatherRows(Var, Vec<usize>),
    ConcatRows(Var, Var),
    Pick(Var, Vec<usize>),
    MaskedLogSumExp(Var, Vec<bool>),
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
}

#[derive(Debug, Default, Clone)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Adjoints produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient with respect to `v`; nodes the loss does not depend on yield
    /// `None`.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient with respect to `v`, zero-filled to `shape` when the loss does
    /// not depend on it.
    pub fn get_or_zeros(&self, v: Var, shape: &[usize]) -> Tensor {
        self.get(v).cloned().unwrap_or_else(|| Tensor::zeros(shape))
    }
}

fn broadcast_pair(op: &'static str, a: &Tensor, b: &Tensor) -> Result<Vec<usize>> {
    if a.shape() == b.shape() {
        Ok(a.shape().to_vec())
    } else if a.is_scalar() {
        Ok(b.shape().to_vec())
    } else if b.is_scalar() {
        Ok(a.shape().to_vec())
    } else {
        Err(Error::ShapeMismatch {
            op,
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        })
    }
}

fn zip_broadcast(a: &Tensor, b: &Tensor, shape: Vec<usize>, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let n: usize = shape.iter().product();
    let av = |i: usize| if a.is_scalar() { a.values()[0] } else { a.values()[i] };
    let bv = |i: usize| if b.is_scalar() { b.values()[0] } else { b.values()[i] };
    let values = (0..n).map(|i| f(av(i), bv(i))).collect();
    Tensor::new_unchecked(shape, values).expect("broadcast shape")
}

/// Reduces an upstream gradient onto an operand that may have been broadcast
/// from a scalar.
fn unbroadcast(g: Tensor, target: &[usize]) -> Tensor {
    if g.shape() == target {
        g
    } else {
        Tensor::new_unchecked(target.to_vec(), vec![g.values().iter().sum()]).expect("scalar")
    }
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

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// Records an input. Constants are leaves whose gradient is simply ignored.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = tensor::matmul(self.value(a), self.value(b))?;
        Ok(self.push(out, Op::MatMul(a, b)))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a);
        if x.shape().len() != 2 {
            return Err(Error::ShapeMismatch {
                op: "transpose",
                lhs: x.shape().to_vec(),
                rhs: vec![],
            });
        }
        let out = x.transpose();
        Ok(self.push(out, Op::Transpose(a)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        let shape = broadcast_pair("add", x, y)?;
        let out = zip_broadcast(x, y, shape, |p, q| p + q);
        Ok(self.push(out, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        let shape = broadcast_pair("sub", x, y)?;
        let out = zip_broadcast(x, y, shape, |p, q| p - q);
        Ok(self.push(out, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        let shape = broadcast_pair("mul", x, y)?;
        let out = zip_broadcast(x, y, shape, |p, q| p * q);
        Ok(self.push(out, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let out = self.value(a).map(|v| v * c);
        self.push(out, Op::Scale(a, c))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::exp);
        self.push(out, Op::Exp(a))
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a);
        if let Some((index, &value)) = x.values().iter().enumerate().find(|(_, v)| **v <= 0.0) {
            return Err(Error::LogDomain { index, value });
        }
        let out = x.map(f64::ln);
        Ok(self.push(out, Op::Log(a)))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|v| v.max(0.0));
        self.push(out, Op::Relu(a))
    }

    /// Sum of all entries, as a one-element tensor.
    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).values().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).len().max(1);
        let s = self.sum(a);
        self.scale(s, 1.0 / n as f64)
    }

    pub fn log_softmax(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a);
        if x.cols() == 0 {
            return Err(Error::invalid("log_softmax over zero columns"));
        }
        let out = tensor::log_softmax(x);
        Ok(self.push(out, Op::LogSoftmax(a)))
    }

    pub fn l2_normalize(&mut self, a: Var) -> Result<Var> {
        let out = tensor::l2_normalize(self.value(a))?;
        Ok(self.push(out, Op::L2Normalize(a)))
    }

    pub fn gather_rows(&mut self, a: Var, idx: &[usize]) -> Result<Var> {
        let x = self.value(a);
        if let Some(&bad) = idx.iter().find(|&&i| i >= x.rows()) {
            return Err(Error::invalid(format!(
                "row index {bad} out of range for {} rows",
                x.rows()
            )));
        }
        let out = x.select_rows(idx);
        Ok(self.push(out, Op::GatherRows(a, idx.to_vec())))
    }

    pub fn concat_rows(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        if x.cols() != y.cols() {
            return Err(Error::ShapeMismatch {
                op: "concat_rows",
                lhs: x.shape().to_vec(),
                rhs: y.shape().to_vec(),
            });
        }
        let mut values = x.values().to_vec();
        values.extend_from_slice(y.values());
        let out = Tensor::new_unchecked(vec![x.rows() + y.rows(), x.cols()], values)?;
        Ok(self.push(out, Op::ConcatRows(a, b)))
    }

    /// Picks one column per row, producing a `[rows x 1]` column.
    pub fn pick(&mut self, a: Var, cols: &[usize]) -> Result<Var> {
        let x = self.value(a);
        if cols.len() != x.rows() {
            return Err(Error::ShapeMismatch {
                op: "pick",
                lhs: x.shape().to_vec(),
                rhs: vec![cols.len()],
            });
        }
        if let Some(&bad) = cols.iter().find(|&&c| c >= x.cols()) {
            return Err(Error::invalid(format!(
                "column {bad} out of range for {} columns",
                x.cols()
            )));
        }
        let values = cols.iter().enumerate().map(|(r, &c)| x.get(r, c)).collect();
        let out = Tensor::new_unchecked(vec![cols.len(), 1], values)?;
        Ok(self.push(out, Op::Pick(a, cols.to_vec())))
    }

    /// Row-wise `log Σ_j mask[r,j]·exp(x[r,j])`, stabilized by the masked row
    /// maximum. Rows with an empty mask produce 0 and receive no gradient.
    pub fn masked_logsumexp(&mut self, a: Var, mask: &[bool]) -> Result<Var> {
        let x = self.value(a);
        if mask.len() != x.len() {
            return Err(Error::ShapeMismatch {
                op: "masked_logsumexp",
                lhs: x.shape().to_vec(),
                rhs: vec![mask.len()],
            });
        }
        let cols = x.cols();
        let values = (0..x.rows())
            .map(|r| {
                let m = &mask[r * cols..(r + 1) * cols];
                masked_lse(x.row(r), m).unwrap_or(0.0)
            })
            .collect();
        let out = Tensor::new_unchecked(vec![x.rows(), 1], values)?;
        Ok(self.push(out, Op::MaskedLogSumExp(a, mask.to_vec())))
    }

    /// Linear layer `x·W + 1·b` with `b` a `[1 x n]` row. Bias broadcast goes
    /// through a ones column so only scalar broadcasting is ever needed.
    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let rows = self.value(x).rows();
        let ones = self.leaf(Tensor::full(&[rows, 1], 1.0));
        let xw = self.matmul(x, w)?;
        let bias = self.matmul(ones, b)?;
        self.add(xw, bias)
    }

    /// Reverse sweep from a scalar node. Adjoints start at zero (absent) for
    /// every node and the seed adjoint of `loss` is 1.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if !lv.is_scalar() {
            return Err(Error::NonScalarLoss(lv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::full(lv.shape(), 1.0));

        for id in (0..=loss.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            let contributions = self.local_grads(node, &g)?;
            grads[id] = Some(g);
            for (v, dg) in contributions {
                accumulate(&mut grads[v.0], dg);
            }
        }
        Ok(Gradients { grads })
    }

    fn local_grads(&self, node: &Node, g: &Tensor) -> Result<Vec<(Var, Tensor)>> {
        let y = &node.value;
        Ok(match &node.op {
            Op::Leaf => vec![],
            Op::MatMul(a, b) => {
                let (x, w) = (self.value(*a), self.value(*b));
                let ga = tensor::matmul(g, &w.transpose())?;
                let gb = tensor::matmul(&x.transpose(), g)?;
                vec![(*a, ga), (*b, gb)]
            }
            Op::Transpose(a) => vec![(*a, g.transpose())],
            Op::Add(a, b) => {
                let (sa, sb) = (self.value(*a).shape(), self.value(*b).shape());
                vec![(*a, unbroadcast(g.clone(), sa)), (*b, unbroadcast(g.clone(), sb))]
            }
            Op::Sub(a, b) => {
                let (sa, sb) = (self.value(*a).shape(), self.value(*b).shape());
                vec![
                    (*a, unbroadcast(g.clone(), sa)),
                    (*b, unbroadcast(g.map(|v| -v), sb)),
                ]
            }
            Op::Mul(a, b) => {
                let (x, w) = (self.value(*a), self.value(*b));
                let ga = zip_broadcast(g, w, g.shape().to_vec(), |p, q| p * q);
                let gb = zip_broadcast(g, x, g.shape().to_vec(), |p, q| p * q);
                vec![(*a, unbroadcast(ga, x.shape())), (*b, unbroadcast(gb, w.shape()))]
            }
            Op::Scale(a, c) => vec![(*a, g.map(|v| v * c))],
            Op::Exp(a) => vec![(*a, zip_broadcast(g, y, y.shape().to_vec(), |p, q| p * q))],
            Op::Log(a) => {
                let x = self.value(*a);
                vec![(*a, zip_broadcast(g, x, x.shape().to_vec(), |p, q| p / q))]
            }
            Op::Relu(a) => {
                let x = self.value(*a);
                let ga = zip_broadcast(g, x, x.shape().to_vec(), |p, q| if q > 0.0 { p } else { 0.0 });
                vec![(*a, ga)]
            }
            Op::Sum(a) => {
                let x = self.value(*a);
                vec![(*a, Tensor::full(x.shape(), g.item()))]
            }
            Op::LogSoftmax(a) => {
                let mut ga = g.clone();
                for r in 0..y.rows() {
                    let gs: f64 = g.row(r).iter().sum();
                    for (gv, &yv) in ga.row_mut(r).iter_mut().zip(y.row(r)) {
                        *gv -= yv.exp() * gs;
                    }
                }
                vec![(*a, ga)]
            }
            Op::L2Normalize(a) => {
                let x = self.value(*a);
                let mut ga = g.clone();
                for r in 0..y.rows() {
                    let norm = x.row(r).iter().map(|v| v * v).sum::<f64>().sqrt();
                    let dot: f64 = g.row(r).iter().zip(y.row(r)).map(|(p, q)| p * q).sum();
                    for (gv, &yv) in ga.row_mut(r).iter_mut().zip(y.row(r)) {
                        *gv = (*gv - yv * dot) / norm;
                    }
                }
                vec![(*a, ga)]
            }
            Op::GatherRows(a, idx) => {
                let x = self.value(*a);
                let mut ga = Tensor::zeros(x.shape());
                for (r, &src) in idx.iter().enumerate() {
                    for (o, &v) in ga.row_mut(src).iter_mut().zip(g.row(r)) {
                        *o += v;
                    }
                }
                vec![(*a, ga)]
            }
            Op::ConcatRows(a, b) => {
                let (x, w) = (self.value(*a), self.value(*b));
                let split = x.len();
                let ga = Tensor::new_unchecked(x.shape().to_vec(), g.values()[..split].to_vec())?;
                let gb = Tensor::new_unchecked(w.shape().to_vec(), g.values()[split..].to_vec())?;
                vec![(*a, ga), (*b, gb)]
            }
            Op::Pick(a, cols) => {
                let x = self.value(*a);
                let mut ga = Tensor::zeros(x.shape());
                for (r, &c) in cols.iter().enumerate() {
                    ga.row_mut(r)[c] += g.values()[r];
                }
                vec![(*a, ga)]
            }
            Op::MaskedLogSumExp(a, mask) => {
                let x = self.value(*a);
                let cols = x.cols();
                let mut ga = Tensor::zeros(x.shape());
                for r in 0..x.rows() {
                    let m = &mask[r * cols..(r + 1) * cols];
                    if !m.iter().any(|&b| b) {
                        continue;
                    }
                    let lse = y.values()[r];
                    let gr = g.values()[r];
                    for ((o, &xv), &on) in ga.row_mut(r).iter_mut().zip(x.row(r)).zip(m) {
                        if on {
                            *o = gr * (xv - lse).exp();
                        }
                    }
                }
                vec![(*a, ga)]
            }
        })
    }
}

fn masked_lse(row: &[f64], mask: &[bool]) -> Option<f64> {
    let max = row
        .iter()
        .zip(mask)
        .filter(|(_, &m)| m)
        .map(|(&v, _)| v)
        .fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return None;
    }
    let s: f64 = row
        .iter()
        .zip(mask)
        .filter(|(_, &m)| m)
        .map(|(&v, _)| (v - max).exp())
        .sum();
    Some(max + s.ln())
}

fn accumulate(slot: &mut Option<Tensor>, g: Tensor) {
    match slot {
        Some(acc) => {
            for (a, b) in acc.values_mut().iter_mut().zip(g.values()) {
                *a += b;
            }
        }
        None => *slot = Some(g),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_gradient() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::scalar(3.0));
        let y = t.mul(x, x).unwrap();
        let g = t.backward(y).unwrap();
        assert_eq!(g.get(x).unwrap().item(), 6.0);
    }

    #[test]
    fn constant_loss_has_zero_gradient() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::matrix(1, 2, vec![1.0, 2.0]).unwrap());
        let c = t.leaf(Tensor::scalar(5.0));
        let g = t.backward(c).unwrap();
        assert!(g.get(x).is_none());
        assert_eq!(g.get_or_zeros(x, &[1, 2]).values(), &[0.0, 0.0]);
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::zeros(&[2, 2]));
        assert!(matches!(t.backward(x), Err(Error::NonScalarLoss(_))));
    }

    #[test]
    fn log_domain_error() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::matrix(1, 2, vec![1.0, 0.0]).unwrap());
        assert!(matches!(t.log(x), Err(Error::LogDomain { index: 1, .. })));
    }

    #[test]
    fn elementwise_examples() {
        let mut t = Tape::new();
        let z = t.leaf(Tensor::scalar(0.0));
        let ez = t.exp(z);
        assert_eq!(t.value(ez).item(), 1.0);
        let e = t.leaf(Tensor::scalar(std::f64::consts::E));
        let l = t.log(e).unwrap();
        assert!((t.value(l).item() - 1.0).abs() < 1e-15);
        let r = t.leaf(Tensor::matrix(1, 2, vec![-3.0, 3.0]).unwrap());
        let rr = t.relu(r);
        assert_eq!(t.value(rr).values(), &[0.0, 3.0]);
    }

    #[test]
    fn scalar_broadcast_only() {
        let mut t = Tape::new();
        let a = t.leaf(Tensor::zeros(&[2, 2]));
        let s = t.leaf(Tensor::scalar(1.5));
        let b = t.leaf(Tensor::zeros(&[2, 3]));
        let sum = t.add(a, s).unwrap();
        assert_eq!(t.value(sum).values(), &[1.5; 4]);
        assert!(t.add(a, b).is_err());
    }

    /// loss = sum(A·B) on 2x2 inputs: dL/dA = 1·Bᵀ, dL/dB = Aᵀ·1.
    #[test]
    fn matmul_jacobian_hand_case() {
        let mut t = Tape::new();
        let a = t.leaf(Tensor::matrix(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let b = t.leaf(Tensor::matrix(2, 2, vec![5.0, 6.0, 7.0, 8.0]).unwrap());
        let p = t.matmul(a, b).unwrap();
        let l = t.sum(p);
        let g = t.backward(l).unwrap();
        assert_eq!(g.get(a).unwrap().values(), &[11.0, 15.0, 11.0, 15.0]);
        assert_eq!(g.get(b).unwrap().values(), &[4.0, 4.0, 6.0, 6.0]);
    }

    /// loss = sum(exp(x) ⊙ w) composes Exp and Mul: dL/dx = exp(x)·w.
    #[test]
    fn composed_chain_hand_case() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::matrix(2, 2, vec![0.0, 1.0, -1.0, 0.5]).unwrap());
        let w = t.leaf(Tensor::matrix(2, 2, vec![2.0, -1.0, 3.0, 0.0]).unwrap());
        let ex = t.exp(x);
        let m = t.mul(ex, w).unwrap();
        let l = t.sum(m);
        let g = t.backward(l).unwrap();
        let expect: Vec<f64> = [0.0f64, 1.0, -1.0, 0.5]
            .iter()
            .zip([2.0, -1.0, 3.0, 0.0])
            .map(|(xv, wv)| xv.exp() * wv)
            .collect();
        assert_eq!(g.get(x).unwrap().values(), expect.as_slice());
    }

    #[test]
    fn masked_lse_empty_row_is_zero() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::matrix(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let l = t.masked_logsumexp(x, &[true, true, false, false]).unwrap();
        let v = t.value(l).values().to_vec();
        assert!((v[0] - (1f64.exp() + 2f64.exp()).ln()).abs() < 1e-12);
        assert_eq!(v[1], 0.0);
    }
}
