//! Reverse-mode automatic differentiation over [`Tensor`] values.
//!
//! Every operation appends a node to the tape, so node ids are already in a
//! topological order and `backward` is a single reverse sweep. Gradients
//! accumulate across `backward` calls until [`Tape::zero_grad`].

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum UnaryOp {
    Neg,
    Relu,
    Exp,
    Ln,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReduceOp {
    Sum,
    Mean,
    Max,
    Min,
    Variance,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Unary(UnaryOp, Var),
    Binary(BinaryOp, Var, Var),
    Scale(Var, f32),
    Shift(Var),
    MatMul(Var, Var),
    Reduce(ReduceOp, Var, usize),
    Softmax(Var),
    Index(Var, usize),
    SoftmaxCrossEntropy {
        logits: Var,
        probs: Vec<f32>,
        labels: Vec<usize>,
    },
    Straight(Var, f32),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    grad: Option<Vec<f32>>,
}

/// A single-threaded recording session.
#[derive(Debug, Default)]
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

    pub fn contains(&self, v: Var) -> bool {
        v.0 < self.nodes.len()
    }

    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Accumulated gradient of `v`, if any backward pass reached it.
    pub fn grad(&self, v: Var) -> Option<Tensor> {
        let node = &self.nodes[v.0];
        node.grad
            .as_ref()
            .map(|g| Tensor::from_parts(node.value.shape().to_vec(), g.clone()))
    }

    /// Gradient of `v`, or zeros shaped like its value.
    pub fn grad_or_zeros(&self, v: Var) -> Tensor {
        self.grad(v)
            .unwrap_or_else(|| Tensor::zeros(self.nodes[v.0].value.shape()))
    }

    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node {
            value,
            op,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn push_checked(&mut self, name: &'static str, value: Tensor, op: Op) -> Result<Var> {
        if value.data().iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(name));
        }
        Ok(self.push(value, op))
    }

    /// Elementwise binary op. The second operand may be a one-element tensor,
    /// which is broadcast against the first.
    pub fn elementwise(&mut self, op: BinaryOp, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let f: fn(f32, f32) -> f32 = match op {
            BinaryOp::Add => |x, y| x + y,
            BinaryOp::Sub => |x, y| x - y,
            BinaryOp::Mul => |x, y| x * y,
            BinaryOp::Div => |x, y| x / y,
        };
        let out = if av.shape() == bv.shape() {
            av.zip_map(bv, f)?
        } else if bv.is_scalar() {
            let s = bv.data()[0];
            av.map(|x| f(x, s))
        } else {
            return Err(Error::ShapeMismatch {
                op: "elementwise",
                lhs: av.shape().to_vec(),
                rhs: bv.shape().to_vec(),
            });
        };
        self.push_checked("elementwise", out, Op::Binary(op, a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(BinaryOp::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(BinaryOp::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(BinaryOp::Mul, a, b)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(BinaryOp::Div, a, b)
    }

    pub fn unary(&mut self, op: UnaryOp, a: Var) -> Result<Var> {
        let f: fn(f32) -> f32 = match op {
            UnaryOp::Neg => |x| -x,
            UnaryOp::Relu => |x| x.max(0.0),
            UnaryOp::Exp => f32::exp,
            UnaryOp::Ln => f32::ln,
        };
        let out = self.value(a).map(f);
        self.push_checked("unary", out, Op::Unary(op, a))
    }

    pub fn neg(&mut self, a: Var) -> Result<Var> {
        self.unary(UnaryOp::Neg, a)
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.unary(UnaryOp::Relu, a)
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.unary(UnaryOp::Exp, a)
    }

    pub fn ln(&mut self, a: Var) -> Result<Var> {
        self.unary(UnaryOp::Ln, a)
    }

    /// `a * c` for a constant `c`.
    pub fn scale(&mut self, a: Var, c: f32) -> Result<Var> {
        let out = self.value(a).map(|x| x * c);
        self.push_checked("scale", out, Op::Scale(a, c))
    }

    /// `a + c` for a constant `c`.
    pub fn shift(&mut self, a: Var, c: f32) -> Result<Var> {
        let out = self.value(a).map(|x| x + c);
        self.push_checked("shift", out, Op::Shift(a))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let mismatch = || Error::ShapeMismatch {
            op: "matmul",
            lhs: av.shape().to_vec(),
            rhs: bv.shape().to_vec(),
        };
        let (m, k) = av.dims2().ok_or_else(mismatch)?;
        let (k2, n) = bv.dims2().ok_or_else(mismatch)?;
        if k != k2 {
            return Err(mismatch());
        }
        let data = matmul_raw(av.data(), bv.data(), m, k, n);
        let out = Tensor::from_parts(vec![m, n], data);
        self.push_checked("matmul", out, Op::MatMul(a, b))
    }

    /// Reduces to a rank-0 tensor. Accumulation happens in f64.
    pub fn reduce(&mut self, op: ReduceOp, a: Var) -> Result<Var> {
        let av = self.value(a);
        if av.is_empty() {
            return Err(Error::EmptyTensor("reduce"));
        }
        let data = av.data();
        let (value, arg) = match op {
            ReduceOp::Sum => (data.iter().map(|&v| v as f64).sum::<f64>() as f32, 0),
            ReduceOp::Mean => (av.mean().unwrap_or(0.0), 0),
            ReduceOp::Variance => (av.variance().unwrap_or(0.0), 0),
            ReduceOp::Max => {
                let mut best = 0;
                for (i, &v) in data.iter().enumerate() {
                    if v > data[best] {
                        best = i;
                    }
                }
                (data[best], best)
            }
            ReduceOp::Min => {
                let mut best = 0;
                for (i, &v) in data.iter().enumerate() {
                    if v < data[best] {
                        best = i;
                    }
                }
                (data[best], best)
            }
        };
        self.push_checked("reduce", Tensor::scalar(value), Op::Reduce(op, a, arg))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        self.reduce(ReduceOp::Sum, a)
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        self.reduce(ReduceOp::Mean, a)
    }

    pub fn max(&mut self, a: Var) -> Result<Var> {
        self.reduce(ReduceOp::Max, a)
    }

    pub fn min(&mut self, a: Var) -> Result<Var> {
        self.reduce(ReduceOp::Min, a)
    }

    pub fn variance(&mut self, a: Var) -> Result<Var> {
        self.reduce(ReduceOp::Variance, a)
    }

    /// Softmax over all elements of `a`, keeping its shape.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let av = self.value(a);
        if av.is_empty() {
            return Err(Error::EmptyTensor("softmax"));
        }
        let probs = softmax_slice(av.data());
        let out = Tensor::from_parts(av.shape().to_vec(), probs);
        self.push_checked("softmax", out, Op::Softmax(a))
    }

    /// Element `i` (flat order) as a rank-0 tensor.
    pub fn index(&mut self, a: Var, i: usize) -> Result<Var> {
        let av = self.value(a);
        let v = *av.data().get(i).ok_or_else(|| {
            Error::InvalidArgument(format!("index {i} out of {} elements", av.numel()))
        })?;
        Ok(self.push(Tensor::scalar(v), Op::Index(a, i)))
    }

    /// Mean negative log-likelihood of `labels` under row-wise softmax of `logits`.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let lv = self.value(logits);
        let (n, c) = lv.dims2().ok_or_else(|| Error::ShapeMismatch {
            op: "softmax_cross_entropy",
            lhs: lv.shape().to_vec(),
            rhs: vec![labels.len()],
        })?;
        if n != labels.len() || n == 0 {
            return Err(Error::ShapeMismatch {
                op: "softmax_cross_entropy",
                lhs: lv.shape().to_vec(),
                rhs: vec![labels.len()],
            });
        }
        if let Some(&label) = labels.iter().find(|&&l| l >= c) {
            return Err(Error::LabelOutOfRange { label, classes: c });
        }
        let mut probs = Vec::with_capacity(n * c);
        let mut total = 0.0f64;
        for (row, &label) in lv.data().chunks(c).zip(labels) {
            let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max) as f64;
            let sum: f64 = row.iter().map(|&x| (x as f64 - max).exp()).sum();
            let log_z = max + sum.ln();
            total += log_z - row[label] as f64;
            probs.extend(row.iter().map(|&x| ((x as f64 - max).exp() / sum) as f32));
        }
        let loss = Tensor::scalar((total / n as f64) as f32);
        self.push_checked(
            "softmax_cross_entropy",
            loss,
            Op::SoftmaxCrossEntropy {
                logits,
                probs,
                labels: labels.to_vec(),
            },
        )
    }

    /// Records `forward(a)` but backpropagates `multiplier * upstream`,
    /// ignoring the true Jacobian of `forward` (straight-through estimator).
    pub fn custom_grad<F>(&mut self, a: Var, forward: F, multiplier: f32) -> Result<Var>
    where
        F: FnOnce(&Tensor) -> Result<Tensor>,
    {
        let input = self.value(a);
        let out = forward(input)?;
        if out.shape() != input.shape() {
            return Err(Error::ShapeMismatch {
                op: "custom_grad",
                lhs: input.shape().to_vec(),
                rhs: out.shape().to_vec(),
            });
        }
        self.push_checked("custom_grad", out, Op::Straight(a, multiplier))
    }

    /// Propagates `d root / d node` to every node reachable from `root`,
    /// adding into the existing accumulators. A non-scalar root is seeded
    /// with ones, i.e. the gradient of the sum of its elements.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        if !self.contains(root) {
            return Err(Error::InvalidArgument(format!("{root:?} is not on this tape")));
        }
        let mut adj: Vec<Option<Vec<f32>>> = vec![None; root.0 + 1];
        adj[root.0] = Some(vec![1.0; self.nodes[root.0].value.numel()]);

        for i in (0..=root.0).rev() {
            let Some(g) = adj[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Leaf => {}
                Op::Unary(op, a) => {
                    let x = self.nodes[a.0].value.data();
                    let y = node.value.data();
                    let d: Vec<f32> = match op {
                        UnaryOp::Neg => g.iter().map(|v| -v).collect(),
                        UnaryOp::Relu => g
                            .iter()
                            .zip(x)
                            .map(|(&gv, &xv)| if xv > 0.0 { gv } else { 0.0 })
                            .collect(),
                        UnaryOp::Exp => g.iter().zip(y).map(|(gv, yv)| gv * yv).collect(),
                        UnaryOp::Ln => g.iter().zip(x).map(|(gv, xv)| gv / xv).collect(),
                    };
                    accumulate(&mut adj, *a, d);
                }
                Op::Binary(op, a, b) => {
                    let x = self.nodes[a.0].value.data();
                    let yv = &self.nodes[b.0].value;
                    let broadcast = self.nodes[a.0].value.shape() != yv.shape();
                    let y = yv.data();
                    let yat = |j: usize| if broadcast { y[0] } else { y[j] };
                    let (da, db): (Vec<f32>, Vec<f32>) = match op {
                        BinaryOp::Add => (g.clone(), g.clone()),
                        BinaryOp::Sub => (g.clone(), g.iter().map(|v| -v).collect()),
                        BinaryOp::Mul => (
                            g.iter().enumerate().map(|(j, gv)| gv * yat(j)).collect(),
                            g.iter().zip(x).map(|(gv, xv)| gv * xv).collect(),
                        ),
                        BinaryOp::Div => (
                            g.iter().enumerate().map(|(j, gv)| gv / yat(j)).collect(),
                            g.iter()
                                .zip(x)
                                .enumerate()
                                .map(|(j, (gv, xv))| -gv * xv / (yat(j) * yat(j)))
                                .collect(),
                        ),
                    };
                    let db = if broadcast {
                        vec![db.iter().map(|&v| v as f64).sum::<f64>() as f32]
                    } else {
                        db
                    };
                    let (a, b) = (*a, *b);
                    accumulate(&mut adj, a, da);
                    accumulate(&mut adj, b, db);
                }
                Op::Scale(a, c) => {
                    let d = g.iter().map(|v| v * c).collect();
                    accumulate(&mut adj, *a, d);
                }
                Op::Shift(a) => accumulate(&mut adj, *a, g.clone()),
                Op::MatMul(a, b) => {
                    let (m, k) = self.nodes[a.0].value.dims2().expect("rank-2");
                    let n = self.nodes[b.0].value.dims2().expect("rank-2").1;
                    let av = self.nodes[a.0].value.data();
                    let bv = self.nodes[b.0].value.data();
                    // dA = dC * B^T, dB = A^T * dC
                    let mut da = vec![0.0f32; m * k];
                    for i in 0..m {
                        for p in 0..k {
                            let mut s = 0.0f32;
                            for j in 0..n {
                                s += g[i * n + j] * bv[p * n + j];
                            }
                            da[i * k + p] = s;
                        }
                    }
                    let mut db = vec![0.0f32; k * n];
                    for p in 0..k {
                        for i in 0..m {
                            let aip = av[i * k + p];
                            for j in 0..n {
                                db[p * n + j] += aip * g[i * n + j];
                            }
                        }
                    }
                    let (a, b) = (*a, *b);
                    accumulate(&mut adj, a, da);
                    accumulate(&mut adj, b, db);
                }
                Op::Reduce(op, a, arg) => {
                    let x = self.nodes[a.0].value.data();
                    let n = x.len();
                    let g0 = g[0];
                    let d: Vec<f32> = match op {
                        ReduceOp::Sum => vec![g0; n],
                        ReduceOp::Mean => vec![g0 / n as f32; n],
                        ReduceOp::Variance => {
                            let mean =
                                x.iter().map(|&v| v as f64).sum::<f64>() / n as f64;
                            x.iter()
                                .map(|&v| (2.0 * (v as f64 - mean) / n as f64) as f32 * g0)
                                .collect()
                        }
                        ReduceOp::Max | ReduceOp::Min => {
                            let mut d = vec![0.0; n];
                            d[*arg] = g0;
                            d
                        }
                    };
                    accumulate(&mut adj, *a, d);
                }
                Op::Softmax(a) => {
                    let y = node.value.data();
                    let dot: f64 = g
                        .iter()
                        .zip(y)
                        .map(|(&gv, &yv)| gv as f64 * yv as f64)
                        .sum();
                    let d = g
                        .iter()
                        .zip(y)
                        .map(|(&gv, &yv)| (yv as f64 * (gv as f64 - dot)) as f32)
                        .collect();
                    accumulate(&mut adj, *a, d);
                }
                Op::Index(a, idx) => {
                    let mut d = vec![0.0; self.nodes[a.0].value.numel()];
                    d[*idx] = g[0];
                    accumulate(&mut adj, *a, d);
                }
                Op::SoftmaxCrossEntropy {
                    logits,
                    probs,
                    labels,
                } => {
                    let n = labels.len();
                    let c = probs.len() / n;
                    let scale = g[0] / n as f32;
                    let mut d: Vec<f32> = probs.iter().map(|p| p * scale).collect();
                    for (row, &label) in labels.iter().enumerate() {
                        d[row * c + label] -= scale;
                    }
                    accumulate(&mut adj, *logits, d);
                }
                Op::Straight(a, mult) => {
                    let d = g.iter().map(|v| v * mult).collect();
                    accumulate(&mut adj, *a, d);
                }
            }
            let node = &mut self.nodes[i];
            match &mut node.grad {
                Some(acc) => acc.iter_mut().zip(&g).for_each(|(s, v)| *s += v),
                None => node.grad = Some(g),
            }
        }
        Ok(())
    }
}

fn accumulate(adj: &mut [Option<Vec<f32>>], v: Var, d: Vec<f32>) {
    match &mut adj[v.0] {
        Some(acc) => acc.iter_mut().zip(&d).for_each(|(s, x)| *s += x),
        slot @ None => *slot = Some(d),
    }
}

pub(crate) fn matmul_raw(a: &[f32], b: &[f32], m: usize, k: usize, n: usize) -> Vec<f32> {
    let mut out = vec![0.0f32; m * n];
    for i in 0..m {
        for p in 0..k {
            let aip = a[i * k + p];
            for j in 0..n {
                out[i * n + j] += aip * b[p * n + j];
            }
        }
    }
    out
}

/// Numerically stable softmax of a slice.
pub fn softmax_slice(x: &[f32]) -> Vec<f32> {
    let max = x.iter().copied().fold(f32::NEG_INFINITY, f32::max) as f64;
    let exps: Vec<f64> = x.iter().map(|&v| (v as f64 - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.iter().map(|e| (e / sum) as f32).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(v: &[f32]) -> Tensor {
        Tensor::from_vec(v.to_vec()).unwrap()
    }

    #[test]
    fn add_and_scalar_mul() {
        let mut tape = Tape::new();
        let a = tape.leaf(t(&[1., 2.]));
        let b = tape.leaf(t(&[3., 4.]));
        let c = tape.add(a, b).unwrap();
        assert_eq!(tape.value(c).data(), &[4., 6.]);
        let x = tape.leaf(t(&[2., 3.]));
        let z = tape.leaf(Tensor::scalar(0.0));
        let y = tape.mul(x, z).unwrap();
        assert_eq!(tape.value(y).data(), &[0., 0.]);
    }

    #[test]
    fn shape_mismatch_names_both_shapes() {
        let mut tape = Tape::new();
        let a = tape.leaf(t(&[1., 2.]));
        let b = tape.leaf(t(&[1., 2., 3.]));
        let err = tape.add(a, b).unwrap_err().to_string();
        assert!(err.contains("[2]") && err.contains("[3]"), "{err}");
    }

    #[test]
    fn relu_forward_and_backward() {
        let mut tape = Tape::new();
        let a = tape.leaf(t(&[-1., 2.]));
        let r = tape.relu(a).unwrap();
        assert_eq!(tape.value(r).data(), &[0., 2.]);
        tape.backward(r).unwrap();
        assert_eq!(tape.grad(a).unwrap().data(), &[0., 1.]);
    }

    #[test]
    fn matmul_small_cases() {
        let mut tape = Tape::new();
        let eye = tape.leaf(Tensor::new(vec![2, 2], vec![1., 0., 0., 1.]).unwrap());
        let x = tape.leaf(Tensor::new(vec![2, 3], vec![1., 2., 3., 4., 5., 6.]).unwrap());
        let y = tape.matmul(eye, x).unwrap();
        assert_eq!(tape.value(y), tape.value(x));

        let a = tape.leaf(Tensor::new(vec![1, 2], vec![1., 2.]).unwrap());
        let b = tape.leaf(Tensor::new(vec![2, 1], vec![3., 4.]).unwrap());
        let c = tape.matmul(a, b).unwrap();
        assert_eq!(tape.value(c).data(), &[11.]);

        assert!(matches!(tape.matmul(a, a), Err(Error::ShapeMismatch { .. })));
    }

    #[test]
    fn reductions() {
        let mut tape = Tape::new();
        let a = tape.leaf(t(&[1., 2., 3.]));
        let m = tape.mean(a).unwrap();
        assert_eq!(tape.value(m).item(), Some(2.0));
        let b = tape.leaf(t(&[1., -1.]));
        let v = tape.variance(b).unwrap();
        assert_eq!(tape.value(v).item(), Some(1.0));
        let e = tape.leaf(Tensor::zeros(&[0]));
        assert!(matches!(tape.mean(e), Err(Error::EmptyTensor(_))));
    }

    #[test]
    fn max_ties_route_to_first_index() {
        let mut tape = Tape::new();
        let a = tape.leaf(t(&[3., 3., 1.]));
        let m = tape.max(a).unwrap();
        tape.backward(m).unwrap();
        assert_eq!(tape.grad(a).unwrap().data(), &[1., 0., 0.]);

        let mut tape = Tape::new();
        let a = tape.leaf(t(&[1., 0., 0.]));
        let m = tape.min(a).unwrap();
        tape.backward(m).unwrap();
        assert_eq!(tape.grad(a).unwrap().data(), &[0., 1., 0.]);
    }

    #[test]
    fn cross_entropy_limits_and_errors() {
        let mut tape = Tape::new();
        let l = tape.leaf(Tensor::zeros(&[3, 2]));
        let loss = tape.softmax_cross_entropy(l, &[0, 1, 1]).unwrap();
        let v = tape.value(loss).item().unwrap();
        assert!((v - std::f32::consts::LN_2).abs() < 1e-6);

        let big = tape.leaf(Tensor::new(vec![1, 2], vec![100.0, -100.0]).unwrap());
        let loss = tape.softmax_cross_entropy(big, &[0]).unwrap();
        assert!(tape.value(loss).item().unwrap() < 1e-6);

        assert!(matches!(
            tape.softmax_cross_entropy(l, &[0, 2, 1]),
            Err(Error::LabelOutOfRange { label: 2, classes: 2 })
        ));
    }

    #[test]
    fn custom_grad_applies_multiplier() {
        let mut tape = Tape::new();
        let a = tape.leaf(t(&[0.6]));
        let r = tape.custom_grad(a, |x| Ok(x.map(f32::round)), 1.0).unwrap();
        assert_eq!(tape.value(r).data(), &[1.0]);
        tape.backward(r).unwrap();
        assert_eq!(tape.grad(a).unwrap().data(), &[1.0]);

        let mut tape = Tape::new();
        let a = tape.leaf(t(&[5.0]));
        let r = tape.custom_grad(a, |x| Ok(x.clone()), 0.5).unwrap();
        let two = tape.leaf(Tensor::scalar(2.0));
        let y = tape.mul(r, two).unwrap();
        tape.backward(y).unwrap();
        assert_eq!(tape.grad(r).unwrap().data(), &[2.0]);
        assert_eq!(tape.grad(a).unwrap().data(), &[1.0]);
    }

    #[test]
    fn backward_twice_doubles() {
        let mut tape = Tape::new();
        let a = tape.leaf(t(&[0.3, -1.2]));
        let e = tape.exp(a).unwrap();
        let s = tape.sum(e).unwrap();
        tape.backward(s).unwrap();
        let once = tape.grad(a).unwrap();
        tape.backward(s).unwrap();
        let twice = tape.grad(a).unwrap();
        for (o, t2) in once.data().iter().zip(twice.data()) {
            assert_eq!(2.0 * o, *t2);
        }
        tape.zero_grad();
        assert!(tape.grad(a).is_none());
    }

    #[test]
    fn non_finite_results_rejected() {
        let mut tape = Tape::new();
        let a = tape.leaf(t(&[-1.0]));
        assert!(matches!(tape.ln(a), Err(Error::NonFinite(_))));
    }
}
