use std::cell::{Ref, RefCell};
use std::fmt;
use std::ops;

use super::{gemm, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    Max(usize, usize),
    Min(usize, usize),
    Neg(usize),
    Scale(usize, f64),
    Offset(usize),
    Exp(usize),
    Log(usize),
    Tanh(usize),
    Square(usize),
    Abs(usize),
    Relu(usize),
    Clamp(usize, f64, f64),
    Sum(usize),
    Mean(usize),
    SumCols(usize),
    ConcatCols(usize, usize),
    SliceCols(usize, usize),
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Append-only computation graph.
///
/// Node ids increase in creation order, so every node's parents have smaller
/// ids and a single reverse sweep is a valid topological traversal.
#[derive(Default)]
pub struct Graph {
    nodes: RefCell<Vec<Node>>,
}

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy)]
pub struct Var<'g> {
    graph: &'g Graph,
    id: usize,
}

impl fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Var")
            .field("id", &self.id)
            .field("shape", &self.shape())
            .finish()
    }
}

/// Per-node gradients produced by one backward sweep.
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// `∂loss/∂v`, or `None` when `v` does not influence the loss through a
    /// differentiable path.
    pub fn get(&self, v: Var<'_>) -> Option<&[f64]> {
        self.grads.get(v.id).and_then(|g| g.as_deref())
    }
}

fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    fn suffix_of(big: &[usize], small: &[usize]) -> bool {
        let first = small.iter().position(|&d| d != 1).unwrap_or(small.len());
        big.ends_with(&small[first..])
    }
    let (na, nb): (usize, usize) = (a.iter().product(), b.iter().product());
    if a == b || nb == 1 {
        Some(a.to_vec())
    } else if na == 1 {
        Some(b.to_vec())
    } else if na >= nb && suffix_of(a, b) {
        Some(a.to_vec())
    } else if nb >= na && suffix_of(b, a) {
        Some(b.to_vec())
    } else {
        None
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Tensor, op: Op, requires_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var {
            graph: self,
            id: nodes.len() - 1,
        }
    }

    /// Differentiable input. The gradient slot of `t` is not carried over.
    pub fn leaf(&self, t: &Tensor) -> Var<'_> {
        self.push(t.detached(), Op::Leaf, true)
    }

    /// Input that never receives a gradient.
    pub fn constant(&self, t: &Tensor) -> Var<'_> {
        self.push(t.detached(), Op::Leaf, false)
    }

    pub fn constant_owned(&self, t: Tensor) -> Var<'_> {
        self.push(t.detached(), Op::Leaf, false)
    }

    pub fn scalar(&self, v: f64) -> Var<'_> {
        self.push(Tensor::scalar(v), Op::Leaf, false)
    }

    fn requires(&self, ids: &[usize]) -> bool {
        let nodes = self.nodes.borrow();
        ids.iter().any(|&i| nodes[i].requires_grad)
    }

    fn unary(&self, x: usize, op: Op, f: impl Fn(f64) -> f64) -> Var<'_> {
        let (value, rg) = {
            let nodes = self.nodes.borrow();
            let src = &nodes[x].value;
            let data = src.data.iter().map(|&v| f(v)).collect();
            (
                Tensor {
                    shape: src.shape.clone(),
                    data,
                    grad: None,
                },
                nodes[x].requires_grad,
            )
        };
        self.push(value, op, rg)
    }

    fn binary(&self, a: usize, b: usize, op: Op, name: &str, f: impl Fn(f64, f64) -> f64) -> Var<'_> {
        let (value, rg) = {
            let nodes = self.nodes.borrow();
            let (ta, tb) = (&nodes[a].value, &nodes[b].value);
            let shape = broadcast_shape(&ta.shape, &tb.shape).unwrap_or_else(|| {
                panic!("{name}: shapes {:?} and {:?} do not broadcast", ta.shape, tb.shape)
            });
            let n: usize = shape.iter().product();
            let (la, lb) = (ta.data.len(), tb.data.len());
            let data = if la == n && lb == n {
                ta.data.iter().zip(&tb.data).map(|(&x, &y)| f(x, y)).collect()
            } else {
                (0..n).map(|i| f(ta.data[i % la], tb.data[i % lb])).collect()
            };
            (
                Tensor {
                    shape,
                    data,
                    grad: None,
                },
                nodes[a].requires_grad || nodes[b].requires_grad,
            )
        };
        self.push(value, op, rg)
    }

    fn value_ref(&self, id: usize) -> Ref<'_, Tensor> {
        Ref::map(self.nodes.borrow(), |n| &n[id].value)
    }

    /// Reverse sweep from a scalar `loss`. The graph is left intact, so the
    /// sweep can be repeated.
    pub fn backward(&self, loss: Var<'_>) -> Result<Gradients> {
        let nodes = self.nodes.borrow();
        let root = &nodes[loss.id].value;
        if root.data.len() != 1 {
            return Err(Error::NotScalar(root.shape.clone()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.id + 1];
        grads[loss.id] = Some(vec![1.0]);

        for id in (0..=loss.id).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &nodes[id];
            if !node.requires_grad {
                continue;
            }
            let wants = |p: usize| nodes[p].requires_grad;
            let val = |p: usize| &nodes[p].value;
            match node.op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let (ta, tb) = (val(a), val(b));
                    let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
                    if wants(a) {
                        let slot = grad_slot(&mut grads, a, m * k);
                        gemm(m, n, k, &g, false, &tb.data, true, slot, true);
                    }
                    if wants(b) {
                        let slot = grad_slot(&mut grads, b, k * n);
                        gemm(k, m, n, &ta.data, true, &g, false, slot, true);
                    }
                }
                Op::Add(a, b) => {
                    binary_back(&mut grads, &g, a, b, val(a), val(b), wants(a), wants(b), |_, _| (1.0, 1.0))
                }
                Op::Sub(a, b) => {
                    binary_back(&mut grads, &g, a, b, val(a), val(b), wants(a), wants(b), |_, _| (1.0, -1.0))
                }
                Op::Mul(a, b) => {
                    binary_back(&mut grads, &g, a, b, val(a), val(b), wants(a), wants(b), |x, y| (y, x))
                }
                Op::Div(a, b) => binary_back(
                    &mut grads,
                    &g,
                    a,
                    b,
                    val(a),
                    val(b),
                    wants(a),
                    wants(b),
                    |x, y| (1.0 / y, -x / (y * y)),
                ),
                Op::Max(a, b) => binary_back(
                    &mut grads,
                    &g,
                    a,
                    b,
                    val(a),
                    val(b),
                    wants(a),
                    wants(b),
                    |x, y| if x >= y { (1.0, 0.0) } else { (0.0, 1.0) },
                ),
                Op::Min(a, b) => binary_back(
                    &mut grads,
                    &g,
                    a,
                    b,
                    val(a),
                    val(b),
                    wants(a),
                    wants(b),
                    |x, y| if x <= y { (1.0, 0.0) } else { (0.0, 1.0) },
                ),
                Op::Neg(x) => unary_back(&mut grads, &g, x, |_, gi| -gi, &val(x).data, &node.value.data),
                Op::Scale(x, c) => unary_back(&mut grads, &g, x, |_, gi| c * gi, &val(x).data, &node.value.data),
                Op::Offset(x) => unary_back(&mut grads, &g, x, |_, gi| gi, &val(x).data, &node.value.data),
                Op::Exp(x) => unary_back(&mut grads, &g, x, |(_, y), gi| y * gi, &val(x).data, &node.value.data),
                Op::Log(x) => unary_back(&mut grads, &g, x, |(v, _), gi| gi / v, &val(x).data, &node.value.data),
                Op::Tanh(x) => unary_back(
                    &mut grads,
                    &g,
                    x,
                    |(_, y), gi| (1.0 - y * y) * gi,
                    &val(x).data,
                    &node.value.data,
                ),
                Op::Square(x) => {
                    unary_back(&mut grads, &g, x, |(v, _), gi| 2.0 * v * gi, &val(x).data, &node.value.data)
                }
                Op::Abs(x) => unary_back(
                    &mut grads,
                    &g,
                    x,
                    |(v, _), gi| {
                        if v > 0.0 {
                            gi
                        } else if v < 0.0 {
                            -gi
                        } else {
                            0.0
                        }
                    },
                    &val(x).data,
                    &node.value.data,
                ),
                Op::Relu(x) => unary_back(
                    &mut grads,
                    &g,
                    x,
                    |(v, _), gi| if v > 0.0 { gi } else { 0.0 },
                    &val(x).data,
                    &node.value.data,
                ),
                Op::Clamp(x, lo, hi) => unary_back(
                    &mut grads,
                    &g,
                    x,
                    |(v, _), gi| if (lo..=hi).contains(&v) { gi } else { 0.0 },
                    &val(x).data,
                    &node.value.data,
                ),
                Op::Sum(x) | Op::Mean(x) => {
                    let n = val(x).data.len();
                    let scale = if matches!(node.op, Op::Mean(_)) {
                        1.0 / n as f64
                    } else {
                        1.0
                    };
                    let slot = grad_slot(&mut grads, x, n);
                    slot.iter_mut().for_each(|s| *s += g[0] * scale);
                }
                Op::SumCols(x) => {
                    let t = val(x);
                    let c = t.cols();
                    let slot = grad_slot(&mut grads, x, t.data.len());
                    for (row, &gi) in slot.chunks_mut(c).zip(&g) {
                        row.iter_mut().for_each(|s| *s += gi);
                    }
                }
                Op::ConcatCols(a, b) => {
                    let (ca, cb) = (val(a).cols(), val(b).cols());
                    let rows = node.value.rows();
                    if wants(a) {
                        let slot = grad_slot(&mut grads, a, rows * ca);
                        for r in 0..rows {
                            let src = &g[r * (ca + cb)..r * (ca + cb) + ca];
                            slot[r * ca..(r + 1) * ca]
                                .iter_mut()
                                .zip(src)
                                .for_each(|(s, v)| *s += v);
                        }
                    }
                    if wants(b) {
                        let slot = grad_slot(&mut grads, b, rows * cb);
                        for r in 0..rows {
                            let src = &g[r * (ca + cb) + ca..(r + 1) * (ca + cb)];
                            slot[r * cb..(r + 1) * cb]
                                .iter_mut()
                                .zip(src)
                                .for_each(|(s, v)| *s += v);
                        }
                    }
                }
                Op::SliceCols(x, start) => {
                    let t = val(x);
                    let (c, w) = (t.cols(), node.value.cols());
                    let slot = grad_slot(&mut grads, x, t.data.len());
                    for (r, src) in g.chunks(w).enumerate() {
                        slot[r * c + start..r * c + start + w]
                            .iter_mut()
                            .zip(src)
                            .for_each(|(s, v)| *s += v);
                    }
                }
            }
            grads[id] = Some(g);
        }
        grads.resize(nodes.len(), None);
        Ok(Gradients { grads })
    }
}

fn grad_slot(grads: &mut [Option<Vec<f64>>], id: usize, n: usize) -> &mut [f64] {
    grads[id].get_or_insert_with(|| vec![0.0; n])
}

fn unary_back(
    grads: &mut [Option<Vec<f64>>],
    g: &[f64],
    x: usize,
    d: impl Fn((f64, f64), f64) -> f64,
    input: &[f64],
    output: &[f64],
) {
    let slot = grad_slot(grads, x, input.len());
    for i in 0..slot.len() {
        slot[i] += d((input[i], output[i]), g[i]);
    }
}

#[allow(clippy::too_many_arguments)]
fn binary_back(
    grads: &mut [Option<Vec<f64>>],
    g: &[f64],
    a: usize,
    b: usize,
    ta: &Tensor,
    tb: &Tensor,
    want_a: bool,
    want_b: bool,
    d: impl Fn(f64, f64) -> (f64, f64),
) {
    let (la, lb) = (ta.data.len(), tb.data.len());
    if want_a {
        let slot = grad_slot(grads, a, la);
        for (i, &gi) in g.iter().enumerate() {
            slot[i % la] += gi * d(ta.data[i % la], tb.data[i % lb]).0;
        }
    }
    if want_b {
        let slot = grad_slot(grads, b, lb);
        for (i, &gi) in g.iter().enumerate() {
            slot[i % lb] += gi * d(ta.data[i % la], tb.data[i % lb]).1;
        }
    }
}

impl<'g> Var<'g> {
    pub fn graph(&self) -> &'g Graph {
        self.graph
    }

    pub fn value(&self) -> Ref<'g, Tensor> {
        self.graph.value_ref(self.id)
    }

    pub fn to_tensor(&self) -> Tensor {
        self.value().detached()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.value().shape.clone()
    }

    pub fn rows(&self) -> usize {
        self.value().rows()
    }

    pub fn cols(&self) -> usize {
        self.value().cols()
    }

    pub fn item(&self) -> Result<f64> {
        self.value().item()
    }

    pub fn requires_grad(&self) -> bool {
        self.graph.requires(&[self.id])
    }

    /// Same value cut off from the graph.
    pub fn detach(&self) -> Var<'g> {
        let t = self.to_tensor();
        self.graph.constant_owned(t)
    }

    pub fn matmul(self, rhs: Var<'g>) -> Var<'g> {
        let g = self.graph;
        let (value, rg) = {
            let nodes = g.nodes.borrow();
            let (ta, tb) = (&nodes[self.id].value, &nodes[rhs.id].value);
            assert!(
                ta.shape.len() <= 2 && tb.shape.len() == 2 && ta.cols() == tb.rows(),
                "matmul: shapes {:?} and {:?} are not compatible",
                ta.shape,
                tb.shape
            );
            let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
            let mut out = vec![0.0; m * n];
            gemm(m, k, n, &ta.data, false, &tb.data, false, &mut out, false);
            (
                Tensor {
                    shape: vec![m, n],
                    data: out,
                    grad: None,
                },
                nodes[self.id].requires_grad || nodes[rhs.id].requires_grad,
            )
        };
        g.push(value, Op::MatMul(self.id, rhs.id), rg)
    }

    pub fn max(self, rhs: Var<'g>) -> Var<'g> {
        self.graph.binary(self.id, rhs.id, Op::Max(self.id, rhs.id), "max", f64::max)
    }

    pub fn min(self, rhs: Var<'g>) -> Var<'g> {
        self.graph.binary(self.id, rhs.id, Op::Min(self.id, rhs.id), "min", f64::min)
    }

    pub fn scale(self, c: f64) -> Var<'g> {
        self.graph.unary(self.id, Op::Scale(self.id, c), |v| c * v)
    }

    pub fn offset(self, c: f64) -> Var<'g> {
        self.graph.unary(self.id, Op::Offset(self.id), |v| v + c)
    }

    pub fn exp(self) -> Var<'g> {
        self.graph.unary(self.id, Op::Exp(self.id), f64::exp)
    }

    pub fn ln(self) -> Var<'g> {
        self.graph.unary(self.id, Op::Log(self.id), f64::ln)
    }

    pub fn tanh(self) -> Var<'g> {
        self.graph.unary(self.id, Op::Tanh(self.id), f64::tanh)
    }

    pub fn square(self) -> Var<'g> {
        self.graph.unary(self.id, Op::Square(self.id), |v| v * v)
    }

    pub fn abs(self) -> Var<'g> {
        self.graph.unary(self.id, Op::Abs(self.id), f64::abs)
    }

    pub fn relu(self) -> Var<'g> {
        self.graph.unary(self.id, Op::Relu(self.id), |v| v.max(0.0))
    }

    pub fn clamp(self, lo: f64, hi: f64) -> Var<'g> {
        assert!(lo <= hi, "clamp: lo {lo} > hi {hi}");
        self.graph.unary(self.id, Op::Clamp(self.id, lo, hi), |v| v.clamp(lo, hi))
    }

    /// `log(1 + e^x)` assembled from primitive ops in overflow-safe form.
    pub fn softplus(self) -> Var<'g> {
        self.relu() + (-self.abs()).exp().offset(1.0).ln()
    }

    pub fn sum(self) -> Var<'g> {
        let v: f64 = self.value().data.iter().sum();
        self.graph.push(Tensor::scalar(v), Op::Sum(self.id), self.requires_grad())
    }

    pub fn mean(self) -> Var<'g> {
        let v = {
            let t = self.value();
            t.data.iter().sum::<f64>() / t.data.len() as f64
        };
        self.graph.push(Tensor::scalar(v), Op::Mean(self.id), self.requires_grad())
    }

    /// Row sums: `[rows, cols] -> [rows, 1]`.
    pub fn sum_cols(self) -> Var<'g> {
        let value = {
            let t = self.value();
            let c = t.cols();
            let data: Vec<f64> = t.data.chunks(c).map(|r| r.iter().sum()).collect();
            Tensor {
                shape: vec![data.len(), 1],
                data,
                grad: None,
            }
        };
        self.graph.push(value, Op::SumCols(self.id), self.requires_grad())
    }

    pub fn concat_cols(self, rhs: Var<'g>) -> Var<'g> {
        let value = {
            let (ta, tb) = (self.value(), rhs.value());
            assert_eq!(
                ta.rows(),
                tb.rows(),
                "concat_cols: row counts {:?} and {:?} differ",
                ta.shape,
                tb.shape
            );
            let (ca, cb) = (ta.cols(), tb.cols());
            let mut data = Vec::with_capacity(ta.data.len() + tb.data.len());
            for r in 0..ta.rows() {
                data.extend_from_slice(&ta.data[r * ca..(r + 1) * ca]);
                data.extend_from_slice(&tb.data[r * cb..(r + 1) * cb]);
            }
            Tensor {
                shape: vec![ta.rows(), ca + cb],
                data,
                grad: None,
            }
        };
        let rg = self.graph.requires(&[self.id, rhs.id]);
        self.graph.push(value, Op::ConcatCols(self.id, rhs.id), rg)
    }

    /// Columns `start..end` of every row.
    pub fn slice_cols(self, start: usize, end: usize) -> Var<'g> {
        let value = {
            let t = self.value();
            let c = t.cols();
            assert!(start < end && end <= c, "slice_cols: {start}..{end} outside {c} columns");
            let data: Vec<f64> = t
                .data
                .chunks(c)
                .flat_map(|r| r[start..end].iter().copied())
                .collect();
            Tensor {
                shape: vec![t.rows(), end - start],
                data,
                grad: None,
            }
        };
        self.graph.push(value, Op::SliceCols(self.id, start), self.requires_grad())
    }
}

macro_rules! binary_op {
    ($trait:ident, $method:ident, $op:ident, $f:expr) => {
        impl<'g> ops::$trait<Var<'g>> for Var<'g> {
            type Output = Var<'g>;
            fn $method(self, rhs: Var<'g>) -> Var<'g> {
                self.graph
                    .binary(self.id, rhs.id, Op::$op(self.id, rhs.id), stringify!($method), $f)
            }
        }
    };
}

binary_op!(Add, add, Add, |a, b| a + b);
binary_op!(Sub, sub, Sub, |a, b| a - b);
binary_op!(Mul, mul, Mul, |a, b| a * b);
binary_op!(Div, div, Div, |a, b| a / b);

impl<'g> ops::Neg for Var<'g> {
    type Output = Var<'g>;
    fn neg(self) -> Var<'g> {
        self.graph.unary(self.id, Op::Neg(self.id), |v| -v)
    }
}

impl<'g> ops::Mul<f64> for Var<'g> {
    type Output = Var<'g>;
    fn mul(self, rhs: f64) -> Var<'g> {
        self.scale(rhs)
    }
}

impl<'g> ops::Add<f64> for Var<'g> {
    type Output = Var<'g>;
    fn add(self, rhs: f64) -> Var<'g> {
        self.offset(rhs)
    }
}

impl<'g> ops::Sub<f64> for Var<'g> {
    type Output = Var<'g>;
    fn sub(self, rhs: f64) -> Var<'g> {
        self.offset(-rhs)
    }
}
