//! Reverse-mode differentiation over dense matrices.
//!
//! A [`Tape`] records every operation in execution order together with the
//! forward values; [`Tensor::backward`] replays the records in exact reverse
//! order and accumulates gradients for every leaf created with
//! [`Tape::leaf`]. One tape is single-threaded; distinct tapes are
//! independent. Every forward result is checked for NaN/Inf and shape
//! mismatches fail with both shapes in the message.

use crate::error::{Error, Result};
use crate::Mat;
use std::cell::RefCell;
use std::rc::Rc;

/// Recording of one computation graph. Dropped wholesale between
/// optimization steps; tensors are cheap handles into it.
#[derive(Clone, Default)]
pub struct Tape {
    inner: Rc<RefCell<TapeInner>>,
}

#[derive(Default)]
struct TapeInner {
    nodes: Vec<Node>,
}

struct Node {
    value: Mat,
    op: Op,
    /// Leaf registered as trainable.
    requires_grad: bool,
    /// True when a gradient can reach a trainable leaf through this node.
    needs_grad: bool,
}

enum Op {
    Leaf,
    Matmul(usize, usize),
    Transpose(usize),
    Add(usize, usize),
    Sub(usize, usize),
    Scale(usize, f64),
    Hadamard(usize, usize),
    ConcatCols(usize, usize, usize), // (a, b, a_cols)
    Relu(usize),
    Sigmoid(usize),
    FrobeniusSq(usize),
    BceMean(usize, Mat), // (logits, targets)
    RowL2Normalize(usize, Vec<f64>),
    ScaleRows(usize, Vec<f64>),
    ScaleCols(usize, Vec<f64>),
}

/// Handle to one node of a [`Tape`].
#[derive(Clone)]
pub struct Tensor {
    tape: Tape,
    idx: usize,
}

fn check_finite(op: &'static str, m: &Mat) -> Result<()> {
    if m.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite { op })
    }
}

fn shape_err(op: &'static str, a: (usize, usize), b: (usize, usize)) -> Error {
    Error::ShapeMismatch {
        op,
        lhs: format!("{}x{}", a.0, a.1),
        rhs: format!("{}x{}", b.0, b.1),
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    /// Registers a trainable leaf; [`Gradients::get`] will report its
    /// accumulated gradient (zeros if it never participates in the loss).
    pub fn leaf(&self, value: Mat) -> Tensor {
        self.push_leaf(value, true)
    }

    /// Registers a non-trainable input (features, filters, targets, bases).
    pub fn constant(&self, value: Mat) -> Tensor {
        self.push_leaf(value, false)
    }

    pub fn len(&self) -> usize {
        self.inner.borrow().nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push_leaf(&self, value: Mat, requires_grad: bool) -> Tensor {
        let mut inner = self.inner.borrow_mut();
        inner.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
            needs_grad: requires_grad,
        });
        Tensor {
            tape: self.clone(),
            idx: inner.nodes.len() - 1,
        }
    }

    fn push(&self, value: Mat, op: Op, needs_grad: bool) -> Tensor {
        let mut inner = self.inner.borrow_mut();
        inner.nodes.push(Node {
            value,
            op,
            requires_grad: false,
            needs_grad,
        });
        Tensor {
            tape: self.clone(),
            idx: inner.nodes.len() - 1,
        }
    }

    fn same_tape(&self, other: &Tape) -> Result<()> {
        if Rc::ptr_eq(&self.inner, &other.inner) {
            Ok(())
        } else {
            Err(Error::invalid("tensors belong to different tapes"))
        }
    }
}

impl Tensor {
    /// Node id on the tape (the key of the gradient map).
    pub fn id(&self) -> usize {
        self.idx
    }

    /// The tape this tensor lives on.
    pub fn tape(&self) -> Tape {
        self.tape.clone()
    }

    pub fn shape(&self) -> (usize, usize) {
        let inner = self.tape.inner.borrow();
        inner.nodes[self.idx].value.dim()
    }

    pub fn value(&self) -> Mat {
        self.tape.inner.borrow().nodes[self.idx].value.clone()
    }

    /// Value of a 1x1 tensor.
    pub fn scalar(&self) -> f64 {
        let inner = self.tape.inner.borrow();
        let v = &inner.nodes[self.idx].value;
        assert_eq!(v.dim(), (1, 1), "scalar() on a {:?} tensor", v.dim());
        v[[0, 0]]
    }

    fn needs_grad(&self) -> bool {
        self.tape.inner.borrow().nodes[self.idx].needs_grad
    }

    fn binary(&self, rhs: &Tensor, op: &'static str) -> Result<()> {
        self.tape.same_tape(&rhs.tape)?;
        let (a, b) = (self.shape(), rhs.shape());
        if a != b {
            return Err(shape_err(op, a, b));
        }
        Ok(())
    }

    pub fn matmul(&self, rhs: &Tensor) -> Result<Tensor> {
        self.tape.same_tape(&rhs.tape)?;
        let (a, b) = (self.shape(), rhs.shape());
        if a.1 != b.0 {
            return Err(shape_err("matmul", a, b));
        }
        let value = {
            let inner = self.tape.inner.borrow();
            inner.nodes[self.idx].value.dot(&inner.nodes[rhs.idx].value)
        };
        check_finite("matmul", &value)?;
        let ng = self.needs_grad() || rhs.needs_grad();
        Ok(self.tape.push(value, Op::Matmul(self.idx, rhs.idx), ng))
    }

    pub fn transpose(&self) -> Result<Tensor> {
        let value = self.value().t().to_owned();
        let ng = self.needs_grad();
        Ok(self.tape.push(value, Op::Transpose(self.idx), ng))
    }

    pub fn add(&self, rhs: &Tensor) -> Result<Tensor> {
        self.binary(rhs, "add")?;
        let value = {
            let inner = self.tape.inner.borrow();
            &inner.nodes[self.idx].value + &inner.nodes[rhs.idx].value
        };
        check_finite("add", &value)?;
        let ng = self.needs_grad() || rhs.needs_grad();
        Ok(self.tape.push(value, Op::Add(self.idx, rhs.idx), ng))
    }

    pub fn sub(&self, rhs: &Tensor) -> Result<Tensor> {
        self.binary(rhs, "sub")?;
        let value = {
            let inner = self.tape.inner.borrow();
            &inner.nodes[self.idx].value - &inner.nodes[rhs.idx].value
        };
        check_finite("sub", &value)?;
        let ng = self.needs_grad() || rhs.needs_grad();
        Ok(self.tape.push(value, Op::Sub(self.idx, rhs.idx), ng))
    }

    pub fn scale(&self, c: f64) -> Result<Tensor> {
        let value = self.value() * c;
        check_finite("scale", &value)?;
        let ng = self.needs_grad();
        Ok(self.tape.push(value, Op::Scale(self.idx, c), ng))
    }

    pub fn hadamard(&self, rhs: &Tensor) -> Result<Tensor> {
        self.binary(rhs, "hadamard")?;
        let value = {
            let inner = self.tape.inner.borrow();
            &inner.nodes[self.idx].value * &inner.nodes[rhs.idx].value
        };
        check_finite("hadamard", &value)?;
        let ng = self.needs_grad() || rhs.needs_grad();
        Ok(self.tape.push(value, Op::Hadamard(self.idx, rhs.idx), ng))
    }

    /// Column-concatenation `[self || rhs]`; row counts must agree.
    pub fn concat_cols(&self, rhs: &Tensor) -> Result<Tensor> {
        self.tape.same_tape(&rhs.tape)?;
        let (a, b) = (self.shape(), rhs.shape());
        if a.0 != b.0 {
            return Err(shape_err("concat_cols", a, b));
        }
        let value = {
            let inner = self.tape.inner.borrow();
            ndarray::concatenate(
                ndarray::Axis(1),
                &[
                    inner.nodes[self.idx].value.view(),
                    inner.nodes[rhs.idx].value.view(),
                ],
            )
            .expect("row counts checked")
        };
        let ng = self.needs_grad() || rhs.needs_grad();
        Ok(self
            .tape
            .push(value, Op::ConcatCols(self.idx, rhs.idx, a.1), ng))
    }

    pub fn relu(&self) -> Result<Tensor> {
        let value = self.value().mapv(|x| x.max(0.0));
        let ng = self.needs_grad();
        Ok(self.tape.push(value, Op::Relu(self.idx), ng))
    }

    pub fn sigmoid(&self) -> Result<Tensor> {
        let value = self.value().mapv(stable_sigmoid);
        check_finite("sigmoid", &value)?;
        let ng = self.needs_grad();
        Ok(self.tape.push(value, Op::Sigmoid(self.idx), ng))
    }

    /// Squared Frobenius norm as a 1x1 tensor.
    pub fn frobenius_sq(&self) -> Result<Tensor> {
        let v = self.value();
        let s: f64 = v.iter().map(|x| x * x).sum();
        let value = Mat::from_elem((1, 1), s);
        check_finite("frobenius_sq", &value)?;
        let ng = self.needs_grad();
        Ok(self.tape.push(value, Op::FrobeniusSq(self.idx), ng))
    }

    /// Mean element-wise binary cross-entropy between `sigmoid(self)` and
    /// the constant `targets`, computed in the stable logits form
    /// `max(x, 0) - x t + ln(1 + exp(-|x|))`. Returns a 1x1 tensor.
    pub fn bce_mean(&self, targets: &Mat) -> Result<Tensor> {
        let shape = self.shape();
        if shape != targets.dim() {
            return Err(shape_err("bce_mean", shape, targets.dim()));
        }
        let inner_val = {
            let inner = self.tape.inner.borrow();
            let logits = &inner.nodes[self.idx].value;
            let mut acc = 0.0;
            for (&x, &t) in logits.iter().zip(targets.iter()) {
                acc += x.max(0.0) - x * t + (-x.abs()).exp().ln_1p();
            }
            acc / (shape.0 * shape.1) as f64
        };
        let value = Mat::from_elem((1, 1), inner_val);
        check_finite("bce_mean", &value)?;
        let ng = self.needs_grad();
        Ok(self
            .tape
            .push(value, Op::BceMean(self.idx, targets.clone()), ng))
    }

    /// Normalizes each row to unit l2 norm; all-zero rows stay zero.
    pub fn row_l2_normalize(&self) -> Result<Tensor> {
        let v = self.value();
        let mut norms = Vec::with_capacity(v.nrows());
        let mut out = v.clone();
        for (i, mut row) in out.rows_mut().into_iter().enumerate() {
            let n = v.row(i).dot(&v.row(i)).sqrt();
            norms.push(n);
            if n > 0.0 {
                row.mapv_inplace(|x| x / n);
            }
        }
        check_finite("row_l2_normalize", &out)?;
        let ng = self.needs_grad();
        Ok(self
            .tape
            .push(out, Op::RowL2Normalize(self.idx, norms), ng))
    }

    /// Multiplies row `i` by `v[i]` (left-multiplication by `diag(v)`).
    pub fn scale_rows(&self, v: &[f64]) -> Result<Tensor> {
        let shape = self.shape();
        if shape.0 != v.len() {
            return Err(shape_err("scale_rows", shape, (v.len(), 1)));
        }
        let mut out = self.value();
        for (i, mut row) in out.rows_mut().into_iter().enumerate() {
            row.mapv_inplace(|x| x * v[i]);
        }
        check_finite("scale_rows", &out)?;
        let ng = self.needs_grad();
        Ok(self.tape.push(out, Op::ScaleRows(self.idx, v.to_vec()), ng))
    }

    /// Multiplies column `j` by `v[j]` (right-multiplication by `diag(v)`).
    pub fn scale_cols(&self, v: &[f64]) -> Result<Tensor> {
        let shape = self.shape();
        if shape.1 != v.len() {
            return Err(shape_err("scale_cols", shape, (1, v.len())));
        }
        let mut out = self.value();
        for (j, mut col) in out.columns_mut().into_iter().enumerate() {
            col.mapv_inplace(|x| x * v[j]);
        }
        check_finite("scale_cols", &out)?;
        let ng = self.needs_grad();
        Ok(self.tape.push(out, Op::ScaleCols(self.idx, v.to_vec()), ng))
    }

    /// Reverse pass from a scalar loss. Returns gradients for every node
    /// reachable from a trainable leaf; untouched trainable leaves read back
    /// as zeros.
    pub fn backward(&self) -> Result<Gradients> {
        let inner = self.tape.inner.borrow();
        let nodes = &inner.nodes;
        if nodes[self.idx].value.dim() != (1, 1) {
            return Err(Error::invalid(format!(
                "backward requires a scalar loss, got {:?}",
                nodes[self.idx].value.dim()
            )));
        }
        let mut grads: Vec<Option<Mat>> = vec![None; nodes.len()];
        grads[self.idx] = Some(Mat::from_elem((1, 1), 1.0));

        for i in (0..=self.idx).rev() {
            if !nodes[i].needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            match &nodes[i].op {
                Op::Leaf => {
                    grads[i] = Some(g);
                    continue;
                }
                Op::Matmul(a, b) => {
                    if nodes[*a].needs_grad {
                        let delta = g.dot(&nodes[*b].value.t());
                        accumulate(&mut grads[*a], delta);
                    }
                    if nodes[*b].needs_grad {
                        let delta = nodes[*a].value.t().dot(&g);
                        accumulate(&mut grads[*b], delta);
                    }
                }
                Op::Transpose(a) => {
                    if nodes[*a].needs_grad {
                        accumulate(&mut grads[*a], g.t().to_owned());
                    }
                }
                Op::Add(a, b) => {
                    if nodes[*a].needs_grad {
                        accumulate(&mut grads[*a], g.clone());
                    }
                    if nodes[*b].needs_grad {
                        accumulate(&mut grads[*b], g.clone());
                    }
                }
                Op::Sub(a, b) => {
                    if nodes[*a].needs_grad {
                        accumulate(&mut grads[*a], g.clone());
                    }
                    if nodes[*b].needs_grad {
                        accumulate(&mut grads[*b], -&g);
                    }
                }
                Op::Scale(a, c) => {
                    if nodes[*a].needs_grad {
                        accumulate(&mut grads[*a], &g * *c);
                    }
                }
                Op::Hadamard(a, b) => {
                    if nodes[*a].needs_grad {
                        accumulate(&mut grads[*a], &g * &nodes[*b].value);
                    }
                    if nodes[*b].needs_grad {
                        accumulate(&mut grads[*b], &g * &nodes[*a].value);
                    }
                }
                Op::ConcatCols(a, b, a_cols) => {
                    use ndarray::s;
                    if nodes[*a].needs_grad {
                        accumulate(&mut grads[*a], g.slice(s![.., ..*a_cols]).to_owned());
                    }
                    if nodes[*b].needs_grad {
                        accumulate(&mut grads[*b], g.slice(s![.., *a_cols..]).to_owned());
                    }
                }
                Op::Relu(a) => {
                    if nodes[*a].needs_grad {
                        let mut delta = g.clone();
                        ndarray::Zip::from(&mut delta)
                            .and(&nodes[*a].value)
                            .for_each(|d, &x| {
                                if x <= 0.0 {
                                    *d = 0.0;
                                }
                            });
                        accumulate(&mut grads[*a], delta);
                    }
                }
                Op::Sigmoid(a) => {
                    if nodes[*a].needs_grad {
                        let dy = nodes[i].value.mapv(|y| y * (1.0 - y));
                        accumulate(&mut grads[*a], &g * &dy);
                    }
                }
                Op::FrobeniusSq(a) => {
                    if nodes[*a].needs_grad {
                        let delta = &nodes[*a].value * (2.0 * g[[0, 0]]);
                        accumulate(&mut grads[*a], delta);
                    }
                }
                Op::BceMean(a, targets) => {
                    if nodes[*a].needs_grad {
                        let logits = &nodes[*a].value;
                        let scale = g[[0, 0]] / (logits.nrows() * logits.ncols()) as f64;
                        let mut delta = logits.clone();
                        ndarray::Zip::from(&mut delta)
                            .and(targets)
                            .for_each(|d, &t| *d = scale * (stable_sigmoid(*d) - t));
                        accumulate(&mut grads[*a], delta);
                    }
                }
                Op::RowL2Normalize(a, norms) => {
                    if nodes[*a].needs_grad {
                        let y = &nodes[i].value;
                        let mut delta = Mat::zeros(g.dim());
                        for (r, &norm) in norms.iter().enumerate() {
                            if norm == 0.0 {
                                continue;
                            }
                            let yr = y.row(r);
                            let gr = g.row(r);
                            let dot = yr.dot(&gr);
                            let mut dr = delta.row_mut(r);
                            for (k, d) in dr.iter_mut().enumerate() {
                                *d = (gr[k] - yr[k] * dot) / norm;
                            }
                        }
                        accumulate(&mut grads[*a], delta);
                    }
                }
                Op::ScaleRows(a, v) => {
                    if nodes[*a].needs_grad {
                        let mut delta = g.clone();
                        for (r, mut row) in delta.rows_mut().into_iter().enumerate() {
                            row.mapv_inplace(|x| x * v[r]);
                        }
                        accumulate(&mut grads[*a], delta);
                    }
                }
                Op::ScaleCols(a, v) => {
                    if nodes[*a].needs_grad {
                        let mut delta = g.clone();
                        for (c, mut col) in delta.columns_mut().into_iter().enumerate() {
                            col.mapv_inplace(|x| x * v[c]);
                        }
                        accumulate(&mut grads[*a], delta);
                    }
                }
            }
        }

        let mut out: Vec<Option<Mat>> = vec![None; nodes.len()];
        for (i, node) in nodes.iter().enumerate() {
            if node.requires_grad {
                out[i] = Some(match grads[i].take() {
                    Some(g) => g,
                    None => Mat::zeros(node.value.dim()),
                });
            }
        }
        Ok(Gradients { grads: out })
    }
}

fn accumulate(slot: &mut Option<Mat>, delta: Mat) {
    match slot {
        Some(g) => *g += &delta,
        None => *slot = Some(delta),
    }
}

fn stable_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Gradient map produced by [`Tensor::backward`], keyed by node id.
pub struct Gradients {
    grads: Vec<Option<Mat>>,
}

impl Gradients {
    /// Gradient of the loss with respect to a trainable leaf.
    ///
    /// Panics if the tensor was not registered with [`Tape::leaf`].
    pub fn get(&self, leaf: &Tensor) -> &Mat {
        self.grads[leaf.idx]
            .as_ref()
            .expect("gradient requested for a non-trainable tensor")
    }
}
