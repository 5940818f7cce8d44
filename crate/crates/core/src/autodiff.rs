//! Tape-based reverse-mode automatic differentiation over [`Matrix`] values.
//!
//! A [`Tape`] records every operation of one forward pass in topological
//! order. [`Tape::backward`] walks it once in reverse and returns
//! [`Gradients`] for every node that requires a gradient. Build a fresh tape
//! for each training step.
//!
//! ```
//! use clc::autodiff::Tape;
//! use clc::tensor::Matrix;
//!
//! let tape = Tape::new();
//! let x = tape.param(Matrix::scalar(3.0));
//! let y = x.mul(x).unwrap();
//! let grads = tape.backward(y).unwrap();
//! assert_eq!(grads.get(x).unwrap().get(0, 0), 6.0);
//! ```
//!
//! Besides the usual arithmetic the tape carries a hand-derived rule for
//! row L2 normalization, `(I - u uᵀ) / ‖x‖` applied per row, and an explicit
//! [`Var::stop_gradient`] marker whose output never receives or passes on a
//! gradient.

use std::cell::{Cell, RefCell};

use crate::error::{Error, Result};
use crate::tensor::{softmax_in_place, Matrix};

/// Deliberate rule corruption, used to prove the gradient checker detects
/// broken backward rules.
#[doc(hidden)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fault {
    FlipNormalizeSign,
}

#[derive(Debug)]
enum Op {
    Leaf,
    StopGradient,
    MatMul(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    AddRow(usize, usize),
    Scale(usize, f64),
    Exp(usize),
    Log(usize),
    Silu(usize),
    SoftmaxRows(usize),
    LogSoftmaxRows(usize),
    LogSumExpRows(usize),
    RowL2Normalize { input: usize, norms: Vec<f64> },
    ConcatCols(usize, usize),
    SliceCols { input: usize, start: usize },
    Sum(usize),
    Mean(usize),
    Transpose(usize),
}

impl Op {
    fn parents(&self) -> [Option<usize>; 2] {
        use Op::*;
        match *self {
            Leaf | StopGradient => [None, None],
            MatMul(a, b) | Add(a, b) | Sub(a, b) | Mul(a, b) | AddRow(a, b) | ConcatCols(a, b) => {
                [Some(a), Some(b)]
            }
            Scale(a, _) | Exp(a) | Log(a) | Silu(a) | SoftmaxRows(a) | LogSoftmaxRows(a)
            | LogSumExpRows(a) | Sum(a) | Mean(a) | Transpose(a) => [Some(a), None],
            RowL2Normalize { input, .. } | SliceCols { input, .. } => [Some(input), None],
        }
    }
}

#[derive(Debug)]
struct Node {
    op: Op,
    value: Matrix,
    requires_grad: bool,
}

/// Append-only record of one forward pass.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    consumed: Cell<bool>,
    fault: Cell<Option<Fault>>,
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    idx: usize,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Var").field("idx", &self.idx).finish()
    }
}

/// Gradients produced by one backward pass, indexed by tape node.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
}

impl Gradients {
    /// Gradient of the loss with respect to `var`; `None` when `var` does not
    /// require a gradient (constants, stop-gradient outputs) or the loss does
    /// not depend on it.
    pub fn get(&self, var: Var<'_>) -> Option<&Matrix> {
        self.grads.get(var.idx).and_then(Option::as_ref)
    }

    pub fn by_index(&self, idx: usize) -> Option<&Matrix> {
        self.grads.get(idx).and_then(Option::as_ref)
    }

    /// Gradient of `var`, or zeros of the given shape when absent.
    pub fn get_or_zeros(&self, var: Var<'_>) -> Matrix {
        match self.get(var) {
            Some(g) => g.clone(),
            None => {
                let (r, c) = var.shape();
                Matrix::zeros(r, c)
            }
        }
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    #[doc(hidden)]
    pub fn with_fault(fault: Fault) -> Self {
        let tape = Self::default();
        tape.fault.set(Some(fault));
        tape
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// A leaf that requires a gradient.
    pub fn param(&self, value: Matrix) -> Var<'_> {
        self.push_unchecked(Op::Leaf, value, true)
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&self, value: Matrix) -> Var<'_> {
        self.push_unchecked(Op::Leaf, value, false)
    }

    fn push_unchecked(&self, op: Op, value: Matrix, requires_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            op,
            value,
            requires_grad,
        });
        Var {
            tape: self,
            idx: nodes.len() - 1,
        }
    }

    /// Appends a node after checking that its parents already exist.
    fn record(&self, op: Op, value: Matrix) -> Result<Var<'_>> {
        let requires_grad = {
            let nodes = self.nodes.borrow();
            let mut any = false;
            for p in op.parents().into_iter().flatten() {
                let node = nodes
                    .get(p)
                    .ok_or_else(|| Error::contract("Tape::record", format!("invalid parent {p}")))?;
                any |= node.requires_grad;
            }
            any
        };
        Ok(self.push_unchecked(op, value, requires_grad))
    }

    fn check_owner(&self, var: Var<'_>) -> Result<()> {
        if std::ptr::eq(self, var.tape) {
            Ok(())
        } else {
            Err(Error::contract("Tape", "variable belongs to a different tape"))
        }
    }

    /// Reverse pass from a scalar loss. A tape supports one backward pass.
    pub fn backward(&self, loss: Var<'_>) -> Result<Gradients> {
        self.check_owner(loss)?;
        if self.consumed.replace(true) {
            return Err(Error::contract("Tape::backward", "backward already ran on this tape"));
        }
        let nodes = self.nodes.borrow();
        let shape = nodes[loss.idx].value.shape();
        if shape != (1, 1) {
            return Err(Error::contract(
                "Tape::backward",
                format!("loss must be 1x1, got {}x{}", shape.0, shape.1),
            ));
        }
        let mut grads: Vec<Option<Matrix>> = (0..nodes.len()).map(|_| None).collect();
        if !nodes[loss.idx].requires_grad {
            return Ok(Gradients { grads });
        }
        grads[loss.idx] = Some(Matrix::scalar(1.0));
        let flip_normalize = self.fault.get() == Some(Fault::FlipNormalizeSign);

        for idx in (0..=loss.idx).rev() {
            let node = &nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(upstream) = grads[idx].take() else {
                continue;
            };
            let wants = |p: usize| nodes[p].requires_grad;
            let mut parts: Vec<(usize, Matrix)> = Vec::with_capacity(2);
            match &node.op {
                Op::Leaf | Op::StopGradient => {}
                Op::MatMul(a, b) => {
                    if wants(*a) {
                        parts.push((*a, upstream.matmul_transposed(&nodes[*b].value)?));
                    }
                    if wants(*b) {
                        parts.push((*b, nodes[*a].value.transposed_matmul(&upstream)?));
                    }
                }
                Op::Add(a, b) => {
                    if wants(*a) {
                        parts.push((*a, upstream.clone()));
                    }
                    if wants(*b) {
                        parts.push((*b, upstream.clone()));
                    }
                }
                Op::Sub(a, b) => {
                    if wants(*a) {
                        parts.push((*a, upstream.clone()));
                    }
                    if wants(*b) {
                        parts.push((*b, upstream.scale(-1.0)?));
                    }
                }
                Op::Mul(a, b) => {
                    if wants(*a) {
                        parts.push((*a, upstream.hadamard(&nodes[*b].value)?));
                    }
                    if wants(*b) {
                        parts.push((*b, upstream.hadamard(&nodes[*a].value)?));
                    }
                }
                Op::AddRow(a, b) => {
                    if wants(*a) {
                        parts.push((*a, upstream.clone()));
                    }
                    if wants(*b) {
                        let sums = upstream.col_sums();
                        parts.push((*b, Matrix::from_vec(1, sums.len(), sums)?));
                    }
                }
                Op::Scale(a, c) => parts.push((*a, upstream.scale(*c)?)),
                Op::Exp(a) => parts.push((*a, upstream.hadamard(&node.value)?)),
                Op::Log(a) => parts.push((*a, upstream.zip_map(&nodes[*a].value, "log_vjp", |g, x| g / x)?)),
                Op::Silu(a) => {
                    let g = upstream.zip_map(&nodes[*a].value, "silu_vjp", |g, x| g * silu_derivative(x))?;
                    parts.push((*a, g));
                }
                Op::SoftmaxRows(a) => {
                    let y = &node.value;
                    let mut g = Matrix::zeros(y.rows(), y.cols());
                    for r in 0..y.rows() {
                        let (yr, ur) = (y.row(r), upstream.row(r));
                        let dot: f64 = yr.iter().zip(ur).map(|(p, u)| p * u).sum();
                        for (out, (p, u)) in g.row_mut(r).iter_mut().zip(yr.iter().zip(ur)) {
                            *out = p * (u - dot);
                        }
                    }
                    parts.push((*a, g));
                }
                Op::LogSoftmaxRows(a) => {
                    let y = &node.value;
                    let mut g = Matrix::zeros(y.rows(), y.cols());
                    for r in 0..y.rows() {
                        let (yr, ur) = (y.row(r), upstream.row(r));
                        let total: f64 = ur.iter().sum();
                        for (out, (ly, u)) in g.row_mut(r).iter_mut().zip(yr.iter().zip(ur)) {
                            *out = u - ly.exp() * total;
                        }
                    }
                    parts.push((*a, g));
                }
                Op::LogSumExpRows(a) => {
                    let mut g = nodes[*a].value.clone();
                    for r in 0..g.rows() {
                        let u = upstream.get(r, 0);
                        let row = g.row_mut(r);
                        softmax_in_place(row);
                        row.iter_mut().for_each(|p| *p *= u);
                    }
                    parts.push((*a, g));
                }
                Op::RowL2Normalize { input, norms } => {
                    let u = &node.value;
                    let sign = if flip_normalize { -1.0 } else { 1.0 };
                    let mut g = Matrix::zeros(u.rows(), u.cols());
                    for r in 0..u.rows() {
                        let (ur, gr) = (u.row(r), upstream.row(r));
                        let dot: f64 = ur.iter().zip(gr).map(|(a, b)| a * b).sum();
                        let inv = sign / norms[r];
                        for (out, (uu, gg)) in g.row_mut(r).iter_mut().zip(ur.iter().zip(gr)) {
                            *out = (gg - uu * dot) * inv;
                        }
                    }
                    parts.push((*input, g));
                }
                Op::ConcatCols(a, b) => {
                    let split = nodes[*a].value.cols();
                    if wants(*a) {
                        parts.push((*a, upstream.slice_cols(0, split)?));
                    }
                    if wants(*b) {
                        parts.push((*b, upstream.slice_cols(split, upstream.cols())?));
                    }
                }
                Op::SliceCols { input, start } => {
                    let src = &nodes[*input].value;
                    let mut g = Matrix::zeros(src.rows(), src.cols());
                    for r in 0..src.rows() {
                        g.row_mut(r)[*start..*start + upstream.cols()].copy_from_slice(upstream.row(r));
                    }
                    parts.push((*input, g));
                }
                Op::Sum(a) => {
                    let (r, c) = nodes[*a].value.shape();
                    parts.push((*a, Matrix::filled(r, c, upstream.get(0, 0))));
                }
                Op::Mean(a) => {
                    let (r, c) = nodes[*a].value.shape();
                    let n = (r * c).max(1) as f64;
                    parts.push((*a, Matrix::filled(r, c, upstream.get(0, 0) / n)));
                }
                Op::Transpose(a) => parts.push((*a, upstream.transpose())),
            }
            grads[idx] = Some(upstream);
            for (p, g) in parts {
                match &mut grads[p] {
                    Some(acc) => acc.axpy(1.0, &g)?,
                    slot @ None => *slot = Some(g),
                }
            }
        }
        Ok(Gradients { grads })
    }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// SiLU, `x·σ(x)`: the hidden-layer activation. Smooth everywhere, so finite
/// differences are valid at every point.
#[inline]
pub fn silu(x: f64) -> f64 {
    x * sigmoid(x)
}

#[inline]
fn silu_derivative(x: f64) -> f64 {
    let s = sigmoid(x);
    s * (1.0 + x * (1.0 - s))
}

impl<'t> Var<'t> {
    pub fn index(&self) -> usize {
        self.idx
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn value(&self) -> Matrix {
        self.tape.nodes.borrow()[self.idx].value.clone()
    }

    pub fn shape(&self) -> (usize, usize) {
        self.tape.nodes.borrow()[self.idx].value.shape()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.nodes.borrow()[self.idx].requires_grad
    }

    /// Scalar value of a 1x1 node.
    pub fn item(&self) -> Result<f64> {
        self.tape.nodes.borrow()[self.idx].value.item()
    }

    fn with_value<R>(&self, f: impl FnOnce(&Matrix) -> R) -> R {
        f(&self.tape.nodes.borrow()[self.idx].value)
    }

    fn with_values<R>(&self, other: Var<'t>, f: impl FnOnce(&Matrix, &Matrix) -> R) -> Result<R> {
        self.tape.check_owner(other)?;
        let nodes = self.tape.nodes.borrow();
        Ok(f(&nodes[self.idx].value, &nodes[other.idx].value))
    }

    fn binary(
        self,
        other: Var<'t>,
        op: Op,
        f: impl FnOnce(&Matrix, &Matrix) -> Result<Matrix>,
    ) -> Result<Var<'t>> {
        let value = self.with_values(other, f)??;
        self.tape.record(op, value)
    }

    fn unary(self, op: Op, f: impl FnOnce(&Matrix) -> Result<Matrix>) -> Result<Var<'t>> {
        let value = self.with_value(f)?;
        self.tape.record(op, value)
    }

    pub fn matmul(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, Op::MatMul(self.idx, other.idx), |a, b| a.matmul(b))
    }

    pub fn add(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, Op::Add(self.idx, other.idx), |a, b| a.add(b))
    }

    pub fn sub(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, Op::Sub(self.idx, other.idx), |a, b| a.sub(b))
    }

    /// Elementwise product.
    pub fn mul(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, Op::Mul(self.idx, other.idx), |a, b| a.hadamard(b))
    }

    /// Adds a 1 x cols row (a bias) to every row.
    pub fn add_row(self, row: Var<'t>) -> Result<Var<'t>> {
        self.binary(row, Op::AddRow(self.idx, row.idx), |a, b| a.add_row_vector(b))
    }

    pub fn scale(self, factor: f64) -> Result<Var<'t>> {
        self.unary(Op::Scale(self.idx, factor), |a| a.scale(factor))
    }

    pub fn exp(self) -> Result<Var<'t>> {
        self.unary(Op::Exp(self.idx), |a| a.map("exp", f64::exp))
    }

    pub fn log(self) -> Result<Var<'t>> {
        self.unary(Op::Log(self.idx), |a| a.map("log", f64::ln))
    }

    pub fn silu(self) -> Result<Var<'t>> {
        self.unary(Op::Silu(self.idx), |a| a.map("silu", silu))
    }

    pub fn softmax_rows(self) -> Result<Var<'t>> {
        self.unary(Op::SoftmaxRows(self.idx), |a| Ok(a.softmax_rows()))
    }

    pub fn log_softmax_rows(self) -> Result<Var<'t>> {
        self.unary(Op::LogSoftmaxRows(self.idx), |a| {
            let out = a.log_softmax_rows();
            out.ensure_finite("log_softmax_rows")?;
            Ok(out)
        })
    }

    /// Row-wise log-sum-exp as a rows x 1 column.
    pub fn log_sum_exp_rows(self) -> Result<Var<'t>> {
        self.unary(Op::LogSumExpRows(self.idx), |a| {
            let out = a.log_sum_exp_rows();
            out.ensure_finite("log_sum_exp_rows")?;
            Ok(out)
        })
    }

    pub fn row_l2_normalize(self) -> Result<Var<'t>> {
        let (value, norms) = self.with_value(|a| Ok::<_, Error>((a.row_l2_normalize()?, a.row_norms())))?;
        self.tape.record(
            Op::RowL2Normalize {
                input: self.idx,
                norms,
            },
            value,
        )
    }

    pub fn concat_cols(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, Op::ConcatCols(self.idx, other.idx), |a, b| a.concat_cols(b))
    }

    pub fn slice_cols(self, start: usize, end: usize) -> Result<Var<'t>> {
        self.unary(Op::SliceCols { input: self.idx, start }, |a| a.slice_cols(start, end))
    }

    pub fn sum(self) -> Result<Var<'t>> {
        self.unary(Op::Sum(self.idx), |a| Ok(Matrix::scalar(a.sum())))
    }

    pub fn mean(self) -> Result<Var<'t>> {
        self.unary(Op::Mean(self.idx), |a| Ok(Matrix::scalar(a.mean())))
    }

    pub fn transpose(self) -> Result<Var<'t>> {
        self.unary(Op::Transpose(self.idx), |a| Ok(a.transpose()))
    }

    /// Same value, but no gradient flows into or out of the result.
    pub fn stop_gradient(self) -> Var<'t> {
        let value = self.value();
        self.tape.push_unchecked(Op::StopGradient, value, false)
    }
}

/// Result of comparing tape gradients with central finite differences.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    /// Worst `|fd - ad| / max(‖ad‖∞, ‖fd‖∞, 1e-12)` over all inputs, where
    /// the norms are taken over the input matrix the coordinate belongs to.
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    pub coordinates: usize,
}

/// Checks the tape gradient of a scalar function of one matrix.
pub fn finite_diff_check<F>(f: F, x: &Matrix, step: f64) -> Result<GradCheck>
where
    F: for<'t> Fn(&'t Tape, Var<'t>) -> Result<Var<'t>>,
{
    check_gradients(|tape, vars| f(tape, vars[0]), std::slice::from_ref(x), step)
}

/// Checks the tape gradient of a scalar function of several matrices
/// against central differences `(f(x + h) - f(x - h)) / 2h`.
pub fn check_gradients<F>(f: F, inputs: &[Matrix], step: f64) -> Result<GradCheck>
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>,
{
    check_gradients_with_fault(f, inputs, step, None)
}

/// [`check_gradients`] with a corrupted backward rule on the analytic side.
#[doc(hidden)]
pub fn check_gradients_with_fault<F>(f: F, inputs: &[Matrix], step: f64, fault: Option<Fault>) -> Result<GradCheck>
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>,
{
    if !(step > 0.0 && step <= 1e-3) {
        return Err(Error::config("step", format!("finite-difference step {step} outside (0, 1e-3]")));
    }
    let analytic: Vec<Matrix> = {
        let tape = fault.map_or_else(Tape::new, Tape::with_fault);
        let vars: Vec<Var<'_>> = inputs.iter().map(|m| tape.param(m.clone())).collect();
        let loss = f(&tape, &vars)?;
        let grads = tape.backward(loss)?;
        vars.iter().map(|&v| grads.get_or_zeros(v)).collect()
    };
    let eval = |point: &[Matrix]| -> Result<f64> {
        let tape = Tape::new();
        let vars: Vec<Var<'_>> = point.iter().map(|m| tape.constant(m.clone())).collect();
        let v = f(&tape, &vars)?.item()?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::NonFinite { op: "finite_diff_check" })
        }
    };

    let mut point: Vec<Matrix> = inputs.to_vec();
    let mut report = GradCheck {
        max_rel_error: 0.0,
        max_abs_error: 0.0,
        coordinates: 0,
    };
    for (m, ad) in analytic.iter().enumerate() {
        let mut numeric = Vec::with_capacity(ad.len());
        for i in 0..inputs[m].len() {
            let orig = inputs[m].as_slice()[i];
            point[m].as_mut_slice()[i] = orig + step;
            let plus = eval(&point)?;
            point[m].as_mut_slice()[i] = orig - step;
            let minus = eval(&point)?;
            point[m].as_mut_slice()[i] = orig;
            numeric.push((plus - minus) / (2.0 * step));
        }
        let scale = ad
            .as_slice()
            .iter()
            .chain(&numeric)
            .fold(1e-12_f64, |s, v| s.max(v.abs()));
        for (a, n) in ad.as_slice().iter().zip(&numeric) {
            let abs = (a - n).abs();
            report.max_abs_error = report.max_abs_error.max(abs);
            report.max_rel_error = report.max_rel_error.max(abs / scale);
        }
        report.coordinates += numeric.len();
    }
    Ok(report)
}
