//! Reverse-mode accumulation over dense matrices.
//!
//! Every forward computation in the encoder and the tracker is written once
//! against [`Tape`]; inference just reads node values, training and gradient
//! checks call [`Tape::backward`]. Leaves registered with [`Tape::param`]
//! carry a name so gradients can be routed back to parameter blocks.

use std::collections::BTreeMap;

use super::ops::{gelu_derivative, gelu_scalar, softmax_unchecked};
use super::{Matrix, Precision};
use crate::error::{ensure, Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

const LAYER_NORM_EPS: f64 = 1e-5;
/// Projections onto vectors shorter than this are skipped.
pub const PROJECTION_MIN_NORM: f64 = 1e-8;
/// Probabilities are clamped here before taking logs.
pub const LOG_CLAMP: f64 = 1e-12;

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    MulCol(Var, Var),
    Hadamard(Var, Var),
    Scale(Var, f64),
    Gelu(Var),
    SoftmaxRows(Var),
    MaskedSoftmaxRows(Var),
    Transpose(Var),
    LayerNormRows(Var),
    SliceCols(Var, usize),
    ConcatCols(Vec<Var>),
    SliceRows(Var, usize),
    ConcatRows(Vec<Var>),
    Column(Var, usize),
    BroadcastRows(Var),
    MeanRows(Var),
    Sum(Var),
    ReplaceRows(Var, Var, Vec<usize>),
    Mse(Var, Matrix),
    ProjectionPenalty(Var, Var),
    CrossEntropy(Var, usize),
    L2NormalizeRows(Var),
    Conv3x3 { input: Var, weight: Var, grid: usize },
    Reshape(Var),
    NegLogEntries(Var, Vec<(usize, usize)>),
    BinaryCrossEntropy(Var, Matrix),
}

#[derive(Debug, Clone)]
struct Node {
    value: Matrix,
    op: Op,
    needs_grad: bool,
}

#[derive(Debug, Clone)]
struct NamedLeaf {
    name: String,
    var: Var,
    frozen: bool,
}

/// Gradient of a scalar with respect to every tape node.
#[derive(Debug, Clone)]
pub struct TapeGrads {
    grads: Vec<Option<Matrix>>,
}

impl TapeGrads {
    pub fn get(&self, v: Var) -> Option<&Matrix> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }
}

/// Gradients keyed by parameter-block name.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Gradients(BTreeMap<String, Matrix>);

impl Gradients {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, name: &str) -> Option<&Matrix> {
        self.0.get(name)
    }

    pub fn insert(&mut self, name: impl Into<String>, grad: Matrix) {
        self.0.insert(name.into(), grad);
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Matrix)> {
        self.0.iter()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Adds `other` into `self`, summing blocks present in both.
    pub fn accumulate(&mut self, other: &Gradients) {
        for (name, g) in &other.0 {
            match self.0.get_mut(name) {
                Some(existing) => existing.add_assign(g),
                None => {
                    self.0.insert(name.clone(), g.clone());
                }
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        for g in self.0.values_mut() {
            for x in g.data_mut() {
                *x *= s;
            }
        }
    }
}

/// Append-only computation record.
#[derive(Debug, Clone)]
pub struct Tape {
    precision: Precision,
    nodes: Vec<Node>,
    named: Vec<NamedLeaf>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new(Precision::F64)
    }
}

fn shape_err(what: &str, a: &Matrix, b: &Matrix) -> Error {
    Error::Contract(format!(
        "{what} shape mismatch: {}x{} vs {}x{}",
        a.rows(),
        a.cols(),
        b.rows(),
        b.cols()
    ))
}

/// im2col for a 3x3, pad-1 convolution over a `grid x grid` map stored as
/// `grid^2 x channels` (row-major over the grid).
fn im2col(input: &Matrix, grid: usize) -> Matrix {
    let cin = input.cols();
    let mut out = Matrix::zeros(grid * grid, 9 * cin);
    for i in 0..grid {
        for j in 0..grid {
            let row = i * grid + j;
            for di in 0..3 {
                for dj in 0..3 {
                    let (si, sj) = (i as isize + di as isize - 1, j as isize + dj as isize - 1);
                    if si < 0 || sj < 0 || si >= grid as isize || sj >= grid as isize {
                        continue;
                    }
                    let src = input.row(si as usize * grid + sj as usize);
                    let base = (di * 3 + dj) * cin;
                    out.row_mut(row)[base..base + cin].copy_from_slice(src);
                }
            }
        }
    }
    out
}

fn col2im(cols: &Matrix, grid: usize, cin: usize) -> Matrix {
    let mut out = Matrix::zeros(grid * grid, cin);
    for i in 0..grid {
        for j in 0..grid {
            let row = i * grid + j;
            for di in 0..3 {
                for dj in 0..3 {
                    let (si, sj) = (i as isize + di as isize - 1, j as isize + dj as isize - 1);
                    if si < 0 || sj < 0 || si >= grid as isize || sj >= grid as isize {
                        continue;
                    }
                    let base = (di * 3 + dj) * cin;
                    let src = &cols.row(row)[base..base + cin];
                    let dst = out.row_mut(si as usize * grid + sj as usize);
                    for (d, s) in dst.iter_mut().zip(src) {
                        *d += s;
                    }
                }
            }
        }
    }
    out
}

fn layer_norm_row(x: &[f64]) -> (Vec<f64>, f64) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let inv_std = 1.0 / (var + LAYER_NORM_EPS).sqrt();
    (x.iter().map(|v| (v - mean) * inv_std).collect(), inv_std)
}

/// Mean over rows of `<u,v>^2 / <v,v>`, the squared norm of the projection of
/// `u` onto `v`. Rows with `|v| < PROJECTION_MIN_NORM` contribute nothing.
pub(crate) fn projection_penalty(u: &Matrix, v: &Matrix) -> f64 {
    if u.rows() == 0 {
        return 0.0;
    }
    let mut acc = 0.0;
    for t in 0..u.rows() {
        let vv = super::ops::dot(v.row(t), v.row(t));
        if vv.sqrt() < PROJECTION_MIN_NORM {
            continue;
        }
        let uv = super::ops::dot(u.row(t), v.row(t));
        acc += uv * uv / vv;
    }
    acc / u.rows() as f64
}

impl Tape {
    pub fn new(precision: Precision) -> Self {
        Self {
            precision,
            nodes: Vec::new(),
            named: Vec::new(),
        }
    }

    pub fn precision(&self) -> Precision {
        self.precision
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

    /// Scalar value of a 1x1 node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value.get(0, 0)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn push(&mut self, value: Matrix, op: Op, needs_grad: bool) -> Result<Var> {
        let value = value.rounded(self.precision);
        ensure!(value.is_finite(), "non-finite value produced on the tape");
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// A constant: no gradient is propagated into it.
    pub fn constant(&mut self, m: Matrix) -> Result<Var> {
        self.push(m, Op::Leaf, false)
    }

    fn register(&mut self, name: &str, var: Var, frozen: bool) -> Result<()> {
        ensure!(
            !self.named.iter().any(|n| n.name == name),
            "parameter `{name}` bound twice on one tape"
        );
        self.named.push(NamedLeaf {
            name: name.to_string(),
            var,
            frozen,
        });
        Ok(())
    }

    /// A named trainable parameter.
    pub fn param(&mut self, name: &str, m: &Matrix) -> Result<Var> {
        let v = self.push(m.clone(), Op::Leaf, true)?;
        self.register(name, v, false)?;
        Ok(v)
    }

    /// A named parameter that never receives gradient.
    pub fn frozen(&mut self, name: &str, m: &Matrix) -> Result<Var> {
        let v = self.push(m.clone(), Op::Leaf, false)?;
        self.register(name, v, true)?;
        Ok(v)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        let ng = self.needs(a) || self.needs(b);
        self.push(value, Op::MatMul(a, b), ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).add(self.value(b))?;
        let ng = self.needs(a) || self.needs(b);
        self.push(value, Op::Add(a, b), ng)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).sub(self.value(b))?;
        let ng = self.needs(a) || self.needs(b);
        self.push(value, Op::Sub(a, b), ng)
    }

    /// Sum of several same-shaped nodes.
    pub fn add_all(&mut self, vars: &[Var]) -> Result<Var> {
        ensure!(!vars.is_empty(), "sum over no terms");
        let mut acc = vars[0];
        for v in &vars[1..] {
            acc = self.add(acc, *v)?;
        }
        Ok(acc)
    }

    /// `a + row` with `row` (1 x c) broadcast over the rows of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let value = self.value(a).add_row(self.value(row))?;
        let ng = self.needs(a) || self.needs(row);
        self.push(value, Op::AddRow(a, row), ng)
    }

    /// `a * row` elementwise with `row` (1 x c) broadcast over rows.
    pub fn mul_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (am, rm) = (self.value(a), self.value(row));
        if rm.rows() != 1 || rm.cols() != am.cols() {
            return Err(shape_err("mul_row", am, rm));
        }
        let value = Matrix::from_fn(am.rows(), am.cols(), |r, c| am.get(r, c) * rm.get(0, c));
        let ng = self.needs(a) || self.needs(row);
        self.push(value, Op::MulRow(a, row), ng)
    }

    /// `a * col` elementwise with `col` (n x 1) broadcast over columns.
    pub fn mul_col(&mut self, a: Var, col: Var) -> Result<Var> {
        let (am, cm) = (self.value(a), self.value(col));
        if cm.cols() != 1 || cm.rows() != am.rows() {
            return Err(shape_err("mul_col", am, cm));
        }
        let value = Matrix::from_fn(am.rows(), am.cols(), |r, c| am.get(r, c) * cm.get(r, 0));
        let ng = self.needs(a) || self.needs(col);
        self.push(value, Op::MulCol(a, col), ng)
    }

    pub fn hadamard(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).hadamard(self.value(b))?;
        let ng = self.needs(a) || self.needs(b);
        self.push(value, Op::Hadamard(a, b), ng)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var> {
        let value = self.value(a).scale(s);
        let ng = self.needs(a);
        self.push(value, Op::Scale(a, s), ng)
    }

    pub fn gelu(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).map(gelu_scalar);
        let ng = self.needs(a);
        self.push(value, Op::Gelu(a), ng)
    }

    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        let am = self.value(a);
        ensure!(am.cols() > 0, "softmax over zero columns");
        let mut value = am.clone();
        for r in 0..am.rows() {
            let s = softmax_unchecked(am.row(r));
            value.row_mut(r).copy_from_slice(&s);
        }
        let ng = self.needs(a);
        self.push(value, Op::SoftmaxRows(a), ng)
    }

    /// Softmax restricted to the `true` entries of `mask` (row-major, same
    /// shape as `a`); masked-out entries are exactly zero.
    pub fn masked_softmax_rows(&mut self, a: Var, mask: Vec<bool>) -> Result<Var> {
        let am = self.value(a);
        ensure!(mask.len() == am.len(), "softmax mask has wrong length");
        let mut value = Matrix::zeros(am.rows(), am.cols());
        for r in 0..am.rows() {
            let keep = &mask[r * am.cols()..(r + 1) * am.cols()];
            ensure!(keep.iter().any(|k| *k), "softmax row {r} has no active entry");
            let logits: Vec<f64> = am
                .row(r)
                .iter()
                .zip(keep)
                .filter(|(_, k)| **k)
                .map(|(x, _)| *x)
                .collect();
            let s = softmax_unchecked(&logits);
            let mut it = s.into_iter();
            for (c, k) in keep.iter().enumerate() {
                if *k {
                    value.set(r, c, it.next().unwrap_or(0.0));
                }
            }
        }
        let ng = self.needs(a);
        self.push(value, Op::MaskedSoftmaxRows(a), ng)
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).transpose();
        let ng = self.needs(a);
        self.push(value, Op::Transpose(a), ng)
    }

    /// Per-row standardization (no affine part).
    pub fn layer_norm_rows(&mut self, a: Var) -> Result<Var> {
        let am = self.value(a);
        ensure!(am.cols() > 0, "layer norm over zero columns");
        let mut value = am.clone();
        for r in 0..am.rows() {
            let (y, _) = layer_norm_row(am.row(r));
            value.row_mut(r).copy_from_slice(&y);
        }
        let ng = self.needs(a);
        self.push(value, Op::LayerNormRows(a), ng)
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let am = self.value(a);
        ensure!(start + len <= am.cols(), "column slice out of range");
        let value = Matrix::from_fn(am.rows(), len, |r, c| am.get(r, start + c));
        let ng = self.needs(a);
        self.push(value, Op::SliceCols(a, start), ng)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        ensure!(!parts.is_empty(), "concat of nothing");
        let rows = self.value(parts[0]).rows();
        ensure!(
            parts.iter().all(|p| self.value(*p).rows() == rows),
            "concat_cols row mismatch"
        );
        let cols: usize = parts.iter().map(|p| self.value(*p).cols()).sum();
        let mut value = Matrix::zeros(rows, cols);
        let mut off = 0;
        for p in parts {
            let pm = self.value(*p);
            for r in 0..rows {
                value.row_mut(r)[off..off + pm.cols()].copy_from_slice(pm.row(r));
            }
            off += pm.cols();
        }
        let ng = parts.iter().any(|p| self.needs(*p));
        self.push(value, Op::ConcatCols(parts.to_vec()), ng)
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let am = self.value(a);
        ensure!(start + len <= am.rows(), "row slice out of range");
        let value = Matrix::from_raw(
            len,
            am.cols(),
            am.data()[start * am.cols()..(start + len) * am.cols()].to_vec(),
        );
        let ng = self.needs(a);
        self.push(value, Op::SliceRows(a, start), ng)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        ensure!(!parts.is_empty(), "concat of nothing");
        let cols = self.value(parts[0]).cols();
        ensure!(
            parts.iter().all(|p| self.value(*p).cols() == cols),
            "concat_rows column mismatch"
        );
        let mut data = Vec::new();
        for p in parts {
            data.extend_from_slice(self.value(*p).data());
        }
        let rows = data.len() / cols.max(1);
        let value = Matrix::from_raw(rows, cols, data);
        let ng = parts.iter().any(|p| self.needs(*p));
        self.push(value, Op::ConcatRows(parts.to_vec()), ng)
    }

    /// Column `c` of `a` as an n x 1 node.
    pub fn column(&mut self, a: Var, c: usize) -> Result<Var> {
        let am = self.value(a);
        ensure!(c < am.cols(), "column {c} out of range");
        let value = Matrix::from_fn(am.rows(), 1, |r, _| am.get(r, c));
        let ng = self.needs(a);
        self.push(value, Op::Column(a, c), ng)
    }

    /// Repeats a 1 x c row `n` times.
    pub fn broadcast_rows(&mut self, a: Var, n: usize) -> Result<Var> {
        let am = self.value(a);
        ensure!(am.rows() == 1, "broadcast_rows expects a single row");
        let value = Matrix::from_fn(n, am.cols(), |_, c| am.get(0, c));
        let ng = self.needs(a);
        self.push(value, Op::BroadcastRows(a), ng)
    }

    pub fn mean_rows(&mut self, a: Var) -> Result<Var> {
        let am = self.value(a);
        ensure!(am.rows() > 0, "mean over zero rows");
        let value = am.col_sums().scale(1.0 / am.rows() as f64);
        let ng = self.needs(a);
        self.push(value, Op::MeanRows(a), ng)
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let value = Matrix::from_raw(1, 1, vec![self.value(a).sum()]);
        let ng = self.needs(a);
        self.push(value, Op::Sum(a), ng)
    }

    /// Replaces the listed rows of `a` by `token` (1 x c).
    pub fn replace_rows(&mut self, a: Var, token: Var, rows: Vec<usize>) -> Result<Var> {
        let (am, tm) = (self.value(a), self.value(token));
        if tm.rows() != 1 || tm.cols() != am.cols() {
            return Err(shape_err("replace_rows", am, tm));
        }
        ensure!(rows.iter().all(|r| *r < am.rows()), "replaced row out of range");
        let mut value = am.clone();
        for r in &rows {
            value.row_mut(*r).copy_from_slice(tm.row(0));
        }
        let ng = self.needs(a) || self.needs(token);
        self.push(value, Op::ReplaceRows(a, token, rows), ng)
    }

    /// Mean squared error against a fixed target.
    pub fn mse(&mut self, a: Var, target: Matrix) -> Result<Var> {
        let value = super::ops::mse(self.value(a), &target)?;
        let ng = self.needs(a);
        self.push(Matrix::from_raw(1, 1, vec![value]), Op::Mse(a, target), ng)
    }

    /// Token-averaged squared norm of the projection of `u` rows onto `v` rows.
    pub fn projection_penalty(&mut self, u: Var, v: Var) -> Result<Var> {
        let (um, vm) = (self.value(u), self.value(v));
        if um.shape() != vm.shape() {
            return Err(shape_err("projection_penalty", um, vm));
        }
        let value = projection_penalty(um, vm);
        let ng = self.needs(u) || self.needs(v);
        self.push(
            Matrix::from_raw(1, 1, vec![value]),
            Op::ProjectionPenalty(u, v),
            ng,
        )
    }

    /// `-ln softmax(logits)[label]` for a single row of logits.
    pub fn cross_entropy(&mut self, logits: Var, label: usize) -> Result<Var> {
        let lm = self.value(logits);
        ensure!(lm.rows() == 1, "cross entropy expects one row of logits");
        ensure!(label < lm.cols(), "label {label} out of range for {} classes", lm.cols());
        let row = lm.row(0);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
        let value = lse - row[label];
        let ng = self.needs(logits);
        self.push(
            Matrix::from_raw(1, 1, vec![value]),
            Op::CrossEntropy(logits, label),
            ng,
        )
    }

    pub fn l2_normalize_rows(&mut self, a: Var) -> Result<Var> {
        let am = self.value(a);
        let mut value = am.clone();
        for r in 0..am.rows() {
            let n = super::ops::norm(am.row(r));
            ensure!(n > 0.0, "normalizing a zero-norm row");
            for x in value.row_mut(r) {
                *x /= n;
            }
        }
        let ng = self.needs(a);
        self.push(value, Op::L2NormalizeRows(a), ng)
    }

    /// 3x3 convolution with zero padding 1 over a `grid x grid` map.
    ///
    /// `input` is `grid^2 x c_in`, `weight` is `9 c_in x c_out` with rows
    /// ordered by (tap row, tap col, input channel).
    pub fn conv3x3(&mut self, input: Var, weight: Var, grid: usize) -> Result<Var> {
        let (im, wm) = (self.value(input), self.value(weight));
        ensure!(im.rows() == grid * grid, "conv input is not a {grid}x{grid} map");
        ensure!(
            wm.rows() == 9 * im.cols(),
            "conv weight has {} rows, expected {}",
            wm.rows(),
            9 * im.cols()
        );
        let value = im2col(im, grid).matmul(wm)?;
        let ng = self.needs(input) || self.needs(weight);
        self.push(value, Op::Conv3x3 { input, weight, grid }, ng)
    }

    /// Reinterprets the row-major data with a new shape.
    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Result<Var> {
        let am = self.value(a);
        ensure!(am.len() == rows * cols, "reshape changes element count");
        let value = Matrix::from_raw(rows, cols, am.data().to_vec());
        let ng = self.needs(a);
        self.push(value, Op::Reshape(a), ng)
    }

    /// `sum -ln max(a[i,j], LOG_CLAMP)` over the listed entries.
    pub fn neg_log_entries(&mut self, a: Var, entries: Vec<(usize, usize)>) -> Result<Var> {
        let am = self.value(a);
        ensure!(
            entries.iter().all(|(i, j)| *i < am.rows() && *j < am.cols()),
            "log-likelihood entry out of range"
        );
        let value: f64 = entries
            .iter()
            .map(|(i, j)| -am.get(*i, *j).max(LOG_CLAMP).ln())
            .sum();
        let ng = self.needs(a);
        self.push(
            Matrix::from_raw(1, 1, vec![value]),
            Op::NegLogEntries(a, entries),
            ng,
        )
    }

    /// Mean binary cross-entropy of probabilities `a` against binary `target`.
    pub fn binary_cross_entropy(&mut self, a: Var, target: Matrix) -> Result<Var> {
        let am = self.value(a);
        if am.shape() != target.shape() {
            return Err(shape_err("binary_cross_entropy", am, &target));
        }
        ensure!(!am.is_empty(), "cross entropy over an empty matrix");
        let value = -am
            .data()
            .iter()
            .zip(target.data())
            .map(|(p, t)| {
                let p = p.clamp(LOG_CLAMP, 1.0 - LOG_CLAMP);
                t * p.ln() + (1.0 - t) * (1.0 - p).ln()
            })
            .sum::<f64>()
            / am.len() as f64;
        let ng = self.needs(a);
        self.push(
            Matrix::from_raw(1, 1, vec![value]),
            Op::BinaryCrossEntropy(a, target),
            ng,
        )
    }

    /// `x W + b` with `b` a 1 x out row.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let y = self.matmul(x, w)?;
        self.add_row(y, b)
    }

    /// Scaled dot-product attention built from primitive nodes.
    pub fn attention(&mut self, q: Var, k: Var, v: Var) -> Result<Var> {
        let d = self.value(q).cols();
        ensure!(d > 0, "attention with zero-width queries");
        let kt = self.transpose(k)?;
        let scores = self.matmul(q, kt)?;
        let scores = self.scale(scores, 1.0 / (d as f64).sqrt())?;
        let weights = self.softmax_rows(scores)?;
        self.matmul(weights, v)
    }

    /// Reverse accumulation from the scalar node `loss`.
    pub fn backward(&self, loss: Var) -> Result<TapeGrads> {
        ensure!(
            self.value(loss).shape() == (1, 1),
            "backward from a non-scalar node"
        );
        let mut grads: Vec<Option<Matrix>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Matrix::filled(1, 1, 1.0));

        fn acc(grads: &mut [Option<Matrix>], v: Var, g: Matrix) {
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&g),
                slot @ None => *slot = Some(g),
            }
        }

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[i].clone() else { continue };
            let val = |v: Var| &self.nodes[v.0].value;
            let needs = |v: Var| self.nodes[v.0].needs_grad;
            match &node.op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    if needs(*a) {
                        acc(&mut grads, *a, g.matmul(&val(*b).transpose())?);
                    }
                    if needs(*b) {
                        acc(&mut grads, *b, val(*a).transpose().matmul(&g)?);
                    }
                }
                Op::Add(a, b) => {
                    if needs(*a) {
                        acc(&mut grads, *a, g.clone());
                    }
                    if needs(*b) {
                        acc(&mut grads, *b, g);
                    }
                }
                Op::Sub(a, b) => {
                    if needs(*a) {
                        acc(&mut grads, *a, g.clone());
                    }
                    if needs(*b) {
                        acc(&mut grads, *b, g.scale(-1.0));
                    }
                }
                Op::AddRow(a, r) => {
                    if needs(*r) {
                        acc(&mut grads, *r, g.col_sums());
                    }
                    if needs(*a) {
                        acc(&mut grads, *a, g);
                    }
                }
                Op::MulRow(a, r) => {
                    let (am, rm) = (val(*a), val(*r));
                    if needs(*a) {
                        let ga = Matrix::from_fn(g.rows(), g.cols(), |i, j| g.get(i, j) * rm.get(0, j));
                        acc(&mut grads, *a, ga);
                    }
                    if needs(*r) {
                        acc(&mut grads, *r, g.hadamard(am)?.col_sums());
                    }
                }
                Op::MulCol(a, c) => {
                    let (am, cm) = (val(*a), val(*c));
                    if needs(*a) {
                        let ga = Matrix::from_fn(g.rows(), g.cols(), |i, j| g.get(i, j) * cm.get(i, 0));
                        acc(&mut grads, *a, ga);
                    }
                    if needs(*c) {
                        let gc = Matrix::from_fn(cm.rows(), 1, |i, _| {
                            super::ops::dot(g.row(i), am.row(i))
                        });
                        acc(&mut grads, *c, gc);
                    }
                }
                Op::Hadamard(a, b) => {
                    if needs(*a) {
                        acc(&mut grads, *a, g.hadamard(val(*b))?);
                    }
                    if needs(*b) {
                        acc(&mut grads, *b, g.hadamard(val(*a))?);
                    }
                }
                Op::Scale(a, s) => acc(&mut grads, *a, g.scale(*s)),
                Op::Gelu(a) => {
                    let d = val(*a).map(gelu_derivative);
                    acc(&mut grads, *a, g.hadamard(&d)?);
                }
                Op::SoftmaxRows(a) | Op::MaskedSoftmaxRows(a) => {
                    let y = &node.value;
                    let mut ga = Matrix::zeros(y.rows(), y.cols());
                    for r in 0..y.rows() {
                        let inner = super::ops::dot(g.row(r), y.row(r));
                        for c in 0..y.cols() {
                            ga.set(r, c, y.get(r, c) * (g.get(r, c) - inner));
                        }
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::Transpose(a) => acc(&mut grads, *a, g.transpose()),
                Op::LayerNormRows(a) => {
                    let x = val(*a);
                    let n = x.cols() as f64;
                    let mut ga = Matrix::zeros(x.rows(), x.cols());
                    for r in 0..x.rows() {
                        let (xhat, inv_std) = layer_norm_row(x.row(r));
                        let gr = g.row(r);
                        let mean_g = gr.iter().sum::<f64>() / n;
                        let mean_gx = super::ops::dot(gr, &xhat) / n;
                        for c in 0..x.cols() {
                            ga.set(r, c, inv_std * (gr[c] - mean_g - xhat[c] * mean_gx));
                        }
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::SliceCols(a, start) => {
                    let am = val(*a);
                    let mut ga = Matrix::zeros(am.rows(), am.cols());
                    for r in 0..g.rows() {
                        ga.row_mut(r)[*start..*start + g.cols()].copy_from_slice(g.row(r));
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::ConcatCols(parts) => {
                    let mut off = 0;
                    for p in parts {
                        let w = val(*p).cols();
                        if needs(*p) {
                            let gp = Matrix::from_fn(g.rows(), w, |r, c| g.get(r, off + c));
                            acc(&mut grads, *p, gp);
                        }
                        off += w;
                    }
                }
                Op::SliceRows(a, start) => {
                    let am = val(*a);
                    let mut ga = Matrix::zeros(am.rows(), am.cols());
                    let c = am.cols();
                    ga.data_mut()[start * c..start * c + g.len()].copy_from_slice(g.data());
                    acc(&mut grads, *a, ga);
                }
                Op::ConcatRows(parts) => {
                    let mut off = 0;
                    for p in parts {
                        let pm = val(*p);
                        let n = pm.len();
                        if needs(*p) {
                            let gp = Matrix::from_raw(
                                pm.rows(),
                                pm.cols(),
                                g.data()[off..off + n].to_vec(),
                            );
                            acc(&mut grads, *p, gp);
                        }
                        off += n;
                    }
                }
                Op::Column(a, c) => {
                    let am = val(*a);
                    let mut ga = Matrix::zeros(am.rows(), am.cols());
                    for r in 0..am.rows() {
                        ga.set(r, *c, g.get(r, 0));
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::BroadcastRows(a) => acc(&mut grads, *a, g.col_sums()),
                Op::MeanRows(a) => {
                    let am = val(*a);
                    let inv = 1.0 / am.rows() as f64;
                    let ga = Matrix::from_fn(am.rows(), am.cols(), |_, c| g.get(0, c) * inv);
                    acc(&mut grads, *a, ga);
                }
                Op::Sum(a) => {
                    let am = val(*a);
                    acc(&mut grads, *a, Matrix::filled(am.rows(), am.cols(), g.get(0, 0)));
                }
                Op::ReplaceRows(a, token, rows) => {
                    if needs(*token) {
                        let mut gt = Matrix::zeros(1, g.cols());
                        for r in rows {
                            for (t, x) in gt.row_mut(0).iter_mut().zip(g.row(*r)) {
                                *t += x;
                            }
                        }
                        acc(&mut grads, *token, gt);
                    }
                    if needs(*a) {
                        let mut ga = g;
                        for r in rows {
                            ga.row_mut(*r).fill(0.0);
                        }
                        acc(&mut grads, *a, ga);
                    }
                }
                Op::Mse(a, target) => {
                    let am = val(*a);
                    let k = 2.0 * g.get(0, 0) / am.len().max(1) as f64;
                    acc(&mut grads, *a, am.sub(target)?.scale(k));
                }
                Op::ProjectionPenalty(u, v) => {
                    let (um, vm) = (val(*u), val(*v));
                    let n = um.rows() as f64;
                    let s = g.get(0, 0) / n;
                    let mut gu = Matrix::zeros(um.rows(), um.cols());
                    let mut gv = Matrix::zeros(vm.rows(), vm.cols());
                    for t in 0..um.rows() {
                        let vv = super::ops::dot(vm.row(t), vm.row(t));
                        if vv.sqrt() < PROJECTION_MIN_NORM {
                            continue;
                        }
                        let uv = super::ops::dot(um.row(t), vm.row(t));
                        let ratio = uv / vv;
                        for c in 0..um.cols() {
                            gu.set(t, c, s * 2.0 * ratio * vm.get(t, c));
                            gv.set(
                                t,
                                c,
                                s * (2.0 * ratio * um.get(t, c) - 2.0 * ratio * ratio * vm.get(t, c)),
                            );
                        }
                    }
                    if needs(*u) {
                        acc(&mut grads, *u, gu);
                    }
                    if needs(*v) {
                        acc(&mut grads, *v, gv);
                    }
                }
                Op::CrossEntropy(logits, label) => {
                    let lm = val(*logits);
                    let mut p = softmax_unchecked(lm.row(0));
                    p[*label] -= 1.0;
                    let gl = Matrix::from_raw(1, p.len(), p).scale(g.get(0, 0));
                    acc(&mut grads, *logits, gl);
                }
                Op::L2NormalizeRows(a) => {
                    let x = val(*a);
                    let y = &node.value;
                    let mut ga = Matrix::zeros(x.rows(), x.cols());
                    for r in 0..x.rows() {
                        let n = super::ops::norm(x.row(r));
                        let gy = super::ops::dot(g.row(r), y.row(r));
                        for c in 0..x.cols() {
                            ga.set(r, c, (g.get(r, c) - y.get(r, c) * gy) / n);
                        }
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::Conv3x3 {
                    input,
                    weight,
                    grid,
                } => {
                    let (im, wm) = (val(*input), val(*weight));
                    if needs(*weight) {
                        acc(&mut grads, *weight, im2col(im, *grid).transpose().matmul(&g)?);
                    }
                    if needs(*input) {
                        let gcols = g.matmul(&wm.transpose())?;
                        acc(&mut grads, *input, col2im(&gcols, *grid, im.cols()));
                    }
                }
                Op::Reshape(a) => {
                    let am = val(*a);
                    acc(
                        &mut grads,
                        *a,
                        Matrix::from_raw(am.rows(), am.cols(), g.data().to_vec()),
                    );
                }
                Op::NegLogEntries(a, entries) => {
                    let am = val(*a);
                    let mut ga = Matrix::zeros(am.rows(), am.cols());
                    for (i, j) in entries {
                        let p = am.get(*i, *j);
                        if p > LOG_CLAMP {
                            ga.set(*i, *j, ga.get(*i, *j) - g.get(0, 0) / p);
                        }
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::BinaryCrossEntropy(a, target) => {
                    let am = val(*a);
                    let k = -g.get(0, 0) / am.len() as f64;
                    let ga = Matrix::from_fn(am.rows(), am.cols(), |i, j| {
                        let (p, t) = (am.get(i, j), target.get(i, j));
                        if p <= LOG_CLAMP || p >= 1.0 - LOG_CLAMP {
                            0.0
                        } else {
                            k * (t / p - (1.0 - t) / (1.0 - p))
                        }
                    });
                    acc(&mut grads, *a, ga);
                }
            }
        }
        Ok(TapeGrads { grads })
    }

    /// Gradients of every named leaf; frozen or unreached leaves get zeros.
    pub fn named_gradients(&self, grads: &TapeGrads) -> Gradients {
        let mut out = Gradients::new();
        for leaf in &self.named {
            let shape = self.value(leaf.var).shape();
            let g = if leaf.frozen {
                None
            } else {
                grads.get(leaf.var).cloned()
            };
            out.insert(
                leaf.name.clone(),
                g.unwrap_or_else(|| Matrix::zeros(shape.0, shape.1)),
            );
        }
        out
    }
}
