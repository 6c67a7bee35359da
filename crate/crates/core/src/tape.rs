//! Tape-based reverse-mode automatic differentiation over 2D arrays.
//!
//! A `Graph` records every operation applied to `Var` handles; `backward`
//! walks the tape in reverse and returns exact gradients for every named
//! parameter leaf. All values are f64 matrices; column vectors are [m, 1].
//! The op set is exactly what the denoiser, losses, and contrastive
//! evaluator need; each backward formula is verified against central finite
//! differences in the tests below.

use std::collections::BTreeMap;

use ndarray::{s, Array1, Array2, Axis};

use crate::error::{Error, Result};

const LAYER_NORM_EPS: f64 = 1e-5;

/// Handle to a node in a `Graph`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    /// Input; `Some(name)` marks a trainable parameter.
    Leaf(Option<String>),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    /// Broadcast-add a [m,1] column to every column of a [m,n] matrix.
    AddCol(usize, usize),
    /// Broadcast-multiply by a [m,1] column.
    MulCol(usize, usize),
    Scale(usize, f64),
    AddScalar(usize),
    MatMul(usize, usize),
    Transpose(usize),
    ConcatRows(Vec<usize>),
    SliceRows(usize, usize, usize),
    /// Column shift with zero fill: out[:, j] = in[:, j - offset].
    ShiftCols(usize, isize),
    SoftmaxRows(usize),
    LogSoftmaxRows(usize),
    /// Rows scaled to unit L2 norm.
    NormalizeRows(usize),
    /// Per-column standardization over rows (no affine), eps 1e-5.
    LayerNormCols(usize),
    Silu(usize),
    Sigmoid(usize),
    Exp(usize),
    /// Rotary embedding over columns-as-positions; row pairs are rotated.
    Rope(usize, f64),
    Sum(usize),
    Mean(usize),
    DiagMean(usize),
    Detach,
}

struct Node {
    value: Array2<f64>,
    op: Op,
    needs_grad: bool,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

fn shift_cols_raw(a: &Array2<f64>, offset: isize) -> Array2<f64> {
    let (m, n) = a.dim();
    let mut out = Array2::zeros((m, n));
    for j in 0..n as isize {
        let src = j - offset;
        if src >= 0 && src < n as isize {
            out.column_mut(j as usize)
                .assign(&a.column(src as usize));
        }
    }
    out
}

fn rope_apply(a: &Array2<f64>, base: f64, inverse: bool) -> Array2<f64> {
    let (d, n) = a.dim();
    let half = d / 2;
    let mut out = Array2::zeros((d, n));
    for j in 0..half {
        let theta = base.powf(-2.0 * j as f64 / d as f64);
        for col in 0..n {
            let mut angle = col as f64 * theta;
            if inverse {
                angle = -angle;
            }
            let (sin, cos) = angle.sin_cos();
            let x = a[(2 * j, col)];
            let y = a[(2 * j + 1, col)];
            out[(2 * j, col)] = x * cos - y * sin;
            out[(2 * j + 1, col)] = x * sin + y * cos;
        }
    }
    out
}

fn col_vec(v: Array1<f64>) -> Array2<f64> {
    let m = v.len();
    v.into_shape_with_order((m, 1)).expect("column reshape")
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Value of a node.
    pub fn value(&self, v: Var) -> &Array2<f64> {
        &self.nodes[v.0].value
    }

    /// Scalar value of a [1,1] node.
    pub fn scalar(&self, v: Var) -> Result<f64> {
        let val = self.value(v);
        if val.dim() != (1, 1) {
            return Err(Error::ShapeMismatch(format!(
                "expected scalar node, got {:?}",
                val.dim()
            )));
        }
        Ok(val[(0, 0)])
    }

    fn push(&mut self, value: Array2<f64>, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn constant(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Leaf(None), false)
    }

    pub fn scalar_constant(&mut self, value: f64) -> Var {
        self.constant(Array2::from_elem((1, 1), value))
    }

    /// Trainable leaf; gradients are reported under `name`.
    pub fn param(&mut self, name: &str, value: Array2<f64>) -> Var {
        self.push(value, Op::Leaf(Some(name.to_string())), true)
    }

    fn same_shape(&self, what: &str, a: Var, b: Var) -> Result<()> {
        let (da, db) = (self.value(a).dim(), self.value(b).dim());
        if da != db {
            return Err(Error::ShapeMismatch(format!("{what}: {da:?} vs {db:?}")));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let v = self.value(a) + self.value(b);
        Ok(self.push(v, Op::Add(a.0, b.0), self.needs(a) || self.needs(b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let v = self.value(a) - self.value(b);
        Ok(self.push(v, Op::Sub(a.0, b.0), self.needs(a) || self.needs(b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let v = self.value(a) * self.value(b);
        Ok(self.push(v, Op::Mul(a.0, b.0), self.needs(a) || self.needs(b)))
    }

    pub fn add_col(&mut self, a: Var, c: Var) -> Result<Var> {
        let (m, _) = self.value(a).dim();
        if self.value(c).dim() != (m, 1) {
            return Err(Error::ShapeMismatch(format!(
                "add_col: matrix {:?} vs column {:?}",
                self.value(a).dim(),
                self.value(c).dim()
            )));
        }
        let v = self.value(a) + &self.value(c).broadcast(self.value(a).dim()).unwrap();
        Ok(self.push(v, Op::AddCol(a.0, c.0), self.needs(a) || self.needs(c)))
    }

    pub fn mul_col(&mut self, a: Var, c: Var) -> Result<Var> {
        let (m, _) = self.value(a).dim();
        if self.value(c).dim() != (m, 1) {
            return Err(Error::ShapeMismatch(format!(
                "mul_col: matrix {:?} vs column {:?}",
                self.value(a).dim(),
                self.value(c).dim()
            )));
        }
        let v = self.value(a) * &self.value(c).broadcast(self.value(a).dim()).unwrap();
        Ok(self.push(v, Op::MulCol(a.0, c.0), self.needs(a) || self.needs(c)))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let v = self.value(a) * k;
        self.push(v, Op::Scale(a.0, k), self.needs(a))
    }

    pub fn add_scalar(&mut self, a: Var, k: f64) -> Var {
        let v = self.value(a) + k;
        self.push(v, Op::AddScalar(a.0), self.needs(a))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ma, ka) = self.value(a).dim();
        let (kb, nb) = self.value(b).dim();
        if ka != kb {
            return Err(Error::ShapeMismatch(format!(
                "matmul: ({ma}, {ka}) x ({kb}, {nb})"
            )));
        }
        let v = self.value(a).dot(self.value(b));
        Ok(self.push(v, Op::MatMul(a.0, b.0), self.needs(a) || self.needs(b)))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let v = self.value(a).t().to_owned();
        self.push(v, Op::Transpose(a.0), self.needs(a))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::BadArgument("concat_rows of nothing".into()));
        }
        let n = self.value(parts[0]).ncols();
        let mut rows = 0;
        for &p in parts {
            if self.value(p).ncols() != n {
                return Err(Error::ShapeMismatch(
                    "concat_rows: column counts differ".into(),
                ));
            }
            rows += self.value(p).nrows();
        }
        let mut v = Array2::zeros((rows, n));
        let mut at = 0;
        for &p in parts {
            let r = self.value(p).nrows();
            v.slice_mut(s![at..at + r, ..]).assign(self.value(p));
            at += r;
        }
        let needs = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(v, Op::ConcatRows(parts.iter().map(|p| p.0).collect()), needs))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let (m, _) = self.value(a).dim();
        if start >= end || end > m {
            return Err(Error::BadArgument(format!(
                "slice_rows [{start}, {end}) of {m} rows"
            )));
        }
        let v = self.value(a).slice(s![start..end, ..]).to_owned();
        Ok(self.push(v, Op::SliceRows(a.0, start, end), self.needs(a)))
    }

    pub fn shift_cols(&mut self, a: Var, offset: isize) -> Var {
        let v = shift_cols_raw(self.value(a), offset);
        self.push(v, Op::ShiftCols(a.0, offset), self.needs(a))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let mut v = self.value(a).clone();
        for mut row in v.rows_mut() {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            row.mapv_inplace(|x| (x - max).exp());
            let sum = row.sum();
            row.mapv_inplace(|x| x / sum);
        }
        self.push(v, Op::SoftmaxRows(a.0), self.needs(a))
    }

    pub fn log_softmax_rows(&mut self, a: Var) -> Var {
        let mut v = self.value(a).clone();
        for mut row in v.rows_mut() {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
            row.mapv_inplace(|x| x - lse);
        }
        self.push(v, Op::LogSoftmaxRows(a.0), self.needs(a))
    }

    pub fn normalize_rows(&mut self, a: Var) -> Var {
        let mut v = self.value(a).clone();
        for mut row in v.rows_mut() {
            let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
            row.mapv_inplace(|x| x / norm);
        }
        self.push(v, Op::NormalizeRows(a.0), self.needs(a))
    }

    pub fn layer_norm_cols(&mut self, a: Var) -> Var {
        let (m, n) = self.value(a).dim();
        let mut v = Array2::zeros((m, n));
        for j in 0..n {
            let col = self.value(a).column(j);
            let mean = col.sum() / m as f64;
            let var = col.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / m as f64;
            let sigma = (var + LAYER_NORM_EPS).sqrt();
            for i in 0..m {
                v[(i, j)] = (col[i] - mean) / sigma;
            }
        }
        self.push(v, Op::LayerNormCols(a.0), self.needs(a))
    }

    pub fn silu(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(|x| x * crate::diffusion::sigmoid(x));
        self.push(v, Op::Silu(a.0), self.needs(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(crate::diffusion::sigmoid);
        self.push(v, Op::Sigmoid(a.0), self.needs(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(f64::exp);
        self.push(v, Op::Exp(a.0), self.needs(a))
    }

    /// Rotary position embedding: column j is treated as position j; each
    /// consecutive row pair (2k, 2k+1) is rotated by j * base^(-2k/d).
    pub fn rope(&mut self, a: Var, base: f64) -> Result<Var> {
        let (d, _) = self.value(a).dim();
        if d % 2 != 0 {
            return Err(Error::BadArgument(format!(
                "rotary embedding needs an even feature dim, got {d}"
            )));
        }
        let v = rope_apply(self.value(a), base, false);
        Ok(self.push(v, Op::Rope(a.0, base), self.needs(a)))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let v = Array2::from_elem((1, 1), self.value(a).sum());
        self.push(v, Op::Sum(a.0), self.needs(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let v = Array2::from_elem((1, 1), self.value(a).sum() / self.value(a).len() as f64);
        self.push(v, Op::Mean(a.0), self.needs(a))
    }

    /// Mean of the diagonal of a square matrix.
    pub fn diag_mean(&mut self, a: Var) -> Result<Var> {
        let (m, n) = self.value(a).dim();
        if m != n {
            return Err(Error::ShapeMismatch(format!(
                "diag_mean needs a square matrix, got ({m}, {n})"
            )));
        }
        let d = (0..m).map(|i| self.value(a)[(i, i)]).sum::<f64>() / m as f64;
        let v = Array2::from_elem((1, 1), d);
        Ok(self.push(v, Op::DiagMean(a.0), self.needs(a)))
    }

    /// Value copy that blocks gradient flow.
    pub fn detach(&mut self, a: Var) -> Var {
        let v = self.value(a).clone();
        self.push(v, Op::Detach, false)
    }

    /// Gradients of a scalar loss node with respect to every parameter leaf.
    pub fn backward(&mut self, loss: Var) -> Result<BTreeMap<String, Array2<f64>>> {
        if self.value(loss).dim() != (1, 1) {
            return Err(Error::BadArgument(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).dim()
            )));
        }
        let mut grads: Vec<Option<Array2<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Array2::from_elem((1, 1), 1.0));
        let mut out: BTreeMap<String, Array2<f64>> = BTreeMap::new();

        for id in (0..=loss.0).rev() {
            let g = match grads[id].take() {
                Some(g) => g,
                None => continue,
            };
            if !self.nodes[id].needs_grad {
                continue;
            }
            macro_rules! acc {
                ($idx:expr, $contrib:expr) => {{
                    let idx: usize = $idx;
                    if self.nodes[idx].needs_grad {
                        let contrib: Array2<f64> = $contrib;
                        match &mut grads[idx] {
                            Some(existing) => *existing += &contrib,
                            slot @ None => *slot = Some(contrib),
                        }
                    }
                }};
            }
            // Clone the op descriptor; values are borrowed immutably below.
            let op = self.nodes[id].op.clone();
            match op {
                Op::Leaf(Some(name)) => match out.get_mut(&name) {
                    Some(existing) => *existing += &g,
                    None => {
                        out.insert(name, g);
                    }
                },
                Op::Leaf(None) => {}
                Op::Add(a, b) => {
                    acc!(a, g.clone());
                    acc!(b, g);
                }
                Op::Sub(a, b) => {
                    acc!(a, g.clone());
                    acc!(b, -&g);
                }
                Op::Mul(a, b) => {
                    acc!(a, &g * &self.nodes[b].value);
                    acc!(b, &g * &self.nodes[a].value);
                }
                Op::AddCol(a, c) => {
                    acc!(a, g.clone());
                    acc!(c, col_vec(g.sum_axis(Axis(1))));
                }
                Op::MulCol(a, c) => {
                    let cv = &self.nodes[c].value;
                    acc!(a, &g * &cv.broadcast(g.dim()).unwrap());
                    acc!(c, col_vec((&g * &self.nodes[a].value).sum_axis(Axis(1))));
                }
                Op::Scale(a, k) => acc!(a, &g * k),
                Op::AddScalar(a) => acc!(a, g),
                Op::MatMul(a, b) => {
                    acc!(a, g.dot(&self.nodes[b].value.t()));
                    acc!(b, self.nodes[a].value.t().dot(&g));
                }
                Op::Transpose(a) => acc!(a, g.t().to_owned()),
                Op::ConcatRows(parts) => {
                    let mut at = 0;
                    for p in parts {
                        let r = self.nodes[p].value.nrows();
                        acc!(p, g.slice(s![at..at + r, ..]).to_owned());
                        at += r;
                    }
                }
                Op::SliceRows(a, start, end) => {
                    let mut da = Array2::zeros(self.nodes[a].value.dim());
                    da.slice_mut(s![start..end, ..]).assign(&g);
                    acc!(a, da);
                }
                Op::ShiftCols(a, offset) => acc!(a, shift_cols_raw(&g, -offset)),
                Op::SoftmaxRows(a) => {
                    let y = &self.nodes[id].value;
                    let mut da = Array2::zeros(g.dim());
                    for (i, row) in y.rows().into_iter().enumerate() {
                        let dot: f64 = row
                            .iter()
                            .zip(g.row(i).iter())
                            .map(|(s, gi)| s * gi)
                            .sum();
                        for (j, s) in row.iter().enumerate() {
                            da[(i, j)] = s * (g[(i, j)] - dot);
                        }
                    }
                    acc!(a, da);
                }
                Op::LogSoftmaxRows(a) => {
                    let y = &self.nodes[id].value;
                    let mut da = Array2::zeros(g.dim());
                    for (i, row) in y.rows().into_iter().enumerate() {
                        let gsum: f64 = g.row(i).sum();
                        for (j, ly) in row.iter().enumerate() {
                            da[(i, j)] = g[(i, j)] - ly.exp() * gsum;
                        }
                    }
                    acc!(a, da);
                }
                Op::NormalizeRows(a) => {
                    let x = &self.nodes[a].value;
                    let y = &self.nodes[id].value;
                    let mut da = Array2::zeros(g.dim());
                    for i in 0..x.nrows() {
                        let norm = x
                            .row(i)
                            .iter()
                            .map(|v| v * v)
                            .sum::<f64>()
                            .sqrt()
                            .max(1e-12);
                        let ydotg: f64 = y
                            .row(i)
                            .iter()
                            .zip(g.row(i).iter())
                            .map(|(a, b)| a * b)
                            .sum();
                        for j in 0..x.ncols() {
                            da[(i, j)] = (g[(i, j)] - y[(i, j)] * ydotg) / norm;
                        }
                    }
                    acc!(a, da);
                }
                Op::LayerNormCols(a) => {
                    let x = &self.nodes[a].value;
                    let y = &self.nodes[id].value;
                    let m = x.nrows() as f64;
                    let mut da = Array2::zeros(g.dim());
                    for j in 0..x.ncols() {
                        let col = x.column(j);
                        let mean = col.sum() / m;
                        let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / m;
                        let sigma = (var + LAYER_NORM_EPS).sqrt();
                        let g_mean: f64 = g.column(j).sum() / m;
                        let gy_mean: f64 = g
                            .column(j)
                            .iter()
                            .zip(y.column(j).iter())
                            .map(|(a, b)| a * b)
                            .sum::<f64>()
                            / m;
                        for i in 0..x.nrows() {
                            da[(i, j)] = (g[(i, j)] - g_mean - y[(i, j)] * gy_mean) / sigma;
                        }
                    }
                    acc!(a, da);
                }
                Op::Silu(a) => {
                    let x = &self.nodes[a].value;
                    let d = x.mapv(|v| {
                        let s = crate::diffusion::sigmoid(v);
                        s * (1.0 + v * (1.0 - s))
                    });
                    acc!(a, &g * &d);
                }
                Op::Sigmoid(a) => {
                    let y = &self.nodes[id].value;
                    acc!(a, &g * &y.mapv(|s| s * (1.0 - s)));
                }
                Op::Exp(a) => {
                    let y = &self.nodes[id].value;
                    acc!(a, &g * y);
                }
                Op::Rope(a, base) => acc!(a, rope_apply(&g, base, true)),
                Op::Sum(a) => {
                    let gs = g[(0, 0)];
                    acc!(a, Array2::from_elem(self.nodes[a].value.dim(), gs));
                }
                Op::Mean(a) => {
                    let n = self.nodes[a].value.len() as f64;
                    let gs = g[(0, 0)] / n;
                    acc!(a, Array2::from_elem(self.nodes[a].value.dim(), gs));
                }
                Op::DiagMean(a) => {
                    let n = self.nodes[a].value.nrows();
                    let mut da = Array2::zeros(self.nodes[a].value.dim());
                    let gs = g[(0, 0)] / n as f64;
                    for i in 0..n {
                        da[(i, i)] = gs;
                    }
                    acc!(a, da);
                }
                Op::Detach => {}
            }
        }

        for (name, g) in &out {
            if !g.iter().all(|v| v.is_finite()) {
                return Err(Error::NonFiniteGradient(format!(
                    "gradient for parameter {name} is not finite"
                )));
            }
        }
        Ok(out)
    }
}
