//! Tape of differentiable operations.
//!
//! Every op appends a node holding its forward value; nodes only reference
//! earlier nodes, so index order is a topological order and the backward
//! sweep simply walks the tape in reverse.

use super::params::ParameterStore;
use super::tensor::{gemm_a_bt_acc, gemm_acc, gemm_at_b_acc, Real, Tensor};
use super::{AutodiffError, DropoutMask};

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op<T> {
    Leaf,
    Param(String),
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Affine(Var, T),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols(Var, usize),
    SliceRows(Var, usize),
    Gather(Var, Vec<usize>),
    Transpose(Var),
    Sum(Var),
    SumRows(Var),
    Mean(Var),
    MeanRows(Var),
    Relu(Var),
    Clamp(Var, T, T),
    Tanh(Var),
    Sigmoid(Var),
    Exp(Var),
    Log(Var),
    Softmax(Var, usize),
    LogSoftmax(Var, usize),
    NormalizeRows(Var, Vec<T>),
    Dropout(Var, Vec<T>),
}

#[derive(Debug, Clone)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
}

/// Reverse-mode differentiation tape.
#[derive(Debug, Clone)]
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    checked: bool,
}

/// Gradients of one backward sweep, indexed by node.
#[derive(Debug, Clone)]
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Real> Gradients<T> {
    /// Gradient w.r.t. `v`; zeros if `v` did not influence the output.
    pub fn get(&self, v: Var, like: &Graph<T>) -> Tensor<T> {
        let shape = like.value(v).shape().to_vec();
        match &self.grads[v.0] {
            Some(g) => Tensor::new(shape, g.clone()).expect("gradient shape"),
            None => Tensor::zeros(shape),
        }
    }

    pub fn raw(&self, v: Var) -> Option<&[T]> {
        self.grads[v.0].as_deref()
    }
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn shape_err(op: &'static str, detail: String) -> AutodiffError {
    AutodiffError::Shape { op, detail }
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            checked: false,
        }
    }

    /// A tape that rejects any op producing NaN or ±∞.
    pub fn checked() -> Self {
        Self {
            nodes: Vec::new(),
            checked: true,
        }
    }

    pub fn set_checked(&mut self, checked: bool) {
        self.checked = checked;
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    fn dims(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.dims2()
    }

    fn push(
        &mut self,
        op_name: &'static str,
        value: Tensor<T>,
        op: Op<T>,
    ) -> Result<Var, AutodiffError> {
        if self.checked && !value.is_finite() {
            return Err(AutodiffError::NonFinite { op: op_name });
        }
        self.nodes.push(Node { value, op });
        Ok(Var(self.nodes.len() - 1))
    }

    fn push_matrix(
        &mut self,
        op_name: &'static str,
        rows: usize,
        cols: usize,
        values: Vec<T>,
        op: Op<T>,
    ) -> Result<Var, AutodiffError> {
        let t = Tensor::new(vec![rows, cols], values)?;
        self.push(op_name, t, op)
    }

    /// Constant input; receives gradients but is not a parameter.
    pub fn input(&mut self, value: Tensor<T>) -> Result<Var, AutodiffError> {
        let (r, c) = value.dims2();
        let value = value.reshaped(vec![r, c])?;
        self.push("input", value, Op::Leaf)
    }

    /// Leaf bound to a named parameter of `store`.
    pub fn param(&mut self, store: &ParameterStore<T>, name: &str) -> Result<Var, AutodiffError> {
        let p = store
            .get(name)
            .ok_or_else(|| AutodiffError::UnknownParameter(name.to_string()))?;
        let (r, c) = p.dims2();
        let value = p.clone().reshaped(vec![r, c])?;
        self.push("param", value, Op::Param(name.to_string()))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (r, k) = self.dims(a);
        let (k2, c) = self.dims(b);
        if k != k2 {
            return Err(shape_err("matmul", format!("[{r}, {k}] x [{k2}, {c}]")));
        }
        let mut out = vec![T::zero(); r * c];
        gemm_acc(
            self.value(a).values(),
            self.value(b).values(),
            &mut out,
            r,
            k,
            c,
        );
        self.push_matrix("matmul", r, c, out, Op::MatMul(a, b))
    }

    fn same_shape(
        &self,
        op: &'static str,
        a: Var,
        b: Var,
    ) -> Result<(usize, usize), AutodiffError> {
        let da = self.dims(a);
        let db = self.dims(b);
        if da != db {
            return Err(shape_err(op, format!("{da:?} vs {db:?}")));
        }
        Ok(da)
    }

    fn zip_with(&self, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Vec<T> {
        self.value(a)
            .values()
            .iter()
            .zip(self.value(b).values())
            .map(|(&x, &y)| f(x, y))
            .collect()
    }

    fn map(&self, a: Var, f: impl Fn(T) -> T) -> Vec<T> {
        self.value(a).values().iter().map(|&x| f(x)).collect()
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (r, c) = self.same_shape("add", a, b)?;
        let out = self.zip_with(a, b, |x, y| x + y);
        self.push_matrix("add", r, c, out, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (r, c) = self.same_shape("sub", a, b)?;
        let out = self.zip_with(a, b, |x, y| x - y);
        self.push_matrix("sub", r, c, out, Op::Sub(a, b))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (r, c) = self.same_shape("mul", a, b)?;
        let out = self.zip_with(a, b, |x, y| x * y);
        self.push_matrix("mul", r, c, out, Op::Mul(a, b))
    }

    /// Adds a `1 × c` row to every row of an `r × c` matrix.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var, AutodiffError> {
        let (r, c) = self.dims(a);
        let (rr, rc) = self.dims(row);
        if rr != 1 || rc != c {
            return Err(shape_err("add_row", format!("[{r}, {c}] + [{rr}, {rc}]")));
        }
        let bias = self.value(row).values();
        let out: Vec<T> = self
            .value(a)
            .values()
            .iter()
            .enumerate()
            .map(|(i, &x)| x + bias[i % c])
            .collect();
        self.push_matrix("add_row", r, c, out, Op::AddRow(a, row))
    }

    /// `scale · a + shift`.
    pub fn affine(&mut self, a: Var, scale: T, shift: T) -> Result<Var, AutodiffError> {
        let (r, c) = self.dims(a);
        let out = self.map(a, |x| scale * x + shift);
        self.push_matrix("affine", r, c, out, Op::Affine(a, scale))
    }

    pub fn scale(&mut self, a: Var, k: T) -> Result<Var, AutodiffError> {
        self.affine(a, k, T::zero())
    }

    pub fn neg(&mut self, a: Var) -> Result<Var, AutodiffError> {
        self.affine(a, -T::one(), T::zero())
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, AutodiffError> {
        let first = parts
            .first()
            .ok_or_else(|| shape_err("concat_cols", "no inputs".into()))?;
        let r = self.dims(*first).0;
        let mut total = 0;
        for &p in parts {
            let (pr, pc) = self.dims(p);
            if pr != r {
                return Err(shape_err("concat_cols", format!("row count {pr} vs {r}")));
            }
            total += pc;
        }
        let mut out = Vec::with_capacity(r * total);
        for i in 0..r {
            for &p in parts {
                out.extend_from_slice(self.value(p).row_slice(i));
            }
        }
        self.push_matrix("concat_cols", r, total, out, Op::ConcatCols(parts.to_vec()))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var, AutodiffError> {
        let first = parts
            .first()
            .ok_or_else(|| shape_err("concat_rows", "no inputs".into()))?;
        let c = self.dims(*first).1;
        let mut rows = 0;
        for &p in parts {
            let (pr, pc) = self.dims(p);
            if pc != c {
                return Err(shape_err(
                    "concat_rows",
                    format!("column count {pc} vs {c}"),
                ));
            }
            rows += pr;
        }
        let mut out = Vec::with_capacity(rows * c);
        for &p in parts {
            out.extend_from_slice(self.value(p).values());
        }
        self.push_matrix("concat_rows", rows, c, out, Op::ConcatRows(parts.to_vec()))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var, AutodiffError> {
        let (r, c) = self.dims(a);
        if len == 0 || start + len > c {
            return Err(shape_err(
                "slice_cols",
                format!("[{start}, {}) of {c} columns", start + len),
            ));
        }
        let src = self.value(a);
        let mut out = Vec::with_capacity(r * len);
        for i in 0..r {
            out.extend_from_slice(&src.row_slice(i)[start..start + len]);
        }
        self.push_matrix("slice_cols", r, len, out, Op::SliceCols(a, start))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var, AutodiffError> {
        let (r, c) = self.dims(a);
        if len == 0 || start + len > r {
            return Err(shape_err(
                "slice_rows",
                format!("[{start}, {}) of {r} rows", start + len),
            ));
        }
        let out = self.value(a).values()[start * c..(start + len) * c].to_vec();
        self.push_matrix("slice_rows", len, c, out, Op::SliceRows(a, start))
    }

    /// Row lookup: output row `i` is `table[indices[i]]`.
    pub fn gather_rows(&mut self, table: Var, indices: &[usize]) -> Result<Var, AutodiffError> {
        let (r, c) = self.dims(table);
        if indices.is_empty() {
            return Err(shape_err("gather_rows", "no indices".into()));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= r) {
            return Err(shape_err(
                "gather_rows",
                format!("index {bad} out of {r} rows"),
            ));
        }
        let src = self.value(table);
        let mut out = Vec::with_capacity(indices.len() * c);
        for &i in indices {
            out.extend_from_slice(src.row_slice(i));
        }
        self.push_matrix(
            "gather_rows",
            indices.len(),
            c,
            out,
            Op::Gather(table, indices.to_vec()),
        )
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var, AutodiffError> {
        let (r, c) = self.dims(a);
        let src = self.value(a).values();
        let mut out = vec![T::zero(); r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = src[i * c + j];
            }
        }
        self.push_matrix("transpose", c, r, out, Op::Transpose(a))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var, AutodiffError> {
        let s = self.value(a).values().iter().copied().sum();
        self.push_matrix("sum", 1, 1, vec![s], Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var, AutodiffError> {
        let v = self.value(a).values();
        let s: T = v.iter().copied().sum();
        let m = s / T::lit(v.len() as f64);
        self.push_matrix("mean", 1, 1, vec![m], Op::Mean(a))
    }

    fn column_sums(&self, a: Var) -> Vec<T> {
        let (r, c) = self.dims(a);
        let src = self.value(a).values();
        let mut out = vec![T::zero(); c];
        for i in 0..r {
            for (o, &x) in out.iter_mut().zip(&src[i * c..(i + 1) * c]) {
                *o = *o + x;
            }
        }
        out
    }

    /// Sum over rows, giving a `1 × c` row.
    pub fn sum_rows(&mut self, a: Var) -> Result<Var, AutodiffError> {
        let c = self.dims(a).1;
        let out = self.column_sums(a);
        self.push_matrix("sum_rows", 1, c, out, Op::SumRows(a))
    }

    /// Mean over rows, giving a `1 × c` row.
    pub fn mean_rows(&mut self, a: Var) -> Result<Var, AutodiffError> {
        let (r, c) = self.dims(a);
        let inv = T::one() / T::lit(r as f64);
        let out = self.column_sums(a).into_iter().map(|x| x * inv).collect();
        self.push_matrix("mean_rows", 1, c, out, Op::MeanRows(a))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var, AutodiffError> {
        let (r, c) = self.dims(a);
        let out = self.map(a, |x| if x > T::zero() { x } else { T::zero() });
        self.push_matrix("relu", r, c, out, Op::Relu(a))
    }

    /// Elementwise clamp to `[lo, hi]`; gradient passes only strictly inside.
    pub fn clamp(&mut self, a: Var, lo: T, hi: T) -> Result<Var, AutodiffError> {
        if !(lo <= hi) {
            return Err(AutodiffError::InvalidArgument(
                "clamp needs lo <= hi".into(),
            ));
        }
        let (r, c) = self.dims(a);
        let out = self.map(a, |x| x.max(lo).min(hi));
        self.push_matrix("clamp", r, c, out, Op::Clamp(a, lo, hi))
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var, AutodiffError> {
        let (r, c) = self.dims(a);
        let out = self.map(a, |x| x.tanh());
        self.push_matrix("tanh", r, c, out, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var, AutodiffError> {
        let (r, c) = self.dims(a);
        let out = self.map(a, sigmoid);
        self.push_matrix("sigmoid", r, c, out, Op::Sigmoid(a))
    }

    pub fn exp(&mut self, a: Var) -> Result<Var, AutodiffError> {
        let (r, c) = self.dims(a);
        let out = self.map(a, |x| x.exp());
        self.push_matrix("exp", r, c, out, Op::Exp(a))
    }

    pub fn log(&mut self, a: Var) -> Result<Var, AutodiffError> {
        let (r, c) = self.dims(a);
        let out = self.map(a, |x| x.ln());
        self.push_matrix("log", r, c, out, Op::Log(a))
    }

    /// Softmax along `axis` (0: within each column, 1: within each row).
    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var, AutodiffError> {
        let (r, c) = self.dims(a);
        let lanes =
            lanes(r, c, axis).ok_or_else(|| shape_err("softmax", format!("axis {axis}")))?;
        let mut out = self.value(a).values().to_vec();
        for lane in lanes {
            softmax_lane(&mut out, &lane);
        }
        self.push_matrix("softmax", r, c, out, Op::Softmax(a, axis))
    }

    pub fn log_softmax(&mut self, a: Var, axis: usize) -> Result<Var, AutodiffError> {
        let (r, c) = self.dims(a);
        let lanes =
            lanes(r, c, axis).ok_or_else(|| shape_err("log_softmax", format!("axis {axis}")))?;
        let src = self.value(a).values();
        let mut out = src.to_vec();
        for lane in lanes {
            let max = lane.iter().map(|&i| src[i]).fold(T::neg_infinity(), T::max);
            let lse = max + lane.iter().map(|&i| (src[i] - max).exp()).sum::<T>().ln();
            for &i in &lane {
                out[i] = src[i] - lse;
            }
        }
        self.push_matrix("log_softmax", r, c, out, Op::LogSoftmax(a, axis))
    }

    /// Scales every row to unit L2 norm. Rows with norm below 1e-12 are an error.
    pub fn normalize_rows(&mut self, a: Var) -> Result<Var, AutodiffError> {
        let (r, c) = self.dims(a);
        let src = self.value(a);
        let mut norms = Vec::with_capacity(r);
        let mut out = Vec::with_capacity(r * c);
        for i in 0..r {
            let row = src.row_slice(i);
            let n = row.iter().map(|&x| x * x).sum::<T>().sqrt();
            if !(n.to_f64_lossy() >= 1e-12) {
                return Err(AutodiffError::ZeroNorm { row: i });
            }
            norms.push(n);
            out.extend(row.iter().map(|&x| x / n));
        }
        self.push_matrix("normalize_rows", r, c, out, Op::NormalizeRows(a, norms))
    }

    /// Inverted dropout: kept entries scaled by `1/(1-p)`, dropped entries zero.
    pub fn dropout(&mut self, a: Var, mask: &DropoutMask) -> Result<Var, AutodiffError> {
        let (r, c) = self.dims(a);
        if mask.len() != r * c {
            return Err(shape_err(
                "dropout",
                format!("mask of {} entries for [{r}, {c}]", mask.len()),
            ));
        }
        let keep_scale = T::one() / (T::one() - T::lit(mask.p()));
        let factors: Vec<T> = mask
            .keep()
            .iter()
            .map(|&k| if k { keep_scale } else { T::zero() })
            .collect();
        let out = self
            .value(a)
            .values()
            .iter()
            .zip(&factors)
            .map(|(&x, &f)| x * f)
            .collect();
        self.push_matrix("dropout", r, c, out, Op::Dropout(a, factors))
    }

    /// Cosine similarity of two equal-width rows, as a `1 × 1` node.
    pub fn cosine_sim(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (ra, ca) = self.dims(a);
        let (rb, cb) = self.dims(b);
        if ra != 1 || rb != 1 || ca != cb {
            return Err(shape_err(
                "cosine_sim",
                format!("[{ra}, {ca}] vs [{rb}, {cb}]"),
            ));
        }
        let na = self.normalize_rows(a)?;
        let nb = self.normalize_rows(b)?;
        let prod = self.mul(na, nb)?;
        self.sum(prod)
    }

    /// Reverse sweep from a scalar output.
    pub fn backward(&self, output: Var) -> Result<Gradients<T>, AutodiffError> {
        if self.value(output).len() != 1 {
            return Err(shape_err(
                "backward",
                format!(
                    "output must be scalar, got {:?}",
                    self.value(output).shape()
                ),
            ));
        }
        self.backward_with(output, &[T::one()])
    }

    /// Reverse sweep seeded with an explicit upstream gradient for `output`.
    pub fn backward_with(&self, output: Var, seed: &[T]) -> Result<Gradients<T>, AutodiffError> {
        if seed.len() != self.value(output).len() {
            return Err(shape_err(
                "backward",
                format!(
                    "seed of {} for output of {}",
                    seed.len(),
                    self.value(output).len()
                ),
            ));
        }
        let mut grads: Vec<Option<Vec<T>>> = vec![None; self.nodes.len()];
        grads[output.0] = Some(seed.to_vec());
        for idx in (0..=output.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, idx: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let node = &self.nodes[idx];
        let y = node.value.values();
        let (r, c) = node.value.dims2();
        match &node.op {
            Op::Leaf | Op::Param(_) => {}
            Op::MatMul(a, b) => {
                let (ra, k) = self.dims(*a);
                let av = self.value(*a).values();
                let bv = self.value(*b).values();
                let ga = slot(grads, *a, ra * k);
                gemm_a_bt_acc(g, bv, ga, ra, k, c);
                let gb = slot(grads, *b, k * c);
                gemm_at_b_acc(av, g, gb, ra, k, c);
            }
            Op::Add(a, b) => {
                add_into(slot(grads, *a, g.len()), g);
                add_into(slot(grads, *b, g.len()), g);
            }
            Op::Sub(a, b) => {
                add_into(slot(grads, *a, g.len()), g);
                let gb = slot(grads, *b, g.len());
                for (o, &x) in gb.iter_mut().zip(g) {
                    *o = *o - x;
                }
            }
            Op::Mul(a, b) => {
                let av = self.value(*a).values();
                let bv = self.value(*b).values();
                let ga = slot(grads, *a, g.len());
                for i in 0..g.len() {
                    ga[i] = ga[i] + g[i] * bv[i];
                }
                let gb = slot(grads, *b, g.len());
                for i in 0..g.len() {
                    gb[i] = gb[i] + g[i] * av[i];
                }
            }
            Op::AddRow(a, row) => {
                add_into(slot(grads, *a, g.len()), g);
                let gr = slot(grads, *row, c);
                for (i, &x) in g.iter().enumerate() {
                    gr[i % c] = gr[i % c] + x;
                }
            }
            Op::Affine(a, k) => {
                let ga = slot(grads, *a, g.len());
                for (o, &x) in ga.iter_mut().zip(g) {
                    *o = *o + *k * x;
                }
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for p in parts {
                    let (pr, pc) = self.dims(*p);
                    let gp = slot(grads, *p, pr * pc);
                    for i in 0..pr {
                        let src = &g[i * c + offset..i * c + offset + pc];
                        add_into(&mut gp[i * pc..(i + 1) * pc], src);
                    }
                    offset += pc;
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for p in parts {
                    let n = self.value(*p).len();
                    add_into(slot(grads, *p, n), &g[offset..offset + n]);
                    offset += n;
                }
            }
            Op::SliceCols(a, start) => {
                let (ar, ac) = self.dims(*a);
                let ga = slot(grads, *a, ar * ac);
                for i in 0..r {
                    add_into(
                        &mut ga[i * ac + start..i * ac + start + c],
                        &g[i * c..(i + 1) * c],
                    );
                }
            }
            Op::SliceRows(a, start) => {
                let n = self.value(*a).len();
                let ga = slot(grads, *a, n);
                add_into(&mut ga[start * c..(start + r) * c], g);
            }
            Op::Gather(table, indices) => {
                let n = self.value(*table).len();
                let gt = slot(grads, *table, n);
                for (row, &src) in indices.iter().enumerate() {
                    add_into(&mut gt[src * c..(src + 1) * c], &g[row * c..(row + 1) * c]);
                }
            }
            Op::Transpose(a) => {
                // y is r×c, a is c×r
                let ga = slot(grads, *a, r * c);
                for i in 0..r {
                    for j in 0..c {
                        ga[j * r + i] = ga[j * r + i] + g[i * c + j];
                    }
                }
            }
            Op::Sum(a) => {
                let n = self.value(*a).len();
                let ga = slot(grads, *a, n);
                for o in ga.iter_mut() {
                    *o = *o + g[0];
                }
            }
            Op::Mean(a) => {
                let n = self.value(*a).len();
                let share = g[0] / T::lit(n as f64);
                let ga = slot(grads, *a, n);
                for o in ga.iter_mut() {
                    *o = *o + share;
                }
            }
            Op::SumRows(a) | Op::MeanRows(a) => {
                let (ar, ac) = self.dims(*a);
                let k = if matches!(node.op, Op::MeanRows(_)) {
                    T::one() / T::lit(ar as f64)
                } else {
                    T::one()
                };
                let ga = slot(grads, *a, ar * ac);
                for i in 0..ar {
                    for j in 0..ac {
                        ga[i * ac + j] = ga[i * ac + j] + k * g[j];
                    }
                }
            }
            Op::Relu(a) => {
                let ga = slot(grads, *a, g.len());
                for i in 0..g.len() {
                    if y[i] > T::zero() {
                        ga[i] = ga[i] + g[i];
                    }
                }
            }
            Op::Clamp(a, lo, hi) => {
                let av = self.value(*a).values();
                let ga = slot(grads, *a, g.len());
                for i in 0..g.len() {
                    if av[i] > *lo && av[i] < *hi {
                        ga[i] = ga[i] + g[i];
                    }
                }
            }
            Op::Tanh(a) => {
                let ga = slot(grads, *a, g.len());
                for i in 0..g.len() {
                    ga[i] = ga[i] + g[i] * (T::one() - y[i] * y[i]);
                }
            }
            Op::Sigmoid(a) => {
                let ga = slot(grads, *a, g.len());
                for i in 0..g.len() {
                    ga[i] = ga[i] + g[i] * y[i] * (T::one() - y[i]);
                }
            }
            Op::Exp(a) => {
                let ga = slot(grads, *a, g.len());
                for i in 0..g.len() {
                    ga[i] = ga[i] + g[i] * y[i];
                }
            }
            Op::Log(a) => {
                let av = self.value(*a).values();
                let ga = slot(grads, *a, g.len());
                for i in 0..g.len() {
                    ga[i] = ga[i] + g[i] / av[i];
                }
            }
            Op::Softmax(a, axis) => {
                let ga = slot(grads, *a, g.len());
                for lane in lanes(r, c, *axis).expect("validated axis") {
                    let dot: T = lane.iter().map(|&i| g[i] * y[i]).sum();
                    for &i in &lane {
                        ga[i] = ga[i] + y[i] * (g[i] - dot);
                    }
                }
            }
            Op::LogSoftmax(a, axis) => {
                let ga = slot(grads, *a, g.len());
                for lane in lanes(r, c, *axis).expect("validated axis") {
                    let total: T = lane.iter().map(|&i| g[i]).sum();
                    for &i in &lane {
                        ga[i] = ga[i] + g[i] - y[i].exp() * total;
                    }
                }
            }
            Op::NormalizeRows(a, norms) => {
                let ga = slot(grads, *a, g.len());
                for (i, &n) in norms.iter().enumerate() {
                    let ys = &y[i * c..(i + 1) * c];
                    let gs = &g[i * c..(i + 1) * c];
                    let dot: T = ys.iter().zip(gs).map(|(&a, &b)| a * b).sum();
                    for j in 0..c {
                        ga[i * c + j] = ga[i * c + j] + (gs[j] - ys[j] * dot) / n;
                    }
                }
            }
            Op::Dropout(a, factors) => {
                let ga = slot(grads, *a, g.len());
                for i in 0..g.len() {
                    ga[i] = ga[i] + g[i] * factors[i];
                }
            }
        }
    }

    /// Parameter names bound on this tape, with their node handles.
    pub fn param_nodes(&self) -> impl Iterator<Item = (&str, Var)> {
        self.nodes
            .iter()
            .enumerate()
            .filter_map(|(i, n)| match &n.op {
                Op::Param(name) => Some((name.as_str(), Var(i))),
                _ => None,
            })
    }
}

fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

fn slot<'a, T: Real>(grads: &'a mut [Option<Vec<T>>], v: Var, len: usize) -> &'a mut Vec<T> {
    grads[v.0].get_or_insert_with(|| vec![T::zero(); len])
}

fn add_into<T: Real>(dst: &mut [T], src: &[T]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d = *d + s;
    }
}

/// Flat index groups for a reduction along `axis` of an `r × c` matrix.
fn lanes(r: usize, c: usize, axis: usize) -> Option<Vec<Vec<usize>>> {
    match axis {
        0 => Some(
            (0..c)
                .map(|j| (0..r).map(|i| i * c + j).collect())
                .collect(),
        ),
        1 => Some((0..r).map(|i| (i * c..(i + 1) * c).collect()).collect()),
        _ => None,
    }
}

fn softmax_lane<T: Real>(buf: &mut [T], lane: &[usize]) {
    let max = lane.iter().map(|&i| buf[i]).fold(T::neg_infinity(), T::max);
    let mut total = T::zero();
    for &i in lane {
        buf[i] = (buf[i] - max).exp();
        total = total + buf[i];
    }
    for &i in lane {
        buf[i] = buf[i] / total;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], v: &[f64]) -> Tensor<f64> {
        Tensor::from_f64(shape.to_vec(), v).unwrap()
    }

    #[test]
    fn matmul_with_identity_is_identity() {
        let mut g = Graph::<f64>::checked();
        let x = g.input(t(&[2, 3], &[1., 2., 3., 4., 5., 6.])).unwrap();
        let i = g.input(Tensor::identity(3)).unwrap();
        let y = g.matmul(x, i).unwrap();
        assert_eq!(g.value(y).values(), g.value(x).values());
    }

    #[test]
    fn matmul_shape_mismatch_names_op() {
        let mut g = Graph::<f64>::new();
        let a = g.input(Tensor::zeros(vec![2, 3])).unwrap();
        let b = g.input(Tensor::zeros(vec![2, 3])).unwrap();
        let err = g.matmul(a, b).unwrap_err();
        assert!(err.to_string().contains("matmul"), "{err}");
    }

    #[test]
    fn softmax_sums_to_one_along_axis() {
        let mut g = Graph::<f64>::checked();
        let x = g.input(t(&[2, 3], &[1., -2., 30., 0.5, 0.5, 0.5])).unwrap();
        let rows = g.softmax(x, 1).unwrap();
        for i in 0..2 {
            let s: f64 = g.value(rows).row_slice(i).iter().sum();
            assert!((s - 1.0).abs() < 1e-6);
        }
        let cols = g.softmax(x, 0).unwrap();
        for j in 0..3 {
            let s = g.value(cols).get(0, j) + g.value(cols).get(1, j);
            assert!((s - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn gradient_of_sum_of_squares_is_twice_input() {
        let mut g = Graph::<f64>::checked();
        let x = g.input(t(&[1, 4], &[1.5, -2.0, 0.25, 3.0])).unwrap();
        let sq = g.mul(x, x).unwrap();
        let s = g.sum(sq).unwrap();
        let grads = g.backward(s).unwrap();
        let gx = grads.get(x, &g);
        for (gv, xv) in gx.values().iter().zip(g.value(x).values()) {
            assert!((gv - 2.0 * xv).abs() < 1e-6);
        }
    }

    #[test]
    fn unused_input_gets_zero_gradient_and_reuse_accumulates() {
        let mut g = Graph::<f64>::new();
        let x = g.input(t(&[1, 2], &[1.0, 2.0])).unwrap();
        let unused = g.input(t(&[1, 2], &[5.0, 5.0])).unwrap();
        let y = g.add(x, x).unwrap();
        let s = g.sum(y).unwrap();
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.get(x, &g).values(), &[2.0, 2.0]);
        assert_eq!(grads.get(unused, &g).values(), &[0.0, 0.0]);
    }

    #[test]
    fn cosine_edge_cases() {
        let mut g = Graph::<f64>::checked();
        let v = g.input(t(&[1, 3], &[1.0, -2.0, 0.5])).unwrap();
        let nv = g.neg(v).unwrap();
        let same = g.cosine_sim(v, v).unwrap();
        let opposite = g.cosine_sim(v, nv).unwrap();
        assert!((g.value(same).item() - 1.0).abs() < 1e-12);
        assert!((g.value(opposite).item() + 1.0).abs() < 1e-12);
        let e1 = g.input(t(&[1, 2], &[1.0, 0.0])).unwrap();
        let e2 = g.input(t(&[1, 2], &[0.0, 1.0])).unwrap();
        let ortho = g.cosine_sim(e1, e2).unwrap();
        assert_eq!(g.value(ortho).item(), 0.0);
        let zero = g.input(Tensor::zeros(vec![1, 2])).unwrap();
        assert!(matches!(
            g.cosine_sim(e1, zero),
            Err(AutodiffError::ZeroNorm { .. })
        ));
    }

    #[test]
    fn checked_mode_traps_non_finite() {
        let mut g = Graph::<f64>::checked();
        let x = g.input(t(&[1, 1], &[0.0])).unwrap();
        assert!(matches!(
            g.log(x),
            Err(AutodiffError::NonFinite { op: "log" })
        ));
        let mut lax = Graph::<f64>::new();
        let x = lax.input(t(&[1, 1], &[0.0])).unwrap();
        assert!(lax.log(x).is_ok());
    }
}
