use super::matrix::{gemm_acc, gemm_nt_acc, gemm_tn_acc};
use super::{Gradients, Matrix, NnError, ParamId, ParamStore};

/// Epsilon added to the variance in layer normalization.
pub const LAYER_NORM_EPS: f64 = 1e-12;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Constant,
    Param(usize),
    MatMul(Var, Var),
    /// `a · bᵀ`
    MatMulT(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    /// `a` plus a row vector broadcast over rows.
    AddRow(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    /// Per-row inverse standard deviations.
    LayerNorm(Var, Vec<f64>),
    SoftmaxRows(Var),
    GatherRows(Var, Vec<usize>),
    ScatterAddRows(Var, Vec<usize>),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize),
    SliceRows(Var, usize),
    RowNorms(Var),
    Sum(Var),
    Reshape(Var),
}

#[derive(Debug)]
struct Node {
    value: Matrix,
    op: Op,
    needs_grad: bool,
}

/// Records a forward computation for reverse-mode differentiation.
///
/// Parameters are read from the borrowed store; [`Tape::backward`] returns
/// their gradients without touching the store, so several tapes can run over
/// one store concurrently.
#[derive(Debug)]
pub struct Tape<'p> {
    params: Option<&'p ParamStore>,
    nodes: Vec<Node>,
    param_vars: Vec<Option<Var>>,
    consumed: bool,
}

/// Adjoint accumulator of `v`, created as zeros on first use.
fn slot<'a>(nodes: &[Node], adj: &'a mut [Option<Matrix>], v: Var) -> &'a mut Matrix {
    let (r, c) = nodes[v.0].value.shape();
    adj[v.0].get_or_insert_with(|| Matrix::zeros(r, c))
}

fn shape_err(op: &str, detail: String) -> NnError {
    NnError::Shape { op: op.to_string(), detail }
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Self { params: Some(params), nodes: Vec::new(), param_vars: vec![None; params.len()], consumed: false }
    }

    /// A tape without parameters, for plain forward evaluation.
    pub fn detached() -> Tape<'static> {
        Tape { params: None, nodes: Vec::new(), param_vars: Vec::new(), consumed: false }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Matrix, op: Op) -> Var {
        let needs_grad = match &op {
            Op::Constant => false,
            Op::Param(_) => true,
            Op::MatMul(a, b) | Op::MatMulT(a, b) | Op::Add(a, b) | Op::Sub(a, b) | Op::AddRow(a, b) => {
                self.nodes[a.0].needs_grad || self.nodes[b.0].needs_grad
            }
            Op::ConcatCols(vs) => vs.iter().any(|v| self.nodes[v.0].needs_grad),
            Op::Scale(a, _)
            | Op::Relu(a)
            | Op::LayerNorm(a, _)
            | Op::SoftmaxRows(a)
            | Op::GatherRows(a, _)
            | Op::ScatterAddRows(a, _)
            | Op::SliceCols(a, _)
            | Op::SliceRows(a, _)
            | Op::RowNorms(a)
            | Op::Sum(a)
            | Op::Reshape(a) => self.nodes[a.0].needs_grad,
        };
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn constant(&mut self, m: Matrix) -> Var {
        self.push(m, Op::Constant)
    }

    /// Leaf for a parameter; repeated calls return the same handle.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars[id.0] {
            return v;
        }
        let store = self.params.expect("tape has no parameter store");
        let v = self.push(store.value(id).clone(), Op::Param(id.0));
        self.param_vars[id.0] = Some(v);
        v
    }

    pub fn param_named(&mut self, name: &str) -> Result<Var, NnError> {
        let store = self.params.ok_or_else(|| NnError::UnknownParam(name.to_string()))?;
        let id = store.id(name)?;
        Ok(self.param(id))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        let (x, y) = (self.value(a), self.value(b));
        if x.cols() != y.rows() {
            return Err(shape_err("matmul", format!("left {:?} times right {:?}", x.shape(), y.shape())));
        }
        let mut out = Matrix::zeros(x.rows(), y.cols());
        gemm_acc(x, y, &mut out);
        Ok(self.push(out, Op::MatMul(a, b)))
    }

    /// `a · bᵀ`.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        let (x, y) = (self.value(a), self.value(b));
        if x.cols() != y.cols() {
            return Err(shape_err("matmul_t", format!("left {:?} times transposed right {:?}", x.shape(), y.shape())));
        }
        let mut out = Matrix::zeros(x.rows(), y.rows());
        gemm_nt_acc(x, y, &mut out);
        Ok(self.push(out, Op::MatMulT(a, b)))
    }

    fn zip_same(&mut self, name: &str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Result<Matrix, NnError> {
        let (x, y) = (self.value(a), self.value(b));
        if x.shape() != y.shape() {
            return Err(shape_err(name, format!("left {:?}, right {:?}", x.shape(), y.shape())));
        }
        let data = x.data().iter().zip(y.data()).map(|(&p, &q)| f(p, q)).collect();
        Ok(Matrix::from_raw(x.rows(), x.cols(), data))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        let out = self.zip_same("add", a, b, |p, q| p + q)?;
        Ok(self.push(out, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        let out = self.zip_same("sub", a, b, |p, q| p - q)?;
        Ok(self.push(out, Op::Sub(a, b)))
    }

    /// Adds the `1×c` row `b` to every row of `a`.
    pub fn add_row(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        let (x, r) = (self.value(a), self.value(b));
        if r.rows() != 1 || r.cols() != x.cols() {
            return Err(shape_err("add_row", format!("matrix {:?}, row {:?}", x.shape(), r.shape())));
        }
        let mut out = x.clone();
        for i in 0..out.rows() {
            for (o, &v) in out.row_mut(i).iter_mut().zip(r.data()) {
                *o += v;
            }
        }
        Ok(self.push(out, Op::AddRow(a, b)))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let mut out = self.value(a).clone();
        out.scale_in_place(k);
        self.push(out, Op::Scale(a, k))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let data = x.data().iter().map(|&v| v.max(0.0)).collect();
        let out = Matrix::from_raw(x.rows(), x.cols(), data);
        self.push(out, Op::Relu(a))
    }

    /// Row-wise `(x - mean) / sqrt(var + eps)` with population variance; no affine terms.
    pub fn layer_norm(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let (rows, cols) = x.shape();
        let mut out = Matrix::zeros(rows, cols);
        let mut inv_std = Vec::with_capacity(rows);
        for r in 0..rows {
            let row = x.row(r);
            let mean = row.iter().sum::<f64>() / cols as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / cols as f64;
            let is = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            for (o, &v) in out.row_mut(r).iter_mut().zip(row) {
                *o = (v - mean) * is;
            }
            inv_std.push(is);
        }
        self.push(out, Op::LayerNorm(a, inv_std))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let mut out = x.clone();
        for r in 0..out.rows() {
            let row = out.row_mut(r);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                z += *v;
            }
            for v in row.iter_mut() {
                *v /= z;
            }
        }
        self.push(out, Op::SoftmaxRows(a))
    }

    /// Output row `k` is row `idx[k]` of `a`.
    pub fn gather_rows(&mut self, a: Var, idx: &[usize]) -> Result<Var, NnError> {
        let x = self.value(a);
        if let Some(&bad) = idx.iter().find(|&&i| i >= x.rows()) {
            return Err(shape_err("gather_rows", format!("row {bad} of a {:?} matrix", x.shape())));
        }
        let mut data = Vec::with_capacity(idx.len() * x.cols());
        for &i in idx {
            data.extend_from_slice(x.row(i));
        }
        let out = Matrix::from_raw(idx.len(), x.cols(), data);
        Ok(self.push(out, Op::GatherRows(a, idx.to_vec())))
    }

    /// `n`-row output where row `idx[k]` accumulates row `k` of `a`.
    pub fn scatter_add_rows(&mut self, a: Var, idx: &[usize], n: usize) -> Result<Var, NnError> {
        let x = self.value(a);
        if idx.len() != x.rows() {
            return Err(shape_err("scatter_add_rows", format!("{} indices for {} rows", idx.len(), x.rows())));
        }
        if let Some(&bad) = idx.iter().find(|&&i| i >= n) {
            return Err(shape_err("scatter_add_rows", format!("target row {bad} of {n}")));
        }
        let mut out = Matrix::zeros(n, x.cols());
        for (k, &i) in idx.iter().enumerate() {
            for (o, &v) in out.row_mut(i).iter_mut().zip(x.row(k)) {
                *o += v;
            }
        }
        Ok(self.push(out, Op::ScatterAddRows(a, idx.to_vec())))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, NnError> {
        let Some(first) = parts.first() else {
            return Err(shape_err("concat_cols", "no operands".into()));
        };
        let rows = self.value(*first).rows();
        if let Some(p) = parts.iter().find(|p| self.value(**p).rows() != rows) {
            return Err(shape_err("concat_cols", format!("{} rows vs {:?}", rows, self.value(*p).shape())));
        }
        let cols: usize = parts.iter().map(|p| self.value(*p).cols()).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for p in parts {
                data.extend_from_slice(self.value(*p).row(r));
            }
        }
        Ok(self.push(Matrix::from_raw(rows, cols, data), Op::ConcatCols(parts.to_vec())))
    }

    /// Columns `start..end` of `a`.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var, NnError> {
        let x = self.value(a);
        if start > end || end > x.cols() {
            return Err(shape_err("slice_cols", format!("columns {start}..{end} of {:?}", x.shape())));
        }
        let mut data = Vec::with_capacity(x.rows() * (end - start));
        for r in 0..x.rows() {
            data.extend_from_slice(&x.row(r)[start..end]);
        }
        let out = Matrix::from_raw(x.rows(), end - start, data);
        Ok(self.push(out, Op::SliceCols(a, start)))
    }

    /// Rows `start..end` of `a`.
    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Result<Var, NnError> {
        let x = self.value(a);
        if start > end || end > x.rows() {
            return Err(shape_err("slice_rows", format!("rows {start}..{end} of {:?}", x.shape())));
        }
        let out = Matrix::from_raw(end - start, x.cols(), x.data()[start * x.cols()..end * x.cols()].to_vec());
        Ok(self.push(out, Op::SliceRows(a, start)))
    }

    /// Euclidean norm of each row, as a column.
    pub fn row_norms(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let data = (0..x.rows()).map(|r| x.row(r).iter().map(|v| v * v).sum::<f64>().sqrt()).collect();
        let out = Matrix::from_raw(x.rows(), 1, data);
        self.push(out, Op::RowNorms(a))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).sum();
        self.push(Matrix::scalar(s), Op::Sum(a))
    }

    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Result<Var, NnError> {
        let x = self.value(a);
        if rows * cols != x.rows() * x.cols() {
            return Err(shape_err("reshape", format!("{:?} into {rows}x{cols}", x.shape())));
        }
        let out = Matrix::from_raw(rows, cols, x.data().to_vec());
        Ok(self.push(out, Op::Reshape(a)))
    }

    /// Reverse pass from the `1×1` value `loss`. Gradients of parameters that
    /// were not reached are zero. A tape can be differentiated once.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients, NnError> {
        if self.consumed {
            return Err(NnError::BackwardTwice);
        }
        if self.value(loss).shape() != (1, 1) {
            return Err(shape_err("backward", format!("loss must be 1x1, got {:?}", self.value(loss).shape())));
        }
        self.consumed = true;
        let mut grads = match self.params {
            Some(store) => Gradients::zeros_like(store),
            None => Gradients(Vec::new()),
        };
        let mut adj: Vec<Option<Matrix>> = (0..self.nodes.len()).map(|_| None).collect();
        adj[loss.0] = Some(Matrix::scalar(1.0));
        for i in (0..=loss.0).rev() {
            let Some(g) = adj[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            self.propagate(i, &g, &mut adj, &mut grads);
        }
        Ok(grads)
    }

    fn propagate(&self, i: usize, g: &Matrix, adj: &mut [Option<Matrix>], grads: &mut Gradients) {
        let nodes = &self.nodes;
        let val = |v: Var| &nodes[v.0].value;
        let wants = |v: Var| nodes[v.0].needs_grad;
        let out = &nodes[i].value;
        match &nodes[i].op {
            Op::Constant => {}
            Op::Param(p) => grads.0[*p].add_assign(g),
            Op::MatMul(a, b) => {
                if wants(*a) {
                    gemm_nt_acc(g, val(*b), slot(nodes, adj, *a));
                }
                if wants(*b) {
                    gemm_tn_acc(val(*a), g, slot(nodes, adj, *b));
                }
            }
            Op::MatMulT(a, b) => {
                if wants(*a) {
                    gemm_acc(g, val(*b), slot(nodes, adj, *a));
                }
                if wants(*b) {
                    gemm_tn_acc(g, val(*a), slot(nodes, adj, *b));
                }
            }
            Op::Add(a, b) => {
                if wants(*a) {
                    slot(nodes, adj, *a).add_assign(g);
                }
                if wants(*b) {
                    slot(nodes, adj, *b).add_assign(g);
                }
            }
            Op::Sub(a, b) => {
                if wants(*a) {
                    slot(nodes, adj, *a).add_assign(g);
                }
                if wants(*b) {
                    let s = slot(nodes, adj, *b);
                    for (o, &v) in s.data_mut().iter_mut().zip(g.data()) {
                        *o -= v;
                    }
                }
            }
            Op::AddRow(a, b) => {
                if wants(*a) {
                    slot(nodes, adj, *a).add_assign(g);
                }
                if wants(*b) {
                    let s = slot(nodes, adj, *b);
                    for r in 0..g.rows() {
                        for (o, &v) in s.data_mut().iter_mut().zip(g.row(r)) {
                            *o += v;
                        }
                    }
                }
            }
            Op::Scale(a, k) => {
                let s = slot(nodes, adj, *a);
                for (o, &v) in s.data_mut().iter_mut().zip(g.data()) {
                    *o += k * v;
                }
            }
            Op::Relu(a) => {
                let x = val(*a).data();
                let s = slot(nodes, adj, *a);
                for ((o, &v), &xv) in s.data_mut().iter_mut().zip(g.data()).zip(x) {
                    if xv > 0.0 {
                        *o += v;
                    }
                }
            }
            Op::LayerNorm(a, inv_std) => {
                let cols = out.cols() as f64;
                let s = slot(nodes, adj, *a);
                for r in 0..out.rows() {
                    let (y, gr) = (out.row(r), g.row(r));
                    let mean_g = gr.iter().sum::<f64>() / cols;
                    let mean_gy = gr.iter().zip(y).map(|(p, q)| p * q).sum::<f64>() / cols;
                    for ((o, &gv), &yv) in s.row_mut(r).iter_mut().zip(gr).zip(y) {
                        *o += inv_std[r] * (gv - mean_g - yv * mean_gy);
                    }
                }
            }
            Op::SoftmaxRows(a) => {
                let s = slot(nodes, adj, *a);
                for r in 0..out.rows() {
                    let (y, gr) = (out.row(r), g.row(r));
                    let dot: f64 = gr.iter().zip(y).map(|(p, q)| p * q).sum();
                    for ((o, &gv), &yv) in s.row_mut(r).iter_mut().zip(gr).zip(y) {
                        *o += yv * (gv - dot);
                    }
                }
            }
            Op::GatherRows(a, idx) => {
                let s = slot(nodes, adj, *a);
                for (k, &src) in idx.iter().enumerate() {
                    for (o, &v) in s.row_mut(src).iter_mut().zip(g.row(k)) {
                        *o += v;
                    }
                }
            }
            Op::ScatterAddRows(a, idx) => {
                let s = slot(nodes, adj, *a);
                for (k, &dst) in idx.iter().enumerate() {
                    for (o, &v) in s.row_mut(k).iter_mut().zip(g.row(dst)) {
                        *o += v;
                    }
                }
            }
            Op::ConcatCols(parts) => {
                let mut off = 0;
                for p in parts {
                    let w = val(*p).cols();
                    if wants(*p) {
                        let s = slot(nodes, adj, *p);
                        for r in 0..g.rows() {
                            for (o, &v) in s.row_mut(r).iter_mut().zip(&g.row(r)[off..off + w]) {
                                *o += v;
                            }
                        }
                    }
                    off += w;
                }
            }
            Op::SliceCols(a, start) => {
                let s = slot(nodes, adj, *a);
                for r in 0..g.rows() {
                    for (o, &v) in s.row_mut(r)[*start..].iter_mut().zip(g.row(r)) {
                        *o += v;
                    }
                }
            }
            Op::SliceRows(a, start) => {
                let s = slot(nodes, adj, *a);
                let c = g.cols();
                for (o, &v) in s.data_mut()[start * c..].iter_mut().zip(g.data()) {
                    *o += v;
                }
            }
            Op::RowNorms(a) => {
                let x = val(*a);
                let s = slot(nodes, adj, *a);
                for r in 0..x.rows() {
                    let n = out.get(r, 0);
                    if n == 0.0 {
                        continue;
                    }
                    let k = g.get(r, 0) / n;
                    for (o, &xv) in s.row_mut(r).iter_mut().zip(x.row(r)) {
                        *o += k * xv;
                    }
                }
            }
            Op::Sum(a) => {
                let k = g.get(0, 0);
                for o in slot(nodes, adj, *a).data_mut() {
                    *o += k;
                }
            }
            Op::Reshape(a) => {
                let s = slot(nodes, adj, *a);
                for (o, &v) in s.data_mut().iter_mut().zip(g.data()) {
                    *o += v;
                }
            }
        }
    }
}
