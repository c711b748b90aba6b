//! Tape-based reverse-mode differentiation over dense row-major matrices.
//!
//! A [`Graph`] records every operation in creation order. Because a node can
//! only reference nodes created before it, creation order is already a valid
//! topological order, and [`Graph::backward`] simply walks the tape in reverse.
//! Every value is a 2-D matrix; scalars are `1×1` and vectors are `1×n` rows.

use std::collections::HashMap;
use std::fmt;

use super::math;
use super::params::{GradBuffer, ParamId, ParamStore};
use crate::error::{Error, Result};

/// Matrix shape. Both dimensions are positive.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Shape {
    pub rows: usize,
    pub cols: usize,
}

impl Shape {
    pub fn new(rows: usize, cols: usize) -> Self {
        Shape { rows, cols }
    }

    pub fn scalar() -> Self {
        Shape { rows: 1, cols: 1 }
    }

    pub fn numel(&self) -> usize {
        self.rows * self.cols
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}×{}]", self.rows, self.cols)
    }
}

/// Handle to a node of a [`Graph`]. Data and gradient live in the graph.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Tensor {
    id: usize,
    shape: Shape,
}

impl Tensor {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn rows(&self) -> usize {
        self.shape.rows
    }

    pub fn cols(&self) -> usize {
        self.shape.cols
    }
}

/// Reduction axis for [`Graph::logsumexp`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    /// Reduce over rows, producing a `1×cols` row.
    Rows,
    /// Reduce over columns, producing a `rows×1` column.
    Cols,
}

/// Boolean attention mask of shape `Lq×Lk`; `true` marks an allowed key.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AttentionMask {
    rows: usize,
    cols: usize,
    allowed: Vec<bool>,
}

impl AttentionMask {
    pub fn new(rows: usize, cols: usize, allowed: Vec<bool>) -> Result<Self> {
        if allowed.len() != rows * cols {
            return Err(Error::Dimension(format!(
                "mask of {} entries does not fit [{}×{}]",
                allowed.len(),
                rows,
                cols
            )));
        }
        Ok(AttentionMask {
            rows,
            cols,
            allowed,
        })
    }

    /// Lower-triangular mask: query `i` may see keys `0..=i`.
    pub fn causal(len: usize) -> Self {
        let mut allowed = vec![false; len * len];
        for i in 0..len {
            for j in 0..=i {
                allowed[i * len + j] = true;
            }
        }
        AttentionMask {
            rows: len,
            cols: len,
            allowed,
        }
    }

    pub fn shape(&self) -> Shape {
        Shape::new(self.rows, self.cols)
    }

    pub fn is_allowed(&self, row: usize, col: usize) -> bool {
        self.allowed[row * self.cols + col]
    }

    /// Rows with no allowed key. Such rows fall back to uniform attention.
    pub fn fully_masked_rows(&self) -> Vec<usize> {
        (0..self.rows)
            .filter(|&r| !self.allowed[r * self.cols..(r + 1) * self.cols].iter().any(|&a| a))
            .collect()
    }

    pub fn has_fully_masked_row(&self) -> bool {
        !self.fully_masked_rows().is_empty()
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Param,
    MatMul(Tensor, Tensor),
    MatMulNt(Tensor, Tensor),
    Transpose(Tensor),
    Add(Tensor, Tensor),
    Sub(Tensor, Tensor),
    Mul(Tensor, Tensor),
    AddRowBroadcast(Tensor, Tensor),
    AddColBroadcast(Tensor, Tensor),
    Scale(Tensor, f64),
    Relu(Tensor),
    LayerNorm {
        x: Tensor,
        gamma: Tensor,
        beta: Tensor,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Embedding {
        table: Tensor,
        indices: Vec<usize>,
    },
    MaskedSoftmax {
        x: Tensor,
        uniform_rows: Vec<usize>,
    },
    LogSoftmax(Tensor),
    SoftmaxCrossEntropy {
        logits: Tensor,
        targets: Vec<Option<usize>>,
        probs: Vec<f64>,
        counted: usize,
    },
    LogSumExp {
        x: Tensor,
        axis: Axis,
    },
    SliceRows {
        x: Tensor,
        start: usize,
    },
    SliceCols {
        x: Tensor,
        start: usize,
    },
    ConcatCols(Vec<Tensor>),
    ConcatRows(Vec<Tensor>),
    Dropout {
        x: Tensor,
        keep: Vec<f64>,
    },
    Sum(Tensor),
    Gather {
        x: Tensor,
        flat: Vec<usize>,
    },
}

struct Node {
    shape: Shape,
    data: Vec<f64>,
    grad: Vec<f64>,
    op: Op,
}

/// Counters for non-fatal conditions met while building the graph.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Diagnostics {
    /// Attention rows where every key was masked and uniform weights were used.
    pub fully_masked_rows: usize,
}

/// A computation graph confined to one worker.
pub struct Graph<'p> {
    nodes: Vec<Node>,
    params: Option<&'p ParamStore>,
    param_nodes: HashMap<ParamId, Tensor>,
    train: bool,
    dropout_seed: u64,
    dropout_counter: u64,
    diagnostics: Diagnostics,
}

impl Default for Graph<'_> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'p> Graph<'p> {
    /// A graph with no parameter store attached (inference off, dropout off).
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            params: None,
            param_nodes: HashMap::new(),
            train: false,
            dropout_seed: 0,
            dropout_counter: 0,
            diagnostics: Diagnostics::default(),
        }
    }

    pub fn with_params(params: &'p ParamStore) -> Self {
        Graph {
            params: Some(params),
            ..Graph::new()
        }
    }

    /// Enables dropout; masks are drawn from a counter-based stream keyed by `seed`.
    pub fn set_train(&mut self, train: bool, seed: u64) {
        self.train = train;
        self.dropout_seed = seed;
        self.dropout_counter = 0;
    }

    pub fn is_train(&self) -> bool {
        self.train
    }

    pub fn diagnostics(&self) -> Diagnostics {
        self.diagnostics
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Parent node ids of `t`, in argument order.
    pub fn parents(&self, t: Tensor) -> Vec<usize> {
        let ids = |ts: &[Tensor]| ts.iter().map(|t| t.id).collect::<Vec<_>>();
        match &self.nodes[t.id].op {
            Op::Leaf | Op::Param => vec![],
            Op::MatMul(a, b)
            | Op::MatMulNt(a, b)
            | Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::Mul(a, b)
            | Op::AddRowBroadcast(a, b)
            | Op::AddColBroadcast(a, b) => vec![a.id, b.id],
            Op::Transpose(x)
            | Op::Scale(x, _)
            | Op::Relu(x)
            | Op::LogSoftmax(x)
            | Op::Sum(x) => vec![x.id],
            Op::LayerNorm { x, gamma, beta, .. } => vec![x.id, gamma.id, beta.id],
            Op::Embedding { table, .. } => vec![table.id],
            Op::SoftmaxCrossEntropy { logits, .. } => vec![logits.id],
            Op::LogSumExp { x, .. }
            | Op::MaskedSoftmax { x, .. }
            | Op::SliceRows { x, .. }
            | Op::SliceCols { x, .. }
            | Op::Dropout { x, .. }
            | Op::Gather { x, .. } => vec![x.id],
            Op::ConcatCols(xs) | Op::ConcatRows(xs) => ids(xs),
        }
    }

    fn push(&mut self, shape: Shape, data: Vec<f64>, op: Op) -> Tensor {
        debug_assert_eq!(shape.numel(), data.len());
        let id = self.nodes.len();
        self.nodes.push(Node {
            shape,
            grad: vec![0.0; data.len()],
            data,
            op,
        });
        Tensor { id, shape }
    }

    pub fn data(&self, t: Tensor) -> &[f64] {
        &self.nodes[t.id].data
    }

    pub fn grad(&self, t: Tensor) -> &[f64] {
        &self.nodes[t.id].grad
    }

    /// Row `r` of `t`'s data.
    pub fn row(&self, t: Tensor, r: usize) -> &[f64] {
        let c = t.shape.cols;
        &self.nodes[t.id].data[r * c..(r + 1) * c]
    }

    pub fn scalar(&self, t: Tensor) -> f64 {
        self.nodes[t.id].data[0]
    }

    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.grad.iter_mut().for_each(|g| *g = 0.0);
        }
    }

    /// Constant (non-parameter) input.
    pub fn input(&mut self, shape: Shape, data: Vec<f64>) -> Result<Tensor> {
        if shape.rows == 0 || shape.cols == 0 {
            return Err(Error::Dimension(format!("empty shape {shape}")));
        }
        if shape.numel() != data.len() {
            return Err(Error::Dimension(format!(
                "{} values do not fill shape {}",
                data.len(),
                shape
            )));
        }
        Ok(self.push(shape, data, Op::Leaf))
    }

    pub fn constant(&mut self, shape: Shape, value: f64) -> Tensor {
        self.push(shape, vec![value; shape.numel()], Op::Leaf)
    }

    /// Parameter leaf. Inserted once per graph; repeated calls return the same node.
    pub fn param(&mut self, id: ParamId) -> Tensor {
        if let Some(&t) = self.param_nodes.get(&id) {
            return t;
        }
        let store = self
            .params
            .expect("graph was created without a parameter store");
        let p = store.get(id);
        let t = self.push(p.shape, p.data.clone(), Op::Param);
        self.param_nodes.insert(id, t);
        t
    }

    /// Adds the gradients of every parameter leaf into `buffer`.
    pub fn accumulate_param_grads(&self, buffer: &mut GradBuffer) {
        let mut entries: Vec<_> = self.param_nodes.iter().collect();
        entries.sort_by_key(|(pid, _)| **pid);
        for (pid, t) in entries {
            buffer.add(*pid, &self.nodes[t.id].grad);
        }
    }

    pub fn param_grad(&self, id: ParamId) -> Option<&[f64]> {
        self.param_nodes.get(&id).map(|t| self.grad(*t))
    }

    // ---------------------------------------------------------------- ops

    pub fn matmul(&mut self, a: Tensor, b: Tensor) -> Result<Tensor> {
        if a.cols() != b.rows() {
            return Err(Error::Dimension(format!(
                "matmul inner dimensions disagree: {} · {}",
                a.shape, b.shape
            )));
        }
        let (m, k, n) = (a.rows(), a.cols(), b.cols());
        let mut out = vec![0.0; m * n];
        math::matmul_into(&self.nodes[a.id].data, &self.nodes[b.id].data, m, k, n, &mut out);
        Ok(self.push(Shape::new(m, n), out, Op::MatMul(a, b)))
    }

    /// `a · bᵀ` for `a: m×k`, `b: n×k`.
    pub fn matmul_nt(&mut self, a: Tensor, b: Tensor) -> Result<Tensor> {
        if a.cols() != b.cols() {
            return Err(Error::Dimension(format!(
                "matmul_nt inner dimensions disagree: {} · {}ᵀ",
                a.shape, b.shape
            )));
        }
        let (m, k, n) = (a.rows(), a.cols(), b.rows());
        let ad = &self.nodes[a.id].data;
        let bd = &self.nodes[b.id].data;
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let ar = &ad[i * k..(i + 1) * k];
            for j in 0..n {
                out[i * n + j] = math::dot(ar, &bd[j * k..(j + 1) * k]);
            }
        }
        Ok(self.push(Shape::new(m, n), out, Op::MatMulNt(a, b)))
    }

    pub fn transpose(&mut self, x: Tensor) -> Tensor {
        let (r, c) = (x.rows(), x.cols());
        let d = &self.nodes[x.id].data;
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = d[i * c + j];
            }
        }
        self.push(Shape::new(c, r), out, Op::Transpose(x))
    }

    fn same_shape(a: Tensor, b: Tensor, what: &str) -> Result<()> {
        if a.shape != b.shape {
            return Err(Error::Dimension(format!(
                "{what} needs equal shapes, got {} and {}",
                a.shape, b.shape
            )));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Tensor, b: Tensor) -> Result<Tensor> {
        Self::same_shape(a, b, "add")?;
        let out = zip_map(&self.nodes[a.id].data, &self.nodes[b.id].data, |x, y| x + y);
        Ok(self.push(a.shape, out, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Tensor, b: Tensor) -> Result<Tensor> {
        Self::same_shape(a, b, "sub")?;
        let out = zip_map(&self.nodes[a.id].data, &self.nodes[b.id].data, |x, y| x - y);
        Ok(self.push(a.shape, out, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Tensor, b: Tensor) -> Result<Tensor> {
        Self::same_shape(a, b, "mul")?;
        let out = zip_map(&self.nodes[a.id].data, &self.nodes[b.id].data, |x, y| x * y);
        Ok(self.push(a.shape, out, Op::Mul(a, b)))
    }

    /// `m + row` with `row: 1×cols` broadcast over every row of `m`.
    pub fn add_row(&mut self, m: Tensor, row: Tensor) -> Result<Tensor> {
        if row.rows() != 1 || row.cols() != m.cols() {
            return Err(Error::Dimension(format!(
                "row broadcast needs [1×{}], got {}",
                m.cols(),
                row.shape
            )));
        }
        let c = m.cols();
        let rd = &self.nodes[row.id].data;
        let out: Vec<f64> = self.nodes[m.id]
            .data
            .iter()
            .enumerate()
            .map(|(i, v)| v + rd[i % c])
            .collect();
        Ok(self.push(m.shape, out, Op::AddRowBroadcast(m, row)))
    }

    /// `m + col` with `col: rows×1` broadcast over every column of `m`.
    pub fn add_col(&mut self, m: Tensor, col: Tensor) -> Result<Tensor> {
        if col.cols() != 1 || col.rows() != m.rows() {
            return Err(Error::Dimension(format!(
                "column broadcast needs [{}×1], got {}",
                m.rows(),
                col.shape
            )));
        }
        let c = m.cols();
        let cd = &self.nodes[col.id].data;
        let out: Vec<f64> = self.nodes[m.id]
            .data
            .iter()
            .enumerate()
            .map(|(i, v)| v + cd[i / c])
            .collect();
        Ok(self.push(m.shape, out, Op::AddColBroadcast(m, col)))
    }

    pub fn scale(&mut self, x: Tensor, factor: f64) -> Tensor {
        let out = self.nodes[x.id].data.iter().map(|v| v * factor).collect();
        self.push(x.shape, out, Op::Scale(x, factor))
    }

    pub fn relu(&mut self, x: Tensor) -> Tensor {
        let out = self.nodes[x.id].data.iter().map(|&v| v.max(0.0)).collect();
        self.push(x.shape, out, Op::Relu(x))
    }

    /// Row-wise layer normalization with affine `gamma`, `beta` (both `1×cols`).
    pub fn layer_norm(&mut self, x: Tensor, gamma: Tensor, beta: Tensor, eps: f64) -> Result<Tensor> {
        let c = x.cols();
        for p in [gamma, beta] {
            if p.shape != Shape::new(1, c) {
                return Err(Error::Dimension(format!(
                    "layer_norm affine parameter must be [1×{c}], got {}",
                    p.shape
                )));
            }
        }
        let xd = &self.nodes[x.id].data;
        let gd = &self.nodes[gamma.id].data;
        let bd = &self.nodes[beta.id].data;
        let mut xhat = vec![0.0; xd.len()];
        let mut inv_std = vec![0.0; x.rows()];
        let mut out = vec![0.0; xd.len()];
        for r in 0..x.rows() {
            let row = &xd[r * c..(r + 1) * c];
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std[r] = is;
            for j in 0..c {
                let h = (row[j] - mean) * is;
                xhat[r * c + j] = h;
                out[r * c + j] = h * gd[j] + bd[j];
            }
        }
        Ok(self.push(
            x.shape,
            out,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
        ))
    }

    pub fn embedding(&mut self, table: Tensor, indices: &[usize]) -> Result<Tensor> {
        if indices.is_empty() {
            return Err(Error::Dimension("embedding lookup of zero indices".into()));
        }
        let (v, d) = (table.rows(), table.cols());
        let td = &self.nodes[table.id].data;
        let mut out = Vec::with_capacity(indices.len() * d);
        for &i in indices {
            if i >= v {
                return Err(Error::Index(format!("embedding index {i} out of range 0..{v}")));
            }
            out.extend_from_slice(&td[i * d..(i + 1) * d]);
        }
        Ok(self.push(
            Shape::new(indices.len(), d),
            out,
            Op::Embedding {
                table,
                indices: indices.to_vec(),
            },
        ))
    }

    /// Row-wise softmax; masked entries get zero weight. A row with no allowed
    /// entry receives uniform weights and is counted in [`Diagnostics`].
    pub fn masked_softmax(&mut self, x: Tensor, mask: Option<&AttentionMask>) -> Result<Tensor> {
        if let Some(m) = mask {
            if m.shape() != x.shape {
                return Err(Error::Dimension(format!(
                    "mask {} does not match scores {}",
                    m.shape(),
                    x.shape
                )));
            }
        }
        let (r, c) = (x.rows(), x.cols());
        let xd = &self.nodes[x.id].data;
        let mut out = vec![0.0; r * c];
        let mut uniform_rows = Vec::new();
        for i in 0..r {
            let row = &xd[i * c..(i + 1) * c];
            let o = &mut out[i * c..(i + 1) * c];
            let allowed = |j: usize| mask.is_none_or(|m| m.is_allowed(i, j));
            let mut mx = f64::NEG_INFINITY;
            for j in 0..c {
                if allowed(j) && row[j] > mx {
                    mx = row[j];
                }
            }
            if mx == f64::NEG_INFINITY {
                uniform_rows.push(i);
                o.iter_mut().for_each(|v| *v = 1.0 / c as f64);
                continue;
            }
            let mut s = 0.0;
            for j in 0..c {
                if allowed(j) {
                    o[j] = (row[j] - mx).exp();
                    s += o[j];
                }
            }
            o.iter_mut().for_each(|v| *v /= s);
        }
        self.diagnostics.fully_masked_rows += uniform_rows.len();
        Ok(self.push(x.shape, out, Op::MaskedSoftmax { x, uniform_rows }))
    }

    pub fn log_softmax(&mut self, x: Tensor) -> Tensor {
        let c = x.cols();
        let mut out = self.nodes[x.id].data.clone();
        for row in out.chunks_mut(c) {
            math::log_softmax_in_place(row);
        }
        self.push(x.shape, out, Op::LogSoftmax(x))
    }

    /// Mean negative log-softmax over positions whose target is not `ignore_index`.
    pub fn softmax_cross_entropy(
        &mut self,
        logits: Tensor,
        targets: &[usize],
        ignore_index: Option<usize>,
    ) -> Result<Tensor> {
        let (n, v) = (logits.rows(), logits.cols());
        if targets.len() != n {
            return Err(Error::Dimension(format!(
                "{} targets for {} logit rows",
                targets.len(),
                n
            )));
        }
        let mut tg = Vec::with_capacity(n);
        for &t in targets {
            if Some(t) == ignore_index {
                tg.push(None);
            } else if t >= v {
                return Err(Error::Index(format!("target {t} out of range 0..{v}")));
            } else {
                tg.push(Some(t));
            }
        }
        let mut probs = self.nodes[logits.id].data.clone();
        let mut loss = 0.0;
        let mut counted = 0;
        for (i, row) in probs.chunks_mut(v).enumerate() {
            math::log_softmax_in_place(row);
            if let Some(t) = tg[i] {
                loss -= row[t];
                counted += 1;
            }
            row.iter_mut().for_each(|x| *x = x.exp());
        }
        let loss = if counted > 0 { loss / counted as f64 } else { 0.0 };
        Ok(self.push(
            Shape::scalar(),
            vec![loss],
            Op::SoftmaxCrossEntropy {
                logits,
                targets: tg,
                probs,
                counted,
            },
        ))
    }

    /// Numerically stable `log Σ exp` along `axis`.
    pub fn logsumexp(&mut self, x: Tensor, axis: Axis) -> Tensor {
        let (r, c) = (x.rows(), x.cols());
        let xd = &self.nodes[x.id].data;
        let (shape, out) = match axis {
            Axis::Cols => {
                let out = (0..r).map(|i| math::logsumexp(&xd[i * c..(i + 1) * c])).collect();
                (Shape::new(r, 1), out)
            }
            Axis::Rows => {
                let mut col = vec![0.0; r];
                let out = (0..c)
                    .map(|j| {
                        for i in 0..r {
                            col[i] = xd[i * c + j];
                        }
                        math::logsumexp(&col)
                    })
                    .collect();
                (Shape::new(1, c), out)
            }
        };
        self.push(shape, out, Op::LogSumExp { x, axis })
    }

    pub fn slice_rows(&mut self, x: Tensor, start: usize, len: usize) -> Result<Tensor> {
        if len == 0 || start + len > x.rows() {
            return Err(Error::Dimension(format!(
                "row slice {start}..{} outside {}",
                start + len,
                x.shape
            )));
        }
        let c = x.cols();
        let out = self.nodes[x.id].data[start * c..(start + len) * c].to_vec();
        Ok(self.push(Shape::new(len, c), out, Op::SliceRows { x, start }))
    }

    pub fn slice_cols(&mut self, x: Tensor, start: usize, len: usize) -> Result<Tensor> {
        if len == 0 || start + len > x.cols() {
            return Err(Error::Dimension(format!(
                "column slice {start}..{} outside {}",
                start + len,
                x.shape
            )));
        }
        let c = x.cols();
        let xd = &self.nodes[x.id].data;
        let mut out = Vec::with_capacity(x.rows() * len);
        for r in 0..x.rows() {
            out.extend_from_slice(&xd[r * c + start..r * c + start + len]);
        }
        Ok(self.push(Shape::new(x.rows(), len), out, Op::SliceCols { x, start }))
    }

    pub fn concat_cols(&mut self, xs: &[Tensor]) -> Result<Tensor> {
        let first = *xs
            .first()
            .ok_or_else(|| Error::Dimension("concat of zero tensors".into()))?;
        let rows = first.rows();
        if let Some(bad) = xs.iter().find(|t| t.rows() != rows) {
            return Err(Error::Dimension(format!(
                "column concat needs {rows} rows, got {}",
                bad.shape
            )));
        }
        let cols: usize = xs.iter().map(|t| t.cols()).sum();
        let mut out = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for t in xs {
                let c = t.cols();
                out.extend_from_slice(&self.nodes[t.id].data[r * c..(r + 1) * c]);
            }
        }
        Ok(self.push(Shape::new(rows, cols), out, Op::ConcatCols(xs.to_vec())))
    }

    pub fn concat_rows(&mut self, xs: &[Tensor]) -> Result<Tensor> {
        let first = *xs
            .first()
            .ok_or_else(|| Error::Dimension("concat of zero tensors".into()))?;
        let cols = first.cols();
        if let Some(bad) = xs.iter().find(|t| t.cols() != cols) {
            return Err(Error::Dimension(format!(
                "row concat needs {cols} columns, got {}",
                bad.shape
            )));
        }
        let rows: usize = xs.iter().map(|t| t.rows()).sum();
        let mut out = Vec::with_capacity(rows * cols);
        for t in xs {
            out.extend_from_slice(&self.nodes[t.id].data);
        }
        Ok(self.push(Shape::new(rows, cols), out, Op::ConcatRows(xs.to_vec())))
    }

    /// Inverted dropout. Identity unless the graph is in training mode.
    pub fn dropout(&mut self, x: Tensor, p: f64) -> Tensor {
        if !self.train || p <= 0.0 {
            return x;
        }
        let call = self.dropout_counter;
        self.dropout_counter += 1;
        let scale = 1.0 / (1.0 - p);
        let keep: Vec<f64> = (0..x.shape.numel() as u64)
            .map(|i| {
                if math::counter_uniform(self.dropout_seed, call, i) < p {
                    0.0
                } else {
                    scale
                }
            })
            .collect();
        let out = zip_map(&self.nodes[x.id].data, &keep, |v, k| v * k);
        self.push(x.shape, out, Op::Dropout { x, keep })
    }

    pub fn sum(&mut self, x: Tensor) -> Tensor {
        let s = self.nodes[x.id].data.iter().sum();
        self.push(Shape::scalar(), vec![s], Op::Sum(x))
    }

    /// Picks elements `(row, col)` into a `1×n` row.
    pub fn gather(&mut self, x: Tensor, positions: &[(usize, usize)]) -> Result<Tensor> {
        if positions.is_empty() {
            return Err(Error::Dimension("gather of zero positions".into()));
        }
        let mut flat = Vec::with_capacity(positions.len());
        for &(r, c) in positions {
            if r >= x.rows() || c >= x.cols() {
                return Err(Error::Index(format!("position ({r},{c}) outside {}", x.shape)));
            }
            flat.push(r * x.cols() + c);
        }
        let xd = &self.nodes[x.id].data;
        let out = flat.iter().map(|&i| xd[i]).collect();
        Ok(self.push(Shape::new(1, positions.len()), out, Op::Gather { x, flat }))
    }

    // ----------------------------------------------------------- backward

    /// Seeds `loss` (which must be `1×1`) with gradient 1 and propagates to every
    /// node created before it. Gradients accumulate; call [`Graph::zero_grad`] to reset.
    pub fn backward(&mut self, loss: Tensor) -> Result<()> {
        if loss.shape != Shape::scalar() {
            return Err(Error::Dimension(format!(
                "backward needs a scalar loss, got {}",
                loss.shape
            )));
        }
        self.nodes[loss.id].grad[0] += 1.0;
        for i in (0..=loss.id).rev() {
            let (before, rest) = self.nodes.split_at_mut(i);
            let node = &rest[0];
            if node.grad.iter().all(|&g| g == 0.0) {
                continue;
            }
            backward_node(node, before);
        }
        Ok(())
    }
}

fn zip_map(a: &[f64], b: &[f64], f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect()
}

fn backward_node(node: &Node, before: &mut [Node]) {
    let g = &node.grad;
    match &node.op {
        Op::Leaf | Op::Param => {}
        Op::MatMul(a, b) => {
            let (m, k, n) = (a.rows(), a.cols(), b.cols());
            // da = g · bᵀ
            let bd = before[b.id].data.clone();
            {
                let ag = &mut before[a.id].grad;
                for i in 0..m {
                    let gr = &g[i * n..(i + 1) * n];
                    for kk in 0..k {
                        ag[i * k + kk] += math::dot(gr, &bd[kk * n..(kk + 1) * n]);
                    }
                }
            }
            // db = aᵀ · g
            let ad = before[a.id].data.clone();
            let bg = &mut before[b.id].grad;
            for i in 0..m {
                let gr = &g[i * n..(i + 1) * n];
                for kk in 0..k {
                    let av = ad[i * k + kk];
                    if av != 0.0 {
                        math::axpy(av, gr, &mut bg[kk * n..(kk + 1) * n]);
                    }
                }
            }
        }
        Op::MatMulNt(a, b) => {
            let (m, k, n) = (a.rows(), a.cols(), b.rows());
            // out = a·bᵀ; da = g·b, db = gᵀ·a
            let bd = before[b.id].data.clone();
            {
                let ag = &mut before[a.id].grad;
                for i in 0..m {
                    for j in 0..n {
                        let gv = g[i * n + j];
                        if gv != 0.0 {
                            math::axpy(gv, &bd[j * k..(j + 1) * k], &mut ag[i * k..(i + 1) * k]);
                        }
                    }
                }
            }
            let ad = before[a.id].data.clone();
            let bg = &mut before[b.id].grad;
            for i in 0..m {
                for j in 0..n {
                    let gv = g[i * n + j];
                    if gv != 0.0 {
                        math::axpy(gv, &ad[i * k..(i + 1) * k], &mut bg[j * k..(j + 1) * k]);
                    }
                }
            }
        }
        Op::Transpose(x) => {
            let (r, c) = (x.rows(), x.cols());
            let xg = &mut before[x.id].grad;
            for i in 0..r {
                for j in 0..c {
                    xg[i * c + j] += g[j * r + i];
                }
            }
        }
        Op::Add(a, b) => {
            add_into(&mut before[a.id].grad, g);
            add_into(&mut before[b.id].grad, g);
        }
        Op::Sub(a, b) => {
            add_into(&mut before[a.id].grad, g);
            before[b.id].grad.iter_mut().zip(g).for_each(|(d, s)| *d -= s);
        }
        Op::Mul(a, b) => {
            let ad = before[a.id].data.clone();
            let bd = before[b.id].data.clone();
            before[a.id]
                .grad
                .iter_mut()
                .zip(g.iter().zip(&bd))
                .for_each(|(d, (gv, bv))| *d += gv * bv);
            before[b.id]
                .grad
                .iter_mut()
                .zip(g.iter().zip(&ad))
                .for_each(|(d, (gv, av))| *d += gv * av);
        }
        Op::AddRowBroadcast(m, row) => {
            add_into(&mut before[m.id].grad, g);
            let c = m.cols();
            let rg = &mut before[row.id].grad;
            for (i, gv) in g.iter().enumerate() {
                rg[i % c] += gv;
            }
        }
        Op::AddColBroadcast(m, col) => {
            add_into(&mut before[m.id].grad, g);
            let c = m.cols();
            let cg = &mut before[col.id].grad;
            for (i, gv) in g.iter().enumerate() {
                cg[i / c] += gv;
            }
        }
        Op::Scale(x, f) => {
            before[x.id].grad.iter_mut().zip(g).for_each(|(d, s)| *d += f * s);
        }
        Op::Relu(x) => {
            let xn = &mut before[x.id];
            for ((d, s), v) in xn.grad.iter_mut().zip(g).zip(&xn.data) {
                if *v > 0.0 {
                    *d += s;
                }
            }
        }
        Op::LayerNorm {
            x,
            gamma,
            beta,
            xhat,
            inv_std,
        } => {
            let c = x.cols();
            let gd = before[gamma.id].data.clone();
            {
                let gg = &mut before[gamma.id].grad;
                for (i, gv) in g.iter().enumerate() {
                    gg[i % c] += gv * xhat[i];
                }
            }
            {
                let bg = &mut before[beta.id].grad;
                for (i, gv) in g.iter().enumerate() {
                    bg[i % c] += gv;
                }
            }
            let xg = &mut before[x.id].grad;
            let cf = c as f64;
            for r in 0..x.rows() {
                let gr = &g[r * c..(r + 1) * c];
                let hr = &xhat[r * c..(r + 1) * c];
                let mut sum_dh = 0.0;
                let mut sum_dh_h = 0.0;
                for j in 0..c {
                    let dh = gr[j] * gd[j];
                    sum_dh += dh;
                    sum_dh_h += dh * hr[j];
                }
                for j in 0..c {
                    let dh = gr[j] * gd[j];
                    xg[r * c + j] += inv_std[r] * (dh - sum_dh / cf - hr[j] * sum_dh_h / cf);
                }
            }
        }
        Op::Embedding { table, indices } => {
            let d = table.cols();
            let tg = &mut before[table.id].grad;
            for (r, &i) in indices.iter().enumerate() {
                add_into(&mut tg[i * d..(i + 1) * d], &g[r * d..(r + 1) * d]);
            }
        }
        Op::MaskedSoftmax { x, uniform_rows } => {
            let c = x.cols();
            let p = &node.data;
            let xg = &mut before[x.id].grad;
            for r in 0..x.rows() {
                // uniform fallback rows are constant in x
                if uniform_rows.contains(&r) {
                    continue;
                }
                let pr = &p[r * c..(r + 1) * c];
                let gr = &g[r * c..(r + 1) * c];
                let dotv = math::dot(pr, gr);
                for j in 0..c {
                    xg[r * c + j] += pr[j] * (gr[j] - dotv);
                }
            }
        }
        Op::LogSoftmax(x) => {
            let c = x.cols();
            let lp = &node.data;
            let xg = &mut before[x.id].grad;
            for r in 0..x.rows() {
                let gr = &g[r * c..(r + 1) * c];
                let gs: f64 = gr.iter().sum();
                for j in 0..c {
                    xg[r * c + j] += gr[j] - lp[r * c + j].exp() * gs;
                }
            }
        }
        Op::SoftmaxCrossEntropy {
            logits,
            targets,
            probs,
            counted,
        } => {
            if *counted == 0 {
                return;
            }
            let v = logits.cols();
            let scale = g[0] / *counted as f64;
            let lg = &mut before[logits.id].grad;
            for (i, t) in targets.iter().enumerate() {
                if let Some(t) = *t {
                    for j in 0..v {
                        let ind = if j == t { 1.0 } else { 0.0 };
                        lg[i * v + j] += scale * (probs[i * v + j] - ind);
                    }
                }
            }
        }
        Op::LogSumExp { x, axis } => {
            let (r, c) = (x.rows(), x.cols());
            let out = &node.data;
            let xn = &mut before[x.id];
            for i in 0..r {
                for j in 0..c {
                    let o = match axis {
                        Axis::Cols => i,
                        Axis::Rows => j,
                    };
                    xn.grad[i * c + j] += g[o] * (xn.data[i * c + j] - out[o]).exp();
                }
            }
        }
        Op::SliceRows { x, start } => {
            let c = x.cols();
            add_into(&mut before[x.id].grad[start * c..start * c + g.len()], g);
        }
        Op::SliceCols { x, start } => {
            let c = x.cols();
            let len = node.shape.cols;
            let xg = &mut before[x.id].grad;
            for r in 0..x.rows() {
                add_into(
                    &mut xg[r * c + start..r * c + start + len],
                    &g[r * len..(r + 1) * len],
                );
            }
        }
        Op::ConcatCols(xs) => {
            let total = node.shape.cols;
            let mut offset = 0;
            for t in xs {
                let c = t.cols();
                let tg = &mut before[t.id].grad;
                for r in 0..t.rows() {
                    add_into(
                        &mut tg[r * c..(r + 1) * c],
                        &g[r * total + offset..r * total + offset + c],
                    );
                }
                offset += c;
            }
        }
        Op::ConcatRows(xs) => {
            let mut offset = 0;
            for t in xs {
                let n = t.shape.numel();
                add_into(&mut before[t.id].grad, &g[offset..offset + n]);
                offset += n;
            }
        }
        Op::Dropout { x, keep } => {
            before[x.id]
                .grad
                .iter_mut()
                .zip(g.iter().zip(keep))
                .for_each(|(d, (gv, k))| *d += gv * k);
        }
        Op::Sum(x) => {
            let gv = g[0];
            before[x.id].grad.iter_mut().for_each(|d| *d += gv);
        }
        Op::Gather { x, flat } => {
            let xg = &mut before[x.id].grad;
            for (gv, &i) in g.iter().zip(flat) {
                xg[i] += gv;
            }
        }
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
}
