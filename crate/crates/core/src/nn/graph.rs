//! Tape-based reverse-mode differentiation over [`Tensor`] values.
//!
//! A [`Graph`] records every operation as it is evaluated. Calling
//! [`Graph::backward`] on a scalar node walks the tape in reverse and returns
//! the gradient of every parameter that took part.

use std::collections::HashMap;
use std::rc::Rc;

use super::tensor::{gemm_acc, gemm_nt_acc, gemm_tn_acc};
use super::{ParamId, ParamStore, Tensor};
use crate::assembly::{CellEntry, MergeEntry};
use crate::error::{Error, Result};

pub const LAYER_NORM_EPS: f64 = 1e-10;

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_A: f64 = 0.044_715;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

#[derive(Debug)]
enum Op {
    Input,
    Param(ParamId),
    GatherParam { param: ParamId, ids: Vec<usize> },
    MatMul(NodeId, NodeId),
    MatMulNT(NodeId, NodeId),
    Add(NodeId, NodeId),
    AddRow(NodeId, NodeId),
    AddScalar(NodeId, NodeId),
    Mul(NodeId, NodeId),
    MulRow(NodeId, NodeId),
    Scale(NodeId, f64),
    MaskMul(NodeId, Rc<Vec<f64>>),
    Softmax(NodeId),
    Tanh(NodeId),
    Gelu(NodeId),
    LayerNorm { x: NodeId, gain: NodeId, bias: NodeId, xhat: Vec<f64>, inv_std: Vec<f64> },
    ConcatCols(Vec<NodeId>),
    SliceCols { x: NodeId, start: usize },
    MeanRows { x: NodeId, rows: Vec<usize> },
    Sum(Vec<NodeId>),
    NegLogPick { x: NodeId, index: usize, floor: f64 },
    CombineRows { inputs: Vec<NodeId>, entries: Rc<Vec<MergeEntry>> },
    CombineCells { inputs: Vec<NodeId>, entries: Rc<Vec<CellEntry>> },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

/// Parameter gradients produced by [`Graph::backward`].
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn zeros_like(params: &ParamStore) -> Self {
        Gradients {
            grads: params.ids().map(|id| Some(vec![0.0; params.get(id).len()])).collect(),
        }
    }

    pub fn get(&self, id: ParamId) -> Option<&[f64]> {
        self.grads.get(id.0).and_then(|g| g.as_deref())
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.grads.iter_mut().zip(&other.grads) {
            if let Some(b) = b {
                match a {
                    Some(a) => a.iter_mut().zip(b).for_each(|(x, y)| *x += y),
                    None => *a = Some(b.clone()),
                }
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for g in self.grads.iter_mut().flatten() {
            g.iter_mut().for_each(|x| *x *= factor);
        }
    }

    pub fn global_norm(&self) -> f64 {
        self.grads
            .iter()
            .flatten()
            .flat_map(|g| g.iter())
            .map(|x| x * x)
            .sum::<f64>()
            .sqrt()
    }
}

pub struct Graph<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node>,
    param_nodes: HashMap<ParamId, NodeId>,
}

impl<'p> Graph<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Graph {
            params,
            nodes: Vec::new(),
            param_nodes: HashMap::new(),
        }
    }

    pub fn params(&self) -> &'p ParamStore {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    fn push(&mut self, value: Tensor, op: Op) -> NodeId {
        self.nodes.push(Node { value, op });
        NodeId(self.nodes.len() - 1)
    }

    fn shape(&self, id: NodeId) -> (usize, usize) {
        let v = self.value(id);
        (v.rows(), v.cols())
    }

    pub fn input(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Input)
    }

    pub fn param(&mut self, id: ParamId) -> NodeId {
        if let Some(&n) = self.param_nodes.get(&id) {
            return n;
        }
        let n = self.push(self.params.get(id).clone(), Op::Param(id));
        self.param_nodes.insert(id, n);
        n
    }

    /// Rows `ids` of a parameter table (embedding lookup).
    pub fn gather(&mut self, param: ParamId, ids: &[usize]) -> Result<NodeId> {
        let table = self.params.get(param);
        let cols = table.cols();
        let mut data = Vec::with_capacity(ids.len() * cols);
        for &i in ids {
            if i >= table.rows() {
                return Err(Error::Shape(format!(
                    "index {i} out of range for `{}` with {} rows",
                    self.params.name(param),
                    table.rows()
                )));
            }
            data.extend_from_slice(table.row(i));
        }
        let value = Tensor::new(ids.len(), cols, data);
        Ok(self.push(value, Op::GatherParam { param, ids: ids.to_vec() }))
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (m, k) = self.shape(a);
        let (k2, n) = self.shape(b);
        if k != k2 {
            return Err(Error::Shape(format!("matmul {m}x{k} by {k2}x{n}")));
        }
        let mut out = vec![0.0; m * n];
        gemm_acc(&mut out, &self.value(a).data, &self.value(b).data, m, k, n);
        Ok(self.push(Tensor::new(m, n, out), Op::MatMul(a, b)))
    }

    /// `a * b^T`.
    pub fn matmul_nt(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (m, k) = self.shape(a);
        let (n, k2) = self.shape(b);
        if k != k2 {
            return Err(Error::Shape(format!("matmul_nt {m}x{k} by ({n}x{k2})^T")));
        }
        let mut out = vec![0.0; m * n];
        gemm_nt_acc(&mut out, &self.value(a).data, &self.value(b).data, m, k, n);
        Ok(self.push(Tensor::new(m, n, out), Op::MatMulNT(a, b)))
    }

    fn same_shape(&self, a: NodeId, b: NodeId, what: &str) -> Result<(usize, usize)> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(Error::Shape(format!("{what} {sa:?} vs {sb:?}")));
        }
        Ok(sa)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (r, c) = self.same_shape(a, b, "add")?;
        let data = zip_map(&self.value(a).data, &self.value(b).data, |x, y| x + y);
        Ok(self.push(Tensor::new(r, c, data), Op::Add(a, b)))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (r, c) = self.same_shape(a, b, "mul")?;
        let data = zip_map(&self.value(a).data, &self.value(b).data, |x, y| x * y);
        Ok(self.push(Tensor::new(r, c, data), Op::Mul(a, b)))
    }

    fn row_broadcast(&self, a: NodeId, row: NodeId, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let (r, c) = self.shape(a);
        if self.shape(row) != (1, c) {
            return Err(Error::Shape(format!("row broadcast {:?} onto {r}x{c}", self.shape(row))));
        }
        let rv = &self.value(row).data;
        let av = &self.value(a).data;
        let data = av.iter().enumerate().map(|(i, &x)| f(x, rv[i % c])).collect();
        Ok(Tensor::new(r, c, data))
    }

    /// Adds a `1 x n` row to every row of `a`.
    pub fn add_row(&mut self, a: NodeId, row: NodeId) -> Result<NodeId> {
        let v = self.row_broadcast(a, row, |x, y| x + y)?;
        Ok(self.push(v, Op::AddRow(a, row)))
    }

    /// Multiplies every row of `a` elementwise by a `1 x n` row.
    pub fn mul_row(&mut self, a: NodeId, row: NodeId) -> Result<NodeId> {
        let v = self.row_broadcast(a, row, |x, y| x * y)?;
        Ok(self.push(v, Op::MulRow(a, row)))
    }

    /// Adds a `1 x 1` node to every element.
    pub fn add_scalar(&mut self, a: NodeId, s: NodeId) -> Result<NodeId> {
        if self.shape(s) != (1, 1) {
            return Err(Error::Shape(format!("add_scalar with {:?}", self.shape(s))));
        }
        let sv = self.value(s).data[0];
        let (r, c) = self.shape(a);
        let data = self.value(a).data.iter().map(|x| x + sv).collect();
        Ok(self.push(Tensor::new(r, c, data), Op::AddScalar(a, s)))
    }

    pub fn scale(&mut self, a: NodeId, factor: f64) -> NodeId {
        let (r, c) = self.shape(a);
        let data = self.value(a).data.iter().map(|x| x * factor).collect();
        self.push(Tensor::new(r, c, data), Op::Scale(a, factor))
    }

    /// Elementwise product with a constant mask.
    pub fn mask_mul(&mut self, a: NodeId, mask: Rc<Vec<f64>>) -> Result<NodeId> {
        let (r, c) = self.shape(a);
        if mask.len() != r * c {
            return Err(Error::Shape(format!("mask of {} values for {r}x{c}", mask.len())));
        }
        let data = zip_map(&self.value(a).data, &mask, |x, m| x * m);
        Ok(self.push(Tensor::new(r, c, data), Op::MaskMul(a, mask)))
    }

    /// Row-wise softmax; `f64::NEG_INFINITY` entries become exact zeros.
    pub fn softmax_rows(&mut self, a: NodeId) -> Result<NodeId> {
        let (r, c) = self.shape(a);
        let mut data = self.value(a).data.clone();
        for row in data.chunks_mut(c.max(1)).take(r) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if max == f64::NEG_INFINITY || max.is_nan() {
                return Err(Error::NonFinite("softmax row has no finite entry".into()));
            }
            let mut sum = 0.0;
            for x in row.iter_mut() {
                *x = (*x - max).exp();
                sum += *x;
            }
            for x in row.iter_mut() {
                *x /= sum;
            }
        }
        Ok(self.push(Tensor::new(r, c, data), Op::Softmax(a)))
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        let (r, c) = self.shape(a);
        let data = self.value(a).data.iter().map(|x| x.tanh()).collect();
        self.push(Tensor::new(r, c, data), Op::Tanh(a))
    }

    /// Tanh-approximated GELU.
    pub fn gelu(&mut self, a: NodeId) -> NodeId {
        let (r, c) = self.shape(a);
        let data = self
            .value(a)
            .data
            .iter()
            .map(|&x| 0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh()))
            .collect();
        self.push(Tensor::new(r, c, data), Op::Gelu(a))
    }

    /// Per-row normalization followed by a `1 x n` gain and bias.
    pub fn layer_norm(&mut self, x: NodeId, gain: NodeId, bias: NodeId) -> Result<NodeId> {
        let (r, c) = self.shape(x);
        if self.shape(gain) != (1, c) || self.shape(bias) != (1, c) {
            return Err(Error::Shape(format!("layer_norm parameters for width {c}")));
        }
        let xv = &self.value(x).data;
        let g = &self.value(gain).data;
        let b = &self.value(bias).data;
        let mut xhat = vec![0.0; r * c];
        let mut inv_std = vec![0.0; r];
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            let row = &xv[i * c..(i + 1) * c];
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
            let is = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            inv_std[i] = is;
            for j in 0..c {
                let h = (row[j] - mean) * is;
                xhat[i * c + j] = h;
                out[i * c + j] = g[j] * h + b[j];
            }
        }
        Ok(self.push(
            Tensor::new(r, c, out),
            Op::LayerNorm { x, gain, bias, xhat, inv_std },
        ))
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let rows = parts.first().map_or(0, |&p| self.shape(p).0);
        if parts.iter().any(|&p| self.shape(p).0 != rows) {
            return Err(Error::Shape("concat_cols row counts differ".into()));
        }
        let cols: usize = parts.iter().map(|&p| self.shape(p).1).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(r));
            }
        }
        Ok(self.push(Tensor::new(rows, cols, data), Op::ConcatCols(parts.to_vec())))
    }

    pub fn slice_cols(&mut self, x: NodeId, start: usize, width: usize) -> Result<NodeId> {
        let (r, c) = self.shape(x);
        if start + width > c {
            return Err(Error::Shape(format!("slice {start}+{width} of {c} columns")));
        }
        let v = self.value(x);
        let mut data = Vec::with_capacity(r * width);
        for i in 0..r {
            data.extend_from_slice(&v.row(i)[start..start + width]);
        }
        Ok(self.push(Tensor::new(r, width, data), Op::SliceCols { x, start }))
    }

    /// Mean of the listed rows as a `1 x n` node.
    pub fn mean_rows(&mut self, x: NodeId, rows: &[usize]) -> Result<NodeId> {
        let (r, c) = self.shape(x);
        if rows.is_empty() || rows.iter().any(|&i| i >= r) {
            return Err(Error::Shape(format!("mean over rows {rows:?} of {r}")));
        }
        let v = self.value(x);
        let mut data = vec![0.0; c];
        for &i in rows {
            data.iter_mut().zip(v.row(i)).for_each(|(a, b)| *a += b);
        }
        let n = rows.len() as f64;
        data.iter_mut().for_each(|a| *a /= n);
        Ok(self.push(Tensor::new(1, c, data), Op::MeanRows { x, rows: rows.to_vec() }))
    }

    /// Elementwise sum of equally shaped nodes.
    pub fn sum(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let Some(&first) = parts.first() else {
            return Err(Error::Shape("sum of nothing".into()));
        };
        let (r, c) = self.shape(first);
        let mut data = vec![0.0; r * c];
        for &p in parts {
            if self.shape(p) != (r, c) {
                return Err(Error::Shape("sum operands differ in shape".into()));
            }
            data.iter_mut().zip(&self.value(p).data).for_each(|(a, b)| *a += b);
        }
        Ok(self.push(Tensor::new(r, c, data), Op::Sum(parts.to_vec())))
    }

    /// `-ln(max(x[index], floor))` for a `1 x n` probability row.
    pub fn neg_log_pick(&mut self, x: NodeId, index: usize, floor: f64) -> Result<NodeId> {
        let (r, c) = self.shape(x);
        if r != 1 || index >= c {
            return Err(Error::Shape(format!("pick {index} from {r}x{c}")));
        }
        let p = self.value(x).data[index].max(floor);
        Ok(self.push(Tensor::new(1, 1, vec![-p.ln()]), Op::NegLogPick { x, index, floor }))
    }

    /// Weighted scatter of input rows into a `out_rows x n` matrix.
    pub fn combine_rows(&mut self, inputs: &[NodeId], entries: Rc<Vec<MergeEntry>>, out_rows: usize) -> Result<NodeId> {
        let cols = inputs.first().map_or(0, |&i| self.shape(i).1);
        let mut out = Tensor::zeros(out_rows, cols);
        for e in entries.iter() {
            let src = self.value(inputs[e.pass]);
            if src.cols() != cols || e.local >= src.rows() || e.global >= out_rows {
                return Err(Error::Shape("combine_rows entry out of range".into()));
            }
            let row: Vec<f64> = src.row(e.local).to_vec();
            out.row_mut(e.global).iter_mut().zip(row).for_each(|(o, v)| *o += e.weight * v);
        }
        Ok(self.push(out, Op::CombineRows { inputs: inputs.to_vec(), entries }))
    }

    /// Weighted scatter of individual input cells into an `out_rows x out_cols` matrix.
    pub fn combine_cells(
        &mut self,
        inputs: &[NodeId],
        entries: Rc<Vec<CellEntry>>,
        out_rows: usize,
        out_cols: usize,
    ) -> Result<NodeId> {
        let mut out = Tensor::zeros(out_rows, out_cols);
        for e in entries.iter() {
            let src = self.value(inputs[e.pass]);
            if e.local_row >= src.rows() || e.local_col >= src.cols() || e.out_row >= out_rows || e.global_col >= out_cols {
                return Err(Error::Shape("combine_cells entry out of range".into()));
            }
            out.data[e.out_row * out_cols + e.global_col] += e.weight * src.get(e.local_row, e.local_col);
        }
        Ok(self.push(out, Op::CombineCells { inputs: inputs.to_vec(), entries }))
    }

    /// Gradients of the scalar `loss` with respect to every parameter used.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(Error::Shape(format!("backward from non-scalar {:?}", lv.shape)));
        }
        if !lv.data[0].is_finite() {
            return Err(Error::NonFinite(format!("loss is {}", lv.data[0])));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);
        let mut out = Gradients {
            grads: vec![None; self.params.len()],
        };

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            let (rows, cols) = (node.value.rows(), node.value.cols());
            match &node.op {
                Op::Input => {}
                Op::Param(p) => accumulate_param(&mut out, self.params, *p, |dst| add_into(dst, &g)),
                Op::GatherParam { param, ids } => accumulate_param(&mut out, self.params, *param, |dst| {
                    for (r, &i) in ids.iter().enumerate() {
                        let src = &g[r * cols..(r + 1) * cols];
                        add_into(&mut dst[i * cols..(i + 1) * cols], src);
                    }
                }),
                Op::MatMul(a, b) => {
                    let (m, k) = self.shape(*a);
                    let n = cols;
                    let av = &self.value(*a).data;
                    let bv = &self.value(*b).data;
                    // dA = G B^T, dB = A^T G
                    acc(&mut grads, *a, m * k, |dst| gemm_nt_acc(dst, &g, bv, m, n, k));
                    acc(&mut grads, *b, k * n, |dst| gemm_tn_acc(dst, av, &g, k, m, n));
                }
                Op::MatMulNT(a, b) => {
                    let (m, k) = self.shape(*a);
                    let n = cols;
                    let av = &self.value(*a).data;
                    let bv = &self.value(*b).data;
                    // C = A B^T: dA = G B, dB = G^T A
                    acc(&mut grads, *a, m * k, |dst| gemm_acc(dst, &g, bv, m, n, k));
                    acc(&mut grads, *b, n * k, |dst| gemm_tn_acc(dst, &g, av, n, m, k));
                }
                Op::Add(a, b) => {
                    acc(&mut grads, *a, g.len(), |dst| add_into(dst, &g));
                    acc(&mut grads, *b, g.len(), |dst| add_into(dst, &g));
                }
                Op::AddRow(a, row) => {
                    acc(&mut grads, *a, g.len(), |dst| add_into(dst, &g));
                    acc(&mut grads, *row, cols, |dst| {
                        for chunk in g.chunks(cols) {
                            add_into(dst, chunk);
                        }
                    });
                }
                Op::AddScalar(a, s) => {
                    acc(&mut grads, *a, g.len(), |dst| add_into(dst, &g));
                    acc(&mut grads, *s, 1, |dst| dst[0] += g.iter().sum::<f64>());
                }
                Op::Mul(a, b) => {
                    let av = &self.value(*a).data;
                    let bv = &self.value(*b).data;
                    acc(&mut grads, *a, g.len(), |dst| {
                        dst.iter_mut().zip(g.iter().zip(bv)).for_each(|(d, (x, y))| *d += x * y)
                    });
                    acc(&mut grads, *b, g.len(), |dst| {
                        dst.iter_mut().zip(g.iter().zip(av)).for_each(|(d, (x, y))| *d += x * y)
                    });
                }
                Op::MulRow(a, row) => {
                    let av = &self.value(*a).data;
                    let rv = &self.value(*row).data;
                    acc(&mut grads, *a, g.len(), |dst| {
                        for (i, d) in dst.iter_mut().enumerate() {
                            *d += g[i] * rv[i % cols];
                        }
                    });
                    acc(&mut grads, *row, cols, |dst| {
                        for (i, (&x, &y)) in g.iter().zip(av).enumerate() {
                            dst[i % cols] += x * y;
                        }
                    });
                }
                Op::Scale(a, f) => acc(&mut grads, *a, g.len(), |dst| {
                    dst.iter_mut().zip(&g).for_each(|(d, x)| *d += f * x)
                }),
                Op::MaskMul(a, mask) => acc(&mut grads, *a, g.len(), |dst| {
                    dst.iter_mut().zip(g.iter().zip(mask.iter())).for_each(|(d, (x, m))| *d += x * m)
                }),
                Op::Softmax(a) => {
                    let y = &node.value.data;
                    acc(&mut grads, *a, g.len(), |dst| {
                        for r in 0..rows {
                            let ys = &y[r * cols..(r + 1) * cols];
                            let gs = &g[r * cols..(r + 1) * cols];
                            let dot: f64 = ys.iter().zip(gs).map(|(a, b)| a * b).sum();
                            for j in 0..cols {
                                dst[r * cols + j] += ys[j] * (gs[j] - dot);
                            }
                        }
                    });
                }
                Op::Tanh(a) => {
                    let y = &node.value.data;
                    acc(&mut grads, *a, g.len(), |dst| {
                        dst.iter_mut()
                            .zip(g.iter().zip(y))
                            .for_each(|(d, (x, t))| *d += x * (1.0 - t * t))
                    });
                }
                Op::Gelu(a) => {
                    let xs = &self.value(*a).data;
                    acc(&mut grads, *a, g.len(), |dst| {
                        for ((d, &gx), &x) in dst.iter_mut().zip(&g).zip(xs) {
                            let u = GELU_C * (x + GELU_A * x * x * x);
                            let t = u.tanh();
                            let du = GELU_C * (1.0 + 3.0 * GELU_A * x * x);
                            *d += gx * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du);
                        }
                    });
                }
                Op::LayerNorm { x, gain, bias, xhat, inv_std } => {
                    let gv = &self.value(*gain).data;
                    acc(&mut grads, *gain, cols, |dst| {
                        for (i, (&gx, &h)) in g.iter().zip(xhat).enumerate() {
                            dst[i % cols] += gx * h;
                        }
                    });
                    acc(&mut grads, *bias, cols, |dst| {
                        for chunk in g.chunks(cols) {
                            add_into(dst, chunk);
                        }
                    });
                    acc(&mut grads, *x, g.len(), |dst| {
                        let n = cols as f64;
                        for r in 0..rows {
                            let base = r * cols;
                            let dh: Vec<f64> = (0..cols).map(|j| g[base + j] * gv[j]).collect();
                            let mean_dh = dh.iter().sum::<f64>() / n;
                            let mean_dh_h = dh.iter().zip(&xhat[base..base + cols]).map(|(a, b)| a * b).sum::<f64>() / n;
                            for j in 0..cols {
                                dst[base + j] += inv_std[r] * (dh[j] - mean_dh - xhat[base + j] * mean_dh_h);
                            }
                        }
                    });
                }
                Op::ConcatCols(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let w = self.shape(p).1;
                        acc(&mut grads, p, rows * w, |dst| {
                            for r in 0..rows {
                                add_into(&mut dst[r * w..(r + 1) * w], &g[r * cols + offset..r * cols + offset + w]);
                            }
                        });
                        offset += w;
                    }
                }
                Op::SliceCols { x, start } => {
                    let (xr, xc) = self.shape(*x);
                    acc(&mut grads, *x, xr * xc, |dst| {
                        for r in 0..xr {
                            add_into(&mut dst[r * xc + start..r * xc + start + cols], &g[r * cols..(r + 1) * cols]);
                        }
                    });
                }
                Op::MeanRows { x, rows: picked } => {
                    let (xr, xc) = self.shape(*x);
                    let w = 1.0 / picked.len() as f64;
                    acc(&mut grads, *x, xr * xc, |dst| {
                        for &i in picked {
                            dst[i * xc..(i + 1) * xc].iter_mut().zip(&g).for_each(|(d, v)| *d += w * v);
                        }
                    });
                }
                Op::Sum(parts) => {
                    for &p in parts {
                        acc(&mut grads, p, g.len(), |dst| add_into(dst, &g));
                    }
                }
                Op::NegLogPick { x, index, floor } => {
                    let (_, xc) = self.shape(*x);
                    let p = self.value(*x).data[*index];
                    if p >= *floor {
                        acc(&mut grads, *x, xc, |dst| dst[*index] -= g[0] / p);
                    }
                }
                Op::CombineRows { inputs, entries } => {
                    let mut per_input: Vec<Option<Vec<f64>>> = vec![None; inputs.len()];
                    for e in entries.iter() {
                        let (ir, ic) = self.shape(inputs[e.pass]);
                        let dst = per_input[e.pass].get_or_insert_with(|| vec![0.0; ir * ic]);
                        dst[e.local * ic..(e.local + 1) * ic]
                            .iter_mut()
                            .zip(&g[e.global * cols..(e.global + 1) * cols])
                            .for_each(|(d, v)| *d += e.weight * v);
                    }
                    for (k, part) in per_input.into_iter().enumerate() {
                        if let Some(part) = part {
                            acc(&mut grads, inputs[k], part.len(), |dst| add_into(dst, &part));
                        }
                    }
                }
                Op::CombineCells { inputs, entries } => {
                    let mut per_input: Vec<Option<Vec<f64>>> = vec![None; inputs.len()];
                    for e in entries.iter() {
                        let (ir, ic) = self.shape(inputs[e.pass]);
                        let dst = per_input[e.pass].get_or_insert_with(|| vec![0.0; ir * ic]);
                        dst[e.local_row * ic + e.local_col] += e.weight * g[e.out_row * cols + e.global_col];
                    }
                    for (k, part) in per_input.into_iter().enumerate() {
                        if let Some(part) = part {
                            acc(&mut grads, inputs[k], part.len(), |dst| add_into(dst, &part));
                        }
                    }
                }
            }
        }
        Ok(out)
    }
}

fn zip_map(a: &[f64], b: &[f64], f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect()
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
}

fn acc(grads: &mut [Option<Vec<f64>>], id: NodeId, len: usize, f: impl FnOnce(&mut [f64])) {
    let slot = grads[id.0].get_or_insert_with(|| vec![0.0; len]);
    f(slot);
}

fn accumulate_param(out: &mut Gradients, params: &ParamStore, id: ParamId, f: impl FnOnce(&mut [f64])) {
    let slot = out.grads[id.0].get_or_insert_with(|| vec![0.0; params.get(id).len()]);
    f(slot);
}
