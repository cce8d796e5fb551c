//! Tape-based reverse-mode automatic differentiation.
//!
//! A [`Graph`] records every kernel application in execution order. Inputs of a
//! node always precede it on the tape, so [`Graph::backward`] is a single reverse
//! sweep that visits each node once.
//!
//! ```
//! use searchrank::numerics::{Graph, Tensor};
//!
//! let g = Graph::new();
//! let x = g.variable(Tensor::vector(vec![3.0]));
//! let y = g.mul(x, x).unwrap();
//! let loss = g.sum(y).unwrap();
//! let grads = g.backward(loss).unwrap();
//! assert_eq!(grads.wrt(x).unwrap().data(), &[6.0]);
//! ```

use std::cell::RefCell;
use std::collections::HashMap;

use super::kernels::{self, gemm_nn, gemm_nt, gemm_tn, PROB_CLAMP};
use super::{ParamId, ParamStore, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulNt(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    MulCol(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Sigmoid(Var),
    SoftmaxRows(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    SegmentMaxPool {
        x: Var,
        argmax: Vec<usize>,
    },
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols {
        x: Var,
        start: usize,
    },
    GatherRows {
        table: Var,
        idx: Vec<usize>,
    },
    GatherCols {
        table: Var,
        idx: Vec<usize>,
    },
    Attention {
        q: Var,
        k: Var,
        v: Var,
        segments: Vec<usize>,
        heads: usize,
        probs: Vec<f64>,
    },
    Mix {
        gates: Var,
        experts: Vec<Var>,
    },
    RowSum(Var),
    Sum(Var),
    Mean(Var),
    BceMean {
        p: Var,
        labels: Vec<f64>,
    },
    CceMean {
        logits: Var,
        classes: Vec<usize>,
        probs: Vec<f64>,
    },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul(..) => "matmul",
            Op::MatMulNt(..) => "matmul_nt",
            Op::Add(..) => "add",
            Op::AddRow(..) => "add_row",
            Op::Mul(..) => "mul",
            Op::MulCol(..) => "mul_col",
            Op::Scale(..) => "scale",
            Op::Relu(..) => "relu",
            Op::Sigmoid(..) => "sigmoid",
            Op::SoftmaxRows(..) => "softmax",
            Op::LayerNorm { .. } => "layer_norm",
            Op::SegmentMaxPool { .. } => "max_pool",
            Op::ConcatCols(..) => "concat_cols",
            Op::ConcatRows(..) => "concat_rows",
            Op::SliceCols { .. } => "slice_cols",
            Op::GatherRows { .. } => "gather_rows",
            Op::GatherCols { .. } => "gather_cols",
            Op::Attention { .. } => "attention",
            Op::Mix { .. } => "mix_experts",
            Op::RowSum(..) => "row_sum",
            Op::Sum(..) => "sum",
            Op::Mean(..) => "mean",
            Op::BceMean { .. } => "bce",
            Op::CceMean { .. } => "categorical_ce",
        }
    }
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
    param: Option<ParamId>,
}

/// Computation record for one forward pass.
#[derive(Debug)]
pub struct Graph {
    nodes: RefCell<Vec<Node>>,
    leaves: RefCell<HashMap<ParamId, Var>>,
    grad_enabled: bool,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients produced by [`Graph::backward`].
#[derive(Debug, Default)]
pub struct Gradients {
    params: HashMap<ParamId, Tensor>,
    vars: HashMap<usize, Tensor>,
}

impl Gradients {
    pub fn param(&self, id: ParamId) -> Option<&Tensor> {
        self.params.get(&id)
    }

    /// Gradient for `id`, zeros when the parameter was not reached.
    pub fn param_or_zeros(&self, id: ParamId, store: &ParamStore) -> Tensor {
        self.params
            .get(&id)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(store.get(id).shape()))
    }

    pub fn wrt(&self, v: Var) -> Option<&Tensor> {
        self.vars.get(&v.0)
    }

    pub fn params(&self) -> impl Iterator<Item = (ParamId, &Tensor)> {
        self.params.iter().map(|(k, v)| (*k, v))
    }
}

impl Graph {
    pub fn new() -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
            leaves: RefCell::new(HashMap::new()),
            grad_enabled: true,
        }
    }

    /// A graph whose parameters all enter as constants; used for inference.
    pub fn inference() -> Self {
        Self {
            grad_enabled: false,
            ..Self::new()
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.borrow().is_empty()
    }

    fn push(&self, value: Tensor, op: Op, requires_grad: bool) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite {
                kernel: op.name().to_string(),
            });
        }
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op,
            requires_grad: requires_grad && self.grad_enabled,
            param: None,
        });
        Ok(Var(nodes.len() - 1))
    }

    fn rg(&self, vars: &[Var]) -> bool {
        let nodes = self.nodes.borrow();
        vars.iter().any(|v| nodes[v.0].requires_grad)
    }

    pub fn constant(&self, value: Tensor) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: false,
            param: None,
        });
        Var(nodes.len() - 1)
    }

    /// Free leaf that receives a gradient (not tied to a parameter store).
    pub fn variable(&self, value: Tensor) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: self.grad_enabled,
            param: None,
        });
        Var(nodes.len() - 1)
    }

    /// Leaf for a stored parameter. Repeated calls return the same node.
    pub fn param(&self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(v) = self.leaves.borrow().get(&id) {
            return *v;
        }
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value: store.get(id).clone(),
            op: Op::Leaf,
            requires_grad: self.grad_enabled && store.is_trainable(id),
            param: Some(id),
        });
        let v = Var(nodes.len() - 1);
        self.leaves.borrow_mut().insert(id, v);
        v
    }

    pub fn value(&self, v: Var) -> Tensor {
        self.nodes.borrow()[v.0].value.clone()
    }

    pub fn with_value<R>(&self, v: Var, f: impl FnOnce(&Tensor) -> R) -> R {
        f(&self.nodes.borrow()[v.0].value)
    }

    pub fn shape(&self, v: Var) -> Vec<usize> {
        self.nodes.borrow()[v.0].value.shape().to_vec()
    }

    pub fn rows(&self, v: Var) -> usize {
        self.nodes.borrow()[v.0].value.rows()
    }

    pub fn cols(&self, v: Var) -> usize {
        self.nodes.borrow()[v.0].value.cols()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes.borrow()[v.0].requires_grad
    }

    // ---- kernels -------------------------------------------------------

    pub fn matmul(&self, a: Var, b: Var) -> Result<Var> {
        let out = {
            let n = self.nodes.borrow();
            kernels::matmul(&n[a.0].value, &n[b.0].value)?
        };
        self.push(out, Op::MatMul(a, b), self.rg(&[a, b]))
    }

    /// `a · bᵀ`; with `b` stored as `out × in` this is a dense layer without bias.
    pub fn matmul_nt(&self, a: Var, b: Var) -> Result<Var> {
        let out = {
            let n = self.nodes.borrow();
            kernels::matmul_nt(&n[a.0].value, &n[b.0].value)?
        };
        self.push(out, Op::MatMulNt(a, b), self.rg(&[a, b]))
    }

    pub fn add(&self, a: Var, b: Var) -> Result<Var> {
        let out = {
            let n = self.nodes.borrow();
            kernels::add(&n[a.0].value, &n[b.0].value)?
        };
        self.push(out, Op::Add(a, b), self.rg(&[a, b]))
    }

    /// Adds a bias vector to every row of `x`.
    pub fn add_row(&self, x: Var, bias: Var) -> Result<Var> {
        let out = {
            let n = self.nodes.borrow();
            let (xv, bv) = (&n[x.0].value, &n[bias.0].value);
            let c = xv.cols();
            if bv.len() != c {
                return Err(Error::dim(
                    "add_row",
                    format!("input {:?}, bias {:?}", xv.shape(), bv.shape()),
                ));
            }
            let mut data = xv.data().to_vec();
            for row in data.chunks_mut(c.max(1)) {
                for (o, b) in row.iter_mut().zip(bv.data()) {
                    *o += b;
                }
            }
            Tensor::new(xv.shape().to_vec(), data)?
        };
        self.push(out, Op::AddRow(x, bias), self.rg(&[x, bias]))
    }

    pub fn mul(&self, a: Var, b: Var) -> Result<Var> {
        let out = {
            let n = self.nodes.borrow();
            kernels::elementwise_mul(&n[a.0].value, &n[b.0].value)?
        };
        self.push(out, Op::Mul(a, b), self.rg(&[a, b]))
    }

    /// Scales row `i` of `x` by `s[i]`.
    pub fn mul_col(&self, x: Var, s: Var) -> Result<Var> {
        let out = {
            let n = self.nodes.borrow();
            let (xv, sv) = (&n[x.0].value, &n[s.0].value);
            if sv.len() != xv.rows() {
                return Err(Error::dim(
                    "mul_col",
                    format!("input {:?}, scale {:?}", xv.shape(), sv.shape()),
                ));
            }
            let c = xv.cols();
            let mut data = xv.data().to_vec();
            for (row, &k) in data.chunks_mut(c.max(1)).zip(sv.data()) {
                for o in row {
                    *o *= k;
                }
            }
            Tensor::new(xv.shape().to_vec(), data)?
        };
        self.push(out, Op::MulCol(x, s), self.rg(&[x, s]))
    }

    pub fn scale(&self, x: Var, k: f64) -> Result<Var> {
        let out = {
            let n = self.nodes.borrow();
            let xv = &n[x.0].value;
            Tensor::new(xv.shape().to_vec(), xv.data().iter().map(|v| v * k).collect())?
        };
        self.push(out, Op::Scale(x, k), self.rg(&[x]))
    }

    pub fn relu(&self, x: Var) -> Result<Var> {
        let out = kernels::relu(&self.nodes.borrow()[x.0].value);
        self.push(out, Op::Relu(x), self.rg(&[x]))
    }

    pub fn sigmoid(&self, x: Var) -> Result<Var> {
        let out = kernels::sigmoid(&self.nodes.borrow()[x.0].value);
        self.push(out, Op::Sigmoid(x), self.rg(&[x]))
    }

    pub fn softmax(&self, x: Var) -> Result<Var> {
        let out = kernels::softmax(&self.nodes.borrow()[x.0].value)?;
        self.push(out, Op::SoftmaxRows(x), self.rg(&[x]))
    }

    /// Row-wise layer normalization with learned gain and bias.
    pub fn layer_norm(&self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        let (out, xhat, inv_std) = {
            let n = self.nodes.borrow();
            kernels::layer_norm_parts(&n[x.0].value, &n[gain.0].value, &n[bias.0].value)?
        };
        let rg = self.rg(&[x, gain, bias]);
        self.push(
            out,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
            rg,
        )
    }

    /// Column-wise maximum over all rows, producing a `1 × d` matrix.
    pub fn max_pool_rows(&self, x: Var) -> Result<Var> {
        let r = self.rows(x);
        self.segment_max_pool(x, &[r])
    }

    /// Rows of `x` are consecutive segments of the given lengths; each segment
    /// is max-pooled column-wise into one output row.
    pub fn segment_max_pool(&self, x: Var, segments: &[usize]) -> Result<Var> {
        let (out, argmax) = {
            let n = self.nodes.borrow();
            let xv = &n[x.0].value;
            let c = xv.cols();
            if segments.iter().sum::<usize>() != xv.rows() || segments.contains(&0) {
                return Err(Error::dim(
                    "max_pool",
                    format!("segments {segments:?} do not tile {} rows", xv.rows()),
                ));
            }
            let mut out = Vec::with_capacity(segments.len() * c);
            let mut argmax = Vec::with_capacity(segments.len() * c);
            let mut start = 0;
            for &len in segments {
                for j in 0..c {
                    let mut best = start;
                    for r in start + 1..start + len {
                        if xv.at(r, j) > xv.at(best, j) {
                            best = r;
                        }
                    }
                    out.push(xv.at(best, j));
                    argmax.push(best);
                }
                start += len;
            }
            (Tensor::matrix(segments.len(), c, out)?, argmax)
        };
        self.push(out, Op::SegmentMaxPool { x, argmax }, self.rg(&[x]))
    }

    pub fn concat_cols(&self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::dim("concat_cols", "no inputs"));
        }
        let out = {
            let n = self.nodes.borrow();
            let rows = n[parts[0].0].value.rows();
            let mut total = 0;
            for p in parts {
                let v = &n[p.0].value;
                if v.rows() != rows {
                    return Err(Error::dim(
                        "concat_cols",
                        format!("row counts differ: {} vs {}", rows, v.rows()),
                    ));
                }
                total += v.cols();
            }
            let mut data = Vec::with_capacity(rows * total);
            for r in 0..rows {
                for p in parts {
                    data.extend_from_slice(n[p.0].value.row(r));
                }
            }
            Tensor::matrix(rows, total, data)?
        };
        self.push(out, Op::ConcatCols(parts.to_vec()), self.rg(parts))
    }

    pub fn concat_rows(&self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::dim("concat_rows", "no inputs"));
        }
        let out = {
            let n = self.nodes.borrow();
            let cols = n[parts[0].0].value.cols();
            let mut rows = 0;
            let mut data = Vec::new();
            for p in parts {
                let v = &n[p.0].value;
                if v.cols() != cols {
                    return Err(Error::dim(
                        "concat_rows",
                        format!("column counts differ: {} vs {}", cols, v.cols()),
                    ));
                }
                rows += v.rows();
                data.extend_from_slice(v.data());
            }
            Tensor::matrix(rows, cols, data)?
        };
        self.push(out, Op::ConcatRows(parts.to_vec()), self.rg(parts))
    }

    pub fn slice_cols(&self, x: Var, start: usize, len: usize) -> Result<Var> {
        let out = {
            let n = self.nodes.borrow();
            let xv = &n[x.0].value;
            if start + len > xv.cols() {
                return Err(Error::dim(
                    "slice_cols",
                    format!("[{start}, {}) outside {} columns", start + len, xv.cols()),
                ));
            }
            let mut data = Vec::with_capacity(xv.rows() * len);
            for r in 0..xv.rows() {
                data.extend_from_slice(&xv.row(r)[start..start + len]);
            }
            Tensor::matrix(xv.rows(), len, data)?
        };
        self.push(out, Op::SliceCols { x, start }, self.rg(&[x]))
    }

    /// Selects rows of `table` (row-per-entry lookup).
    pub fn gather_rows(&self, table: Var, idx: &[usize]) -> Result<Var> {
        let out = {
            let n = self.nodes.borrow();
            let t = &n[table.0].value;
            let c = t.cols();
            let mut data = Vec::with_capacity(idx.len() * c);
            for &i in idx {
                if i >= t.rows() {
                    return Err(Error::Index {
                        what: "gather_rows table",
                        index: i,
                        size: t.rows(),
                    });
                }
                data.extend_from_slice(t.row(i));
            }
            Tensor::matrix(idx.len(), c, data)?
        };
        self.push(
            out,
            Op::GatherRows {
                table,
                idx: idx.to_vec(),
            },
            self.rg(&[table]),
        )
    }

    /// Selects columns of an `e × v` table; output row `b` is column `idx[b]`.
    pub fn gather_cols(&self, table: Var, idx: &[usize]) -> Result<Var> {
        let out = {
            let n = self.nodes.borrow();
            let t = &n[table.0].value;
            let (e, v) = (t.rows(), t.cols());
            let mut data = Vec::with_capacity(idx.len() * e);
            for &i in idx {
                if i >= v {
                    return Err(Error::Index {
                        what: "embedding table columns",
                        index: i,
                        size: v,
                    });
                }
                for r in 0..e {
                    data.push(t.data()[r * v + i]);
                }
            }
            Tensor::matrix(idx.len(), e, data)?
        };
        self.push(
            out,
            Op::GatherCols {
                table,
                idx: idx.to_vec(),
            },
            self.rg(&[table]),
        )
    }

    /// Multi-head scaled dot-product attention over independent sequences.
    ///
    /// `q`, `k`, `v` are `(Σ segments) × d`; rows of each segment attend only to
    /// rows of the same segment. Heads split the `d` columns evenly.
    pub fn attention(&self, q: Var, k: Var, v: Var, segments: &[usize], heads: usize) -> Result<Var> {
        let (out, probs) = {
            let n = self.nodes.borrow();
            let (qv, kv, vv) = (&n[q.0].value, &n[k.0].value, &n[v.0].value);
            let (rows, d) = (qv.rows(), qv.cols());
            if !qv.same_shape(kv) || !qv.same_shape(vv) || qv.shape().len() != 2 {
                return Err(Error::dim(
                    "attention",
                    format!("q {:?}, k {:?}, v {:?}", qv.shape(), kv.shape(), vv.shape()),
                ));
            }
            if heads == 0 || d % heads != 0 {
                return Err(Error::dim("attention", format!("width {d} not divisible by {heads} heads")));
            }
            if segments.iter().sum::<usize>() != rows {
                return Err(Error::dim("attention", format!("segments {segments:?} do not tile {rows} rows")));
            }
            let dh = d / heads;
            let scale = 1.0 / (dh as f64).sqrt();
            let mut out = vec![0.0; rows * d];
            let mut probs = Vec::with_capacity(segments.iter().map(|l| l * l).sum::<usize>() * heads);
            let mut start = 0;
            for &len in segments {
                for h in 0..heads {
                    let c0 = h * dh;
                    for i in 0..len {
                        let qi = &qv.row(start + i)[c0..c0 + dh];
                        let base = probs.len();
                        for j in 0..len {
                            let kj = &kv.row(start + j)[c0..c0 + dh];
                            let s: f64 = qi.iter().zip(kj).map(|(a, b)| a * b).sum();
                            probs.push(s * scale);
                        }
                        kernels::softmax_in_place(&mut probs[base..base + len]);
                        let orow = &mut out[(start + i) * d + c0..(start + i) * d + c0 + dh];
                        for j in 0..len {
                            let p = probs[base + j];
                            let vj = &vv.row(start + j)[c0..c0 + dh];
                            for (o, x) in orow.iter_mut().zip(vj) {
                                *o += p * x;
                            }
                        }
                    }
                }
                start += len;
            }
            (Tensor::matrix(rows, d, out)?, probs)
        };
        let rg = self.rg(&[q, k, v]);
        self.push(
            out,
            Op::Attention {
                q,
                k,
                v,
                segments: segments.to_vec(),
                heads,
                probs,
            },
            rg,
        )
    }

    /// `out[b] = Σ_i gates[b, i] · experts[i][b]`
    pub fn mix(&self, gates: Var, experts: &[Var]) -> Result<Var> {
        let out = {
            let n = self.nodes.borrow();
            let gv = &n[gates.0].value;
            if experts.is_empty() || gv.cols() != experts.len() {
                return Err(Error::dim(
                    "mix_experts",
                    format!("{} gate columns for {} experts", gv.cols(), experts.len()),
                ));
            }
            let first = &n[experts[0].0].value;
            let (rows, c) = (first.rows(), first.cols());
            if gv.rows() != rows {
                return Err(Error::dim("mix_experts", format!("gate rows {} vs expert rows {rows}", gv.rows())));
            }
            let mut data = vec![0.0; rows * c];
            for (i, e) in experts.iter().enumerate() {
                let ev = &n[e.0].value;
                if ev.rows() != rows || ev.cols() != c {
                    return Err(Error::dim(
                        "mix_experts",
                        format!("expert {i} has shape {:?}, expected [{rows}, {c}]", ev.shape()),
                    ));
                }
                for b in 0..rows {
                    let g = gv.at(b, i);
                    for (o, x) in data[b * c..(b + 1) * c].iter_mut().zip(ev.row(b)) {
                        *o += g * x;
                    }
                }
            }
            Tensor::matrix(rows, c, data)?
        };
        let mut inputs = experts.to_vec();
        inputs.push(gates);
        let rg = self.rg(&inputs);
        self.push(
            out,
            Op::Mix {
                gates,
                experts: experts.to_vec(),
            },
            rg,
        )
    }

    /// Sums each row into a `rows × 1` column.
    pub fn row_sum(&self, x: Var) -> Result<Var> {
        let out = {
            let n = self.nodes.borrow();
            let xv = &n[x.0].value;
            let data = (0..xv.rows()).map(|r| xv.row(r).iter().sum()).collect();
            Tensor::matrix(xv.rows(), 1, data)?
        };
        self.push(out, Op::RowSum(x), self.rg(&[x]))
    }

    pub fn sum(&self, x: Var) -> Result<Var> {
        let s = self.nodes.borrow()[x.0].value.data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(x), self.rg(&[x]))
    }

    pub fn mean(&self, x: Var) -> Result<Var> {
        let s = {
            let n = self.nodes.borrow();
            let d = n[x.0].value.data();
            if d.is_empty() {
                return Err(Error::dim("mean", "empty input"));
            }
            d.iter().sum::<f64>() / d.len() as f64
        };
        self.push(Tensor::scalar(s), Op::Mean(x), self.rg(&[x]))
    }

    /// Mean binary cross-entropy of probabilities `p` against `{0,1}` labels.
    pub fn bce_mean(&self, p: Var, labels: &[f64]) -> Result<Var> {
        let s = {
            let n = self.nodes.borrow();
            let pv = n[p.0].value.data();
            if pv.len() != labels.len() || pv.is_empty() {
                return Err(Error::dim("bce", format!("{} predictions, {} labels", pv.len(), labels.len())));
            }
            pv.iter().zip(labels).map(|(&p, &y)| kernels::bce(p, y)).sum::<f64>() / pv.len() as f64
        };
        self.push(
            Tensor::scalar(s),
            Op::BceMean {
                p,
                labels: labels.to_vec(),
            },
            self.rg(&[p]),
        )
    }

    /// Mean categorical cross-entropy of `rows × c` logits against class indices.
    pub fn cce_mean(&self, logits: Var, classes: &[usize]) -> Result<Var> {
        let (s, probs) = {
            let n = self.nodes.borrow();
            let lv = &n[logits.0].value;
            if lv.rows() != classes.len() || classes.is_empty() {
                return Err(Error::dim(
                    "categorical_ce",
                    format!("{} logit rows, {} classes", lv.rows(), classes.len()),
                ));
            }
            let mut total = 0.0;
            let mut probs = lv.data().to_vec();
            let c = lv.cols();
            for (r, &class) in classes.iter().enumerate() {
                total += kernels::categorical_ce(lv.row(r), class)?;
                kernels::softmax_in_place(&mut probs[r * c..(r + 1) * c]);
            }
            (total / classes.len() as f64, probs)
        };
        self.push(
            Tensor::scalar(s),
            Op::CceMean {
                logits,
                classes: classes.to_vec(),
                probs,
            },
            self.rg(&[logits]),
        )
    }

    // ---- reverse sweep -------------------------------------------------

    /// Propagates adjoints from a scalar `loss` to every leaf requiring grad.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let nodes = self.nodes.borrow();
        if nodes[loss.0].value.len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                nodes[loss.0].value.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);
        let mut out = Gradients::default();

        for id in (0..=loss.0).rev() {
            let node = &nodes[id];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            if let Op::Leaf = node.op {
                let t = Tensor::new(node.value.shape().to_vec(), g)?;
                if !t.is_finite() {
                    return Err(Error::NonFinite {
                        kernel: "backward".into(),
                    });
                }
                match node.param {
                    Some(p) => {
                        out.params.insert(p, t);
                    }
                    None => {
                        out.vars.insert(id, t);
                    }
                }
                continue;
            }
            propagate(&nodes, node, &g, &mut grads);
        }
        Ok(out)
    }
}

fn slot<'a>(nodes: &[Node], grads: &'a mut [Option<Vec<f64>>], v: Var) -> Option<&'a mut Vec<f64>> {
    if !nodes[v.0].requires_grad {
        return None;
    }
    let len = nodes[v.0].value.len();
    Some(grads[v.0].get_or_insert_with(|| vec![0.0; len]))
}

fn propagate(nodes: &[Node], node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
    let val = |v: Var| &nodes[v.0].value;
    match &node.op {
        Op::Leaf => {}
        Op::MatMul(a, b) => {
            let (m, k, n) = (val(*a).rows(), val(*a).cols(), val(*b).cols());
            let bd = val(*b).data().to_vec();
            let ad = val(*a).data().to_vec();
            if let Some(ga) = slot(nodes, grads, *a) {
                gemm_nt(m, n, k, g, &bd, ga);
            }
            if let Some(gb) = slot(nodes, grads, *b) {
                gemm_tn(k, m, n, &ad, g, gb);
            }
        }
        Op::MatMulNt(a, b) => {
            // c (m×n) = a (m×k) · bᵀ, b is n×k
            let (m, k, n) = (val(*a).rows(), val(*a).cols(), val(*b).rows());
            let bd = val(*b).data().to_vec();
            let ad = val(*a).data().to_vec();
            if let Some(ga) = slot(nodes, grads, *a) {
                gemm_nn(m, n, k, g, &bd, ga);
            }
            if let Some(gb) = slot(nodes, grads, *b) {
                gemm_tn(n, m, k, g, &ad, gb);
            }
        }
        Op::Add(a, b) => {
            for v in [a, b] {
                if let Some(s) = slot(nodes, grads, *v) {
                    for (o, x) in s.iter_mut().zip(g) {
                        *o += x;
                    }
                }
            }
        }
        Op::AddRow(x, bias) => {
            if let Some(s) = slot(nodes, grads, *x) {
                for (o, v) in s.iter_mut().zip(g) {
                    *o += v;
                }
            }
            let c = val(*bias).len();
            if let Some(s) = slot(nodes, grads, *bias) {
                for row in g.chunks(c.max(1)) {
                    for (o, v) in s.iter_mut().zip(row) {
                        *o += v;
                    }
                }
            }
        }
        Op::Mul(a, b) => {
            let (ad, bd) = (val(*a).data().to_vec(), val(*b).data().to_vec());
            if let Some(s) = slot(nodes, grads, *a) {
                for i in 0..s.len() {
                    s[i] += g[i] * bd[i];
                }
            }
            if let Some(s) = slot(nodes, grads, *b) {
                for i in 0..s.len() {
                    s[i] += g[i] * ad[i];
                }
            }
        }
        Op::MulCol(x, sc) => {
            let c = val(*x).cols().max(1);
            let sd = val(*sc).data().to_vec();
            let xd = val(*x).data().to_vec();
            if let Some(s) = slot(nodes, grads, *x) {
                for (r, (srow, grow)) in s.chunks_mut(c).zip(g.chunks(c)).enumerate() {
                    for (o, v) in srow.iter_mut().zip(grow) {
                        *o += v * sd[r];
                    }
                }
            }
            if let Some(s) = slot(nodes, grads, *sc) {
                for (r, (xrow, grow)) in xd.chunks(c).zip(g.chunks(c)).enumerate() {
                    s[r] += xrow.iter().zip(grow).map(|(a, b)| a * b).sum::<f64>();
                }
            }
        }
        Op::Scale(x, k) => {
            if let Some(s) = slot(nodes, grads, *x) {
                for (o, v) in s.iter_mut().zip(g) {
                    *o += v * k;
                }
            }
        }
        Op::Relu(x) => {
            let xd = val(*x).data().to_vec();
            if let Some(s) = slot(nodes, grads, *x) {
                for i in 0..s.len() {
                    if xd[i] > 0.0 {
                        s[i] += g[i];
                    }
                }
            }
        }
        Op::Sigmoid(x) => {
            let y = node.value.data();
            if let Some(s) = slot(nodes, grads, *x) {
                for i in 0..s.len() {
                    s[i] += g[i] * y[i] * (1.0 - y[i]);
                }
            }
        }
        Op::SoftmaxRows(x) => {
            let y = node.value.data();
            let c = node.value.cols();
            if let Some(s) = slot(nodes, grads, *x) {
                for ((srow, yrow), grow) in s.chunks_mut(c).zip(y.chunks(c)).zip(g.chunks(c)) {
                    let dot: f64 = yrow.iter().zip(grow).map(|(a, b)| a * b).sum();
                    for j in 0..c {
                        srow[j] += yrow[j] * (grow[j] - dot);
                    }
                }
            }
        }
        Op::LayerNorm {
            x,
            gain,
            bias,
            xhat,
            inv_std,
        } => {
            let n = val(*x).cols();
            let gd = val(*gain).data().to_vec();
            if let Some(s) = slot(nodes, grads, *gain) {
                for (hrow, grow) in xhat.chunks(n).zip(g.chunks(n)) {
                    for j in 0..n {
                        s[j] += grow[j] * hrow[j];
                    }
                }
            }
            if let Some(s) = slot(nodes, grads, *bias) {
                for grow in g.chunks(n) {
                    for j in 0..n {
                        s[j] += grow[j];
                    }
                }
            }
            if let Some(s) = slot(nodes, grads, *x) {
                let nf = n as f64;
                for (r, (hrow, grow)) in xhat.chunks(n).zip(g.chunks(n)).enumerate() {
                    let dxhat: Vec<f64> = (0..n).map(|j| grow[j] * gd[j]).collect();
                    let sum_d: f64 = dxhat.iter().sum();
                    let sum_dh: f64 = dxhat.iter().zip(hrow).map(|(a, b)| a * b).sum();
                    let srow = &mut s[r * n..(r + 1) * n];
                    for j in 0..n {
                        srow[j] += inv_std[r] / nf * (nf * dxhat[j] - sum_d - hrow[j] * sum_dh);
                    }
                }
            }
        }
        Op::SegmentMaxPool { x, argmax } => {
            let c = val(*x).cols();
            if let Some(s) = slot(nodes, grads, *x) {
                for (i, &src) in argmax.iter().enumerate() {
                    s[src * c + i % c] += g[i];
                }
            }
        }
        Op::ConcatCols(parts) => {
            let total = node.value.cols();
            let rows = node.value.rows();
            let mut offset = 0;
            for p in parts {
                let w = val(*p).cols();
                if let Some(s) = slot(nodes, grads, *p) {
                    for r in 0..rows {
                        for j in 0..w {
                            s[r * w + j] += g[r * total + offset + j];
                        }
                    }
                }
                offset += w;
            }
        }
        Op::ConcatRows(parts) => {
            let mut offset = 0;
            for p in parts {
                let len = val(*p).len();
                if let Some(s) = slot(nodes, grads, *p) {
                    for (o, v) in s.iter_mut().zip(&g[offset..offset + len]) {
                        *o += v;
                    }
                }
                offset += len;
            }
        }
        Op::SliceCols { x, start } => {
            let c = val(*x).cols();
            let w = node.value.cols();
            if let Some(s) = slot(nodes, grads, *x) {
                for r in 0..node.value.rows() {
                    for j in 0..w {
                        s[r * c + start + j] += g[r * w + j];
                    }
                }
            }
        }
        Op::GatherRows { table, idx } => {
            let c = val(*table).cols();
            if let Some(s) = slot(nodes, grads, *table) {
                for (b, &i) in idx.iter().enumerate() {
                    for j in 0..c {
                        s[i * c + j] += g[b * c + j];
                    }
                }
            }
        }
        Op::GatherCols { table, idx } => {
            let (e, v) = (val(*table).rows(), val(*table).cols());
            if let Some(s) = slot(nodes, grads, *table) {
                for (b, &i) in idx.iter().enumerate() {
                    for r in 0..e {
                        s[r * v + i] += g[b * e + r];
                    }
                }
            }
        }
        Op::Attention {
            q,
            k,
            v,
            segments,
            heads,
            probs,
        } => {
            let (qd, kd, vd) = (val(*q).data().to_vec(), val(*k).data().to_vec(), val(*v).data().to_vec());
            let d = val(*q).cols();
            let dh = d / heads;
            let scale = 1.0 / (dh as f64).sqrt();
            let rows = val(*q).rows();
            let mut gq = vec![0.0; rows * d];
            let mut gk = vec![0.0; rows * d];
            let mut gv = vec![0.0; rows * d];
            let mut p_off = 0;
            let mut start = 0;
            for &len in segments {
                for h in 0..*heads {
                    let c0 = h * dh;
                    for i in 0..len {
                        let p = &probs[p_off + i * len..p_off + (i + 1) * len];
                        let go = &g[(start + i) * d + c0..(start + i) * d + c0 + dh];
                        // dP_ij = dO_i · V_j
                        let dp: Vec<f64> = (0..len)
                            .map(|j| {
                                let vj = &vd[(start + j) * d + c0..(start + j) * d + c0 + dh];
                                go.iter().zip(vj).map(|(a, b)| a * b).sum()
                            })
                            .collect();
                        let dot: f64 = p.iter().zip(&dp).map(|(a, b)| a * b).sum();
                        for j in 0..len {
                            let ds = p[j] * (dp[j] - dot) * scale;
                            let row_i = (start + i) * d + c0;
                            let row_j = (start + j) * d + c0;
                            for t in 0..dh {
                                gv[row_j + t] += p[j] * go[t];
                                gq[row_i + t] += ds * kd[row_j + t];
                                gk[row_j + t] += ds * qd[row_i + t];
                            }
                        }
                    }
                    p_off += len * len;
                }
                start += len;
            }
            for (var, gl) in [(q, gq), (k, gk), (v, gv)] {
                if let Some(s) = slot(nodes, grads, *var) {
                    for (o, x) in s.iter_mut().zip(&gl) {
                        *o += x;
                    }
                }
            }
        }
        Op::Mix { gates, experts } => {
            let gvals = val(*gates).data().to_vec();
            let n = experts.len();
            let c = node.value.cols();
            let rows = node.value.rows();
            for (i, e) in experts.iter().enumerate() {
                if let Some(s) = slot(nodes, grads, *e) {
                    for b in 0..rows {
                        let gate = gvals[b * n + i];
                        for j in 0..c {
                            s[b * c + j] += gate * g[b * c + j];
                        }
                    }
                }
            }
            if nodes[gates.0].requires_grad {
                let dg: Vec<f64> = (0..rows * n)
                    .map(|bi| {
                        let (b, i) = (bi / n, bi % n);
                        let ev = val(experts[i]).row(b);
                        ev.iter().zip(&g[b * c..(b + 1) * c]).map(|(a, x)| a * x).sum()
                    })
                    .collect();
                if let Some(s) = slot(nodes, grads, *gates) {
                    for (o, x) in s.iter_mut().zip(dg) {
                        *o += x;
                    }
                }
            }
        }
        Op::RowSum(x) => {
            let c = val(*x).cols().max(1);
            if let Some(s) = slot(nodes, grads, *x) {
                for (r, row) in s.chunks_mut(c).enumerate() {
                    for o in row {
                        *o += g[r];
                    }
                }
            }
        }
        Op::Sum(x) => {
            if let Some(s) = slot(nodes, grads, *x) {
                for o in s.iter_mut() {
                    *o += g[0];
                }
            }
        }
        Op::Mean(x) => {
            if let Some(s) = slot(nodes, grads, *x) {
                let k = g[0] / s.len() as f64;
                for o in s.iter_mut() {
                    *o += k;
                }
            }
        }
        Op::BceMean { p, labels } => {
            let pd = val(*p).data().to_vec();
            if let Some(s) = slot(nodes, grads, *p) {
                let inv_n = g[0] / labels.len() as f64;
                for i in 0..s.len() {
                    let pi = pd[i];
                    if pi > PROB_CLAMP && pi < 1.0 - PROB_CLAMP {
                        let y = labels[i];
                        s[i] += inv_n * (-(y / pi) + (1.0 - y) / (1.0 - pi));
                    }
                }
            }
        }
        Op::CceMean {
            logits,
            classes,
            probs,
        } => {
            let c = val(*logits).cols();
            if let Some(s) = slot(nodes, grads, *logits) {
                let inv_n = g[0] / classes.len() as f64;
                for (r, &class) in classes.iter().enumerate() {
                    for j in 0..c {
                        let onehot = if j == class { 1.0 } else { 0.0 };
                        s[r * c + j] += inv_n * (probs[r * c + j] - onehot);
                    }
                }
            }
        }
    }
}
