//! Minimal reverse-mode autodiff over dense row-major matrices.
//!
//! A [`Tape`] records every primitive applied to [`Var`] handles and replays
//! them backwards for exact gradients. Tensors are matrices (vectors are
//! single-column, scalars 1×1). All evaluation is sequential and
//! deterministic: scatter-style accumulation runs in index order and dropout
//! draws from a seeded generator owned by the tape.

pub mod gradcheck;
pub mod kernels;
pub mod mlp;
pub mod optim;
pub mod params;

use std::cell::RefCell;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::scalar::Scalar;
use kernels::{matmul_nn, matmul_nt, matmul_tn};

#[derive(Debug, Error)]
pub enum DiffError {
    #[error("{op}: shape mismatch: {detail}")]
    Shape { op: &'static str, detail: String },
    #[error("{op}: reduction over empty axis")]
    EmptyAxis { op: &'static str },
    #[error("{op}: index out of bounds: {detail}")]
    Index { op: &'static str, detail: String },
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("loss function is not deterministic (is dropout still enabled?)")]
    NonDeterministic,
    #[error("unknown parameter {0}")]
    MissingParam(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

pub type DiffResult<V> = Result<V, DiffError>;

/// Handle to a tensor recorded on a tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var {
    id: usize,
}

#[derive(Debug, Clone)]
enum Op<T> {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    Neg(usize),
    Scale(usize, T),
    AddScalar(usize, T),
    Exp(usize),
    Log(usize),
    Silu(usize),
    Sigmoid(usize),
    PowScalar(usize, T),
    Clamp(usize, T, T),
    Softmax(usize),
    LogSoftmax(usize),
    Matmul(usize, usize),
    MatmulTransB(usize, usize),
    Affine { x: usize, w: usize, b: usize },
    Concat { parts: Vec<usize>, axis: usize },
    SliceCols { x: usize, start: usize, len: usize },
    GatherRows { x: usize, idx: Vec<usize> },
    GatherElems { x: usize, idx: Vec<(usize, usize)> },
    ScatterAddRows { x: usize, idx: Vec<usize> },
    GroupMeanRows { x: usize, group: usize },
    SumAll(usize),
    MeanAll(usize),
    RowNorm(usize),
    RowOuter(usize),
    MulColBroadcast { x: usize, s: usize },
    RowRotate { x: usize, mats: Vec<[T; 9]> },
    Dropout { x: usize, mask: Vec<T> },
    RbfExpand { x: usize, centers: Vec<T>, width: T },
    Huber { x: usize, delta: T },
    Reshape(usize),
}

struct Node<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
    needs_grad: bool,
    grad: Option<Vec<T>>,
    op: Op<T>,
}

struct Inner<T> {
    nodes: Vec<Node<T>>,
    rng: ChaCha8Rng,
}

/// A recording of a differentiable computation.
pub struct Tape<T: Scalar> {
    inner: RefCell<Inner<T>>,
}

impl<T: Scalar> Tape<T> {
    pub fn new(dropout_seed: u64) -> Self {
        Self {
            inner: RefCell::new(Inner {
                nodes: Vec::new(),
                rng: ChaCha8Rng::seed_from_u64(dropout_seed),
            }),
        }
    }

    pub fn node_count(&self) -> usize {
        self.inner.borrow().nodes.len()
    }

    fn push(&self, rows: usize, cols: usize, data: Vec<T>, needs_grad: bool, op: Op<T>) -> Var {
        debug_assert_eq!(data.len(), rows * cols);
        let mut inner = self.inner.borrow_mut();
        inner.nodes.push(Node {
            rows,
            cols,
            data,
            needs_grad,
            grad: None,
            op,
        });
        Var {
            id: inner.nodes.len() - 1,
        }
    }

    /// Record an input tensor. `needs_grad` marks trainable leaves.
    pub fn leaf(&self, rows: usize, cols: usize, data: Vec<T>, needs_grad: bool) -> DiffResult<Var> {
        if data.len() != rows * cols {
            return Err(DiffError::Shape {
                op: "leaf",
                detail: format!("{} values for {}x{}", data.len(), rows, cols),
            });
        }
        Ok(self.push(rows, cols, data, needs_grad, Op::Leaf))
    }

    /// Constant (non-differentiated) tensor.
    pub fn constant(&self, rows: usize, cols: usize, data: Vec<T>) -> DiffResult<Var> {
        self.leaf(rows, cols, data, false)
    }

    pub fn scalar(&self, v: T) -> Var {
        self.push(1, 1, vec![v], false, Op::Leaf)
    }

    pub fn zeros(&self, rows: usize, cols: usize) -> Var {
        self.push(rows, cols, vec![T::zero(); rows * cols], false, Op::Leaf)
    }

    pub fn ones(&self, rows: usize, cols: usize) -> Var {
        self.push(rows, cols, vec![T::one(); rows * cols], false, Op::Leaf)
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        let inner = self.inner.borrow();
        let n = &inner.nodes[v.id];
        (n.rows, n.cols)
    }

    pub fn value(&self, v: Var) -> Vec<T> {
        self.inner.borrow().nodes[v.id].data.clone()
    }

    pub fn value_scalar(&self, v: Var) -> T {
        let inner = self.inner.borrow();
        let n = &inner.nodes[v.id];
        debug_assert_eq!(n.data.len(), 1);
        n.data[0]
    }

    pub fn grad(&self, v: Var) -> Option<Vec<T>> {
        self.inner.borrow().nodes[v.id].grad.clone()
    }

    fn meta(&self, v: Var) -> (usize, usize, bool) {
        let inner = self.inner.borrow();
        let n = &inner.nodes[v.id];
        (n.rows, n.cols, n.needs_grad)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> DiffResult<(usize, usize, bool)> {
        let (ar, ac, ag) = self.meta(a);
        let (br, bc, bg) = self.meta(b);
        if ar != br || ac != bc {
            return Err(DiffError::Shape {
                op,
                detail: format!("{ar}x{ac} vs {br}x{bc}"),
            });
        }
        Ok((ar, ac, ag || bg))
    }

    fn unary<F>(&self, a: Var, op: Op<T>, f: F) -> Var
    where
        F: Fn(T) -> T,
    {
        let (rows, cols, g) = self.meta(a);
        let data = {
            let inner = self.inner.borrow();
            inner.nodes[a.id].data.iter().map(|&x| f(x)).collect()
        };
        self.push(rows, cols, data, g, op)
    }

    // -- elementwise ---------------------------------------------------------

    pub fn add(&self, a: Var, b: Var) -> DiffResult<Var> {
        let (r, c, g) = self.same_shape("add", a, b)?;
        let data = {
            let inner = self.inner.borrow();
            inner.nodes[a.id]
                .data
                .iter()
                .zip(&inner.nodes[b.id].data)
                .map(|(&x, &y)| x + y)
                .collect()
        };
        Ok(self.push(r, c, data, g, Op::Add(a.id, b.id)))
    }

    pub fn sub(&self, a: Var, b: Var) -> DiffResult<Var> {
        let (r, c, g) = self.same_shape("sub", a, b)?;
        let data = {
            let inner = self.inner.borrow();
            inner.nodes[a.id]
                .data
                .iter()
                .zip(&inner.nodes[b.id].data)
                .map(|(&x, &y)| x - y)
                .collect()
        };
        Ok(self.push(r, c, data, g, Op::Sub(a.id, b.id)))
    }

    pub fn mul(&self, a: Var, b: Var) -> DiffResult<Var> {
        let (r, c, g) = self.same_shape("mul", a, b)?;
        let data = {
            let inner = self.inner.borrow();
            inner.nodes[a.id]
                .data
                .iter()
                .zip(&inner.nodes[b.id].data)
                .map(|(&x, &y)| x * y)
                .collect()
        };
        Ok(self.push(r, c, data, g, Op::Mul(a.id, b.id)))
    }

    pub fn div(&self, a: Var, b: Var) -> DiffResult<Var> {
        let (r, c, g) = self.same_shape("div", a, b)?;
        let data = {
            let inner = self.inner.borrow();
            inner.nodes[a.id]
                .data
                .iter()
                .zip(&inner.nodes[b.id].data)
                .map(|(&x, &y)| x / y)
                .collect()
        };
        Ok(self.push(r, c, data, g, Op::Div(a.id, b.id)))
    }

    pub fn neg(&self, a: Var) -> Var {
        self.unary(a, Op::Neg(a.id), |x| -x)
    }

    pub fn scale(&self, a: Var, s: T) -> Var {
        self.unary(a, Op::Scale(a.id, s), |x| x * s)
    }

    pub fn add_scalar(&self, a: Var, s: T) -> Var {
        self.unary(a, Op::AddScalar(a.id, s), |x| x + s)
    }

    pub fn exp(&self, a: Var) -> Var {
        self.unary(a, Op::Exp(a.id), |x| x.exp())
    }

    pub fn log(&self, a: Var) -> Var {
        self.unary(a, Op::Log(a.id), |x| x.ln())
    }

    pub fn silu(&self, a: Var) -> Var {
        self.unary(a, Op::Silu(a.id), |x| x * sigmoid_scalar(x))
    }

    pub fn sigmoid(&self, a: Var) -> Var {
        self.unary(a, Op::Sigmoid(a.id), sigmoid_scalar)
    }

    pub fn pow_scalar(&self, a: Var, p: T) -> Var {
        self.unary(a, Op::PowScalar(a.id, p), |x| x.powf(p))
    }

    pub fn clamp(&self, a: Var, lo: T, hi: T) -> Var {
        self.unary(a, Op::Clamp(a.id, lo, hi), |x| x.max(lo).min(hi))
    }

    pub fn relu(&self, a: Var) -> Var {
        self.clamp(a, T::zero(), T::infinity())
    }

    /// Element-wise Huber: x²/2 for |x| ≤ δ, δ(|x| - δ/2) beyond.
    pub fn huber(&self, a: Var, delta: T) -> Var {
        let half = T::from_f64_c(0.5);
        self.unary(a, Op::Huber { x: a.id, delta }, |x| {
            if x.abs() <= delta {
                half * x * x
            } else {
                delta * (x.abs() - half * delta)
            }
        })
    }

    // -- softmax family ------------------------------------------------------

    fn rowwise_softmax(data: &[T], rows: usize, cols: usize, log_mode: bool) -> Vec<T> {
        let mut out = vec![T::zero(); rows * cols];
        for r in 0..rows {
            let row = &data[r * cols..(r + 1) * cols];
            let mut mx = T::neg_infinity();
            for &x in row {
                if x > mx {
                    mx = x;
                }
            }
            let mut z = T::zero();
            for &x in row {
                z = z + (x - mx).exp();
            }
            let orow = &mut out[r * cols..(r + 1) * cols];
            if log_mode {
                let lz = z.ln();
                for (o, &x) in orow.iter_mut().zip(row) {
                    *o = x - mx - lz;
                }
            } else {
                for (o, &x) in orow.iter_mut().zip(row) {
                    *o = (x - mx).exp() / z;
                }
            }
        }
        out
    }

    /// Row-wise softmax.
    pub fn softmax_rows(&self, a: Var) -> DiffResult<Var> {
        let (rows, cols, g) = self.meta(a);
        if cols == 0 {
            return Err(DiffError::EmptyAxis { op: "softmax" });
        }
        let data = {
            let inner = self.inner.borrow();
            Self::rowwise_softmax(&inner.nodes[a.id].data, rows, cols, false)
        };
        Ok(self.push(rows, cols, data, g, Op::Softmax(a.id)))
    }

    /// Row-wise log-softmax.
    pub fn log_softmax_rows(&self, a: Var) -> DiffResult<Var> {
        let (rows, cols, g) = self.meta(a);
        if cols == 0 {
            return Err(DiffError::EmptyAxis { op: "log_softmax" });
        }
        let data = {
            let inner = self.inner.borrow();
            Self::rowwise_softmax(&inner.nodes[a.id].data, rows, cols, true)
        };
        Ok(self.push(rows, cols, data, g, Op::LogSoftmax(a.id)))
    }

    // -- linear algebra ------------------------------------------------------

    pub fn matmul(&self, a: Var, b: Var) -> DiffResult<Var> {
        let (m, k, ag) = self.meta(a);
        let (k2, n, bg) = self.meta(b);
        if k != k2 {
            return Err(DiffError::Shape {
                op: "matmul",
                detail: format!("{m}x{k} · {k2}x{n}"),
            });
        }
        let mut data = vec![T::zero(); m * n];
        {
            let inner = self.inner.borrow();
            matmul_nn(&inner.nodes[a.id].data, &inner.nodes[b.id].data, m, k, n, &mut data);
        }
        Ok(self.push(m, n, data, ag || bg, Op::Matmul(a.id, b.id)))
    }

    /// a · bᵀ with b stored as (n×k).
    pub fn matmul_transb(&self, a: Var, b: Var) -> DiffResult<Var> {
        let (m, k, ag) = self.meta(a);
        let (n, k2, bg) = self.meta(b);
        if k != k2 {
            return Err(DiffError::Shape {
                op: "matmul_transb",
                detail: format!("{m}x{k} · ({n}x{k2})ᵀ"),
            });
        }
        let mut data = vec![T::zero(); m * n];
        {
            let inner = self.inner.borrow();
            matmul_nt(&inner.nodes[a.id].data, &inner.nodes[b.id].data, m, k, n, &mut data);
        }
        Ok(self.push(m, n, data, ag || bg, Op::MatmulTransB(a.id, b.id)))
    }

    /// Row-wise affine map: x (n×in) ↦ x·wᵀ + b with w (out×in), b (1×out).
    pub fn affine(&self, x: Var, w: Var, b: Var) -> DiffResult<Var> {
        let (n, din, xg) = self.meta(x);
        let (dout, din2, wg) = self.meta(w);
        let (br, bc, bgr) = self.meta(b);
        if din != din2 || br != 1 || bc != dout {
            return Err(DiffError::Shape {
                op: "affine",
                detail: format!("x {n}x{din}, w {dout}x{din2}, b {br}x{bc}"),
            });
        }
        let mut data = vec![T::zero(); n * dout];
        {
            let inner = self.inner.borrow();
            matmul_nt(&inner.nodes[x.id].data, &inner.nodes[w.id].data, n, din, dout, &mut data);
            let bv = &inner.nodes[b.id].data;
            for r in 0..n {
                for (o, &bb) in data[r * dout..(r + 1) * dout].iter_mut().zip(bv.iter()) {
                    *o = *o + bb;
                }
            }
        }
        Ok(self.push(
            n,
            dout,
            data,
            xg || wg || bgr,
            Op::Affine {
                x: x.id,
                w: w.id,
                b: b.id,
            },
        ))
    }

    // -- structure ops -------------------------------------------------------

    pub fn concat(&self, parts: &[Var], axis: usize) -> DiffResult<Var> {
        if parts.is_empty() {
            return Err(DiffError::Shape {
                op: "concat",
                detail: "no parts".into(),
            });
        }
        let metas: Vec<_> = parts.iter().map(|&p| self.meta(p)).collect();
        let needs = metas.iter().any(|m| m.2);
        let (rows, cols, data) = {
            let inner = self.inner.borrow();
            if axis == 1 {
                let rows = metas[0].0;
                if metas.iter().any(|m| m.0 != rows) {
                    return Err(DiffError::Shape {
                        op: "concat",
                        detail: "row counts differ".into(),
                    });
                }
                let cols: usize = metas.iter().map(|m| m.1).sum();
                let mut data = vec![T::zero(); rows * cols];
                for r in 0..rows {
                    let mut off = 0;
                    for (&p, m) in parts.iter().zip(&metas) {
                        let src = &inner.nodes[p.id].data[r * m.1..(r + 1) * m.1];
                        data[r * cols + off..r * cols + off + m.1].copy_from_slice(src);
                        off += m.1;
                    }
                }
                (rows, cols, data)
            } else {
                let cols = metas[0].1;
                if metas.iter().any(|m| m.1 != cols) {
                    return Err(DiffError::Shape {
                        op: "concat",
                        detail: "column counts differ".into(),
                    });
                }
                let rows: usize = metas.iter().map(|m| m.0).sum();
                let mut data = Vec::with_capacity(rows * cols);
                for &p in parts {
                    data.extend_from_slice(&inner.nodes[p.id].data);
                }
                (rows, cols, data)
            }
        };
        Ok(self.push(
            rows,
            cols,
            data,
            needs,
            Op::Concat {
                parts: parts.iter().map(|p| p.id).collect(),
                axis,
            },
        ))
    }

    pub fn slice_cols(&self, x: Var, start: usize, len: usize) -> DiffResult<Var> {
        let (rows, cols, g) = self.meta(x);
        if start + len > cols {
            return Err(DiffError::Index {
                op: "slice_cols",
                detail: format!("cols {start}..{} of {cols}", start + len),
            });
        }
        let data = {
            let inner = self.inner.borrow();
            let src = &inner.nodes[x.id].data;
            let mut out = Vec::with_capacity(rows * len);
            for r in 0..rows {
                out.extend_from_slice(&src[r * cols + start..r * cols + start + len]);
            }
            out
        };
        Ok(self.push(rows, len, data, g, Op::SliceCols { x: x.id, start, len }))
    }

    pub fn gather_rows(&self, x: Var, idx: &[usize]) -> DiffResult<Var> {
        let (rows, cols, g) = self.meta(x);
        if let Some(&bad) = idx.iter().find(|&&i| i >= rows) {
            return Err(DiffError::Index {
                op: "gather_rows",
                detail: format!("row {bad} of {rows}"),
            });
        }
        let data = {
            let inner = self.inner.borrow();
            let src = &inner.nodes[x.id].data;
            let mut out = Vec::with_capacity(idx.len() * cols);
            for &i in idx {
                out.extend_from_slice(&src[i * cols..(i + 1) * cols]);
            }
            out
        };
        Ok(self.push(
            idx.len(),
            cols,
            data,
            g,
            Op::GatherRows {
                x: x.id,
                idx: idx.to_vec(),
            },
        ))
    }

    /// Pick individual elements as a column vector.
    pub fn gather_elems(&self, x: Var, idx: &[(usize, usize)]) -> DiffResult<Var> {
        let (rows, cols, g) = self.meta(x);
        if let Some(&(r, c)) = idx.iter().find(|&&(r, c)| r >= rows || c >= cols) {
            return Err(DiffError::Index {
                op: "gather_elems",
                detail: format!("({r},{c}) of {rows}x{cols}"),
            });
        }
        let data = {
            let inner = self.inner.borrow();
            let src = &inner.nodes[x.id].data;
            idx.iter().map(|&(r, c)| src[r * cols + c]).collect()
        };
        Ok(self.push(
            idx.len(),
            1,
            data,
            g,
            Op::GatherElems {
                x: x.id,
                idx: idx.to_vec(),
            },
        ))
    }

    /// out[idx[e]] += x[e], accumulated in index order.
    pub fn scatter_add_rows(&self, x: Var, idx: &[usize], out_rows: usize) -> DiffResult<Var> {
        let (rows, cols, g) = self.meta(x);
        if rows != idx.len() {
            return Err(DiffError::Shape {
                op: "scatter_add_rows",
                detail: format!("{rows} rows vs {} indices", idx.len()),
            });
        }
        if let Some(&bad) = idx.iter().find(|&&i| i >= out_rows) {
            return Err(DiffError::Index {
                op: "scatter_add_rows",
                detail: format!("row {bad} of {out_rows}"),
            });
        }
        let data = {
            let inner = self.inner.borrow();
            let src = &inner.nodes[x.id].data;
            let mut out = vec![T::zero(); out_rows * cols];
            for (e, &i) in idx.iter().enumerate() {
                let dst = &mut out[i * cols..(i + 1) * cols];
                let s = &src[e * cols..(e + 1) * cols];
                for (d, &v) in dst.iter_mut().zip(s) {
                    *d = *d + v;
                }
            }
            out
        };
        Ok(self.push(
            out_rows,
            cols,
            data,
            g,
            Op::ScatterAddRows {
                x: x.id,
                idx: idx.to_vec(),
            },
        ))
    }

    /// Mean over consecutive groups of `group` rows.
    pub fn group_mean_rows(&self, x: Var, group: usize) -> DiffResult<Var> {
        let (rows, cols, g) = self.meta(x);
        if group == 0 || rows % group != 0 {
            return Err(DiffError::Shape {
                op: "group_mean_rows",
                detail: format!("{rows} rows not divisible into groups of {group}"),
            });
        }
        let out_rows = rows / group;
        let inv = T::one() / T::from_usize(group).unwrap();
        let data = {
            let inner = self.inner.borrow();
            let src = &inner.nodes[x.id].data;
            let mut out = vec![T::zero(); out_rows * cols];
            for r in 0..rows {
                let o = r / group;
                let dst = &mut out[o * cols..(o + 1) * cols];
                let s = &src[r * cols..(r + 1) * cols];
                for (d, &v) in dst.iter_mut().zip(s) {
                    *d = *d + v * inv;
                }
            }
            out
        };
        Ok(self.push(out_rows, cols, data, g, Op::GroupMeanRows { x: x.id, group }))
    }

    pub fn sum_all(&self, a: Var) -> Var {
        let (_, _, g) = self.meta(a);
        let s = {
            let inner = self.inner.borrow();
            inner.nodes[a.id].data.iter().copied().fold(T::zero(), |x, y| x + y)
        };
        self.push(1, 1, vec![s], g, Op::SumAll(a.id))
    }

    pub fn mean_all(&self, a: Var) -> DiffResult<Var> {
        let (rows, cols, g) = self.meta(a);
        if rows * cols == 0 {
            return Err(DiffError::EmptyAxis { op: "mean_all" });
        }
        let s = {
            let inner = self.inner.borrow();
            inner.nodes[a.id].data.iter().copied().fold(T::zero(), |x, y| x + y)
        };
        let m = s / T::from_usize(rows * cols).unwrap();
        Ok(self.push(1, 1, vec![m], g, Op::MeanAll(a.id)))
    }

    /// Per-row Euclidean norm: (n×d) → (n×1).
    pub fn row_norm(&self, a: Var) -> Var {
        let (rows, cols, g) = self.meta(a);
        let data = {
            let inner = self.inner.borrow();
            let src = &inner.nodes[a.id].data;
            (0..rows)
                .map(|r| {
                    src[r * cols..(r + 1) * cols]
                        .iter()
                        .map(|&x| x * x)
                        .fold(T::zero(), |x, y| x + y)
                        .sqrt()
                })
                .collect()
        };
        self.push(rows, 1, data, g, Op::RowNorm(a.id))
    }

    /// Per-row outer product of a (n×3) with itself, flattened: (n×9).
    pub fn row_outer3(&self, a: Var) -> DiffResult<Var> {
        let (rows, cols, g) = self.meta(a);
        if cols != 3 {
            return Err(DiffError::Shape {
                op: "row_outer3",
                detail: format!("expected 3 columns, got {cols}"),
            });
        }
        let data = {
            let inner = self.inner.borrow();
            let src = &inner.nodes[a.id].data;
            let mut out = Vec::with_capacity(rows * 9);
            for r in 0..rows {
                let v = &src[r * 3..(r + 1) * 3];
                for i in 0..3 {
                    for j in 0..3 {
                        out.push(v[i] * v[j]);
                    }
                }
            }
            out
        };
        Ok(self.push(rows, 9, data, g, Op::RowOuter(a.id)))
    }

    /// Scale each row of x (n×d) by the matching entry of s (n×1).
    pub fn mul_col_broadcast(&self, x: Var, s: Var) -> DiffResult<Var> {
        let (rows, cols, xg) = self.meta(x);
        let (sr, sc, sg) = self.meta(s);
        if sr != rows || sc != 1 {
            return Err(DiffError::Shape {
                op: "mul_col_broadcast",
                detail: format!("x {rows}x{cols}, s {sr}x{sc}"),
            });
        }
        let data = {
            let inner = self.inner.borrow();
            let xs = &inner.nodes[x.id].data;
            let ss = &inner.nodes[s.id].data;
            let mut out = Vec::with_capacity(rows * cols);
            for r in 0..rows {
                let f = ss[r];
                out.extend(xs[r * cols..(r + 1) * cols].iter().map(|&v| v * f));
            }
            out
        };
        Ok(self.push(rows, cols, data, xg || sg, Op::MulColBroadcast { x: x.id, s: s.id }))
    }

    /// Apply a constant per-row 3×3 matrix (row-major) to each row of a
    /// (n×3) tensor: out_r = M_r · x_r.
    pub fn row_rotate(&self, x: Var, mats: &[[T; 9]]) -> DiffResult<Var> {
        let (rows, cols, g) = self.meta(x);
        if cols != 3 || mats.len() != rows {
            return Err(DiffError::Shape {
                op: "row_rotate",
                detail: format!("x {rows}x{cols}, {} matrices", mats.len()),
            });
        }
        let data = {
            let inner = self.inner.borrow();
            let src = &inner.nodes[x.id].data;
            let mut out = Vec::with_capacity(rows * 3);
            for (r, m) in mats.iter().enumerate() {
                let v = &src[r * 3..(r + 1) * 3];
                for k in 0..3 {
                    out.push(m[3 * k] * v[0] + m[3 * k + 1] * v[1] + m[3 * k + 2] * v[2]);
                }
            }
            out
        };
        Ok(self.push(
            rows,
            3,
            data,
            g,
            Op::RowRotate {
                x: x.id,
                mats: mats.to_vec(),
            },
        ))
    }

    /// Inverted dropout with keep-probability 1-p; identity when !train.
    pub fn dropout(&self, x: Var, p: f64, train: bool) -> DiffResult<Var> {
        if !train || p == 0.0 {
            return Ok(x);
        }
        if !(0.0..1.0).contains(&p) {
            return Err(DiffError::Shape {
                op: "dropout",
                detail: format!("rate {p} outside [0, 1)"),
            });
        }
        let (rows, cols, g) = self.meta(x);
        let keep_scale = T::from_f64_c(1.0 / (1.0 - p));
        let mask: Vec<T> = {
            let mut inner = self.inner.borrow_mut();
            (0..rows * cols)
                .map(|_| {
                    if inner.rng.random::<f64>() < p {
                        T::zero()
                    } else {
                        keep_scale
                    }
                })
                .collect()
        };
        let data = {
            let inner = self.inner.borrow();
            inner.nodes[x.id]
                .data
                .iter()
                .zip(&mask)
                .map(|(&v, &m)| v * m)
                .collect()
        };
        Ok(self.push(rows, cols, data, g, Op::Dropout { x: x.id, mask }))
    }

    /// Gaussian radial basis expansion of a column vector: (n×1) → (n×M).
    pub fn rbf_expand(&self, x: Var, centers: &[T], width: T) -> DiffResult<Var> {
        let (rows, cols, g) = self.meta(x);
        if cols != 1 {
            return Err(DiffError::Shape {
                op: "rbf_expand",
                detail: format!("expected column vector, got {rows}x{cols}"),
            });
        }
        let m = centers.len();
        let two = T::from_f64_c(2.0);
        let denom = two * width * width;
        let data = {
            let inner = self.inner.borrow();
            let src = &inner.nodes[x.id].data;
            let mut out = Vec::with_capacity(rows * m);
            for &d in src {
                for &mu in centers {
                    let r = d - mu;
                    out.push((-(r * r) / denom).exp());
                }
            }
            out
        };
        Ok(self.push(
            rows,
            m,
            data,
            g,
            Op::RbfExpand {
                x: x.id,
                centers: centers.to_vec(),
                width,
            },
        ))
    }

    /// Reinterpret the buffer with a new shape of identical length.
    pub fn reshape(&self, x: Var, rows: usize, cols: usize) -> DiffResult<Var> {
        let (r, c, g) = self.meta(x);
        if r * c != rows * cols {
            return Err(DiffError::Shape {
                op: "reshape",
                detail: format!("{r}x{c} -> {rows}x{cols}"),
            });
        }
        let data = self.value(x);
        Ok(self.push(rows, cols, data, g, Op::Reshape(x.id)))
    }

    /// Check that a tensor is finite, naming `what` in the error.
    pub fn ensure_finite(&self, v: Var, what: &str) -> DiffResult<()> {
        let inner = self.inner.borrow();
        if inner.nodes[v.id].data.iter().any(|x| !x.is_finite()) {
            return Err(DiffError::NonFinite(what.to_string()));
        }
        Ok(())
    }

    // -- reverse pass --------------------------------------------------------

    /// Run reverse-mode accumulation from a scalar loss. Gradients land on
    /// leaf nodes (fetch with [`Tape::grad`]); repeated calls accumulate.
    pub fn backward(&self, loss: Var) -> DiffResult<()> {
        let mut inner = self.inner.borrow_mut();
        let nodes = &mut inner.nodes;
        let n = nodes.len();
        {
            let ln = &nodes[loss.id];
            if ln.rows * ln.cols != 1 {
                return Err(DiffError::Shape {
                    op: "backward",
                    detail: format!("loss must be scalar, got {}x{}", ln.rows, ln.cols),
                });
            }
        }
        let mut grads: Vec<Vec<T>> = vec![Vec::new(); n];
        grads[loss.id] = vec![T::one()];

        for id in (0..n).rev() {
            if grads[id].is_empty() || !nodes[id].needs_grad {
                grads[id] = Vec::new();
                continue;
            }
            let g = std::mem::take(&mut grads[id]);
            let op = nodes[id].op.clone();
            macro_rules! acc {
                ($pid:expr, $len:expr, $f:expr) => {{
                    let pid = $pid;
                    if nodes[pid].needs_grad {
                        if grads[pid].is_empty() {
                            grads[pid] = vec![T::zero(); $len];
                        }
                        #[allow(clippy::redundant_closure_call)]
                        ($f)(&mut grads[pid]);
                    }
                }};
            }
            let plen = |pid: usize, nodes: &Vec<Node<T>>| nodes[pid].rows * nodes[pid].cols;
            match op {
                Op::Leaf => {
                    let entry = nodes[id].grad.get_or_insert_with(|| vec![T::zero(); g.len()]);
                    for (d, &v) in entry.iter_mut().zip(&g) {
                        *d = *d + v;
                    }
                }
                Op::Add(a, b) => {
                    acc!(a, g.len(), |dst: &mut Vec<T>| {
                        for (d, &v) in dst.iter_mut().zip(&g) {
                            *d = *d + v;
                        }
                    });
                    acc!(b, g.len(), |dst: &mut Vec<T>| {
                        for (d, &v) in dst.iter_mut().zip(&g) {
                            *d = *d + v;
                        }
                    });
                }
                Op::Sub(a, b) => {
                    acc!(a, g.len(), |dst: &mut Vec<T>| {
                        for (d, &v) in dst.iter_mut().zip(&g) {
                            *d = *d + v;
                        }
                    });
                    acc!(b, g.len(), |dst: &mut Vec<T>| {
                        for (d, &v) in dst.iter_mut().zip(&g) {
                            *d = *d - v;
                        }
                    });
                }
                Op::Mul(a, b) => {
                    let av = nodes[a].data.clone();
                    let bv = nodes[b].data.clone();
                    acc!(a, g.len(), |dst: &mut Vec<T>| {
                        for ((d, &v), &y) in dst.iter_mut().zip(&g).zip(&bv) {
                            *d = *d + v * y;
                        }
                    });
                    acc!(b, g.len(), |dst: &mut Vec<T>| {
                        for ((d, &v), &x) in dst.iter_mut().zip(&g).zip(&av) {
                            *d = *d + v * x;
                        }
                    });
                }
                Op::Div(a, b) => {
                    let av = nodes[a].data.clone();
                    let bv = nodes[b].data.clone();
                    acc!(a, g.len(), |dst: &mut Vec<T>| {
                        for ((d, &v), &y) in dst.iter_mut().zip(&g).zip(&bv) {
                            *d = *d + v / y;
                        }
                    });
                    acc!(b, g.len(), |dst: &mut Vec<T>| {
                        for (i, d) in dst.iter_mut().enumerate() {
                            *d = *d - g[i] * av[i] / (bv[i] * bv[i]);
                        }
                    });
                }
                Op::Neg(a) => {
                    acc!(a, g.len(), |dst: &mut Vec<T>| {
                        for (d, &v) in dst.iter_mut().zip(&g) {
                            *d = *d - v;
                        }
                    });
                }
                Op::Scale(a, s) => {
                    acc!(a, g.len(), |dst: &mut Vec<T>| {
                        for (d, &v) in dst.iter_mut().zip(&g) {
                            *d = *d + v * s;
                        }
                    });
                }
                Op::AddScalar(a, _) => {
                    acc!(a, g.len(), |dst: &mut Vec<T>| {
                        for (d, &v) in dst.iter_mut().zip(&g) {
                            *d = *d + v;
                        }
                    });
                }
                Op::Exp(a) => {
                    let y = nodes[id].data.clone();
                    acc!(a, g.len(), |dst: &mut Vec<T>| {
                        for ((d, &v), &yy) in dst.iter_mut().zip(&g).zip(&y) {
                            *d = *d + v * yy;
                        }
                    });
                }
                Op::Log(a) => {
                    let x = nodes[a].data.clone();
                    acc!(a, g.len(), |dst: &mut Vec<T>| {
                        for ((d, &v), &xx) in dst.iter_mut().zip(&g).zip(&x) {
                            *d = *d + v / xx;
                        }
                    });
                }
                Op::Silu(a) => {
                    let x = nodes[a].data.clone();
                    acc!(a, g.len(), |dst: &mut Vec<T>| {
                        for ((d, &v), &xx) in dst.iter_mut().zip(&g).zip(&x) {
                            let s = sigmoid_scalar(xx);
                            *d = *d + v * (s * (T::one() + xx * (T::one() - s)));
                        }
                    });
                }
                Op::Sigmoid(a) => {
                    let y = nodes[id].data.clone();
                    acc!(a, g.len(), |dst: &mut Vec<T>| {
                        for ((d, &v), &yy) in dst.iter_mut().zip(&g).zip(&y) {
                            *d = *d + v * yy * (T::one() - yy);
                        }
                    });
                }
                Op::PowScalar(a, p) => {
                    let x = nodes[a].data.clone();
                    acc!(a, g.len(), |dst: &mut Vec<T>| {
                        for ((d, &v), &xx) in dst.iter_mut().zip(&g).zip(&x) {
                            if p == T::zero() {
                                continue;
                            }
                            let der = p * xx.powf(p - T::one());
                            if der.is_finite() {
                                *d = *d + v * der;
                            }
                        }
                    });
                }
                Op::Clamp(a, lo, hi) => {
                    let x = nodes[a].data.clone();
                    acc!(a, g.len(), |dst: &mut Vec<T>| {
                        for ((d, &v), &xx) in dst.iter_mut().zip(&g).zip(&x) {
                            if xx >= lo && xx <= hi {
                                *d = *d + v;
                            }
                        }
                    });
                }
                Op::Huber { x, delta } => {
                    let xv = nodes[x].data.clone();
                    acc!(x, g.len(), |dst: &mut Vec<T>| {
                        for ((d, &v), &xx) in dst.iter_mut().zip(&g).zip(&xv) {
                            let der = if xx.abs() <= delta {
                                xx
                            } else if xx > T::zero() {
                                delta
                            } else {
                                -delta
                            };
                            *d = *d + v * der;
                        }
                    });
                }
                Op::Softmax(a) => {
                    let y = nodes[id].data.clone();
                    let (rows, cols) = (nodes[id].rows, nodes[id].cols);
                    acc!(a, rows * cols, |dst: &mut Vec<T>| {
                        for r in 0..rows {
                            let yr = &y[r * cols..(r + 1) * cols];
                            let gr = &g[r * cols..(r + 1) * cols];
                            let dot = yr
                                .iter()
                                .zip(gr)
                                .map(|(&yy, &gg)| yy * gg)
                                .fold(T::zero(), |p, q| p + q);
                            let dr = &mut dst[r * cols..(r + 1) * cols];
                            for ((d, &yy), &gg) in dr.iter_mut().zip(yr).zip(gr) {
                                *d = *d + yy * (gg - dot);
                            }
                        }
                    });
                }
                Op::LogSoftmax(a) => {
                    let y = nodes[id].data.clone();
                    let (rows, cols) = (nodes[id].rows, nodes[id].cols);
                    acc!(a, rows * cols, |dst: &mut Vec<T>| {
                        for r in 0..rows {
                            let yr = &y[r * cols..(r + 1) * cols];
                            let gr = &g[r * cols..(r + 1) * cols];
                            let gsum = gr.iter().copied().fold(T::zero(), |p, q| p + q);
                            let dr = &mut dst[r * cols..(r + 1) * cols];
                            for ((d, &yy), &gg) in dr.iter_mut().zip(yr).zip(gr) {
                                *d = *d + gg - yy.exp() * gsum;
                            }
                        }
                    });
                }
                Op::Matmul(a, b) => {
                    let (m, k) = (nodes[a].rows, nodes[a].cols);
                    let nn = nodes[b].cols;
                    let av = nodes[a].data.clone();
                    let bv = nodes[b].data.clone();
                    acc!(a, m * k, |dst: &mut Vec<T>| {
                        matmul_nt(&g, &bv, m, nn, k, dst);
                    });
                    acc!(b, k * nn, |dst: &mut Vec<T>| {
                        matmul_tn(&av, &g, m, k, nn, dst);
                    });
                }
                Op::MatmulTransB(a, b) => {
                    let (m, k) = (nodes[a].rows, nodes[a].cols);
                    let nn = nodes[b].rows;
                    let av = nodes[a].data.clone();
                    let bv = nodes[b].data.clone();
                    acc!(a, m * k, |dst: &mut Vec<T>| {
                        matmul_nn(&g, &bv, m, nn, k, dst);
                    });
                    acc!(b, nn * k, |dst: &mut Vec<T>| {
                        matmul_tn(&g, &av, m, nn, k, dst);
                    });
                }
                Op::Affine { x, w, b } => {
                    let (n_init, din) = (nodes[x].rows, nodes[x].cols);
                    let dout = nodes[w].rows;
                    let xv = nodes[x].data.clone();
                    let wv = nodes[w].data.clone();
                    acc!(x, n_init * din, |dst: &mut Vec<T>| {
                        matmul_nn(&g, &wv, n_init, dout, din, dst);
                    });
                    acc!(w, dout * din, |dst: &mut Vec<T>| {
                        matmul_tn(&g, &xv, n_init, dout, din, dst);
                    });
                    acc!(b, dout, |dst: &mut Vec<T>| {
                        for r in 0..n_init {
                            for (d, &v) in dst.iter_mut().zip(&g[r * dout..(r + 1) * dout]) {
                                *d = *d + v;
                            }
                        }
                    });
                }
                Op::Concat { parts, axis } => {
                    if axis == 1 {
                        let rows = nodes[id].rows;
                        let cols = nodes[id].cols;
                        let mut off = 0;
                        for pid in parts {
                            let pc = nodes[pid].cols;
                            acc!(pid, rows * pc, |dst: &mut Vec<T>| {
                                for r in 0..rows {
                                    let src = &g[r * cols + off..r * cols + off + pc];
                                    for (d, &v) in dst[r * pc..(r + 1) * pc].iter_mut().zip(src) {
                                        *d = *d + v;
                                    }
                                }
                            });
                            off += pc;
                        }
                    } else {
                        let cols = nodes[id].cols;
                        let mut off = 0;
                        for pid in parts {
                            let pr = nodes[pid].rows;
                            acc!(pid, pr * cols, |dst: &mut Vec<T>| {
                                for (d, &v) in dst.iter_mut().zip(&g[off..off + pr * cols]) {
                                    *d = *d + v;
                                }
                            });
                            off += pr * cols;
                        }
                    }
                }
                Op::SliceCols { x, start, len } => {
                    let (rows, cols) = (nodes[x].rows, nodes[x].cols);
                    acc!(x, rows * cols, |dst: &mut Vec<T>| {
                        for r in 0..rows {
                            let src = &g[r * len..(r + 1) * len];
                            for (d, &v) in dst[r * cols + start..r * cols + start + len]
                                .iter_mut()
                                .zip(src)
                            {
                                *d = *d + v;
                            }
                        }
                    });
                }
                Op::GatherRows { x, idx } => {
                    let cols = nodes[x].cols;
                    let total = plen(x, nodes);
                    acc!(x, total, |dst: &mut Vec<T>| {
                        for (e, &i) in idx.iter().enumerate() {
                            let src = &g[e * cols..(e + 1) * cols];
                            for (d, &v) in dst[i * cols..(i + 1) * cols].iter_mut().zip(src) {
                                *d = *d + v;
                            }
                        }
                    });
                }
                Op::GatherElems { x, idx } => {
                    let cols = nodes[x].cols;
                    let total = plen(x, nodes);
                    acc!(x, total, |dst: &mut Vec<T>| {
                        for (e, &(r, c)) in idx.iter().enumerate() {
                            dst[r * cols + c] = dst[r * cols + c] + g[e];
                        }
                    });
                }
                Op::ScatterAddRows { x, idx } => {
                    let cols = nodes[x].cols;
                    let total = plen(x, nodes);
                    acc!(x, total, |dst: &mut Vec<T>| {
                        for (e, &i) in idx.iter().enumerate() {
                            let src = &g[i * cols..(i + 1) * cols];
                            for (d, &v) in dst[e * cols..(e + 1) * cols].iter_mut().zip(src) {
                                *d = *d + v;
                            }
                        }
                    });
                }
                Op::GroupMeanRows { x, group } => {
                    let cols = nodes[x].cols;
                    let rows = nodes[x].rows;
                    let inv = T::one() / T::from_usize(group).unwrap();
                    acc!(x, rows * cols, |dst: &mut Vec<T>| {
                        for r in 0..rows {
                            let o = r / group;
                            let src = &g[o * cols..(o + 1) * cols];
                            for (d, &v) in dst[r * cols..(r + 1) * cols].iter_mut().zip(src) {
                                *d = *d + v * inv;
                            }
                        }
                    });
                }
                Op::SumAll(a) => {
                    let total = plen(a, nodes);
                    let gv = g[0];
                    acc!(a, total, |dst: &mut Vec<T>| {
                        for d in dst.iter_mut() {
                            *d = *d + gv;
                        }
                    });
                }
                Op::MeanAll(a) => {
                    let total = plen(a, nodes);
                    let gv = g[0] / T::from_usize(total).unwrap();
                    acc!(a, total, |dst: &mut Vec<T>| {
                        for d in dst.iter_mut() {
                            *d = *d + gv;
                        }
                    });
                }
                Op::RowNorm(a) => {
                    let (rows, cols) = (nodes[a].rows, nodes[a].cols);
                    let x = nodes[a].data.clone();
                    let y = nodes[id].data.clone();
                    acc!(a, rows * cols, |dst: &mut Vec<T>| {
                        for r in 0..rows {
                            if y[r] == T::zero() {
                                continue;
                            }
                            let f = g[r] / y[r];
                            for (d, &xx) in dst[r * cols..(r + 1) * cols]
                                .iter_mut()
                                .zip(&x[r * cols..(r + 1) * cols])
                            {
                                *d = *d + f * xx;
                            }
                        }
                    });
                }
                Op::RowOuter(a) => {
                    let rows = nodes[a].rows;
                    let x = nodes[a].data.clone();
                    acc!(a, rows * 3, |dst: &mut Vec<T>| {
                        for r in 0..rows {
                            let v = &x[r * 3..(r + 1) * 3];
                            let gr = &g[r * 9..(r + 1) * 9];
                            let dr = &mut dst[r * 3..(r + 1) * 3];
                            for i in 0..3 {
                                let mut s = T::zero();
                                for j in 0..3 {
                                    s = s + (gr[3 * i + j] + gr[3 * j + i]) * v[j];
                                }
                                dr[i] = dr[i] + s;
                            }
                        }
                    });
                }
                Op::MulColBroadcast { x, s } => {
                    let (rows, cols) = (nodes[x].rows, nodes[x].cols);
                    let xv = nodes[x].data.clone();
                    let sv = nodes[s].data.clone();
                    acc!(x, rows * cols, |dst: &mut Vec<T>| {
                        for r in 0..rows {
                            let f = sv[r];
                            for (d, &v) in dst[r * cols..(r + 1) * cols]
                                .iter_mut()
                                .zip(&g[r * cols..(r + 1) * cols])
                            {
                                *d = *d + v * f;
                            }
                        }
                    });
                    acc!(s, rows, |dst: &mut Vec<T>| {
                        for (r, d) in dst.iter_mut().enumerate() {
                            let mut acc_v = T::zero();
                            for ((&v, &xx), _) in g[r * cols..(r + 1) * cols]
                                .iter()
                                .zip(&xv[r * cols..(r + 1) * cols])
                                .zip(0..cols)
                            {
                                acc_v = acc_v + v * xx;
                            }
                            *d = *d + acc_v;
                        }
                    });
                }
                Op::RowRotate { x, mats } => {
                    let rows = nodes[x].rows;
                    acc!(x, rows * 3, |dst: &mut Vec<T>| {
                        // dL/dx_r = M_rᵀ · g_r
                        for (r, m) in mats.iter().enumerate() {
                            let gr = &g[r * 3..(r + 1) * 3];
                            let dr = &mut dst[r * 3..(r + 1) * 3];
                            for c in 0..3 {
                                dr[c] = dr[c] + m[c] * gr[0] + m[3 + c] * gr[1] + m[6 + c] * gr[2];
                            }
                        }
                    });
                }
                Op::Dropout { x, mask } => {
                    acc!(x, g.len(), |dst: &mut Vec<T>| {
                        for ((d, &v), &m) in dst.iter_mut().zip(&g).zip(&mask) {
                            *d = *d + v * m;
                        }
                    });
                }
                Op::RbfExpand { x, centers, width } => {
                    let rows = nodes[x].rows;
                    let m = centers.len();
                    let xv = nodes[x].data.clone();
                    let y = nodes[id].data.clone();
                    let inv_w2 = T::one() / (width * width);
                    acc!(x, rows, |dst: &mut Vec<T>| {
                        for r in 0..rows {
                            let mut s = T::zero();
                            for (j, &mu) in centers.iter().enumerate() {
                                s = s + g[r * m + j] * y[r * m + j] * (mu - xv[r]) * inv_w2;
                            }
                            dst[r] = dst[r] + s;
                        }
                    });
                }
                Op::Reshape(x) => {
                    acc!(x, g.len(), |dst: &mut Vec<T>| {
                        for (d, &v) in dst.iter_mut().zip(&g) {
                            *d = *d + v;
                        }
                    });
                }
            }
        }
        Ok(())
    }
}

fn sigmoid_scalar<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fd_grad<F>(f: F, x: &mut [f64], eps: f64) -> Vec<f64>
    where
        F: Fn(&[f64]) -> f64,
    {
        let mut out = vec![0.0; x.len()];
        for i in 0..x.len() {
            let orig = x[i];
            x[i] = orig + eps;
            let fp = f(x);
            x[i] = orig - eps;
            let fm = f(x);
            x[i] = orig;
            out[i] = (fp - fm) / (2.0 * eps);
        }
        out
    }

    fn rel_err(a: f64, n: f64) -> f64 {
        (a - n).abs() / a.abs().max(n.abs()).max(1e-6)
    }

    #[test]
    fn sigmoid_at_zero() {
        let t = Tape::<f64>::new(0);
        let x = t.leaf(1, 1, vec![0.0], true).unwrap();
        let y = t.sigmoid(x);
        assert_eq!(t.value_scalar(y), 0.5);
        t.backward(y).unwrap();
        assert_eq!(t.grad(x).unwrap()[0], 0.25);
    }

    #[test]
    fn softmax_of_constant_vector() {
        let t = Tape::<f64>::new(0);
        let x = t.leaf(1, 5, vec![1.3; 5], true).unwrap();
        let y = t.softmax_rows(x).unwrap();
        for v in t.value(y) {
            assert!((v - 0.2).abs() < 1e-15);
        }
        let empty = t.leaf(1, 0, vec![], true).unwrap();
        assert!(matches!(
            t.softmax_rows(empty),
            Err(DiffError::EmptyAxis { .. })
        ));
    }

    #[test]
    fn shape_mismatch_is_typed_error() {
        let t = Tape::<f64>::new(0);
        let a = t.leaf(2, 2, vec![1.0; 4], false).unwrap();
        let b = t.leaf(2, 3, vec![1.0; 6], false).unwrap();
        assert!(matches!(t.add(a, b), Err(DiffError::Shape { .. })));
        assert!(matches!(t.matmul(b, b), Err(DiffError::Shape { .. })));
    }

    /// Per-primitive gradient checks against central finite differences.
    #[test]
    fn primitive_gradients_match_finite_differences() {
        type Builder = fn(&Tape<f64>, Var) -> Var;
        let cases: Vec<(&str, Builder)> = vec![
            ("exp", |t, x| t.exp(x)),
            ("log", |t, x| {
                let s = t.add_scalar(x, 3.0); // keep arguments positive
                t.log(s)
            }),
            ("silu", |t, x| t.silu(x)),
            ("sigmoid", |t, x| t.sigmoid(x)),
            ("neg", |t, x| t.neg(x)),
            ("scale", |t, x| t.scale(x, -1.7)),
            ("pow2", |t, x| {
                let s = t.add_scalar(x, 3.0);
                t.pow_scalar(s, 2.0)
            }),
            ("huber", |t, x| t.huber(x, 1.0)),
            ("softmax", |t, x| t.softmax_rows(x).unwrap()),
            ("log_softmax", |t, x| t.log_softmax_rows(x).unwrap()),
            ("row_norm", |t, x| t.row_norm(x)),
            ("row_rotate", |t, x| {
                t.row_rotate(
                    x,
                    &[
                        [0.2, -0.5, 0.1, 0.9, 0.3, -0.2, 0.0, 0.7, 0.4],
                        [1.0, 0.0, 0.0, 0.0, 0.5, -0.5, 0.2, 0.2, 0.2],
                    ],
                )
                .unwrap()
            }),
            ("rbf", |t, x| {
                let col = t.reshape(x, 6, 1).unwrap();
                t.rbf_expand(col, &[0.0, 1.0, 2.5], 0.8).unwrap()
            }),
        ];
        let x0: Vec<f64> = vec![0.31, -1.2, 0.77, 2.1, -0.42, 0.05];
        for (name, build) in cases {
            let run = |vals: &[f64]| -> f64 {
                let t = Tape::<f64>::new(0);
                let x = t.leaf(2, 3, vals.to_vec(), true).unwrap();
                let y = build(&t, x);
                // weighted sum keeps the output scalar but non-uniform
                let w: Vec<f64> = (0..t.shape(y).0 * t.shape(y).1)
                    .map(|i| 0.3 + 0.1 * i as f64)
                    .collect();
                let (r, c) = t.shape(y);
                let wv = t.constant(r, c, w).unwrap();
                let s = t.mul(y, wv).unwrap();
                t.value_scalar(t.sum_all(s))
            };
            let analytic = {
                let t = Tape::<f64>::new(0);
                let x = t.leaf(2, 3, x0.clone(), true).unwrap();
                let y = build(&t, x);
                let (r, c) = t.shape(y);
                let w: Vec<f64> = (0..r * c).map(|i| 0.3 + 0.1 * i as f64).collect();
                let wv = t.constant(r, c, w).unwrap();
                let s = t.mul(y, wv).unwrap();
                let loss = t.sum_all(s);
                t.backward(loss).unwrap();
                t.grad(x).unwrap()
            };
            let mut xm = x0.clone();
            let numeric = fd_grad(run, &mut xm, 1e-6);
            for (i, (&a, &n)) in analytic.iter().zip(&numeric).enumerate() {
                assert!(
                    rel_err(a, n) < 1e-6,
                    "{name}[{i}]: analytic {a} vs numeric {n}"
                );
            }
        }
    }

    #[test]
    fn binary_and_structural_gradients_match_fd() {
        // composite: affine -> gather/scatter -> broadcast -> reductions
        let w0: Vec<f64> = vec![0.2, -0.3, 0.5, 0.11, 0.7, -0.2, 0.05, -0.6];
        let run = |vals: &[f64], want_grad: bool| -> (f64, Option<Vec<f64>>) {
            let t = Tape::<f64>::new(0);
            let w = t.leaf(2, 4, vals.to_vec(), true).unwrap();
            let x = t
                .constant(3, 4, (0..12).map(|i| 0.1 * i as f64 - 0.4).collect())
                .unwrap();
            let b = t.constant(1, 2, vec![0.05, -0.02]).unwrap();
            let h = t.affine(x, w, b).unwrap();
            let gathered = t.gather_rows(h, &[2, 0, 1, 1]).unwrap();
            let s = t
                .constant(4, 1, vec![0.9, -0.2, 0.4, 1.1])
                .unwrap();
            let scaled = t.mul_col_broadcast(gathered, s).unwrap();
            let pooled = t.scatter_add_rows(scaled, &[0, 1, 1, 0], 2).unwrap();
            let normed = t.row_norm(pooled);
            let outer_in = t.concat(&[normed, normed, normed], 1).unwrap();
            let outer = t.row_outer3(outer_in).unwrap();
            let m = t.group_mean_rows(outer, 2).unwrap();
            let loss = t.mean_all(m).unwrap();
            let v = t.value_scalar(loss);
            if want_grad {
                t.backward(loss).unwrap();
                (v, Some(t.grad(w).unwrap()))
            } else {
                (v, None)
            }
        };
        let (_, analytic) = run(&w0, true);
        let analytic = analytic.unwrap();
        let mut xm = w0.clone();
        let numeric = fd_grad(|v| run(v, false).0, &mut xm, 1e-6);
        for (i, (&a, &n)) in analytic.iter().zip(&numeric).enumerate() {
            assert!(rel_err(a, n) < 1e-6, "w[{i}]: {a} vs {n}");
        }
    }

    #[test]
    fn matmul_family_gradients_match_fd() {
        let a0: Vec<f64> = vec![0.3, -0.2, 0.8, 0.1, -0.5, 0.9];
        let run2 = |vals: &[f64], want: bool| -> (f64, Option<Vec<f64>>) {
            let t = Tape::<f64>::new(0);
            let a = t.leaf(2, 3, vals.to_vec(), true).unwrap();
            let b = t
                .constant(3, 2, vec![0.5, -0.1, 0.3, 0.7, -0.4, 0.2])
                .unwrap();
            let c = t.matmul(a, b).unwrap(); // 2x2
            let e = t.constant(4, 2, (0..8).map(|i| 0.2 * i as f64 - 0.7).collect()).unwrap();
            let f = t.matmul_transb(c, e).unwrap(); // 2x4
            let sq = t.mul(f, f).unwrap();
            let loss = t.mean_all(sq).unwrap();
            let v = t.value_scalar(loss);
            if want {
                t.backward(loss).unwrap();
                (v, Some(t.grad(a).unwrap()))
            } else {
                (v, None)
            }
        };
        let (_, analytic) = run2(&a0, true);
        let analytic = analytic.unwrap();
        let mut xm = a0.clone();
        let numeric = fd_grad(|v| run2(v, false).0, &mut xm, 1e-6);
        for (i, (&a, &n)) in analytic.iter().zip(&numeric).enumerate() {
            assert!(rel_err(a, n) < 1e-6, "a[{i}]: {a} vs {n}");
        }
    }

    #[test]
    fn dropout_scales_and_masks() {
        let t = Tape::<f64>::new(7);
        let x = t.leaf(10, 10, vec![1.0; 100], true).unwrap();
        let y = t.dropout(x, 0.4, true).unwrap();
        let vals = t.value(y);
        let kept = vals.iter().filter(|&&v| v != 0.0).count();
        assert!(kept > 30 && kept < 90);
        for &v in &vals {
            assert!(v == 0.0 || (v - 1.0 / 0.6).abs() < 1e-12);
        }
        // eval mode is the identity
        let t2 = Tape::<f64>::new(7);
        let x2 = t2.leaf(2, 2, vec![1.0, 2.0, 3.0, 4.0], false).unwrap();
        let y2 = t2.dropout(x2, 0.4, false).unwrap();
        assert_eq!(x2, y2);
    }

    #[test]
    fn scatter_add_is_deterministic_in_index_order() {
        let t = Tape::<f64>::new(0);
        let x = t
            .leaf(4, 1, vec![1e16, 1.0, -1e16, 1.0], false)
            .unwrap();
        let y = t.scatter_add_rows(x, &[0, 0, 0, 0], 1).unwrap();
        // ((1e16 + 1) + -1e16) + 1 = 1 in f64 (the +1 is absorbed)
        assert_eq!(t.value(y)[0], 1.0);
    }

    #[test]
    fn backward_accumulates_on_leaves_only_when_requested() {
        let t = Tape::<f64>::new(0);
        let a = t.leaf(1, 1, vec![2.0], true).unwrap();
        let b = t.leaf(1, 1, vec![3.0], false).unwrap();
        let y = t.mul(a, b).unwrap();
        t.backward(y).unwrap();
        assert_eq!(t.grad(a).unwrap()[0], 3.0);
        assert!(t.grad(b).is_none());
    }
}
