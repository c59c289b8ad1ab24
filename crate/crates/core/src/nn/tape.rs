//! A minimal reverse-mode differentiation tape over [`Matrix`] values.
//!
//! Every operation appends a node holding its forward value; [`Tape::backward`]
//! walks the nodes in reverse and accumulates adjoints. Parameters are read
//! from a borrowed [`ParamStore`] without copying, so building a tape per
//! control step during rollouts stays cheap.

use super::matrix::{gemm, Matrix};
use super::params::{Gradients, ParamId, ParamStore};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Const,
    Param(ParamId),
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Affine(Var, f64),
    Relu(Var),
    Tanh(Var),
    Sigmoid(Var),
    Elu(Var),
    Abs(Var),
    Softplus(Var),
    Exp(Var),
    Ln(Var),
    Sqrt(Var),
    Recip(Var),
    Square(Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols(Var, usize),
    Reshape(Var),
    Gather(Var, Vec<usize>),
    RowVecMat(Var, Var),
    SumCols(Var),
    SumAll(Var),
}

struct Node {
    // `None` for parameters, whose value lives in the store.
    value: Option<Matrix>,
    op: Op,
}

pub struct Tape<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node>,
    param_vars: Vec<Option<Var>>,
}

/// Adjoints of every node reached from a root.
pub struct Adjoints {
    grads: Vec<Option<Matrix>>,
}

impl Adjoints {
    /// Gradient with respect to `v`, or `None` if the root does not depend on it.
    pub fn get(&self, v: Var) -> Option<&Matrix> {
        self.grads[v.0].as_ref()
    }
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Self {
            params,
            nodes: Vec::with_capacity(256),
            param_vars: vec![None; params.len()],
        }
    }

    pub fn params(&self) -> &'p ParamStore {
        self.params
    }

    pub fn value(&self, v: Var) -> &Matrix {
        let node = &self.nodes[v.0];
        match (&node.value, &node.op) {
            (Some(m), _) => m,
            (None, Op::Param(id)) => self.params.get(*id),
            _ => unreachable!("node without value"),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Matrix, op: Op) -> Var {
        self.nodes.push(Node {
            value: Some(value),
            op,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Const)
    }

    /// The leaf for parameter `id`; repeated calls return the same node.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars[id.index()] {
            return v;
        }
        self.nodes.push(Node {
            value: None,
            op: Op::Param(id),
        });
        let v = Var(self.nodes.len() - 1);
        self.param_vars[id.index()] = Some(v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).matmul(self.value(b));
        self.push(out, Op::MatMul(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).zip_map(self.value(b), |x, y| x + y);
        self.push(out, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).zip_map(self.value(b), |x, y| x - y);
        self.push(out, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).zip_map(self.value(b), |x, y| x * y);
        self.push(out, Op::Mul(a, b))
    }

    /// Adds a `1 x cols` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let (av, rv) = (self.value(a), self.value(row));
        assert_eq!(rv.rows(), 1, "add_row expects a row vector");
        assert_eq!(av.cols(), rv.cols(), "add_row column mismatch");
        let mut out = av.clone();
        for r in 0..out.rows() {
            for (o, b) in out.row_mut(r).iter_mut().zip(rv.as_slice()) {
                *o += b;
            }
        }
        self.push(out, Op::AddRow(a, row))
    }

    /// `scale * a + shift`.
    pub fn affine(&mut self, a: Var, scale: f64, shift: f64) -> Var {
        let out = self.value(a).map(|x| scale * x + shift);
        self.push(out, Op::Affine(a, scale))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        self.affine(a, s, 0.0)
    }

    pub fn one_minus(&mut self, a: Var) -> Var {
        self.affine(a, -1.0, 1.0)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| x.max(0.0));
        self.push(out, Op::Relu(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::tanh);
        self.push(out, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).map(sigmoid);
        self.push(out, Op::Sigmoid(a))
    }

    pub fn elu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| if x > 0.0 { x } else { x.exp_m1() });
        self.push(out, Op::Elu(a))
    }

    pub fn abs(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::abs);
        self.push(out, Op::Abs(a))
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        let out = self.value(a).map(softplus);
        self.push(out, Op::Softplus(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::exp);
        self.push(out, Op::Exp(a))
    }

    pub fn ln(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::ln);
        self.push(out, Op::Ln(a))
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::sqrt);
        self.push(out, Op::Sqrt(a))
    }

    pub fn recip(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::recip);
        self.push(out, Op::Recip(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| x * x);
        self.push(out, Op::Square(a))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let rows = self.value(parts[0]).rows();
        let cols: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut out = Matrix::zeros(rows, cols);
        for r in 0..rows {
            let dst = out.row_mut(r);
            let mut off = 0;
            for &p in parts {
                let pv = self.value(p);
                assert_eq!(pv.rows(), rows, "concat_cols row mismatch");
                dst[off..off + pv.cols()].copy_from_slice(pv.row(r));
                off += pv.cols();
            }
        }
        self.push(out, Op::ConcatCols(parts.to_vec()))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let cols = self.value(parts[0]).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let pv = self.value(p);
            assert_eq!(pv.cols(), cols, "concat_rows column mismatch");
            data.extend_from_slice(pv.as_slice());
            rows += pv.rows();
        }
        self.push(Matrix::from_vec(rows, cols, data), Op::ConcatRows(parts.to_vec()))
    }

    /// Columns `start..start + len`.
    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let av = self.value(a);
        assert!(start + len <= av.cols(), "slice_cols out of range");
        let mut out = Matrix::zeros(av.rows(), len);
        for r in 0..av.rows() {
            out.row_mut(r).copy_from_slice(&av.row(r)[start..start + len]);
        }
        self.push(out, Op::SliceCols(a, start))
    }

    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Var {
        let out = self.value(a).clone().reshaped(rows, cols);
        self.push(out, Op::Reshape(a))
    }

    /// Selects `a[r, index[r]]` for every row, giving a column vector.
    pub fn gather(&mut self, a: Var, index: Vec<usize>) -> Var {
        let av = self.value(a);
        assert_eq!(index.len(), av.rows(), "gather index length mismatch");
        let data = index.iter().enumerate().map(|(r, &c)| av.get(r, c)).collect();
        self.push(Matrix::column_vector(data), Op::Gather(a, index))
    }

    /// Per-row vector-matrix product: `q` is `B x n`, `w` is `B x (n*e)` holding a
    /// row-major `n x e` matrix per row; the result is `B x e`.
    pub fn row_vec_mat(&mut self, q: Var, w: Var) -> Var {
        let (qv, wv) = (self.value(q), self.value(w));
        let (b, n) = qv.shape();
        assert_eq!(wv.rows(), b, "row_vec_mat batch mismatch");
        assert_eq!(wv.cols() % n, 0, "row_vec_mat width mismatch");
        let e = wv.cols() / n;
        let mut out = Matrix::zeros(b, e);
        for r in 0..b {
            let (qr, wr) = (qv.row(r), wv.row(r));
            let dst = out.row_mut(r);
            for i in 0..n {
                let qi = qr[i];
                for (d, &wv) in dst.iter_mut().zip(&wr[i * e..(i + 1) * e]) {
                    *d += qi * wv;
                }
            }
        }
        self.push(out, Op::RowVecMat(q, w))
    }

    pub fn sum_cols(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let data = (0..av.rows()).map(|r| av.row(r).iter().sum()).collect();
        self.push(Matrix::column_vector(data), Op::SumCols(a))
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let s = self.value(a).sum();
        self.push(Matrix::scalar(s), Op::SumAll(a))
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        let n = self.value(a).len() as f64;
        let s = self.sum_all(a);
        self.scale(s, 1.0 / n)
    }

    /// Reverse pass from a `1 x 1` root.
    pub fn backward(&self, root: Var) -> Adjoints {
        assert_eq!(self.value(root).shape(), (1, 1), "backward root must be scalar");
        let mut grads: Vec<Option<Matrix>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Matrix::scalar(1.0));
        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Adjoints { grads }
    }

    /// Parameter gradients of a scalar root, aligned with the store.
    pub fn param_grads(&self, root: Var) -> Gradients {
        let adj = self.backward(root);
        self.collect_param_grads(&adj)
    }

    pub fn collect_param_grads(&self, adj: &Adjoints) -> Gradients {
        let grads = self
            .params
            .ids()
            .map(|id| {
                self.param_vars[id.index()]
                    .and_then(|v| adj.get(v).cloned())
                    .unwrap_or_else(|| {
                        let p = self.params.get(id);
                        Matrix::zeros(p.rows(), p.cols())
                    })
            })
            .collect();
        Gradients::from_vec(grads)
    }

    fn propagate(&self, i: usize, g: &Matrix, grads: &mut [Option<Matrix>]) {
        let out = || self.nodes[i].value.as_ref().expect("op node value");
        match &self.nodes[i].op {
            Op::Const | Op::Param(_) => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let mut ga = Matrix::zeros(av.rows(), av.cols());
                gemm(g, false, bv, true, &mut ga, 0.0);
                accumulate(grads, *a, ga);
                let mut gb = Matrix::zeros(bv.rows(), bv.cols());
                gemm(av, true, g, false, &mut gb, 0.0);
                accumulate(grads, *b, gb);
            }
            Op::Add(a, b) => {
                accumulate(grads, *a, g.clone());
                accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                accumulate(grads, *a, g.clone());
                accumulate(grads, *b, g.map(|x| -x));
            }
            Op::Mul(a, b) => {
                accumulate(grads, *a, g.zip_map(self.value(*b), |x, y| x * y));
                accumulate(grads, *b, g.zip_map(self.value(*a), |x, y| x * y));
            }
            Op::AddRow(a, row) => {
                accumulate(grads, *a, g.clone());
                let mut gr = Matrix::zeros(1, g.cols());
                for r in 0..g.rows() {
                    for (d, s) in gr.as_mut_slice().iter_mut().zip(g.row(r)) {
                        *d += s;
                    }
                }
                accumulate(grads, *row, gr);
            }
            Op::Affine(a, s) => accumulate(grads, *a, g.map(|x| x * s)),
            Op::Relu(a) => {
                let ga = g.zip_map(self.value(*a), |x, v| if v > 0.0 { x } else { 0.0 });
                accumulate(grads, *a, ga);
            }
            Op::Tanh(a) => accumulate(grads, *a, g.zip_map(out(), |x, y| x * (1.0 - y * y))),
            Op::Sigmoid(a) => accumulate(grads, *a, g.zip_map(out(), |x, y| x * y * (1.0 - y))),
            Op::Elu(a) => {
                let av = self.value(*a);
                let mut ga = g.zip_map(out(), |x, y| x * (y + 1.0));
                for (d, (&x, &v)) in ga.as_mut_slice().iter_mut().zip(g.as_slice().iter().zip(av.as_slice())) {
                    if v > 0.0 {
                        *d = x;
                    }
                }
                accumulate(grads, *a, ga);
            }
            Op::Abs(a) => {
                let ga = g.zip_map(self.value(*a), |x, v| {
                    if v > 0.0 {
                        x
                    } else if v < 0.0 {
                        -x
                    } else {
                        0.0
                    }
                });
                accumulate(grads, *a, ga);
            }
            Op::Softplus(a) => accumulate(grads, *a, g.zip_map(self.value(*a), |x, v| x * sigmoid(v))),
            Op::Exp(a) => accumulate(grads, *a, g.zip_map(out(), |x, y| x * y)),
            Op::Ln(a) => accumulate(grads, *a, g.zip_map(self.value(*a), |x, v| x / v)),
            Op::Sqrt(a) => accumulate(grads, *a, g.zip_map(out(), |x, y| x / (2.0 * y))),
            Op::Recip(a) => accumulate(grads, *a, g.zip_map(out(), |x, y| -x * y * y)),
            Op::Square(a) => accumulate(grads, *a, g.zip_map(self.value(*a), |x, v| 2.0 * x * v)),
            Op::ConcatCols(parts) => {
                let mut off = 0;
                for &p in parts {
                    let cols = self.value(p).cols();
                    let mut gp = Matrix::zeros(g.rows(), cols);
                    for r in 0..g.rows() {
                        gp.row_mut(r).copy_from_slice(&g.row(r)[off..off + cols]);
                    }
                    accumulate(grads, p, gp);
                    off += cols;
                }
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for &p in parts {
                    let (rows, cols) = self.value(p).shape();
                    let data = g.as_slice()[off * cols..(off + rows) * cols].to_vec();
                    accumulate(grads, p, Matrix::from_vec(rows, cols, data));
                    off += rows;
                }
            }
            Op::SliceCols(a, start) => {
                let (rows, cols) = self.value(*a).shape();
                let mut ga = Matrix::zeros(rows, cols);
                for r in 0..rows {
                    ga.row_mut(r)[*start..*start + g.cols()].copy_from_slice(g.row(r));
                }
                accumulate(grads, *a, ga);
            }
            Op::Reshape(a) => {
                let (rows, cols) = self.value(*a).shape();
                accumulate(grads, *a, g.clone().reshaped(rows, cols));
            }
            Op::Gather(a, index) => {
                let (rows, cols) = self.value(*a).shape();
                let mut ga = Matrix::zeros(rows, cols);
                for (r, &c) in index.iter().enumerate() {
                    ga.set(r, c, g.get(r, 0));
                }
                accumulate(grads, *a, ga);
            }
            Op::RowVecMat(q, w) => {
                let (qv, wv) = (self.value(*q), self.value(*w));
                let (b, n) = qv.shape();
                let e = wv.cols() / n;
                let mut gq = Matrix::zeros(b, n);
                let mut gw = Matrix::zeros(b, n * e);
                for r in 0..b {
                    let gr = g.row(r);
                    for i in 0..n {
                        let wseg = &wv.row(r)[i * e..(i + 1) * e];
                        let dot: f64 = gr.iter().zip(wseg).map(|(x, y)| x * y).sum();
                        gq.set(r, i, dot);
                        let qi = qv.get(r, i);
                        for (d, &x) in gw.row_mut(r)[i * e..(i + 1) * e].iter_mut().zip(gr) {
                            *d = x * qi;
                        }
                    }
                }
                accumulate(grads, *q, gq);
                accumulate(grads, *w, gw);
            }
            Op::SumCols(a) => {
                let (rows, cols) = self.value(*a).shape();
                let mut ga = Matrix::zeros(rows, cols);
                for r in 0..rows {
                    ga.row_mut(r).fill(g.get(r, 0));
                }
                accumulate(grads, *a, ga);
            }
            Op::SumAll(a) => {
                let (rows, cols) = self.value(*a).shape();
                accumulate(grads, *a, Matrix::filled(rows, cols, g.get(0, 0)));
            }
        }
    }
}

fn accumulate(grads: &mut [Option<Matrix>], v: Var, g: Matrix) {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.max(0.0) + (-x.abs()).exp().ln_1p()
    }
}
