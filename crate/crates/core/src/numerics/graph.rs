//! Reverse-mode automatic differentiation over row-major matrices.
//!
//! A [`Graph`] is a tape: each operation appends a node holding its value
//! and the handles of its inputs, so node indices are already in
//! topological order. Complex quantities are carried as pairs of real
//! nodes ([`CVar`]), which makes every gradient a gradient with respect to
//! real and imaginary components separately.
//!
//! Parameters are read from a borrowed [`ParamStore`]; [`Graph::backward`]
//! returns their gradients without touching the store.

use crate::error::{Error, Result};
use crate::numerics::fft::{dft_rows, half_len, irdft_rows, rdft_rows};
use crate::numerics::params::{Gradients, ParamId, ParamStore};
use crate::numerics::rng::Rng;

/// Handle to a real `[rows x cols]` node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

/// Complex matrix as separate real and imaginary nodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CVar {
    pub re: Var,
    pub im: Var,
}

const LN_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

#[derive(Debug)]
enum Op {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    /// a · bᵀ
    MatMulT(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    Gelu { x: Var, t: Vec<f64> },
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        rstd: Vec<f64>,
    },
    SoftmaxRows(Var),
    /// Row `i` of the output is row `src[i].1` of node `src[i].0`.
    Rows(Vec<(Var, usize)>),
    SliceCols(Var, usize),
    ConcatCols(Vec<Var>),
    MeanRows(Var),
    Sum(Var),
    /// Packed `[2*nf x d]`: real plane then imaginary plane.
    Rdft(Var),
    Irdft(Var, Var),
    /// Packed `[2*n x d]` forward or inverse complex transform.
    Dft { re: Var, im: Var, inverse: bool },
    /// Packed `[2*nf x d]`; `pick[i*d+j]` is the selected filter head.
    MaxPool {
        zr: Var,
        zi: Var,
        kr: Var,
        ki: Var,
        pick: Vec<usize>,
    },
    CrossEntropy {
        logits: Var,
        label: usize,
        probs: Vec<f64>,
    },
}

#[derive(Debug)]
struct Node {
    rows: usize,
    cols: usize,
    value: Option<Vec<f64>>,
    op: Op,
}

/// Computation tape. Borrows the parameter store for its lifetime.
pub struct Graph<'a> {
    store: &'a ParamStore,
    nodes: Vec<Node>,
    param_nodes: Vec<Option<Var>>,
    train: bool,
    rng: Option<Rng>,
    consumed: bool,
}

fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (isize, isize),
    b: &[f64],
    (rsb, csb): (isize, isize),
    c: &mut [f64],
    beta: f64,
) {
    debug_assert!(c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        if beta == 0.0 {
            c[..m * n].iter_mut().for_each(|v| *v = 0.0);
        }
        return;
    }
    // SAFETY: strides describe matrices contained in the given slices.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// `tanh` of the GELU inner argument, via one `exp`.
fn gelu_tanh(x: f64) -> f64 {
    let u = GELU_C * (x + 0.044715 * x * x * x);
    1.0 - 2.0 / ((2.0 * u).exp() + 1.0)
}

fn gelu_grad(x: f64, t: f64) -> f64 {
    let du = GELU_C * (1.0 + 3.0 * 0.044715 * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du
}

fn accum(grads: &mut [Option<Vec<f64>>], v: Var, g: &[f64]) {
    match &mut grads[v.0] {
        Some(acc) => acc.iter_mut().zip(g).for_each(|(a, b)| *a += b),
        slot @ None => *slot = Some(g.to_vec()),
    }
}

fn accum_owned(grads: &mut [Option<Vec<f64>>], v: Var, g: Vec<f64>) {
    match &mut grads[v.0] {
        Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
        slot @ None => *slot = Some(g),
    }
}

impl<'a> Graph<'a> {
    /// Evaluation-mode graph: dropout is the identity.
    pub fn new(store: &'a ParamStore) -> Self {
        Self {
            store,
            nodes: Vec::new(),
            param_nodes: vec![None; store.len()],
            train: false,
            rng: None,
            consumed: false,
        }
    }

    /// Training-mode graph; dropout masks are drawn from `rng`.
    pub fn training(store: &'a ParamStore, rng: Rng) -> Self {
        let mut g = Self::new(store);
        g.train = true;
        g.rng = Some(rng);
        g
    }

    pub fn is_training(&self) -> bool {
        self.train
    }

    pub fn store(&self) -> &ParamStore {
        self.store
    }

    fn push(&mut self, rows: usize, cols: usize, value: Vec<f64>, op: Op) -> Var {
        debug_assert_eq!(value.len(), rows * cols);
        self.nodes.push(Node {
            rows,
            cols,
            value: Some(value),
            op,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        let n = &self.nodes[v.0];
        (n.rows, n.cols)
    }

    pub fn rows(&self, v: Var) -> usize {
        self.nodes[v.0].rows
    }

    pub fn cols(&self, v: Var) -> usize {
        self.nodes[v.0].cols
    }

    pub fn value(&self, v: Var) -> &[f64] {
        let n = &self.nodes[v.0];
        match (&n.op, &n.value) {
            (Op::Param(id), _) => self.store.value(*id),
            (_, Some(val)) => val,
            (_, None) => unreachable!("node value missing"),
        }
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.value(v)[0]
    }

    /// Constant input; receives a gradient but is not a parameter.
    pub fn constant(&mut self, rows: usize, cols: usize, value: Vec<f64>) -> Var {
        assert_eq!(value.len(), rows * cols, "constant shape");
        self.push(rows, cols, value, Op::Leaf)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(Some(v)) = self.param_nodes.get(id.0) {
            return *v;
        }
        let p = self.store.get(id);
        let (rows, cols) = (p.rows, p.cols);
        self.nodes.push(Node {
            rows,
            cols,
            value: None,
            op: Op::Param(id),
        });
        let v = Var(self.nodes.len() - 1);
        if self.param_nodes.len() <= id.0 {
            self.param_nodes.resize(id.0 + 1, None);
        }
        self.param_nodes[id.0] = Some(v);
        v
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) {
        assert_eq!(self.shape(a), self.shape(b), "{what}: shape mismatch");
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (m, k) = self.shape(a);
        let (k2, n) = self.shape(b);
        assert_eq!(k, k2, "matmul inner dimension");
        let mut out = vec![0.0; m * n];
        gemm(
            m,
            k,
            n,
            self.value(a),
            (k as isize, 1),
            self.value(b),
            (n as isize, 1),
            &mut out,
            0.0,
        );
        self.push(m, n, out, Op::MatMul(a, b))
    }

    /// `a · bᵀ` for `a: [m x k]`, `b: [n x k]`.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Var {
        let (m, k) = self.shape(a);
        let (n, k2) = self.shape(b);
        assert_eq!(k, k2, "matmul_t inner dimension");
        let mut out = vec![0.0; m * n];
        gemm(
            m,
            k,
            n,
            self.value(a),
            (k as isize, 1),
            self.value(b),
            (1, k as isize),
            &mut out,
            0.0,
        );
        self.push(m, n, out, Op::MatMulT(a, b))
    }

    fn zip(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Var {
        self.same_shape(a, b, "elementwise");
        let (r, c) = self.shape(a);
        let out = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(&x, &y)| f(x, y))
            .collect();
        self.push(r, c, out, op)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.zip(a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.zip(a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.zip(a, b, |x, y| x * y, Op::Mul(a, b))
    }

    /// Broadcast-add a `[1 x n]` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let (r, c) = self.shape(a);
        assert_eq!(self.shape(row), (1, c), "add_row shape");
        let b = self.value(row);
        let out = self
            .value(a)
            .chunks(c)
            .flat_map(|x| x.iter().zip(b).map(|(p, q)| p + q))
            .collect();
        self.push(r, c, out, Op::AddRow(a, row))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let (r, c) = self.shape(a);
        let out = self.value(a).iter().map(|x| x * s).collect();
        self.push(r, c, out, Op::Scale(a, s))
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let (r, c) = self.shape(a);
        let t: Vec<f64> = self.value(a).iter().map(|&x| gelu_tanh(x)).collect();
        let out = self.value(a).iter().zip(&t).map(|(&x, &t)| 0.5 * x * (1.0 + t)).collect();
        self.push(r, c, out, Op::Gelu { x: a, t })
    }

    /// Row-wise standardization with learned `[1 x n]` scale and shift.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Var {
        let (r, c) = self.shape(x);
        assert_eq!(self.shape(gamma), (1, c), "layer_norm gamma");
        assert_eq!(self.shape(beta), (1, c), "layer_norm beta");
        let xv = self.value(x);
        let gv = self.value(gamma);
        let bv = self.value(beta);
        let mut xhat = vec![0.0; r * c];
        let mut rstd = vec![0.0; r];
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            let row = &xv[i * c..(i + 1) * c];
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
            let rs = 1.0 / (var + LN_EPS).sqrt();
            rstd[i] = rs;
            for j in 0..c {
                let h = (row[j] - mean) * rs;
                xhat[i * c + j] = h;
                out[i * c + j] = h * gv[j] + bv[j];
            }
        }
        self.push(
            r,
            c,
            out,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            },
        )
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let (r, c) = self.shape(a);
        let mut out = self.value(a).to_vec();
        for row in out.chunks_mut(c) {
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut s = 0.0;
            for v in row.iter_mut() {
                *v = (*v - m).exp();
                s += *v;
            }
            row.iter_mut().for_each(|v| *v /= s);
        }
        self.push(r, c, out, Op::SoftmaxRows(a))
    }

    /// Assemble a matrix row by row from rows of other nodes (gather,
    /// concatenation along the row axis, repetition).
    pub fn rows_from(&mut self, src: Vec<(Var, usize)>) -> Var {
        assert!(!src.is_empty(), "rows_from needs at least one row");
        let c = self.cols(src[0].0);
        let mut out = Vec::with_capacity(src.len() * c);
        for &(v, r) in &src {
            assert_eq!(self.cols(v), c, "rows_from column mismatch");
            assert!(r < self.rows(v), "rows_from row index");
            out.extend_from_slice(&self.value(v)[r * c..(r + 1) * c]);
        }
        let n = src.len();
        self.push(n, c, out, Op::Rows(src))
    }

    pub fn gather_rows(&mut self, a: Var, idx: &[usize]) -> Var {
        self.rows_from(idx.iter().map(|&i| (a, i)).collect())
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let src = parts
            .iter()
            .flat_map(|&p| (0..self.rows(p)).map(move |i| (p, i)))
            .collect();
        self.rows_from(src)
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Var {
        self.rows_from((start..start + len).map(|i| (a, i)).collect())
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let (r, c) = self.shape(a);
        assert!(start + len <= c, "slice_cols range");
        let out = self
            .value(a)
            .chunks(c)
            .flat_map(|row| row[start..start + len].iter().copied())
            .collect();
        self.push(r, len, out, Op::SliceCols(a, start))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let r = self.rows(parts[0]);
        let c: usize = parts.iter().map(|&p| self.cols(p)).sum();
        let mut out = Vec::with_capacity(r * c);
        for i in 0..r {
            for &p in parts {
                let pc = self.cols(p);
                assert_eq!(self.rows(p), r, "concat_cols row mismatch");
                out.extend_from_slice(&self.value(p)[i * pc..(i + 1) * pc]);
            }
        }
        self.push(r, c, out, Op::ConcatCols(parts.to_vec()))
    }

    /// Column means, `[1 x n]`.
    pub fn mean_rows(&mut self, a: Var) -> Var {
        let (r, c) = self.shape(a);
        let mut out = vec![0.0; c];
        for row in self.value(a).chunks(c) {
            out.iter_mut().zip(row).for_each(|(o, v)| *o += v);
        }
        out.iter_mut().for_each(|o| *o /= r as f64);
        self.push(1, c, out, Op::MeanRows(a))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).iter().sum();
        self.push(1, 1, vec![s], Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).len();
        let s = self.sum(a);
        self.scale(s, 1.0 / n as f64)
    }

    /// Inverted dropout; the identity outside training mode.
    pub fn dropout(&mut self, a: Var, p: f64) -> Var {
        if !self.train || p <= 0.0 {
            return a;
        }
        let (r, c) = self.shape(a);
        let keep = 1.0 / (1.0 - p);
        let rng = self.rng.as_mut().expect("training graph has an rng");
        let mask = (0..r * c)
            .map(|_| if rng.uniform() < p { 0.0 } else { keep })
            .collect();
        let m = self.constant(r, c, mask);
        self.mul(a, m)
    }

    /// Half spectrum of each column of a real `[n x d]` matrix.
    pub fn rdft(&mut self, x: Var) -> CVar {
        let (n, d) = self.shape(x);
        let nf = half_len(n);
        let (re, mut im) = rdft_rows(self.value(x), n, d);
        let mut packed = re;
        packed.append(&mut im);
        let p = self.push(2 * nf, d, packed, Op::Rdft(x));
        CVar {
            re: self.slice_rows(p, 0, nf),
            im: self.slice_rows(p, nf, nf),
        }
    }

    /// Inverse of [`Graph::rdft`], returning `n` real rows.
    pub fn irdft(&mut self, z: CVar, n: usize) -> Var {
        let (nf, d) = self.shape(z.re);
        assert_eq!(self.shape(z.im), (nf, d), "irdft planes");
        assert_eq!(nf, half_len(n), "irdft bin count");
        let out = irdft_rows(self.value(z.re), self.value(z.im), n, d);
        self.push(n, d, out, Op::Irdft(z.re, z.im))
    }

    fn complex_transform(&mut self, z: CVar, inverse: bool) -> CVar {
        let (n, d) = self.shape(z.re);
        assert_eq!(self.shape(z.im), (n, d), "dft planes");
        let (re, mut im) = dft_rows(self.value(z.re), self.value(z.im), n, d, inverse);
        let mut packed = re;
        packed.append(&mut im);
        let p = self.push(
            2 * n,
            d,
            packed,
            Op::Dft {
                re: z.re,
                im: z.im,
                inverse,
            },
        );
        CVar {
            re: self.slice_rows(p, 0, n),
            im: self.slice_rows(p, n, n),
        }
    }

    /// Column-wise complex DFT.
    pub fn dft(&mut self, z: CVar) -> CVar {
        self.complex_transform(z, false)
    }

    /// Column-wise inverse complex DFT (with `1/n`).
    pub fn idft(&mut self, z: CVar) -> CVar {
        self.complex_transform(z, true)
    }

    /// Elementwise complex product.
    pub fn cmul(&mut self, a: CVar, b: CVar) -> CVar {
        let rr = self.mul(a.re, b.re);
        let ii = self.mul(a.im, b.im);
        let ri = self.mul(a.re, b.im);
        let ir = self.mul(a.im, b.re);
        CVar {
            re: self.sub(rr, ii),
            im: self.add(ri, ir),
        }
    }

    /// For each element `(i, j)` pick the head `k` maximizing
    /// `|z[i,j] · k[k,j]|` and return that complex product. Ties resolve to
    /// the smallest head index.
    pub fn maxpool_filter(&mut self, z: CVar, k: CVar) -> CVar {
        let (nf, d) = self.shape(z.re);
        let (h, d2) = self.shape(k.re);
        assert_eq!(d, d2, "maxpool width");
        assert_eq!(self.shape(z.im), (nf, d));
        assert_eq!(self.shape(k.im), (h, d));
        let (zr, zi, kr, ki) = (
            self.value(z.re),
            self.value(z.im),
            self.value(k.re),
            self.value(k.im),
        );
        let mut pick = vec![0usize; nf * d];
        let mut out = vec![0.0; 2 * nf * d];
        for i in 0..nf {
            for j in 0..d {
                let (a, b) = (zr[i * d + j], zi[i * d + j]);
                let mut best = (f64::NEG_INFINITY, 0, 0.0, 0.0);
                for kk in 0..h {
                    let (c, e) = (kr[kk * d + j], ki[kk * d + j]);
                    let pr = a * c - b * e;
                    let pi = a * e + b * c;
                    let m2 = pr * pr + pi * pi;
                    if m2 > best.0 {
                        best = (m2, kk, pr, pi);
                    }
                }
                pick[i * d + j] = best.1;
                out[i * d + j] = best.2;
                out[nf * d + i * d + j] = best.3;
            }
        }
        let p = self.push(
            2 * nf,
            d,
            out,
            Op::MaxPool {
                zr: z.re,
                zi: z.im,
                kr: k.re,
                ki: k.im,
                pick,
            },
        );
        CVar {
            re: self.slice_rows(p, 0, nf),
            im: self.slice_rows(p, nf, nf),
        }
    }

    /// Softmax cross-entropy of a `[1 x K]` logit row against `label`.
    pub fn cross_entropy(&mut self, logits: Var, label: usize) -> Var {
        let (r, k) = self.shape(logits);
        assert_eq!(r, 1, "cross_entropy expects one row");
        assert!(label < k, "label out of range");
        let z = self.value(logits);
        let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut probs: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
        let s: f64 = probs.iter().sum();
        probs.iter_mut().for_each(|p| *p /= s);
        let loss = -(probs[label].max(f64::MIN_POSITIVE)).ln();
        self.push(
            1,
            1,
            vec![loss],
            Op::CrossEntropy {
                logits,
                label,
                probs,
            },
        )
    }

    /// Gradients of the scalar `loss` with respect to every parameter that
    /// took part in the graph. A graph can be differentiated once.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients> {
        let grads = self.backward_all(loss)?;
        let mut out = Gradients::new(self.store.len());
        for (i, node) in self.nodes.iter().enumerate() {
            if let (Op::Param(id), Some(g)) = (&node.op, &grads.0[i]) {
                out.accumulate(*id, g);
            }
        }
        Ok(out)
    }

    /// Like [`Graph::backward`] but returns the gradient of every node,
    /// indexed by `Var`. Used for gradients with respect to inputs.
    pub fn backward_all(&mut self, loss: Var) -> Result<NodeGrads> {
        if self.consumed {
            return Err(Error::GraphConsumed);
        }
        let (r, c) = self.shape(loss);
        if (r, c) != (1, 1) {
            return Err(Error::NonScalarLoss { rows: r, cols: c });
        }
        self.consumed = true;
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(NodeGrads(grads))
    }

    fn backprop_node(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        let (rows, cols) = (node.rows, node.cols);
        match &node.op {
            Op::Leaf | Op::Param(_) => {}
            Op::MatMul(a, b) => {
                let (m, k) = self.shape(*a);
                let n = cols;
                let mut ga = vec![0.0; m * k];
                // dA = G · Bᵀ
                gemm(m, n, k, g, (n as isize, 1), self.value(*b), (1, n as isize), &mut ga, 0.0);
                let mut gb = vec![0.0; k * n];
                // dB = Aᵀ · G
                gemm(k, m, n, self.value(*a), (1, k as isize), g, (n as isize, 1), &mut gb, 0.0);
                accum_owned(grads, *a, ga);
                accum_owned(grads, *b, gb);
            }
            Op::MatMulT(a, b) => {
                let (m, k) = self.shape(*a);
                let n = cols;
                let mut ga = vec![0.0; m * k];
                // dA = G · B
                gemm(m, n, k, g, (n as isize, 1), self.value(*b), (k as isize, 1), &mut ga, 0.0);
                let mut gb = vec![0.0; n * k];
                // dB = Gᵀ · A
                gemm(n, m, k, g, (1, n as isize), self.value(*a), (k as isize, 1), &mut gb, 0.0);
                accum_owned(grads, *a, ga);
                accum_owned(grads, *b, gb);
            }
            Op::Add(a, b) => {
                accum(grads, *a, g);
                accum(grads, *b, g);
            }
            Op::Sub(a, b) => {
                accum(grads, *a, g);
                accum_owned(grads, *b, g.iter().map(|v| -v).collect());
            }
            Op::Mul(a, b) => {
                let ga = g.iter().zip(self.value(*b)).map(|(x, y)| x * y).collect();
                let gb = g.iter().zip(self.value(*a)).map(|(x, y)| x * y).collect();
                accum_owned(grads, *a, ga);
                accum_owned(grads, *b, gb);
            }
            Op::AddRow(a, row) => {
                accum(grads, *a, g);
                let mut gr = vec![0.0; cols];
                for r in g.chunks(cols) {
                    gr.iter_mut().zip(r).for_each(|(o, v)| *o += v);
                }
                accum_owned(grads, *row, gr);
            }
            Op::Scale(a, s) => {
                accum_owned(grads, *a, g.iter().map(|v| v * s).collect());
            }
            Op::Gelu { x, t } => {
                let ga = g
                    .iter()
                    .zip(self.value(*x))
                    .zip(t)
                    .map(|((gv, &x), &t)| gv * gelu_grad(x, t))
                    .collect();
                accum_owned(grads, *x, ga);
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            } => {
                let gv = self.value(*gamma);
                let c = cols;
                let mut gx = vec![0.0; rows * c];
                let mut gg = vec![0.0; c];
                let mut gbeta = vec![0.0; c];
                for r in 0..rows {
                    let go = &g[r * c..(r + 1) * c];
                    let xh = &xhat[r * c..(r + 1) * c];
                    let mut s1 = 0.0;
                    let mut s2 = 0.0;
                    for j in 0..c {
                        let d = go[j] * gv[j];
                        s1 += d;
                        s2 += d * xh[j];
                        gg[j] += go[j] * xh[j];
                        gbeta[j] += go[j];
                    }
                    let inv_c = 1.0 / c as f64;
                    for j in 0..c {
                        let d = go[j] * gv[j];
                        gx[r * c + j] = rstd[r] * (d - inv_c * s1 - xh[j] * inv_c * s2);
                    }
                }
                accum_owned(grads, *x, gx);
                accum_owned(grads, *gamma, gg);
                accum_owned(grads, *beta, gbeta);
            }
            Op::SoftmaxRows(a) => {
                let y = node.value.as_ref().unwrap();
                let mut ga = vec![0.0; rows * cols];
                for r in 0..rows {
                    let yr = &y[r * cols..(r + 1) * cols];
                    let gr = &g[r * cols..(r + 1) * cols];
                    let dot: f64 = yr.iter().zip(gr).map(|(p, q)| p * q).sum();
                    for j in 0..cols {
                        ga[r * cols + j] = yr[j] * (gr[j] - dot);
                    }
                }
                accum_owned(grads, *a, ga);
            }
            Op::Rows(src) => {
                for (out_row, &(v, r)) in src.iter().enumerate() {
                    let (vr, vc) = self.shape(v);
                    let slot = grads[v.0].get_or_insert_with(|| vec![0.0; vr * vc]);
                    let dst = &mut slot[r * vc..(r + 1) * vc];
                    let gsrc = &g[out_row * cols..(out_row + 1) * cols];
                    dst.iter_mut().zip(gsrc).for_each(|(d, s)| *d += s);
                }
            }
            Op::SliceCols(a, start) => {
                let (ar, ac) = self.shape(*a);
                let slot = grads[a.0].get_or_insert_with(|| vec![0.0; ar * ac]);
                for r in 0..rows {
                    for j in 0..cols {
                        slot[r * ac + start + j] += g[r * cols + j];
                    }
                }
            }
            Op::ConcatCols(parts) => {
                let mut off = 0;
                for &p in parts {
                    let pc = self.cols(p);
                    let mut gp = Vec::with_capacity(rows * pc);
                    for r in 0..rows {
                        gp.extend_from_slice(&g[r * cols + off..r * cols + off + pc]);
                    }
                    accum_owned(grads, p, gp);
                    off += pc;
                }
            }
            Op::MeanRows(a) => {
                let ar = self.rows(*a);
                let s = 1.0 / ar as f64;
                let ga = (0..ar).flat_map(|_| g.iter().map(|v| v * s)).collect();
                accum_owned(grads, *a, ga);
            }
            Op::Sum(a) => {
                let (ar, ac) = self.shape(*a);
                accum_owned(grads, *a, vec![g[0]; ar * ac]);
            }
            Op::Rdft(x) => {
                // x_n gets Re Σ_k G_k e^{+2πi kn/N} over the kept bins.
                let (n, d) = self.shape(*x);
                let nf = rows / 2;
                let mut re = vec![0.0; n * d];
                let mut im = vec![0.0; n * d];
                re[..nf * d].copy_from_slice(&g[..nf * d]);
                im[..nf * d].copy_from_slice(&g[nf * d..]);
                let (ore, _) = dft_rows(&re, &im, n, d, true);
                let gx = ore.into_iter().map(|v| v * n as f64).collect();
                accum_owned(grads, *x, gx);
            }
            Op::Irdft(zr, zi) => {
                let (n, d) = (rows, cols);
                let nf = half_len(n);
                let (wr, wi) = rdft_rows(g, n, d);
                let mut gr = vec![0.0; nf * d];
                let mut gi = vec![0.0; nf * d];
                for k in 0..nf {
                    let edge = k == 0 || (n % 2 == 0 && k == nf - 1);
                    let c = if edge { 1.0 } else { 2.0 } / n as f64;
                    for j in 0..d {
                        gr[k * d + j] = c * wr[k * d + j];
                        gi[k * d + j] = if edge { 0.0 } else { c * wi[k * d + j] };
                    }
                }
                accum_owned(grads, *zr, gr);
                accum_owned(grads, *zi, gi);
            }
            Op::Dft { re, im, inverse } => {
                let n = rows / 2;
                let d = cols;
                let (gre, gim) = (&g[..n * d], &g[n * d..]);
                // adjoint of the forward map is N·IDFT; of the inverse, DFT/N
                let (mut ar, mut ai) = dft_rows(gre, gim, n, d, !inverse);
                let s = if *inverse { 1.0 / n as f64 } else { n as f64 };
                ar.iter_mut().chain(ai.iter_mut()).for_each(|v| *v *= s);
                accum_owned(grads, *re, ar);
                accum_owned(grads, *im, ai);
            }
            Op::MaxPool {
                zr,
                zi,
                kr,
                ki,
                pick,
            } => {
                let nf = rows / 2;
                let d = cols;
                let h = self.rows(*kr);
                let (zrv, ziv, krv, kiv) = (
                    self.value(*zr),
                    self.value(*zi),
                    self.value(*kr),
                    self.value(*ki),
                );
                let mut gzr = vec![0.0; nf * d];
                let mut gzi = vec![0.0; nf * d];
                let mut gkr = vec![0.0; h * d];
                let mut gki = vec![0.0; h * d];
                for i in 0..nf {
                    for j in 0..d {
                        let e = i * d + j;
                        let kk = pick[e];
                        let (a, b) = (zrv[e], ziv[e]);
                        let (c, f) = (krv[kk * d + j], kiv[kk * d + j]);
                        let (gpr, gpi) = (g[e], g[nf * d + e]);
                        // p = (a + ib)(c + if)
                        gzr[e] = gpr * c + gpi * f;
                        gzi[e] = -gpr * f + gpi * c;
                        gkr[kk * d + j] += gpr * a + gpi * b;
                        gki[kk * d + j] += -gpr * b + gpi * a;
                    }
                }
                accum_owned(grads, *zr, gzr);
                accum_owned(grads, *zi, gzi);
                accum_owned(grads, *kr, gkr);
                accum_owned(grads, *ki, gki);
            }
            Op::CrossEntropy {
                logits,
                label,
                probs,
            } => {
                let gl = probs
                    .iter()
                    .enumerate()
                    .map(|(j, p)| g[0] * (p - if j == *label { 1.0 } else { 0.0 }))
                    .collect();
                accum_owned(grads, *logits, gl);
            }
        }
    }
}

/// Per-node gradients from [`Graph::backward_all`].
#[derive(Debug)]
pub struct NodeGrads(Vec<Option<Vec<f64>>>);

impl NodeGrads {
    /// Gradient of `v`; `None` if `v` does not influence the loss.
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.0.get(v.0).and_then(|g| g.as_deref())
    }
}
