//! Reverse-mode differentiation over dense tensors.
//!
//! Operations are recorded onto a [`Tape`] in execution order, which is a
//! valid topological order by construction (an op can only reference ids
//! that already exist). `backward` walks the tape once in reverse,
//! accumulating gradients into per-node buffers.

use crate::error::{Error, Result};
use crate::tensor::{matmul_raw, Tensor};
use rayon::prelude::*;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    /// C = A B
    Matmul { a: Var, b: Var },
    /// C = A B^T
    MatmulNT { a: Var, b: Var },
    Add { a: Var, b: Var },
    /// Broadcast a 1 x D row over every row of a T x D matrix.
    AddRow { a: Var, row: Var },
    MulRow { a: Var, row: Var },
    MulElem { a: Var, b: Var },
    Scale { a: Var, k: f64 },
    Relu { a: Var },
    /// out[t] = in[t - offset], zero outside the sequence.
    Shift { a: Var, offset: isize },
    /// Extract row r as a 1 x D matrix.
    Row { a: Var, r: usize },
    SoftmaxRows { a: Var },
    LayerNormRows { a: Var, gamma: Var, beta: Var, eps: f64 },
    ConcatCols { parts: Vec<Var> },
    SumAll { a: Var },
    CrossEntropy { logits: Var, targets: Vec<usize> },
    BinaryCrossEntropy { logits: Var, targets: Vec<f64> },
}

struct Node {
    value: Tensor,
    op: Op,
}

/// Recording tape. Single-threaded; kernels may parallelize internally.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
}

// Below this many multiply-accumulates a parallel gemm is not worth the
// fork/join overhead.
const PAR_GEMM_THRESHOLD: usize = 1 << 19;

fn gemm(a: &[f64], b: &[f64], m: usize, k: usize, p: usize) -> Vec<f64> {
    if m * k * p < PAR_GEMM_THRESHOLD {
        return matmul_raw(a, b, m, k, p);
    }
    let mut out = vec![0.0; m * p];
    out.par_chunks_mut(p).enumerate().for_each(|(i, row_out)| {
        let row_a = &a[i * k..(i + 1) * k];
        for (l, &a_il) in row_a.iter().enumerate() {
            let row_b = &b[l * p..(l + 1) * p];
            for (o, &b_lj) in row_out.iter_mut().zip(row_b.iter()) {
                *o += a_il * b_lj;
            }
        }
    });
    out
}

/// C = A B^T with A: m x k, B: p x k, C: m x p. Row-by-row dot products.
fn gemm_nt(a: &[f64], b: &[f64], m: usize, k: usize, p: usize) -> Vec<f64> {
    let body = |i: usize, row_out: &mut [f64]| {
        let row_a = &a[i * k..(i + 1) * k];
        for (j, o) in row_out.iter_mut().enumerate() {
            let row_b = &b[j * k..(j + 1) * k];
            let mut s = 0.0;
            for (x, y) in row_a.iter().zip(row_b.iter()) {
                s += x * y;
            }
            *o = s;
        }
    };
    let mut out = vec![0.0; m * p];
    if m * k * p < PAR_GEMM_THRESHOLD {
        for (i, row_out) in out.chunks_mut(p).enumerate() {
            body(i, row_out);
        }
    } else {
        out.par_chunks_mut(p)
            .enumerate()
            .for_each(|(i, row_out)| body(i, row_out));
    }
    out
}

/// C = A^T B with A: m x k, B: m x p, C: k x p.
fn gemm_tn(a: &[f64], b: &[f64], m: usize, k: usize, p: usize) -> Vec<f64> {
    let body = |l: usize, row_out: &mut [f64]| {
        for i in 0..m {
            let a_il = a[i * k + l];
            if a_il == 0.0 {
                continue;
            }
            let row_b = &b[i * p..(i + 1) * p];
            for (o, &b_ij) in row_out.iter_mut().zip(row_b.iter()) {
                *o += a_il * b_ij;
            }
        }
    };
    let mut out = vec![0.0; k * p];
    if m * k * p < PAR_GEMM_THRESHOLD {
        for (l, row_out) in out.chunks_mut(p).enumerate() {
            body(l, row_out);
        }
    } else {
        out.par_chunks_mut(p)
            .enumerate()
            .for_each(|(l, row_out)| body(l, row_out));
    }
    out
}

/// Row-wise stable softmax of a T x C matrix (max subtraction per row).
pub fn softmax_rows_value(x: &Tensor) -> Tensor {
    let (t, c) = (x.rows(), x.cols());
    let mut out = vec![0.0; t * c];
    for r in 0..t {
        let row = &x.data()[r * c..(r + 1) * c];
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let o = &mut out[r * c..(r + 1) * c];
        let mut s = 0.0;
        for (oi, &xi) in o.iter_mut().zip(row.iter()) {
            *oi = (xi - m).exp();
            s += *oi;
        }
        for oi in o.iter_mut() {
            *oi /= s;
        }
    }
    Tensor::new(vec![t, c], out).unwrap()
}

/// log(1 + e^x) without overflow.
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn mat_dims(&self, v: Var, op: &'static str) -> Result<(usize, usize)> {
        let t = self.value(v);
        if !t.is_matrix() {
            return Err(Error::dim(op, format!("expected matrix, got {:?}", t.shape())));
        }
        Ok((t.shape()[0], t.shape()[1]))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.mat_dims(a, "matmul")?;
        let (k2, p) = self.mat_dims(b, "matmul")?;
        if k != k2 {
            return Err(Error::dim(
                "matmul",
                format!("inner dims {k} vs {k2} (shapes {:?} x {:?})",
                    self.value(a).shape(), self.value(b).shape()),
            ));
        }
        let data = gemm(self.value(a).data(), self.value(b).data(), m, k, p);
        Ok(self.push(Tensor::new(vec![m, p], data)?, Op::Matmul { a, b }))
    }

    /// A B^T; `b` is p x k.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.mat_dims(a, "matmul_nt")?;
        let (p, k2) = self.mat_dims(b, "matmul_nt")?;
        if k != k2 {
            return Err(Error::dim("matmul_nt", format!("inner dims {k} vs {k2}")));
        }
        let data = gemm_nt(self.value(a).data(), self.value(b).data(), m, k, p);
        Ok(self.push(Tensor::new(vec![m, p], data)?, Op::MatmulNT { a, b }))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(Error::dim(
                "add",
                format!("{:?} vs {:?}", self.value(a).shape(), self.value(b).shape()),
            ));
        }
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x + y)
            .collect();
        let shape = self.value(a).shape().to_vec();
        Ok(self.push(Tensor::new(shape, data)?, Op::Add { a, b }))
    }

    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (t, d) = self.mat_dims(a, "add_row")?;
        if self.value(row).numel() != d {
            return Err(Error::dim(
                "add_row",
                format!("row has {} values, matrix width is {d}", self.value(row).numel()),
            ));
        }
        let rv = self.value(row).data().to_vec();
        let mut data = self.value(a).data().to_vec();
        for r in 0..t {
            for (x, y) in data[r * d..(r + 1) * d].iter_mut().zip(rv.iter()) {
                *x += y;
            }
        }
        Ok(self.push(Tensor::new(vec![t, d], data)?, Op::AddRow { a, row }))
    }

    pub fn mul_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (t, d) = self.mat_dims(a, "mul_row")?;
        if self.value(row).numel() != d {
            return Err(Error::dim("mul_row", "row width mismatch"));
        }
        let rv = self.value(row).data().to_vec();
        let mut data = self.value(a).data().to_vec();
        for r in 0..t {
            for (x, y) in data[r * d..(r + 1) * d].iter_mut().zip(rv.iter()) {
                *x *= y;
            }
        }
        Ok(self.push(Tensor::new(vec![t, d], data)?, Op::MulRow { a, row }))
    }

    pub fn mul_elem(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(Error::dim("mul_elem", "shape mismatch"));
        }
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x * y)
            .collect();
        let shape = self.value(a).shape().to_vec();
        Ok(self.push(Tensor::new(shape, data)?, Op::MulElem { a, b }))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let value = self.value(a).map(|x| x * k);
        self.push(value, Op::Scale { a, k })
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| x.max(0.0));
        self.push(value, Op::Relu { a })
    }

    /// out[t] = in[t - offset]; rows shifted out of range read zeros.
    pub fn shift(&mut self, a: Var, offset: isize) -> Result<Var> {
        let (t, d) = self.mat_dims(a, "shift")?;
        let src = self.value(a).data();
        let mut data = vec![0.0; t * d];
        for r in 0..t as isize {
            let s = r - offset;
            if s >= 0 && s < t as isize {
                let (r, s) = (r as usize, s as usize);
                data[r * d..(r + 1) * d].copy_from_slice(&src[s * d..(s + 1) * d]);
            }
        }
        Ok(self.push(Tensor::new(vec![t, d], data)?, Op::Shift { a, offset }))
    }

    pub fn row(&mut self, a: Var, r: usize) -> Result<Var> {
        let (t, d) = self.mat_dims(a, "row")?;
        if r >= t {
            return Err(Error::Index(format!("row {r} of {t}")));
        }
        let data = self.value(a).row(r).to_vec();
        Ok(self.push(Tensor::new(vec![1, d], data)?, Op::Row { a, r }))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        self.mat_dims(a, "softmax_rows")?;
        let value = softmax_rows_value(self.value(a));
        Ok(self.push(value, Op::SoftmaxRows { a }))
    }

    pub fn layer_norm_rows(&mut self, a: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let (t, d) = self.mat_dims(a, "layer_norm")?;
        if self.value(gamma).numel() != d || self.value(beta).numel() != d {
            return Err(Error::dim("layer_norm", "gamma/beta width mismatch"));
        }
        let g = self.value(gamma).data().to_vec();
        let be = self.value(beta).data().to_vec();
        let x = self.value(a).data();
        let mut data = vec![0.0; t * d];
        for r in 0..t {
            let row = &x[r * d..(r + 1) * d];
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let inv = 1.0 / (var + eps).sqrt();
            for c in 0..d {
                data[r * d + c] = (row[c] - mean) * inv * g[c] + be[c];
            }
        }
        Ok(self.push(
            Tensor::new(vec![t, d], data)?,
            Op::LayerNormRows { a, gamma, beta, eps },
        ))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::dim("concat_cols", "no parts"));
        }
        let t = self.mat_dims(parts[0], "concat_cols")?.0;
        let mut width = 0;
        for &p in parts {
            let (tp, dp) = self.mat_dims(p, "concat_cols")?;
            if tp != t {
                return Err(Error::dim("concat_cols", "row count mismatch"));
            }
            width += dp;
        }
        let mut data = vec![0.0; t * width];
        let mut col = 0;
        for &p in parts {
            let dp = self.value(p).cols();
            let src = self.value(p).data();
            for r in 0..t {
                data[r * width + col..r * width + col + dp]
                    .copy_from_slice(&src[r * dp..(r + 1) * dp]);
            }
            col += dp;
        }
        Ok(self.push(
            Tensor::new(vec![t, width], data)?,
            Op::ConcatCols { parts: parts.to_vec() },
        ))
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let s: f64 = self.value(a).data().iter().sum();
        self.push(Tensor::scalar(s), Op::SumAll { a })
    }

    /// Mean over frames of -log softmax(logits)[t, target_t].
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let (t, c) = self.mat_dims(logits, "cross_entropy")?;
        if targets.len() != t {
            return Err(Error::dim(
                "cross_entropy",
                format!("{} targets for {t} frames", targets.len()),
            ));
        }
        if let Some(&bad) = targets.iter().find(|&&y| y >= c) {
            return Err(Error::Index(format!("target class {bad} >= {c}")));
        }
        let x = self.value(logits).data();
        let mut total = 0.0;
        for r in 0..t {
            let row = &x[r * c..(r + 1) * c];
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            total += lse - row[targets[r]];
        }
        let value = Tensor::scalar(total / t as f64);
        Ok(self.push(
            value,
            Op::CrossEntropy { logits, targets: targets.to_vec() },
        ))
    }

    /// Mean element-wise sigmoid binary cross-entropy in log-sum-exp form.
    pub fn binary_cross_entropy(&mut self, logits: Var, targets: &Tensor) -> Result<Var> {
        if self.value(logits).shape() != targets.shape() {
            return Err(Error::dim(
                "binary_cross_entropy",
                format!("{:?} vs {:?}", self.value(logits).shape(), targets.shape()),
            ));
        }
        let x = self.value(logits).data();
        let y = targets.data();
        // max(x,0) - x*y + log(1 + e^{-|x|})
        let total: f64 = x
            .iter()
            .zip(y.iter())
            .map(|(&xi, &yi)| xi.max(0.0) - xi * yi + softplus(-xi.abs()))
            .sum();
        let value = Tensor::scalar(total / x.len() as f64);
        Ok(self.push(
            value,
            Op::BinaryCrossEntropy { logits, targets: y.to_vec() },
        ))
    }

    fn accumulate(&mut self, v: Var, delta: &[f64]) {
        let slot = &mut self.grads[v.0];
        match slot {
            Some(g) => {
                for (gi, di) in g.iter_mut().zip(delta.iter()) {
                    *gi += di;
                }
            }
            None => *slot = Some(delta.to_vec()),
        }
    }

    /// Gradient of `v` after [`Tape::backward`]; zeros if the root does not
    /// depend on `v`.
    pub fn grad(&self, v: Var) -> Tensor {
        match &self.grads[v.0] {
            Some(g) => Tensor::new(self.nodes[v.0].value.shape().to_vec(), g.clone()).unwrap(),
            None => Tensor::zeros(self.nodes[v.0].value.shape()),
        }
    }

    /// Reverse pass from a scalar root. Each node is visited exactly once.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        if self.value(root).numel() != 1 {
            return Err(Error::dim("backward", "root must be scalar"));
        }
        self.grads = vec![None; self.nodes.len()];
        self.grads[root.0] = Some(vec![1.0]);

        for i in (0..self.nodes.len()).rev() {
            let g = match self.grads[i].take() {
                Some(g) => g,
                None => continue,
            };
            // Re-install: leaves keep their gradient readable after the pass.
            self.grads[i] = Some(g.clone());
            match &self.nodes[i].op {
                Op::Leaf => {}
                Op::Matmul { a, b } => {
                    let (a, b) = (*a, *b);
                    let (m, k) = (self.value(a).rows(), self.value(a).cols());
                    let p = self.value(b).cols();
                    let da = gemm_nt(&g, self.value(b).data(), m, p, k);
                    let db = gemm_tn(self.value(a).data(), &g, m, k, p);
                    self.accumulate(a, &da);
                    self.accumulate(b, &db);
                }
                Op::MatmulNT { a, b } => {
                    let (a, b) = (*a, *b);
                    let (m, k) = (self.value(a).rows(), self.value(a).cols());
                    let p = self.value(b).rows();
                    // C = A B^T: dA = G B, dB = G^T A
                    let da = gemm(&g, self.value(b).data(), m, p, k);
                    let db = gemm_tn(&g, self.value(a).data(), m, p, k);
                    self.accumulate(a, &da);
                    self.accumulate(b, &db);
                }
                Op::Add { a, b } => {
                    let (a, b) = (*a, *b);
                    self.accumulate(a, &g);
                    self.accumulate(b, &g);
                }
                Op::AddRow { a, row } => {
                    let (a, row) = (*a, *row);
                    let d = self.value(row).numel();
                    let mut dr = vec![0.0; d];
                    for chunk in g.chunks(d) {
                        for (o, x) in dr.iter_mut().zip(chunk.iter()) {
                            *o += x;
                        }
                    }
                    self.accumulate(a, &g);
                    self.accumulate(row, &dr);
                }
                Op::MulRow { a, row } => {
                    let (a, row) = (*a, *row);
                    let d = self.value(row).numel();
                    let rv = self.value(row).data().to_vec();
                    let av = self.value(a).data();
                    let mut da = vec![0.0; av.len()];
                    let mut dr = vec![0.0; d];
                    for (r, chunk) in g.chunks(d).enumerate() {
                        for c in 0..d {
                            da[r * d + c] = chunk[c] * rv[c];
                            dr[c] += chunk[c] * av[r * d + c];
                        }
                    }
                    self.accumulate(a, &da);
                    self.accumulate(row, &dr);
                }
                Op::MulElem { a, b } => {
                    let (a, b) = (*a, *b);
                    let da: Vec<f64> = g
                        .iter()
                        .zip(self.value(b).data())
                        .map(|(gi, bi)| gi * bi)
                        .collect();
                    let db: Vec<f64> = g
                        .iter()
                        .zip(self.value(a).data())
                        .map(|(gi, ai)| gi * ai)
                        .collect();
                    self.accumulate(a, &da);
                    self.accumulate(b, &db);
                }
                Op::Scale { a, k } => {
                    let (a, k) = (*a, *k);
                    let da: Vec<f64> = g.iter().map(|gi| gi * k).collect();
                    self.accumulate(a, &da);
                }
                Op::Relu { a } => {
                    let a = *a;
                    let da: Vec<f64> = g
                        .iter()
                        .zip(self.value(a).data())
                        .map(|(gi, &xi)| if xi > 0.0 { *gi } else { 0.0 })
                        .collect();
                    self.accumulate(a, &da);
                }
                Op::Shift { a, offset } => {
                    let (a, offset) = (*a, *offset);
                    let t = self.value(a).rows();
                    let d = self.value(a).cols();
                    let mut da = vec![0.0; t * d];
                    for r in 0..t as isize {
                        let s = r - offset;
                        if s >= 0 && s < t as isize {
                            let (r, s) = (r as usize, s as usize);
                            da[s * d..(s + 1) * d].copy_from_slice(&g[r * d..(r + 1) * d]);
                        }
                    }
                    self.accumulate(a, &da);
                }
                Op::Row { a, r } => {
                    let (a, r) = (*a, *r);
                    let d = self.value(a).cols();
                    let mut da = vec![0.0; self.value(a).numel()];
                    da[r * d..(r + 1) * d].copy_from_slice(&g);
                    self.accumulate(a, &da);
                }
                Op::SoftmaxRows { a } => {
                    let a = *a;
                    let y = self.nodes[i].value.data();
                    let d = self.nodes[i].value.cols();
                    let mut da = vec![0.0; y.len()];
                    for r in 0..y.len() / d {
                        let yr = &y[r * d..(r + 1) * d];
                        let gr = &g[r * d..(r + 1) * d];
                        let dot: f64 = yr.iter().zip(gr.iter()).map(|(yi, gi)| yi * gi).sum();
                        for c in 0..d {
                            da[r * d + c] = yr[c] * (gr[c] - dot);
                        }
                    }
                    self.accumulate(a, &da);
                }
                Op::LayerNormRows { a, gamma, beta, eps } => {
                    let (a, gamma, beta, eps) = (*a, *gamma, *beta, *eps);
                    let x = self.value(a).data().to_vec();
                    let gm = self.value(gamma).data().to_vec();
                    let d = self.value(gamma).numel();
                    let t = x.len() / d;
                    let mut da = vec![0.0; x.len()];
                    let mut dgamma = vec![0.0; d];
                    let mut dbeta = vec![0.0; d];
                    for r in 0..t {
                        let row = &x[r * d..(r + 1) * d];
                        let gr = &g[r * d..(r + 1) * d];
                        let mean = row.iter().sum::<f64>() / d as f64;
                        let var =
                            row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
                        let inv = 1.0 / (var + eps).sqrt();
                        let xhat: Vec<f64> = row.iter().map(|v| (v - mean) * inv).collect();
                        let gh: Vec<f64> = gr.iter().zip(gm.iter()).map(|(gi, w)| gi * w).collect();
                        let mean_gh = gh.iter().sum::<f64>() / d as f64;
                        let mean_gh_xhat =
                            gh.iter().zip(xhat.iter()).map(|(a, b)| a * b).sum::<f64>() / d as f64;
                        for c in 0..d {
                            da[r * d + c] = inv * (gh[c] - mean_gh - xhat[c] * mean_gh_xhat);
                            dgamma[c] += gr[c] * xhat[c];
                            dbeta[c] += gr[c];
                        }
                    }
                    self.accumulate(a, &da);
                    self.accumulate(gamma, &dgamma);
                    self.accumulate(beta, &dbeta);
                }
                Op::ConcatCols { parts } => {
                    let parts = parts.clone();
                    let width = self.nodes[i].value.cols();
                    let t = self.nodes[i].value.rows();
                    let mut col = 0;
                    for p in parts {
                        let dp = self.value(p).cols();
                        let mut da = vec![0.0; t * dp];
                        for r in 0..t {
                            da[r * dp..(r + 1) * dp]
                                .copy_from_slice(&g[r * width + col..r * width + col + dp]);
                        }
                        self.accumulate(p, &da);
                        col += dp;
                    }
                }
                Op::SumAll { a } => {
                    let a = *a;
                    let da = vec![g[0]; self.value(a).numel()];
                    self.accumulate(a, &da);
                }
                Op::CrossEntropy { logits, targets } => {
                    let (logits, targets) = (*logits, targets.clone());
                    let sm = softmax_rows_value(self.value(logits));
                    let t = sm.rows();
                    let c = sm.cols();
                    let scale = g[0] / t as f64;
                    let mut da = sm.into_data();
                    for (r, &tgt) in targets.iter().enumerate() {
                        da[r * c + tgt] -= 1.0;
                    }
                    for v in da.iter_mut() {
                        *v *= scale;
                    }
                    self.accumulate(logits, &da);
                }
                Op::BinaryCrossEntropy { logits, targets } => {
                    let (logits, targets) = (*logits, targets.clone());
                    let x = self.value(logits).data();
                    let scale = g[0] / x.len() as f64;
                    let da: Vec<f64> = x
                        .iter()
                        .zip(targets.iter())
                        .map(|(&xi, &yi)| (sigmoid(xi) - yi) * scale)
                        .collect();
                    self.accumulate(logits, &da);
                }
            }
        }
        Ok(())
    }
}
