//! Dense row-major tensors in double precision, plus the pure kernels the
//! tape records. Keeping the math here (and calling it from the tape) means
//! training and inference share one implementation of every op.

use crate::error::{Error, Result};

/// Values below this are clamped before a logarithm is taken, so that
/// one-hot targets against near-zero probabilities stay finite.
pub const LOG_EPS: f64 = 1e-12;

/// Dense real tensor, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if shape.contains(&0) {
            return Err(Error::shape("tensor", format!("zero dimension in {shape:?}")));
        }
        if numel != data.len() {
            return Err(Error::shape(
                "tensor",
                format!("shape {shape:?} implies {numel} values, got {}", data.len()),
            ));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let numel = shape.iter().product();
        Tensor { shape: shape.to_vec(), data: vec![0.0; numel] }
    }

    pub fn scalar(v: f64) -> Self {
        Tensor { shape: vec![1], data: vec![v] }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Tensor { shape: vec![data.len()], data }
    }

    /// n×n identity.
    pub fn eye(n: usize) -> Self {
        let mut t = Tensor::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    /// One-hot vector of length `n`.
    pub fn one_hot(n: usize, index: usize) -> Self {
        let mut t = Tensor::zeros(&[n]);
        t.data[index] = 1.0;
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.data.len(), 1);
        self.data[0]
    }

    /// Row `i` of a 2-D tensor.
    pub fn row(&self, i: usize) -> &[f64] {
        debug_assert_eq!(self.rank(), 2);
        let w = self.shape[1];
        &self.data[i * w..(i + 1) * w]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &v) in self.data.iter().enumerate() {
            if v > self.data[best] {
                best = i;
            }
        }
        best
    }
}

fn check_same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape != b.shape {
        return Err(Error::shape(op, format!("{:?} vs {:?}", a.shape, b.shape)));
    }
    Ok(())
}

/// Matrix/vector product. Supports [m,k]x[k,n] -> [m,n], [k]x[k,n] -> [n]
/// and [m,k]x[k] -> [m].
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    match (a.rank(), b.rank()) {
        (2, 2) => {
            let (m, k) = (a.shape[0], a.shape[1]);
            let (k2, n) = (b.shape[0], b.shape[1]);
            if k != k2 {
                return Err(Error::shape("matmul", format!("{:?} x {:?}", a.shape, b.shape)));
            }
            let mut out = vec![0.0; m * n];
            for i in 0..m {
                let arow = &a.data[i * k..(i + 1) * k];
                let orow = &mut out[i * n..(i + 1) * n];
                for (p, &av) in arow.iter().enumerate() {
                    let brow = &b.data[p * n..(p + 1) * n];
                    for (o, &bv) in orow.iter_mut().zip(brow) {
                        *o += av * bv;
                    }
                }
            }
            Tensor::new(vec![m, n], out)
        }
        (1, 2) => {
            let k = a.shape[0];
            let (k2, n) = (b.shape[0], b.shape[1]);
            if k != k2 {
                return Err(Error::shape("matmul", format!("{:?} x {:?}", a.shape, b.shape)));
            }
            let mut out = vec![0.0; n];
            for (p, &av) in a.data.iter().enumerate() {
                let brow = &b.data[p * n..(p + 1) * n];
                for (o, &bv) in out.iter_mut().zip(brow) {
                    *o += av * bv;
                }
            }
            Tensor::new(vec![n], out)
        }
        (2, 1) => {
            let (m, k) = (a.shape[0], a.shape[1]);
            if k != b.shape[0] {
                return Err(Error::shape("matmul", format!("{:?} x {:?}", a.shape, b.shape)));
            }
            let mut out = vec![0.0; m];
            for (i, o) in out.iter_mut().enumerate() {
                let arow = &a.data[i * k..(i + 1) * k];
                *o = arow.iter().zip(&b.data).map(|(x, y)| x * y).sum();
            }
            Tensor::new(vec![m], out)
        }
        _ => Err(Error::shape("matmul", format!("{:?} x {:?}", a.shape, b.shape))),
    }
}

pub fn add(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    check_same_shape("add", a, b)?;
    let data = a.data.iter().zip(&b.data).map(|(x, y)| x + y).collect();
    Tensor::new(a.shape.clone(), data)
}

pub fn elementwise_mul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    check_same_shape("elementwise_mul", a, b)?;
    let data = a.data.iter().zip(&b.data).map(|(x, y)| x * y).collect();
    Tensor::new(a.shape.clone(), data)
}

/// Concatenation of 1-D tensors.
pub fn concat(parts: &[&Tensor]) -> Result<Tensor> {
    if parts.is_empty() {
        return Err(Error::shape("concat", "no inputs".to_string()));
    }
    let mut data = Vec::new();
    for p in parts {
        if p.rank() != 1 {
            return Err(Error::shape("concat", format!("expected vectors, got {:?}", p.shape)));
        }
        data.extend_from_slice(&p.data);
    }
    Ok(Tensor::vector(data))
}

/// Stack equal-length 1-D tensors into a matrix, one per row.
pub fn stack_rows(rows: &[&Tensor]) -> Result<Tensor> {
    if rows.is_empty() {
        return Err(Error::shape("stack_rows", "no inputs".to_string()));
    }
    let w = rows[0].numel();
    let mut data = Vec::with_capacity(rows.len() * w);
    for r in rows {
        if r.rank() != 1 || r.numel() != w {
            return Err(Error::shape("stack_rows", format!("row shape {:?}, want [{w}]", r.shape)));
        }
        data.extend_from_slice(&r.data);
    }
    Tensor::new(vec![rows.len(), w], data)
}

pub fn sigmoid(a: &Tensor) -> Tensor {
    let data = a.data.iter().map(|&x| 1.0 / (1.0 + (-x).exp())).collect();
    Tensor { shape: a.shape.clone(), data }
}

pub fn tanh(a: &Tensor) -> Tensor {
    let data = a.data.iter().map(|&x| x.tanh()).collect();
    Tensor { shape: a.shape.clone(), data }
}

pub fn exp(a: &Tensor) -> Tensor {
    let data = a.data.iter().map(|&x| x.exp()).collect();
    Tensor { shape: a.shape.clone(), data }
}

/// Natural log. Errors on non-positive entries; entries in (0, LOG_EPS)
/// are clamped up to LOG_EPS.
pub fn log(a: &Tensor) -> Result<Tensor> {
    let mut data = Vec::with_capacity(a.data.len());
    for &x in &a.data {
        if x <= 0.0 {
            return Err(Error::domain("log", format!("non-positive input {x}")));
        }
        data.push(x.max(LOG_EPS).ln());
    }
    Tensor::new(a.shape.clone(), data)
}

/// Softmax over the last axis (rows of a matrix, or a whole vector),
/// computed with max-subtraction.
pub fn softmax_lastaxis(a: &Tensor) -> Result<Tensor> {
    let w = *a.shape.last().ok_or_else(|| Error::shape("softmax", "rank-0 input".to_string()))?;
    let mut data = a.data.clone();
    for chunk in data.chunks_mut(w) {
        let m = chunk.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for v in chunk.iter_mut() {
            *v = (*v - m).exp();
            z += *v;
        }
        for v in chunk.iter_mut() {
            *v /= z;
        }
    }
    Tensor::new(a.shape.clone(), data)
}

/// Sum over an axis of a 2-D tensor, or over everything (`None` -> scalar).
pub fn sum_axis(a: &Tensor, axis: Option<usize>) -> Result<Tensor> {
    match axis {
        None => Ok(Tensor::scalar(a.data.iter().sum())),
        Some(ax) => {
            if a.rank() != 2 || ax > 1 {
                return Err(Error::shape(
                    "sum_axis",
                    format!("axis {ax} over shape {:?}", a.shape),
                ));
            }
            let (r, c) = (a.shape[0], a.shape[1]);
            if ax == 0 {
                let mut out = vec![0.0; c];
                for i in 0..r {
                    for (o, &v) in out.iter_mut().zip(a.row(i)) {
                        *o += v;
                    }
                }
                Tensor::new(vec![c], out)
            } else {
                let out = (0..r).map(|i| a.row(i).iter().sum()).collect();
                Tensor::new(vec![r], out)
            }
        }
    }
}

/// Gather rows of `table` ([vocab, d]) at `ids`, producing [len(ids), d].
pub fn embedding_lookup(table: &Tensor, ids: &[usize]) -> Result<Tensor> {
    if table.rank() != 2 {
        return Err(Error::shape("embedding_lookup", format!("table shape {:?}", table.shape)));
    }
    let (vocab, d) = (table.shape[0], table.shape[1]);
    let mut data = Vec::with_capacity(ids.len() * d);
    for &id in ids {
        if id >= vocab {
            return Err(Error::domain(
                "embedding_lookup",
                format!("id {id} out of vocabulary of size {vocab}"),
            ));
        }
        data.extend_from_slice(&table.data[id * d..(id + 1) * d]);
    }
    Tensor::new(vec![ids.len(), d], data)
}

pub fn scale(a: &Tensor, c: f64) -> Tensor {
    let data = a.data.iter().map(|&x| c * x).collect();
    Tensor { shape: a.shape.clone(), data }
}

/// Generalized KL divergence sum_x t(x) ln(t(x)/q(x)) with 0*ln(0/q) = 0.
/// `approx` entries are clamped to LOG_EPS under the log. `target` need not
/// sum to one (bag-of-labels targets are 0/1 indicator vectors).
pub fn kl_div(target: &Tensor, approx: &Tensor) -> Result<Tensor> {
    if target.shape != approx.shape {
        return Err(Error::shape(
            "kl_div",
            format!("{:?} vs {:?}", target.shape, approx.shape),
        ));
    }
    let mut total = 0.0;
    for (&t, &q) in target.data.iter().zip(&approx.data) {
        if t > 0.0 {
            total += t * (t.max(LOG_EPS).ln() - q.max(LOG_EPS).ln());
        }
    }
    Ok(Tensor::scalar(total))
}
