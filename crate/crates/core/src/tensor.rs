//! Dense row-major tensors and the arithmetic kernels used by the autodiff
//! tape. All storage is f64; in [`Precision::F32`] every kernel rounds its
//! output elements through f32 so a run never mixes precisions.
//!
//! Reductions use a fixed row-major sequential order so that results are
//! bit-identical across runs of the same build.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Numeric mode of a run. F64 is required for gradient checks and oracles;
/// F32 is permitted for training runs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Precision {
    F32,
    F64,
}

impl Precision {
    #[inline]
    pub fn round(self, x: f64) -> f64 {
        match self {
            Precision::F64 => x,
            Precision::F32 => x as f32 as f64,
        }
    }
}

impl std::str::FromStr for Precision {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "f32" => Ok(Precision::F32),
            "f64" => Ok(Precision::F64),
            other => Err(Error::InvalidArgument(format!(
                "unknown precision {other:?}, expected f32 or f64"
            ))),
        }
    }
}

/// Dense n-dimensional array, row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::ShapeMismatch {
                op: "Tensor::new",
                detail: format!("shape {shape:?} wants {numel} values, got {}", data.len()),
            });
        }
        if shape.iter().any(|&d| d == 0) {
            return Err(Error::ShapeMismatch {
                op: "Tensor::new",
                detail: format!("zero extent in shape {shape:?}"),
            });
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let numel: usize = shape.iter().product();
        Tensor {
            shape,
            data: vec![0.0; numel],
        }
    }

    pub fn scalar(v: f64) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![v],
        }
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

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    pub fn scalar_value(&self) -> f64 {
        debug_assert!(self.is_scalar());
        self.data[0]
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Reinterpret as a matrix; only valid for rank-2 tensors.
    pub fn as_matrix(&self) -> Result<(usize, usize)> {
        if self.shape.len() != 2 {
            return Err(Error::ShapeMismatch {
                op: "as_matrix",
                detail: format!("expected rank 2, got shape {:?}", self.shape),
            });
        }
        Ok((self.shape[0], self.shape[1]))
    }

    pub fn reshape(&self, shape: Vec<usize>) -> Result<Tensor> {
        Tensor::new(shape, self.data.clone())
    }

    /// Row `i` of a rank-2 tensor as a new rank-2 tensor of shape (1, cols).
    pub fn row(&self, i: usize) -> Result<Tensor> {
        let (_, c) = self.as_matrix()?;
        Tensor::new(vec![1, c], self.data[i * c..(i + 1) * c].to_vec())
    }

    /// Rank-2 tensor made of the given rows of `self`, in order.
    pub fn gather_rows(&self, idx: &[usize]) -> Result<Tensor> {
        let (_, c) = self.as_matrix()?;
        let mut out = Vec::with_capacity(idx.len() * c);
        for &i in idx {
            out.extend_from_slice(&self.data[i * c..(i + 1) * c]);
        }
        Tensor::new(vec![idx.len(), c], out)
    }
}

fn round_all(p: Precision, t: &mut Tensor) {
    if p == Precision::F32 {
        for v in &mut t.data {
            *v = *v as f32 as f64;
        }
    }
}

/// C = A (m,k) @ B (k,n). Accumulation over k is sequential ascending for
/// every output element (ikj loop order).
pub fn matmul(a: &Tensor, b: &Tensor, p: Precision) -> Result<Tensor> {
    let (m, k) = a.as_matrix()?;
    let (kb, n) = b.as_matrix()?;
    if k != kb {
        return Err(Error::ShapeMismatch {
            op: "matmul",
            detail: format!("inner dims {k} vs {kb}"),
        });
    }
    let mut c = Tensor::zeros(vec![m, n]);
    let ad = &a.data;
    let bd = &b.data;
    let cd = &mut c.data;
    for i in 0..m {
        let crow = &mut cd[i * n..(i + 1) * n];
        for kk in 0..k {
            let aik = ad[i * k + kk];
            let brow = &bd[kk * n..(kk + 1) * n];
            for j in 0..n {
                crow[j] += aik * brow[j];
            }
        }
    }
    round_all(p, &mut c);
    Ok(c)
}

/// C = A (m,k) @ B^T where B is (n,k).
pub fn matmul_nt(a: &Tensor, b: &Tensor, p: Precision) -> Result<Tensor> {
    let (m, k) = a.as_matrix()?;
    let (n, kb) = b.as_matrix()?;
    if k != kb {
        return Err(Error::ShapeMismatch {
            op: "matmul_nt",
            detail: format!("inner dims {k} vs {kb}"),
        });
    }
    // transpose B once, then run the ikj kernel; every output element still
    // accumulates over k in ascending order, so results are bit-identical to
    // the direct dot-product form
    let mut bt = vec![0.0; k * n];
    for j in 0..n {
        for kk in 0..k {
            bt[kk * n + j] = b.data[j * k + kk];
        }
    }
    let mut c = Tensor::zeros(vec![m, n]);
    for i in 0..m {
        let crow = &mut c.data[i * n..(i + 1) * n];
        for kk in 0..k {
            let aik = a.data[i * k + kk];
            let brow = &bt[kk * n..(kk + 1) * n];
            for j in 0..n {
                crow[j] += aik * brow[j];
            }
        }
    }
    round_all(p, &mut c);
    Ok(c)
}

/// C = A^T @ B where A is (k,m) and B is (k,n).
pub fn matmul_tn(a: &Tensor, b: &Tensor, p: Precision) -> Result<Tensor> {
    let (k, m) = a.as_matrix()?;
    let (kb, n) = b.as_matrix()?;
    if k != kb {
        return Err(Error::ShapeMismatch {
            op: "matmul_tn",
            detail: format!("inner dims {k} vs {kb}"),
        });
    }
    let mut c = Tensor::zeros(vec![m, n]);
    for kk in 0..k {
        let arow = &a.data[kk * m..(kk + 1) * m];
        let brow = &b.data[kk * n..(kk + 1) * n];
        for i in 0..m {
            let aik = arow[i];
            let crow = &mut c.data[i * n..(i + 1) * n];
            for j in 0..n {
                crow[j] += aik * brow[j];
            }
        }
    }
    round_all(p, &mut c);
    Ok(c)
}

/// x (batch,n) + bias (n), broadcast over the batch dimension.
pub fn add_bias(x: &Tensor, bias: &Tensor, p: Precision) -> Result<Tensor> {
    let (batch, n) = x.as_matrix()?;
    if bias.shape() != [n] {
        return Err(Error::ShapeMismatch {
            op: "add_bias",
            detail: format!("x cols {n}, bias shape {:?}", bias.shape()),
        });
    }
    let mut out = x.clone();
    for i in 0..batch {
        let row = &mut out.data[i * n..(i + 1) * n];
        for j in 0..n {
            row[j] += bias.data[j];
        }
    }
    round_all(p, &mut out);
    Ok(out)
}

pub fn ew_add(a: &Tensor, b: &Tensor, p: Precision) -> Result<Tensor> {
    ew_zip(a, b, p, "ew_add", |x, y| x + y)
}

pub fn ew_mul(a: &Tensor, b: &Tensor, p: Precision) -> Result<Tensor> {
    ew_zip(a, b, p, "ew_mul", |x, y| x * y)
}

fn ew_zip(
    a: &Tensor,
    b: &Tensor,
    p: Precision,
    op: &'static str,
    f: impl Fn(f64, f64) -> f64,
) -> Result<Tensor> {
    if a.shape != b.shape {
        return Err(Error::ShapeMismatch {
            op: "ew",
            detail: format!("{op}: {:?} vs {:?}", a.shape, b.shape),
        });
    }
    let mut out = a.clone();
    for (o, y) in out.data.iter_mut().zip(&b.data) {
        *o = p.round(f(*o, *y));
    }
    Ok(out)
}

pub fn map_unary(x: &Tensor, p: Precision, f: impl Fn(f64) -> f64) -> Tensor {
    let mut out = x.clone();
    for v in &mut out.data {
        *v = p.round(f(*v));
    }
    out
}

/// Mean of all entries, row-major sequential accumulation.
pub fn mean_all(x: &Tensor, p: Precision) -> Tensor {
    let mut acc = 0.0;
    for v in &x.data {
        acc += v;
    }
    Tensor::scalar(p.round(acc / x.numel() as f64))
}

/// Column sums of a (batch,n) tensor; used by the bias-add backward.
pub fn col_sum(x: &Tensor, p: Precision) -> Result<Tensor> {
    let (batch, n) = x.as_matrix()?;
    let mut out = Tensor::zeros(vec![n]);
    for i in 0..batch {
        let row = &x.data[i * n..(i + 1) * n];
        for j in 0..n {
            out.data[j] += row[j];
        }
    }
    round_all(p, &mut out);
    Ok(out)
}

pub fn l2_norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}
