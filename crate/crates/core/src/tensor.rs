//! Dense row-major `f64` tensors and the value-level kernels shared by the
//! graph ops.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("{op}: dimension mismatch between {left:?} and {right:?}")]
    Shape {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("shape {shape:?} holds {expected} values but {actual} were supplied")]
    ValueCount {
        shape: Vec<usize>,
        expected: usize,
        actual: usize,
    },
    #[error("shape {0:?} has a zero dimension")]
    ZeroDim(Vec<usize>),
    #[error("{0}: every position is masked")]
    Empty(&'static str),
    #[error("target index {target} out of range for {len} classes")]
    TargetOutOfRange { target: usize, len: usize },
    #[error("loss node has shape {0:?}; backward needs a scalar")]
    NonScalarLoss(Vec<usize>),
    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),
}

/// Immutable-by-convention dense tensor. A scalar has an empty shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self, TensorError> {
        if shape.contains(&0) {
            return Err(TensorError::ZeroDim(shape));
        }
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(TensorError::ValueCount {
                shape,
                expected,
                actual: data.len(),
            });
        }
        Ok(Self { shape, data })
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: Vec::new(),
            data: vec![value],
        }
    }

    /// A rank-1 tensor. Panics on an empty slice.
    pub fn vector(data: Vec<f64>) -> Self {
        assert!(!data.is_empty(), "vector must be non-empty");
        Self {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, TensorError> {
        Self::new(vec![rows, cols], data)
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; n],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Self::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
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

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1 && self.shape.iter().all(|&d| d == 1)
    }

    /// The single value of a scalar (or one-element) tensor.
    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.data.len(), 1);
        self.data[0]
    }

    /// Row `i` of a rank-2 tensor.
    pub fn row(&self, i: usize) -> &[f64] {
        let cols = self.shape[1];
        &self.data[i * cols..(i + 1) * cols]
    }

    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    pub fn cols(&self) -> usize {
        self.shape[1]
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn check_matvec(w: &Tensor, x: &Tensor, op: &'static str) -> Result<(), TensorError> {
    if w.shape.len() != 2 || x.shape.len() != 1 || w.shape[1] != x.shape[0] {
        return Err(TensorError::Shape {
            op,
            left: w.shape.clone(),
            right: x.shape.clone(),
        });
    }
    Ok(())
}

/// `W x + b`.
pub fn affine(w: &Tensor, x: &Tensor, b: &Tensor) -> Result<Tensor, TensorError> {
    check_matvec(w, x, "affine")?;
    if b.shape != [w.shape[0]] {
        return Err(TensorError::Shape {
            op: "affine",
            left: w.shape.clone(),
            right: b.shape.clone(),
        });
    }
    let cols = w.shape[1];
    let data = w
        .data
        .chunks_exact(cols)
        .zip(&b.data)
        .map(|(row, bias)| dot(row, &x.data) + bias)
        .collect();
    Ok(Tensor::vector(data))
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Softmax with max subtraction.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// `-log softmax(logits)[target]`, evaluated as `logsumexp - logit`.
pub fn softmax_cross_entropy(logits: &[f64], target: usize) -> Result<f64, TensorError> {
    if target >= logits.len() {
        return Err(TensorError::TargetOutOfRange {
            target,
            len: logits.len(),
        });
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = logits.iter().map(|&z| (z - max).exp()).sum();
    Ok(max + sum.ln() - logits[target])
}

/// Componentwise max over the unmasked rows. Ties resolve to the lowest row
/// index; the returned argmax holds one row index per component.
pub fn masked_max_pool<R: AsRef<[f64]>>(
    rows: &[R],
    mask: &[bool],
) -> Result<(Vec<f64>, Vec<usize>), TensorError> {
    if rows.len() != mask.len() {
        return Err(TensorError::Shape {
            op: "masked_max_pool",
            left: vec![rows.len()],
            right: vec![mask.len()],
        });
    }
    let mut valid = rows.iter().zip(mask).enumerate().filter(|(_, (_, &m))| m);
    let (first, (row, _)) = valid.next().ok_or(TensorError::Empty("masked_max_pool"))?;
    let width = row.as_ref().len();
    let mut pooled = row.as_ref().to_vec();
    let mut argmax = vec![first; width];
    for (i, (row, _)) in valid {
        let row = row.as_ref();
        if row.len() != width {
            return Err(TensorError::Shape {
                op: "masked_max_pool",
                left: vec![width],
                right: vec![row.len()],
            });
        }
        for j in 0..width {
            if row[j] > pooled[j] {
                pooled[j] = row[j];
                argmax[j] = i;
            }
        }
    }
    Ok((pooled, argmax))
}
