use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense row-major tensor of `f64`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.contains(&0) {
            return Err(Error::invalid(format!(
                "tensor dimensions must be positive, got {shape:?}"
            )));
        }
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::Dimension {
                op: "tensor",
                left: shape,
                right: vec![data.len()],
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("tensor"));
        }
        Ok(Tensor { shape, data })
    }

    pub fn vector(data: Vec<f64>) -> Result<Self> {
        Tensor::new(vec![data.len()], data)
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Tensor::new(vec![rows, cols], data)
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape,
            data: vec![0.0; n],
        }
    }

    pub fn filled(shape: Vec<usize>, value: f64) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape,
            data: vec![value; n],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Tensor::zeros(vec![n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    /// Wraps raw kernel output. Callers guarantee the length invariant.
    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Tensor { shape, data }
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

    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    pub fn cols(&self) -> usize {
        self.shape.get(1).copied().unwrap_or(1)
    }

    pub fn row(&self, r: usize) -> &[f64] {
        let c = self.cols();
        &self.data[r * c..(r + 1) * c]
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Sigmoid,
    Tanh,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Sigmoid => sigmoid(x),
            Activation::Tanh => x.tanh(),
        }
    }

    /// Derivative expressed through the activation's output `y`.
    #[inline]
    pub(crate) fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Sigmoid => y * (1.0 - y),
            Activation::Tanh => 1.0 - y * y,
        }
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

/// Floor applied to the probability inside the cross-entropy logarithm.
pub const LOG_EPSILON: f64 = 1e-12;

pub(crate) fn affine_kernel(w: &[f64], x: &[f64], b: &[f64]) -> Vec<f64> {
    let d_in = x.len();
    b.iter()
        .enumerate()
        .map(|(o, &bias)| {
            let row = &w[o * d_in..(o + 1) * d_in];
            bias + row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>()
        })
        .collect()
}

pub(crate) fn softmax_kernel(z: &[f64]) -> Vec<f64> {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

pub(crate) fn check_affine_shapes(w: &Tensor, x: &Tensor, b: &Tensor) -> Result<()> {
    if w.shape().len() != 2 || x.shape().len() != 1 || b.shape().len() != 1 {
        return Err(Error::Dimension {
            op: "affine_transform",
            left: w.shape().to_vec(),
            right: x.shape().to_vec(),
        });
    }
    if w.cols() != x.len() {
        return Err(Error::Dimension {
            op: "affine_transform",
            left: w.shape().to_vec(),
            right: x.shape().to_vec(),
        });
    }
    if w.rows() != b.len() {
        return Err(Error::Dimension {
            op: "affine_transform",
            left: w.shape().to_vec(),
            right: b.shape().to_vec(),
        });
    }
    Ok(())
}

/// `W·x + b` for a matrix `W` of shape `[d_out, d_in]`.
pub fn affine_transform(x: &Tensor, w: &Tensor, b: &Tensor) -> Result<Tensor> {
    check_affine_shapes(w, x, b)?;
    let out = affine_kernel(w.data(), x.data(), b.data());
    finite("affine_transform", Tensor::from_parts(vec![b.len()], out))
}

pub fn elementwise_activation(x: &Tensor, kind: Activation) -> Result<Tensor> {
    if !x.all_finite() {
        return Err(Error::NonFinite("elementwise_activation"));
    }
    let data = x.data().iter().map(|&v| kind.apply(v)).collect();
    Ok(Tensor::from_parts(x.shape().to_vec(), data))
}

/// Numerically stable softmax over a vector.
pub fn softmax(z: &Tensor) -> Result<Tensor> {
    if z.is_empty() {
        return Err(Error::Empty("softmax"));
    }
    if z.shape().len() != 1 {
        return Err(Error::Dimension {
            op: "softmax",
            left: z.shape().to_vec(),
            right: vec![z.len()],
        });
    }
    finite(
        "softmax",
        Tensor::from_parts(z.shape().to_vec(), softmax_kernel(z.data())),
    )
}

/// `-ln(max(p[target], LOG_EPSILON))`.
pub fn cross_entropy(p: &Tensor, target: usize) -> Result<f64> {
    if target >= p.len() {
        return Err(Error::IndexOutOfRange {
            what: "cross_entropy target",
            index: target,
            len: p.len(),
        });
    }
    Ok(-p.data()[target].max(LOG_EPSILON).ln())
}

fn finite(op: &'static str, t: Tensor) -> Result<Tensor> {
    if t.all_finite() {
        Ok(t)
    } else {
        Err(Error::NonFinite(op))
    }
}
