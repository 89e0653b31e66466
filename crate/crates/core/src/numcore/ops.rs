//! Normalizations and the backward rules of the operators the model uses.
//!
//! Transpose, reshape, concatenation and row slicing are linear
//! permutations of entries; their backward passes are the inverse
//! permutation and live next to the forward code that uses them.

use crate::error::{Error, Result};

use super::Tensor;

fn check_input(v: &[f64]) -> Result<f64> {
    if v.is_empty() {
        return Err(Error::Empty("softmax of an empty vector".into()));
    }
    let mut max = f64::NEG_INFINITY;
    for &x in v {
        if !x.is_finite() {
            return Err(Error::NonFinite(format!("softmax input {x}")));
        }
        max = max.max(x);
    }
    Ok(max)
}

/// Numerically stable softmax.
pub fn softmax(v: &[f64]) -> Result<Vec<f64>> {
    let max = check_input(v)?;
    let mut out: Vec<f64> = v.iter().map(|&x| (x - max).exp()).collect();
    let total: f64 = out.iter().sum();
    for o in &mut out {
        *o /= total;
    }
    Ok(out)
}

/// Numerically stable `ln(softmax(v))`.
pub fn log_softmax(v: &[f64]) -> Result<Vec<f64>> {
    let max = check_input(v)?;
    let log_total = v.iter().map(|&x| (x - max).exp()).sum::<f64>().ln();
    Ok(v.iter().map(|&x| x - max - log_total).collect())
}

/// Softmax applied to every row of a matrix.
pub fn softmax_rows(t: &Tensor) -> Result<Tensor> {
    let cols = t.cols();
    let mut data = Vec::with_capacity(t.len());
    for r in 0..t.rows() {
        data.extend(softmax(&t.data()[r * cols..(r + 1) * cols])?);
    }
    Tensor::new(t.shape().to_vec(), data)
}

/// Log-softmax applied to every row of a matrix.
pub fn log_softmax_rows(t: &Tensor) -> Result<Tensor> {
    let cols = t.cols();
    let mut data = Vec::with_capacity(t.len());
    for r in 0..t.rows() {
        data.extend(log_softmax(&t.data()[r * cols..(r + 1) * cols])?);
    }
    Tensor::new(t.shape().to_vec(), data)
}

/// Gradient w.r.t. the logits of `p = softmax(s)` given `dL/dp`.
pub fn softmax_backward(probs: &[f64], grad: &[f64]) -> Vec<f64> {
    let dot: f64 = probs.iter().zip(grad).map(|(p, g)| p * g).sum();
    probs.iter().zip(grad).map(|(p, g)| p * (g - dot)).collect()
}

/// Gradient w.r.t. the logits of `y = log_softmax(s)` given `dL/dy`.
pub fn log_softmax_backward(log_probs: &[f64], grad: &[f64]) -> Vec<f64> {
    let total: f64 = grad.iter().sum();
    log_probs
        .iter()
        .zip(grad)
        .map(|(lp, g)| g - lp.exp() * total)
        .collect()
}

pub fn softmax_rows_backward(probs: &Tensor, grad: &Tensor) -> Result<Tensor> {
    if probs.shape() != grad.shape() {
        return Err(Error::Shape(format!(
            "softmax backward {:?} vs {:?}",
            probs.shape(),
            grad.shape()
        )));
    }
    let cols = probs.cols();
    let mut data = Vec::with_capacity(probs.len());
    for r in 0..probs.rows() {
        let span = r * cols..(r + 1) * cols;
        data.extend(softmax_backward(
            &probs.data()[span.clone()],
            &grad.data()[span],
        ));
    }
    Tensor::new(probs.shape().to_vec(), data)
}

pub fn log_softmax_rows_backward(log_probs: &Tensor, grad: &Tensor) -> Result<Tensor> {
    if log_probs.shape() != grad.shape() {
        return Err(Error::Shape(format!(
            "log-softmax backward {:?} vs {:?}",
            log_probs.shape(),
            grad.shape()
        )));
    }
    let cols = log_probs.cols();
    let mut data = Vec::with_capacity(log_probs.len());
    for r in 0..log_probs.rows() {
        let span = r * cols..(r + 1) * cols;
        data.extend(log_softmax_backward(
            &log_probs.data()[span.clone()],
            &grad.data()[span],
        ));
    }
    Tensor::new(log_probs.shape().to_vec(), data)
}

/// Gradients of `a · b` w.r.t. both factors.
pub fn matmul_backward(a: &Tensor, b: &Tensor, grad: &Tensor) -> Result<(Tensor, Tensor)> {
    Ok((grad.matmul_t(b)?, a.t_matmul(grad)?))
}

/// Masks `grad` by `pre > 0`; the subgradient at exactly zero is zero.
pub fn relu_backward(pre: &Tensor, grad: &Tensor) -> Result<Tensor> {
    pre.zip_map(grad, |p, g| if p > 0.0 { g } else { 0.0 })
}

/// Gradient of `mean(t)` spread over every entry.
pub fn mean_backward(shape: &[usize], grad: f64) -> Tensor {
    let count: usize = shape.iter().product();
    Tensor::full(shape, grad / count as f64)
}
