//! ELU and row-wise softmax.

use crate::tensor::{shape_err, Scalar, Tensor, TensorError};

pub const ELU_ALPHA: f64 = 1.0;

/// `x` for `x > 0`, `alpha (e^x - 1)` otherwise.
pub fn elu_forward<T: Scalar>(input: &Tensor<T>, alpha: f64) -> Tensor<T> {
    let a = T::from_f64(alpha);
    input.map(|x| if x > T::zero() { x } else { a * x.exp_m1() })
}

/// Derivative is 1 above zero and `alpha e^x` (= output + alpha) at or below.
pub fn elu_backward<T: Scalar>(input: &Tensor<T>, grad_out: &Tensor<T>, alpha: f64) -> Result<Tensor<T>, TensorError> {
    if input.shape() != grad_out.shape() {
        return Err(shape_err(
            "elu backward",
            format!("{:?}", input.shape()),
            grad_out.shape(),
        ));
    }
    let a = T::from_f64(alpha);
    let data = input
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&x, &g)| if x > T::zero() { g } else { g * a * x.exp() })
        .collect();
    Tensor::new(input.shape().to_vec(), data)
}

/// Row-wise softmax over the last axis of `[N, K]`, shifted by the row max.
pub fn softmax<T: Scalar>(logits: &Tensor<T>) -> Result<Tensor<T>, TensorError> {
    let (n, k) = logits.dims2("softmax")?;
    if k == 0 {
        return Err(shape_err("softmax", "K >= 1", logits.shape()));
    }
    let mut out = logits.clone();
    for row in out.data_mut().chunks_exact_mut(k).take(n) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut sum = T::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v = *v / sum;
        }
    }
    Ok(out)
}

/// Softmax Jacobian-vector product: `dz = p * (g - sum(g * p))` per row.
pub fn softmax_backward<T: Scalar>(probs: &Tensor<T>, grad_out: &Tensor<T>) -> Result<Tensor<T>, TensorError> {
    let (_, k) = probs.dims2("softmax backward")?;
    if probs.shape() != grad_out.shape() {
        return Err(shape_err(
            "softmax backward",
            format!("{:?}", probs.shape()),
            grad_out.shape(),
        ));
    }
    let mut dz = Vec::with_capacity(probs.len());
    for (p, g) in probs.data().chunks_exact(k).zip(grad_out.data().chunks_exact(k)) {
        let inner: T = p.iter().zip(g).map(|(&a, &b)| a * b).sum();
        dz.extend(p.iter().zip(g).map(|(&a, &b)| a * (b - inner)));
    }
    Tensor::new(probs.shape().to_vec(), dz)
}
