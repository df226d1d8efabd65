//! Categorical cross-entropy on softmax outputs.

use crate::tensor::{Scalar, Tensor, TensorError};

/// Probabilities are floored here before the log.
pub const PROB_FLOOR: f64 = 1e-12;

fn check_targets<T: Scalar>(probs: &Tensor<T>, targets: &[usize]) -> Result<(usize, usize), TensorError> {
    let (n, k) = probs.dims2("cross_entropy")?;
    if targets.len() != n {
        return Err(TensorError::InvalidArgument {
            op: "cross_entropy",
            msg: format!("{} targets for {n} rows", targets.len()),
        });
    }
    if let Some(&bad) = targets.iter().find(|&&t| t >= k) {
        return Err(TensorError::InvalidArgument {
            op: "cross_entropy",
            msg: format!("target {bad} outside 0..{k}"),
        });
    }
    if n == 0 {
        return Err(TensorError::InvalidArgument {
            op: "cross_entropy",
            msg: "empty batch".into(),
        });
    }
    Ok((n, k))
}

/// `-(1/N) sum_i log(max(p[i, t_i], 1e-12))`, accumulated in f64.
pub fn cross_entropy<T: Scalar>(probs: &Tensor<T>, targets: &[usize]) -> Result<f64, TensorError> {
    let (n, k) = check_targets(probs, targets)?;
    let p = probs.data();
    let total: f64 = targets
        .iter()
        .enumerate()
        .map(|(i, &t)| -p[i * k + t].as_f64().max(PROB_FLOOR).ln())
        .sum();
    Ok(total / n as f64)
}

/// Gradient of the mean cross-entropy with respect to the logits that
/// produced `probs` through softmax: `(probs - onehot) / N`.
pub fn softmax_cross_entropy_grad<T: Scalar>(probs: &Tensor<T>, targets: &[usize]) -> Result<Tensor<T>, TensorError> {
    let (n, k) = check_targets(probs, targets)?;
    let inv_n = T::from_f64(1.0 / n as f64);
    let mut g = probs.clone();
    let d = g.data_mut();
    for (i, &t) in targets.iter().enumerate() {
        d[i * k + t] -= T::one();
    }
    for v in d.iter_mut() {
        *v *= inv_n;
    }
    Ok(g)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_and_uniform() {
        let p = Tensor::<f64>::new(vec![2, 3], vec![1.0, 0.0, 0.0, 0.0, 0.0, 1.0]).unwrap();
        assert!(cross_entropy(&p, &[0, 2]).unwrap() < 1e-11);
        let u = Tensor::<f64>::full(&[4, 12], 1.0 / 12.0);
        let l = cross_entropy(&u, &[0, 3, 7, 11]).unwrap();
        assert!((l - 12f64.ln()).abs() < 1e-12);
        assert!((l - 2.4849).abs() < 1e-4);
    }

    #[test]
    fn zero_probability_stays_finite() {
        let p = Tensor::<f64>::new(vec![1, 2], vec![1.0, 0.0]).unwrap();
        let l = cross_entropy(&p, &[1]).unwrap();
        assert!((l - (-(1e-12f64).ln())).abs() < 1e-9);
    }

    #[test]
    fn invalid_targets() {
        let p = Tensor::<f64>::full(&[1, 3], 1.0 / 3.0);
        assert!(cross_entropy(&p, &[3]).is_err());
        assert!(cross_entropy(&p, &[0, 1]).is_err());
        assert!(softmax_cross_entropy_grad(&p, &[5]).is_err());
    }
}
