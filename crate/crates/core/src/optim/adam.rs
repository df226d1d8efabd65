//! Adam with bias correction.

use crate::tensor::{shape_err, Scalar, Tensor, TensorError};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Moment estimates for a fixed, ordered list of parameters.
#[derive(Debug, Clone)]
pub struct AdamState<T> {
    pub config: AdamConfig,
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
    /// Number of completed steps.
    pub t: u64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(config: AdamConfig, shapes: &[&[usize]]) -> Self {
        Self {
            config,
            m: shapes.iter().map(|s| Tensor::zeros(s)).collect(),
            v: shapes.iter().map(|s| Tensor::zeros(s)).collect(),
            t: 0,
        }
    }
}

/// One Adam update over all parameters:
///
/// ```text
/// m = b1 m + (1 - b1) g          m_hat = m / (1 - b1^t)
/// v = b2 v + (1 - b2) g^2        v_hat = v / (1 - b2^t)
/// theta -= lr m_hat / (sqrt(v_hat) + eps)
/// ```
///
/// Element arithmetic runs in f64 regardless of `T`.
pub fn adam_step<T: Scalar>(
    params: &mut [&mut Tensor<T>],
    grads: &[&Tensor<T>],
    state: &mut AdamState<T>,
) -> Result<(), TensorError> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(TensorError::InvalidArgument {
            op: "adam_step",
            msg: format!(
                "{} params, {} grads, {} moment slots",
                params.len(),
                grads.len(),
                state.m.len()
            ),
        });
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.shape() != g.shape() || p.shape() != state.m[i].shape() {
            return Err(shape_err("adam_step", format!("{:?}", p.shape()), g.shape()));
        }
    }

    state.t += 1;
    let AdamConfig { lr, beta1, beta2, eps } = state.config;
    let t = state.t as i32;
    let c1 = 1.0 - beta1.powi(t);
    let c2 = 1.0 - beta2.powi(t);

    for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        let m = state.m[i].data_mut();
        let v = state.v[i].data_mut();
        for (((theta, &gi), mi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(m).zip(v) {
            let gf = gi.as_f64();
            let mf = beta1 * mi.as_f64() + (1.0 - beta1) * gf;
            let vf = beta2 * vi.as_f64() + (1.0 - beta2) * gf * gf;
            *mi = T::from_f64(mf);
            *vi = T::from_f64(vf);
            let step = lr * (mf / c1) / ((vf / c2).sqrt() + eps);
            if step != 0.0 {
                *theta = T::from_f64(theta.as_f64() - step);
            }
        }
    }
    Ok(())
}
