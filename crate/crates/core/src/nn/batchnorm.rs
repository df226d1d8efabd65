//! Per-channel batch normalization over `[N, C, H, W]`.

use crate::tensor::{shape_err, Scalar, Tensor, TensorError};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.9;

/// Values saved by the training-mode forward pass for backward.
#[derive(Debug, Clone)]
pub struct BatchNormCache<T> {
    pub xhat: Tensor<T>,
    pub inv_std: Vec<T>,
    /// Batch mean and biased variance per channel.
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

fn check_params<T: Scalar>(c: usize, tensors: &[&Tensor<T>]) -> Result<(), TensorError> {
    for t in tensors {
        if t.shape() != [c] {
            return Err(shape_err("batchnorm2d", format!("[{c}]"), t.shape()));
        }
    }
    Ok(())
}

/// Training-mode forward: normalize by batch statistics, then `gamma * xhat + beta`.
pub fn batchnorm2d_train<T: Scalar>(
    input: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    eps: f64,
) -> Result<(Tensor<T>, BatchNormCache<T>), TensorError> {
    let (n, c, h, w) = input.dims4("batchnorm2d")?;
    check_params(c, &[gamma, beta])?;
    let m = n * h * w;
    if m < 2 {
        return Err(TensorError::DegenerateBatch(m));
    }
    let plane = h * w;
    let x = input.data();
    let mut xhat = vec![T::zero(); x.len()];
    let mut out = vec![T::zero(); x.len()];
    let mut inv_stds = Vec::with_capacity(c);
    let mut means = Vec::with_capacity(c);
    let mut vars = Vec::with_capacity(c);

    for ch in 0..c {
        let planes = (0..n).map(|b| (b * c + ch) * plane);
        let mut sum = 0.0f64;
        for off in planes.clone() {
            sum += x[off..off + plane].iter().map(|v| v.as_f64()).sum::<f64>();
        }
        let mean = sum / m as f64;
        let mut sq = 0.0f64;
        for off in planes.clone() {
            sq += x[off..off + plane]
                .iter()
                .map(|v| {
                    let d = v.as_f64() - mean;
                    d * d
                })
                .sum::<f64>();
        }
        let var = sq / m as f64;
        let inv_std = 1.0 / (var + eps).sqrt();
        let (mean_t, inv_t) = (T::from_f64(mean), T::from_f64(inv_std));
        let (g, b) = (gamma.data()[ch], beta.data()[ch]);
        for off in planes {
            for i in off..off + plane {
                let xh = (x[i] - mean_t) * inv_t;
                xhat[i] = xh;
                out[i] = g * xh + b;
            }
        }
        inv_stds.push(inv_t);
        means.push(mean_t);
        vars.push(T::from_f64(var));
    }

    let shape = input.shape().to_vec();
    Ok((
        Tensor::new(shape.clone(), out)?,
        BatchNormCache {
            xhat: Tensor::new(shape, xhat)?,
            inv_std: inv_stds,
            mean: means,
            var: vars,
        },
    ))
}

/// Inference-mode forward with running statistics.
pub fn batchnorm2d_eval<T: Scalar>(
    input: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    running_mean: &Tensor<T>,
    running_var: &Tensor<T>,
    eps: f64,
) -> Result<Tensor<T>, TensorError> {
    let (n, c, h, w) = input.dims4("batchnorm2d")?;
    check_params(c, &[gamma, beta, running_mean, running_var])?;
    let plane = h * w;
    let eps = T::from_f64(eps);
    let scale: Vec<T> = (0..c)
        .map(|ch| gamma.data()[ch] / (running_var.data()[ch] + eps).sqrt())
        .collect();
    let shift: Vec<T> = (0..c)
        .map(|ch| beta.data()[ch] - running_mean.data()[ch] * scale[ch])
        .collect();
    let mut out = input.clone();
    let d = out.data_mut();
    for b in 0..n {
        for ch in 0..c {
            let off = (b * c + ch) * plane;
            for v in &mut d[off..off + plane] {
                *v = *v * scale[ch] + shift[ch];
            }
        }
    }
    Ok(out)
}

/// Full batch-norm backward, including the coupling through batch mean and variance:
/// `dx = inv_std/m * (m*dxhat - sum(dxhat) - xhat*sum(dxhat*xhat))`.
pub fn batchnorm2d_backward<T: Scalar>(
    cache: &BatchNormCache<T>,
    gamma: &Tensor<T>,
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>), TensorError> {
    if grad_out.shape() != cache.xhat.shape() {
        return Err(shape_err(
            "batchnorm2d backward",
            format!("{:?}", cache.xhat.shape()),
            grad_out.shape(),
        ));
    }
    let (n, c, h, w) = grad_out.dims4("batchnorm2d backward")?;
    let plane = h * w;
    let m = (n * plane) as f64;
    let g = grad_out.data();
    let xh = cache.xhat.data();
    let mut dx = vec![T::zero(); g.len()];
    let mut dgamma = vec![T::zero(); c];
    let mut dbeta = vec![T::zero(); c];

    for ch in 0..c {
        let mut sum_g = 0.0f64;
        let mut sum_gx = 0.0f64;
        for b in 0..n {
            let off = (b * c + ch) * plane;
            for i in off..off + plane {
                sum_g += g[i].as_f64();
                sum_gx += g[i].as_f64() * xh[i].as_f64();
            }
        }
        dbeta[ch] = T::from_f64(sum_g);
        dgamma[ch] = T::from_f64(sum_gx);
        let gm = gamma.data()[ch].as_f64();
        let k = gm * cache.inv_std[ch].as_f64() / m;
        for b in 0..n {
            let off = (b * c + ch) * plane;
            for i in off..off + plane {
                let v = k * (m * g[i].as_f64() - sum_g - xh[i].as_f64() * sum_gx);
                dx[i] = T::from_f64(v);
            }
        }
    }
    Ok((
        Tensor::new(grad_out.shape().to_vec(), dx)?,
        Tensor::new(vec![c], dgamma)?,
        Tensor::new(vec![c], dbeta)?,
    ))
}
