//! Fully connected layer `x W + b` with `W` stored `[D, K]`.

use crate::tensor::{axpy, dot, shape_err, Scalar, Tensor, TensorError};

pub fn dense_forward<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
) -> Result<Tensor<T>, TensorError> {
    let (n, d) = input.dims2("dense")?;
    let (wd, k) = weight.dims2("dense weights")?;
    if wd != d {
        return Err(shape_err("dense", format!("weights [{d}, K]"), weight.shape()));
    }
    if bias.shape() != [k] {
        return Err(shape_err("dense bias", format!("[{k}]"), bias.shape()));
    }
    let (x, w) = (input.data(), weight.data());
    let mut out = Vec::with_capacity(n * k);
    for row in x.chunks_exact(d) {
        let mut acc = bias.data().to_vec();
        for (j, &xv) in row.iter().enumerate() {
            axpy(xv, &w[j * k..(j + 1) * k], &mut acc);
        }
        out.extend(acc);
    }
    Tensor::new(vec![n, k], out)
}

/// Returns `(d input, d weight, d bias)`.
pub fn dense_backward<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>), TensorError> {
    let (n, d) = input.dims2("dense backward")?;
    let (_, k) = weight.dims2("dense backward")?;
    if grad_out.shape() != [n, k] {
        return Err(shape_err("dense backward", format!("[{n}, {k}]"), grad_out.shape()));
    }
    let (x, w, g) = (input.data(), weight.data(), grad_out.data());
    let mut dx = Vec::with_capacity(n * d);
    let mut dw = vec![T::zero(); d * k];
    let mut db = vec![T::zero(); k];
    for (row, grow) in x.chunks_exact(d).zip(g.chunks_exact(k)) {
        for (acc, &gv) in db.iter_mut().zip(grow) {
            *acc += gv;
        }
        for (j, &xv) in row.iter().enumerate() {
            if xv != T::zero() {
                axpy(xv, grow, &mut dw[j * k..(j + 1) * k]);
            }
            dx.push(dot(&w[j * k..(j + 1) * k], grow));
        }
    }
    Ok((
        Tensor::new(vec![n, d], dx)?,
        Tensor::new(vec![d, k], dw)?,
        Tensor::new(vec![k], db)?,
    ))
}
