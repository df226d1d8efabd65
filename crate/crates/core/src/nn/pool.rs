//! 2×2, stride-2 max pooling. Odd trailing rows/columns are dropped, so
//! each spatial dimension floors (65 → 32).

use crate::tensor::{Scalar, Tensor, TensorError};

/// Flat input index of the winning element for each output.
pub type Argmax = Vec<usize>;

pub fn maxpool2d_forward<T: Scalar>(input: &Tensor<T>) -> Result<(Tensor<T>, Argmax), TensorError> {
    let (n, c, h, w) = input.dims4("maxpool2d")?;
    let (oh, ow) = (h / 2, w / 2);
    let x = input.data();
    let mut out = Vec::with_capacity(n * c * oh * ow);
    let mut arg = Vec::with_capacity(n * c * oh * ow);
    for plane in 0..n * c {
        let base = plane * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let top = base + 2 * oy * w + 2 * ox;
                // row-major window order; strict `>` keeps the first of equal values
                let cands = [top, top + 1, top + w, top + w + 1];
                let mut best = cands[0];
                for &i in &cands[1..] {
                    if x[i] > x[best] {
                        best = i;
                    }
                }
                out.push(x[best]);
                arg.push(best);
            }
        }
    }
    Ok((Tensor::new(vec![n, c, oh, ow], out)?, arg))
}

/// Route each output gradient to its argmax position.
pub fn maxpool2d_backward<T: Scalar>(
    grad_out: &Tensor<T>,
    argmax: &[usize],
    input_shape: &[usize],
) -> Result<Tensor<T>, TensorError> {
    if grad_out.len() != argmax.len() {
        return Err(crate::tensor::shape_err(
            "maxpool2d backward",
            format!("{} elements", argmax.len()),
            grad_out.shape(),
        ));
    }
    let mut dx = Tensor::zeros(input_shape);
    let d = dx.data_mut();
    for (&i, &g) in argmax.iter().zip(grad_out.data()) {
        d[i] += g;
    }
    Ok(dx)
}
