//! Inverted dropout.

use rand::RngCore;

use crate::tensor::{Scalar, Tensor, TensorError};

/// Draw a keep/scale mask: each entry is 0 with probability `rate`, else `1/(1-rate)`.
pub fn dropout_mask<T: Scalar>(len: usize, rate: f64, rng: &mut impl RngCore) -> Vec<T> {
    let scale = T::from_f64(1.0 / (1.0 - rate));
    // compare a 32-bit draw against rate * 2^32
    let threshold = (rate * 4_294_967_296.0) as u64;
    (0..len)
        .map(|_| {
            if (rng.next_u32() as u64) < threshold {
                T::zero()
            } else {
                scale
            }
        })
        .collect()
}

/// Train-mode dropout. Returns the output and the mask for backward. A rate
/// of zero skips the RNG entirely.
pub fn dropout_train<T: Scalar>(
    input: &Tensor<T>,
    rate: f64,
    rng: &mut impl RngCore,
) -> Result<(Tensor<T>, Option<Vec<T>>), TensorError> {
    if !(0.0..1.0).contains(&rate) {
        return Err(TensorError::InvalidArgument {
            op: "dropout",
            msg: format!("rate {rate} outside [0, 1)"),
        });
    }
    if rate == 0.0 {
        return Ok((input.clone(), None));
    }
    let mask = dropout_mask::<T>(input.len(), rate, rng);
    let mut out = input.clone();
    for (v, &m) in out.data_mut().iter_mut().zip(&mask) {
        *v *= m;
    }
    Ok((out, Some(mask)))
}

pub fn dropout_backward<T: Scalar>(grad_out: &Tensor<T>, mask: Option<&[T]>) -> Tensor<T> {
    let mut g = grad_out.clone();
    if let Some(mask) = mask {
        for (v, &m) in g.data_mut().iter_mut().zip(mask) {
            *v *= m;
        }
    }
    g
}
