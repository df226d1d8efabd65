//! 2-D cross-correlation with zero padding.

use crate::tensor::{axpy, dot, shape_err, Scalar, Tensor, TensorError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub stride: usize,
    pub padding: usize,
}

impl Default for ConvGeometry {
    fn default() -> Self {
        Self { stride: 1, padding: 0 }
    }
}

#[derive(Debug, Clone)]
pub struct ConvGrads<T> {
    pub input: Tensor<T>,
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

struct Dims {
    n: usize,
    c_in: usize,
    h: usize,
    w: usize,
    c_out: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
}

fn check<T: Scalar>(input: &Tensor<T>, weight: &Tensor<T>, geom: ConvGeometry) -> Result<Dims, TensorError> {
    let (n, c_in, h, w) = input.dims4("conv2d")?;
    let (c_out, wc, kh, kw) = weight.dims4("conv2d weights")?;
    if wc != c_in {
        return Err(shape_err(
            "conv2d",
            format!("weights with {c_in} input channels"),
            weight.shape(),
        ));
    }
    if geom.stride == 0 {
        return Err(TensorError::InvalidArgument {
            op: "conv2d",
            msg: "stride must be at least 1".into(),
        });
    }
    if h + 2 * geom.padding < kh || w + 2 * geom.padding < kw || kh == 0 || kw == 0 {
        return Err(shape_err(
            "conv2d",
            format!("padded input at least {kh}x{kw}"),
            input.shape(),
        ));
    }
    let oh = (h + 2 * geom.padding - kh) / geom.stride + 1;
    let ow = (w + 2 * geom.padding - kw) / geom.stride + 1;
    Ok(Dims {
        n,
        c_in,
        h,
        w,
        c_out,
        kh,
        kw,
        oh,
        ow,
    })
}

/// Output positions along one axis whose tap `k` lands inside the input:
/// `0 <= o*stride + k - pad < len`.
fn valid_range(k: usize, pad: usize, stride: usize, len: usize, out_len: usize) -> (usize, usize) {
    let lo = if k >= pad { 0 } else { (pad - k).div_ceil(stride) };
    // o*stride + k - pad <= len - 1
    let hi = if len + pad < k + 1 {
        0
    } else {
        ((len + pad - k - 1) / stride + 1).min(out_len)
    };
    (lo, hi.max(lo))
}

/// Forward pass. `weight` is `[C_out, C_in, kH, kW]`, `bias` is `[C_out]`.
///
/// Each output starts at its bias and accumulates taps in `(c_in, ky, kx)`
/// order, the same order as a plain nested loop.
pub fn conv2d_forward<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
    geom: ConvGeometry,
) -> Result<Tensor<T>, TensorError> {
    let d = check(input, weight, geom)?;
    if bias.shape() != [d.c_out] {
        return Err(shape_err("conv2d bias", format!("[{}]", d.c_out), bias.shape()));
    }
    let (s, p) = (geom.stride, geom.padding);
    let x = input.data();
    let wt = weight.data();
    let plane_in = d.h * d.w;
    let plane_out = d.oh * d.ow;
    let mut out = vec![T::zero(); d.n * d.c_out * plane_out];

    for n in 0..d.n {
        for co in 0..d.c_out {
            let o_plane = &mut out[(n * d.c_out + co) * plane_out..][..plane_out];
            o_plane.fill(bias.data()[co]);
            for ci in 0..d.c_in {
                let i_plane = &x[(n * d.c_in + ci) * plane_in..][..plane_in];
                for ky in 0..d.kh {
                    let (oy_lo, oy_hi) = valid_range(ky, p, s, d.h, d.oh);
                    for kx in 0..d.kw {
                        let wv = wt[((co * d.c_in + ci) * d.kh + ky) * d.kw + kx];
                        let (ox_lo, ox_hi) = valid_range(kx, p, s, d.w, d.ow);
                        if ox_lo >= ox_hi {
                            continue;
                        }
                        for oy in oy_lo..oy_hi {
                            let iy = oy * s + ky - p;
                            let o_row = &mut o_plane[oy * d.ow..][ox_lo..ox_hi];
                            let i_row = &i_plane[iy * d.w..][..d.w];
                            if s == 1 {
                                let ix0 = ox_lo + kx - p;
                                axpy(wv, &i_row[ix0..ix0 + (ox_hi - ox_lo)], o_row);
                            } else {
                                for (j, o) in o_row.iter_mut().enumerate() {
                                    *o += wv * i_row[(ox_lo + j) * s + kx - p];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    Tensor::new(vec![d.n, d.c_out, d.oh, d.ow], out)
}

/// Gradients with respect to input, weight and bias given `d loss / d output`.
pub fn conv2d_backward<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    grad_out: &Tensor<T>,
    geom: ConvGeometry,
) -> Result<ConvGrads<T>, TensorError> {
    let d = check(input, weight, geom)?;
    if grad_out.shape() != [d.n, d.c_out, d.oh, d.ow] {
        return Err(shape_err(
            "conv2d backward",
            format!("[{}, {}, {}, {}]", d.n, d.c_out, d.oh, d.ow),
            grad_out.shape(),
        ));
    }
    let (s, p) = (geom.stride, geom.padding);
    let x = input.data();
    let wt = weight.data();
    let g = grad_out.data();
    let plane_in = d.h * d.w;
    let plane_out = d.oh * d.ow;

    let mut dx = vec![T::zero(); x.len()];
    let mut dw = vec![T::zero(); wt.len()];
    let mut db = vec![T::zero(); d.c_out];

    for n in 0..d.n {
        for co in 0..d.c_out {
            let g_plane = &g[(n * d.c_out + co) * plane_out..][..plane_out];
            db[co] += g_plane.iter().copied().sum::<T>();
            for ci in 0..d.c_in {
                let i_off = (n * d.c_in + ci) * plane_in;
                for ky in 0..d.kh {
                    let (oy_lo, oy_hi) = valid_range(ky, p, s, d.h, d.oh);
                    for kx in 0..d.kw {
                        let w_idx = ((co * d.c_in + ci) * d.kh + ky) * d.kw + kx;
                        let wv = wt[w_idx];
                        let (ox_lo, ox_hi) = valid_range(kx, p, s, d.w, d.ow);
                        if ox_lo >= ox_hi {
                            continue;
                        }
                        let mut acc = T::zero();
                        for oy in oy_lo..oy_hi {
                            let iy = oy * s + ky - p;
                            let g_row = &g_plane[oy * d.ow..][ox_lo..ox_hi];
                            let row_start = i_off + iy * d.w;
                            if s == 1 {
                                let ix0 = ox_lo + kx - p;
                                let span = ox_hi - ox_lo;
                                acc += dot(g_row, &x[row_start + ix0..row_start + ix0 + span]);
                                axpy(wv, g_row, &mut dx[row_start + ix0..row_start + ix0 + span]);
                            } else {
                                for (j, &gv) in g_row.iter().enumerate() {
                                    let ix = (ox_lo + j) * s + kx - p;
                                    acc += gv * x[row_start + ix];
                                    dx[row_start + ix] += wv * gv;
                                }
                            }
                        }
                        dw[w_idx] += acc;
                    }
                }
            }
        }
    }

    Ok(ConvGrads {
        input: Tensor::new(input.shape().to_vec(), dx)?,
        weight: Tensor::new(weight.shape().to_vec(), dw)?,
        bias: Tensor::new(vec![d.c_out], db)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_kernel() {
        let x = Tensor::<f64>::from_fn(&[1, 1, 3, 4], |i| i as f64 - 5.0);
        let w = Tensor::new(vec![1, 1, 1, 1], vec![1.0]).unwrap();
        let b = Tensor::zeros(&[1]);
        let y = conv2d_forward(&x, &w, &b, ConvGeometry::default()).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn box_filter_of_ones() {
        let x = Tensor::<f64>::full(&[1, 1, 4, 4], 1.0);
        let w = Tensor::full(&[1, 1, 3, 3], 1.0);
        let b = Tensor::zeros(&[1]);
        let y = conv2d_forward(&x, &w, &b, ConvGeometry::default()).unwrap();
        assert_eq!(y.shape(), &[1, 1, 2, 2]);
        assert_eq!(y.data(), &[9.0; 4]);
    }

    #[test]
    fn padding_and_stride_shapes() {
        let x = Tensor::<f32>::zeros(&[2, 3, 7, 9]);
        let w = Tensor::zeros(&[4, 3, 3, 3]);
        let b = Tensor::zeros(&[4]);
        let y = conv2d_forward(&x, &w, &b, ConvGeometry { stride: 2, padding: 1 }).unwrap();
        assert_eq!(y.shape(), &[2, 4, 4, 5]);
    }

    #[test]
    fn shape_errors() {
        let x = Tensor::<f32>::zeros(&[1, 2, 2, 2]);
        let b = Tensor::zeros(&[1]);
        let wrong_channels = Tensor::zeros(&[1, 3, 1, 1]);
        assert!(conv2d_forward(&x, &wrong_channels, &b, ConvGeometry::default()).is_err());
        let too_big = Tensor::zeros(&[1, 2, 3, 3]);
        assert!(matches!(
            conv2d_forward(&x, &too_big, &b, ConvGeometry::default()),
            Err(TensorError::ShapeMismatch { .. })
        ));
        let ok = Tensor::zeros(&[1, 2, 1, 1]);
        assert!(conv2d_forward(&x, &ok, &b, ConvGeometry { stride: 0, padding: 0 }).is_err());
        assert!(conv2d_forward(&x, &ok, &Tensor::zeros(&[2]), ConvGeometry::default()).is_err());
    }

    #[test]
    fn valid_range_edges() {
        // len 5, pad 1, k 0: ix = o - 1 valid for o in 1..=5, out_len 5
        assert_eq!(valid_range(0, 1, 1, 5, 5), (1, 5));
        assert_eq!(valid_range(2, 1, 1, 5, 5), (0, 4));
        assert_eq!(valid_range(1, 1, 1, 5, 5), (0, 5));
        // stride 2, pad 1, k 0: ix = 2o - 1 >= 0 needs o >= 1
        assert_eq!(valid_range(0, 1, 2, 5, 3), (1, 3));
    }
}
