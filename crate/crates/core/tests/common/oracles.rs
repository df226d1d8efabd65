//! Independent reference implementations and finite-difference gradient checks.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ser_core::nn::activation::{elu_backward, elu_forward, softmax, softmax_backward};
use ser_core::nn::batchnorm::{batchnorm2d_backward, batchnorm2d_train, BN_EPS};
use ser_core::nn::conv::{conv2d_backward, conv2d_forward, ConvGeometry};
use ser_core::nn::dense::{dense_backward, dense_forward};
use ser_core::nn::pool::{maxpool2d_backward, maxpool2d_forward};
use ser_core::optim::{cross_entropy, softmax_cross_entropy_grad};
use ser_core::tensor::Tensor;

pub const FD_STEP: f64 = 1e-5;
/// Entries smaller than this are compared absolutely against `tol * FLOOR`.
pub const REL_FLOOR: f64 = 1e-8;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
}

/// Textbook cross-correlation: `out[n,o,y,x] = b[o] + sum w[o,c,i,j] * xpad[n,c,y*s+i,x*s+j]`.
pub fn conv_reference(x: &Tensor<f64>, w: &Tensor<f64>, b: &Tensor<f64>, stride: usize, pad: usize) -> Tensor<f64> {
    let (n, c, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (o, kh, kw) = (w.shape()[0], w.shape()[2], w.shape()[3]);
    let oh = (h + 2 * pad - kh) / stride + 1;
    let ow = (wd + 2 * pad - kw) / stride + 1;
    let at = |t: &Tensor<f64>, i: [usize; 4]| {
        let s = t.shape();
        t.data()[((i[0] * s[1] + i[1]) * s[2] + i[2]) * s[3] + i[3]]
    };
    let mut out = vec![0.0; n * o * oh * ow];
    for bn in 0..n {
        for oc in 0..o {
            for y in 0..oh {
                for xx in 0..ow {
                    let mut acc = b.data()[oc];
                    for ic in 0..c {
                        for i in 0..kh {
                            for j in 0..kw {
                                let iy = (y * stride + i) as isize - pad as isize;
                                let ix = (xx * stride + j) as isize - pad as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                    continue;
                                }
                                acc += at(w, [oc, ic, i, j]) * at(x, [bn, ic, iy as usize, ix as usize]);
                            }
                        }
                    }
                    out[((bn * o + oc) * oh + y) * ow + xx] = acc;
                }
            }
        }
    }
    Tensor::new(vec![n, o, oh, ow], out).unwrap()
}

/// Central differences of the scalar `f` with respect to every entry of `x`.
pub fn numeric_grad(x: &Tensor<f64>, mut f: impl FnMut(&Tensor<f64>) -> f64) -> Vec<f64> {
    let mut probe = x.clone();
    (0..x.len())
        .map(|i| {
            let orig = probe.data()[i];
            probe.data_mut()[i] = orig + FD_STEP;
            let up = f(&probe);
            probe.data_mut()[i] = orig - FD_STEP;
            let down = f(&probe);
            probe.data_mut()[i] = orig;
            (up - down) / (2.0 * FD_STEP)
        })
        .collect()
}

/// Largest `|a - n| / max(|a|, |n|)` over all entries.
pub fn max_rel_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    max_rel_error_floor(analytic, numeric, REL_FLOOR)
}

/// As [`max_rel_error`], with the denominator clamped to at least `floor`.
pub fn max_rel_error_floor(analytic: &[f64], numeric: &[f64], floor: f64) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| (a - n).abs() / a.abs().max(n.abs()).max(floor))
        .fold(0.0, f64::max)
}

fn weighted_sum(y: &Tensor<f64>, r: &Tensor<f64>) -> f64 {
    y.data().iter().zip(r.data()).map(|(a, b)| a * b).sum()
}

/// conv2d: input, weight and bias gradients under a random linear loss.
pub fn conv_grad_error(seed: u64) -> f64 {
    let mut g = rng(seed);
    let (n, c, h, w) = (2, g.gen_range(1..4), g.gen_range(4..8), g.gen_range(4..8));
    let (o, k) = (g.gen_range(1..4), [1, 3][g.gen_range(0..2)]);
    let geom = ConvGeometry {
        stride: g.gen_range(1..3),
        padding: g.gen_range(0..2),
    };
    let x = random(&mut g, &[n, c, h, w]);
    let wt = random(&mut g, &[o, c, k, k]);
    let b = random(&mut g, &[o]);
    let y = conv2d_forward(&x, &wt, &b, geom).unwrap();
    let r = random(&mut g, y.shape());
    let grads = conv2d_backward(&x, &wt, &r, geom).unwrap();
    let e1 = max_rel_error(
        grads.input.data(),
        &numeric_grad(&x, |x| weighted_sum(&conv2d_forward(x, &wt, &b, geom).unwrap(), &r)),
    );
    let e2 = max_rel_error(
        grads.weight.data(),
        &numeric_grad(&wt, |wt| weighted_sum(&conv2d_forward(&x, wt, &b, geom).unwrap(), &r)),
    );
    let e3 = max_rel_error(
        grads.bias.data(),
        &numeric_grad(&b, |b| weighted_sum(&conv2d_forward(&x, &wt, b, geom).unwrap(), &r)),
    );
    e1.max(e2).max(e3)
}

pub fn dense_grad_error(seed: u64) -> f64 {
    let mut g = rng(seed);
    let (n, d, k) = (g.gen_range(1..5), g.gen_range(1..12), g.gen_range(1..8));
    let x = random(&mut g, &[n, d]);
    let w = random(&mut g, &[d, k]);
    let b = random(&mut g, &[k]);
    let r = random(&mut g, &[n, k]);
    let (dx, dw, db) = dense_backward(&x, &w, &r).unwrap();
    let e1 = max_rel_error(
        dx.data(),
        &numeric_grad(&x, |x| weighted_sum(&dense_forward(x, &w, &b).unwrap(), &r)),
    );
    let e2 = max_rel_error(
        dw.data(),
        &numeric_grad(&w, |w| weighted_sum(&dense_forward(&x, w, &b).unwrap(), &r)),
    );
    let e3 = max_rel_error(
        db.data(),
        &numeric_grad(&b, |b| weighted_sum(&dense_forward(&x, &w, b).unwrap(), &r)),
    );
    e1.max(e2).max(e3)
}

/// Training-mode batch norm, differentiated through the batch statistics.
pub fn batchnorm_grad_error(seed: u64) -> f64 {
    let mut g = rng(seed);
    let (n, c, h, w) = (
        g.gen_range(2..4),
        g.gen_range(1..4),
        g.gen_range(2..4),
        g.gen_range(2..4),
    );
    let x = random(&mut g, &[n, c, h, w]).map(|v| 2.0 * v + 0.5);
    let gamma = random(&mut g, &[c]).map(|v| 1.0 + 0.5 * v);
    let beta = random(&mut g, &[c]);
    let r = random(&mut g, &[n, c, h, w]);
    let (_, cache) = batchnorm2d_train(&x, &gamma, &beta, BN_EPS).unwrap();
    let (dx, dg, db) = batchnorm2d_backward(&cache, &gamma, &r).unwrap();
    let loss = |x: &Tensor<f64>, gm: &Tensor<f64>, bt: &Tensor<f64>| {
        weighted_sum(&batchnorm2d_train(x, gm, bt, BN_EPS).unwrap().0, &r)
    };
    let e1 = max_rel_error(dx.data(), &numeric_grad(&x, |x| loss(x, &gamma, &beta)));
    let e2 = max_rel_error(dg.data(), &numeric_grad(&gamma, |gm| loss(&x, gm, &beta)));
    let e3 = max_rel_error(db.data(), &numeric_grad(&beta, |bt| loss(&x, &gamma, bt)));
    e1.max(e2).max(e3)
}

/// ELU away from the kink at zero, where the derivative is discontinuous
/// for alpha != 1 and the difference quotient straddles it.
pub fn elu_grad_error(seed: u64) -> f64 {
    let mut g = rng(seed);
    let alpha = [1.0, 0.5, 2.0][seed as usize % 3];
    let x = random(&mut g, &[3, 7]).map(|v| 3.0 * v + if v >= 0.0 { 0.01 } else { -0.01 });
    let r = random(&mut g, &[3, 7]);
    let dx = elu_backward(&x, &r, alpha).unwrap();
    max_rel_error(
        dx.data(),
        &numeric_grad(&x, |x| weighted_sum(&elu_forward(x, alpha), &r)),
    )
}

/// Softmax followed by mean cross-entropy, through both the fused gradient
/// and the separate softmax Jacobian.
pub fn softmax_ce_grad_error(seed: u64) -> f64 {
    let mut g = rng(seed);
    let (n, k) = (g.gen_range(1..6), g.gen_range(2..13));
    let z = random(&mut g, &[n, k]).map(|v| 4.0 * v);
    let targets: Vec<usize> = (0..n).map(|_| g.gen_range(0..k)).collect();
    let probs = softmax(&z).unwrap();
    let fused = softmax_cross_entropy_grad(&probs, &targets).unwrap();
    let numeric = numeric_grad(&z, |z| cross_entropy(&softmax(z).unwrap(), &targets).unwrap());
    let e1 = max_rel_error(fused.data(), &numeric);

    // d CE / d p, then back through the softmax Jacobian
    let mut dp = Tensor::<f64>::zeros(&[n, k]);
    for (i, &t) in targets.iter().enumerate() {
        dp.data_mut()[i * k + t] = -1.0 / (n as f64 * probs.data()[i * k + t]);
    }
    let chained = softmax_backward(&probs, &dp).unwrap();
    e1.max(max_rel_error(chained.data(), &numeric))
}

/// Max pooling on inputs with distinct, well-separated values so the
/// argmax does not move under the finite-difference step.
pub fn maxpool_grad_error(seed: u64) -> f64 {
    let mut g = rng(seed);
    let shape = [2, 2, g.gen_range(2..7), g.gen_range(2..7)];
    let len: usize = shape.iter().product();
    let mut vals: Vec<f64> = (0..len).map(|i| i as f64 * 0.01).collect();
    for i in (1..len).rev() {
        vals.swap(i, g.gen_range(0..=i));
    }
    let x = Tensor::new(shape.to_vec(), vals).unwrap();
    let (y, arg) = maxpool2d_forward(&x).unwrap();
    let r = random(&mut g, y.shape());
    let dx = maxpool2d_backward(&r, &arg, x.shape()).unwrap();
    max_rel_error(
        dx.data(),
        &numeric_grad(&x, |x| weighted_sum(&maxpool2d_forward(x).unwrap().0, &r)),
    )
}

/// A random conv case: shapes, stride and padding drawn from `seed`.
pub fn conv_case(seed: u64) -> (Tensor<f64>, Tensor<f64>, Tensor<f64>, ConvGeometry) {
    let mut g = rng(seed);
    let k = g.gen_range(1..=5);
    let pad = g.gen_range(0..=2);
    let stride = g.gen_range(1..=3);
    let h = g.gen_range(k.max(1)..k + 9);
    let w = g.gen_range(k.max(1)..k + 9);
    let (n, c, o) = (g.gen_range(1..3), g.gen_range(1..5), g.gen_range(1..5));
    let x = random(&mut g, &[n, c, h, w]);
    let wt = random(&mut g, &[o, c, k, k]);
    let b = random(&mut g, &[o]);
    (x, wt, b, ConvGeometry { stride, padding: pad })
}

/// Largest absolute difference between the layer's conv and the reference on `conv_case(seed)`.
pub fn conv_oracle_diff(seed: u64) -> f64 {
    let (x, w, b, geom) = conv_case(seed);
    let fast = conv2d_forward(&x, &w, &b, geom).unwrap();
    let slow = conv_reference(&x, &w, &b, geom.stride, geom.padding);
    assert_eq!(fast.shape(), slow.shape(), "seed {seed}");
    fast.data()
        .iter()
        .zip(slow.data())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max)
}
