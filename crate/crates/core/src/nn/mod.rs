//! Neural network layers with forward and backward passes.
//!
//! The free functions in the submodules are the math; [`Layer`] wraps them
//! with parameters, running statistics, gradients and the activations
//! cached between forward and backward.

pub mod activation;
pub mod batchnorm;
pub mod conv;
pub mod dense;
pub mod dropout;
pub mod pool;

use rand_chacha::ChaCha8Rng;

use crate::tensor::{shape_err, Scalar, Tensor, TensorError};

pub use activation::{elu_backward, elu_forward, softmax, softmax_backward, ELU_ALPHA};
pub use batchnorm::{batchnorm2d_backward, batchnorm2d_eval, batchnorm2d_train, BatchNormCache, BN_EPS, BN_MOMENTUM};
pub use conv::{conv2d_backward, conv2d_forward, ConvGeometry, ConvGrads};
pub use dense::{dense_backward, dense_forward};
pub use dropout::{dropout_backward, dropout_train};
pub use pool::{maxpool2d_backward, maxpool2d_forward};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone)]
pub struct Conv2d<T> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
    pub geom: ConvGeometry,
    grad_weight: Tensor<T>,
    grad_bias: Tensor<T>,
    input: Option<Tensor<T>>,
}

impl<T: Scalar> Conv2d<T> {
    pub fn new(weight: Tensor<T>, bias: Tensor<T>, geom: ConvGeometry) -> Self {
        Self {
            grad_weight: Tensor::zeros(weight.shape()),
            grad_bias: Tensor::zeros(bias.shape()),
            weight,
            bias,
            geom,
            input: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct BatchNorm2d<T> {
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
    pub running_mean: Tensor<T>,
    pub running_var: Tensor<T>,
    pub eps: f64,
    pub momentum: f64,
    grad_gamma: Tensor<T>,
    grad_beta: Tensor<T>,
    cache: Option<BatchNormCache<T>>,
}

impl<T: Scalar> BatchNorm2d<T> {
    /// gamma 1, beta 0, running mean 0, running variance 1.
    pub fn new(channels: usize) -> Self {
        Self {
            gamma: Tensor::full(&[channels], T::one()),
            beta: Tensor::zeros(&[channels]),
            running_mean: Tensor::zeros(&[channels]),
            running_var: Tensor::full(&[channels], T::one()),
            eps: BN_EPS,
            momentum: BN_MOMENTUM,
            grad_gamma: Tensor::zeros(&[channels]),
            grad_beta: Tensor::zeros(&[channels]),
            cache: None,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }
}

#[derive(Debug, Clone)]
pub struct Dense<T> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
    grad_weight: Tensor<T>,
    grad_bias: Tensor<T>,
    input: Option<Tensor<T>>,
}

impl<T: Scalar> Dense<T> {
    pub fn new(weight: Tensor<T>, bias: Tensor<T>) -> Self {
        Self {
            grad_weight: Tensor::zeros(weight.shape()),
            grad_bias: Tensor::zeros(bias.shape()),
            weight,
            bias,
            input: None,
        }
    }
}

#[derive(Debug, Clone)]
pub enum Layer<T> {
    Conv2d(Conv2d<T>),
    BatchNorm2d(BatchNorm2d<T>),
    Elu { alpha: f64, input: Option<Tensor<T>> },
    MaxPool2d { cache: Option<(Vec<usize>, Vec<usize>)> },
    Dropout { rate: f64, mask: Option<Vec<T>> },
    Flatten { input_shape: Option<Vec<usize>> },
    Dense(Dense<T>),
    Softmax { output: Option<Tensor<T>> },
}

impl<T: Scalar> Layer<T> {
    pub fn elu(alpha: f64) -> Self {
        Layer::Elu { alpha, input: None }
    }

    pub fn maxpool() -> Self {
        Layer::MaxPool2d { cache: None }
    }

    pub fn dropout(rate: f64) -> Self {
        Layer::Dropout { rate, mask: None }
    }

    pub fn flatten() -> Self {
        Layer::Flatten { input_shape: None }
    }

    pub fn softmax() -> Self {
        Layer::Softmax { output: None }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Layer::Conv2d(_) => "conv2d",
            Layer::BatchNorm2d(_) => "batchnorm2d",
            Layer::Elu { .. } => "elu",
            Layer::MaxPool2d { .. } => "maxpool2d",
            Layer::Dropout { .. } => "dropout",
            Layer::Flatten { .. } => "flatten",
            Layer::Dense(_) => "dense",
            Layer::Softmax { .. } => "softmax",
        }
    }

    /// Forward pass. In [`Mode::Train`] the layer keeps what backward needs
    /// and batch norm updates its running statistics.
    pub fn forward(&mut self, x: Tensor<T>, mode: Mode, rng: &mut ChaCha8Rng) -> Result<Tensor<T>, TensorError> {
        if mode == Mode::Eval {
            return self.infer(&x);
        }
        match self {
            Layer::Conv2d(l) => {
                let y = conv2d_forward(&x, &l.weight, &l.bias, l.geom)?.ensure_finite("conv2d")?;
                l.input = Some(x);
                Ok(y)
            }
            Layer::BatchNorm2d(l) => {
                let (y, cache) = batchnorm2d_train(&x, &l.gamma, &l.beta, l.eps)?;
                let mom = T::from_f64(l.momentum);
                let keep = T::one() - mom;
                for (r, &b) in l.running_mean.data_mut().iter_mut().zip(&cache.mean) {
                    *r = mom * *r + keep * b;
                }
                for (r, &b) in l.running_var.data_mut().iter_mut().zip(&cache.var) {
                    *r = mom * *r + keep * b;
                }
                l.cache = Some(cache);
                y.ensure_finite("batchnorm2d")
            }
            Layer::Elu { alpha, input } => {
                let y = elu_forward(&x, *alpha);
                *input = Some(x);
                Ok(y)
            }
            Layer::MaxPool2d { cache } => {
                let (y, arg) = maxpool2d_forward(&x)?;
                *cache = Some((arg, x.shape().to_vec()));
                Ok(y)
            }
            Layer::Dropout { rate, mask } => {
                let (y, m) = dropout_train(&x, *rate, rng)?;
                *mask = m;
                Ok(y)
            }
            Layer::Flatten { input_shape } => {
                *input_shape = Some(x.shape().to_vec());
                flatten(x)
            }
            Layer::Dense(l) => {
                let y = dense_forward(&x, &l.weight, &l.bias)?.ensure_finite("dense")?;
                l.input = Some(x);
                Ok(y)
            }
            Layer::Softmax { output } => {
                let y = softmax(&x)?;
                *output = Some(y.clone());
                Ok(y)
            }
        }
    }

    /// Inference-mode forward. Touches no state.
    pub fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>, TensorError> {
        match self {
            Layer::Conv2d(l) => conv2d_forward(x, &l.weight, &l.bias, l.geom)?.ensure_finite("conv2d"),
            Layer::BatchNorm2d(l) => batchnorm2d_eval(x, &l.gamma, &l.beta, &l.running_mean, &l.running_var, l.eps)?
                .ensure_finite("batchnorm2d"),
            Layer::Elu { alpha, .. } => Ok(elu_forward(x, *alpha)),
            Layer::MaxPool2d { .. } => Ok(maxpool2d_forward(x)?.0),
            Layer::Dropout { .. } => Ok(x.clone()),
            Layer::Flatten { .. } => flatten(x.clone()),
            Layer::Dense(l) => dense_forward(x, &l.weight, &l.bias)?.ensure_finite("dense"),
            Layer::Softmax { .. } => softmax(x),
        }
    }

    /// Backward pass from the gradient of the loss with respect to this
    /// layer's output. Parameter gradients are stored on the layer
    /// (overwriting the previous step's) and the cached activations are
    /// released.
    pub fn backward(&mut self, g: Tensor<T>) -> Result<Tensor<T>, TensorError> {
        let missing = |op: &'static str| TensorError::InvalidArgument {
            op,
            msg: "backward called without a training-mode forward".into(),
        };
        match self {
            Layer::Conv2d(l) => {
                let x = l.input.take().ok_or_else(|| missing("conv2d"))?;
                let grads = conv2d_backward(&x, &l.weight, &g, l.geom)?;
                l.grad_weight = grads.weight;
                l.grad_bias = grads.bias;
                Ok(grads.input)
            }
            Layer::BatchNorm2d(l) => {
                let cache = l.cache.take().ok_or_else(|| missing("batchnorm2d"))?;
                let (dx, dg, db) = batchnorm2d_backward(&cache, &l.gamma, &g)?;
                l.grad_gamma = dg;
                l.grad_beta = db;
                Ok(dx)
            }
            Layer::Elu { alpha, input } => {
                let x = input.take().ok_or_else(|| missing("elu"))?;
                elu_backward(&x, &g, *alpha)
            }
            Layer::MaxPool2d { cache } => {
                let (arg, shape) = cache.take().ok_or_else(|| missing("maxpool2d"))?;
                maxpool2d_backward(&g, &arg, &shape)
            }
            Layer::Dropout { mask, .. } => Ok(dropout_backward(&g, mask.take().as_deref())),
            Layer::Flatten { input_shape } => {
                let shape = input_shape.take().ok_or_else(|| missing("flatten"))?;
                g.reshape(&shape)
            }
            Layer::Dense(l) => {
                let x = l.input.take().ok_or_else(|| missing("dense"))?;
                let (dx, dw, db) = dense_backward(&x, &l.weight, &g)?;
                l.grad_weight = dw;
                l.grad_bias = db;
                Ok(dx)
            }
            Layer::Softmax { output } => {
                let p = output.take().ok_or_else(|| missing("softmax"))?;
                softmax_backward(&p, &g)
            }
        }
    }

    /// Learnable tensors in a fixed order, with their names.
    pub fn parameters(&self) -> Vec<(&'static str, &Tensor<T>)> {
        match self {
            Layer::Conv2d(l) => vec![("weight", &l.weight), ("bias", &l.bias)],
            Layer::BatchNorm2d(l) => vec![("gamma", &l.gamma), ("beta", &l.beta)],
            Layer::Dense(l) => vec![("weight", &l.weight), ("bias", &l.bias)],
            _ => Vec::new(),
        }
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Tensor<T>> {
        match self {
            Layer::Conv2d(l) => vec![&mut l.weight, &mut l.bias],
            Layer::BatchNorm2d(l) => vec![&mut l.gamma, &mut l.beta],
            Layer::Dense(l) => vec![&mut l.weight, &mut l.bias],
            _ => Vec::new(),
        }
    }

    /// Each parameter paired with its most recent gradient.
    pub fn params_and_grads(&mut self) -> Vec<(&mut Tensor<T>, &Tensor<T>)> {
        match self {
            Layer::Conv2d(l) => vec![(&mut l.weight, &l.grad_weight), (&mut l.bias, &l.grad_bias)],
            Layer::BatchNorm2d(l) => {
                vec![(&mut l.gamma, &l.grad_gamma), (&mut l.beta, &l.grad_beta)]
            }
            Layer::Dense(l) => vec![(&mut l.weight, &l.grad_weight), (&mut l.bias, &l.grad_bias)],
            _ => Vec::new(),
        }
    }

    /// Non-learned state (batch-norm running statistics).
    pub fn buffers(&self) -> Vec<(&'static str, &Tensor<T>)> {
        match self {
            Layer::BatchNorm2d(l) => vec![("running_mean", &l.running_mean), ("running_var", &l.running_var)],
            _ => Vec::new(),
        }
    }

    pub fn buffers_mut(&mut self) -> Vec<&mut Tensor<T>> {
        match self {
            Layer::BatchNorm2d(l) => vec![&mut l.running_mean, &mut l.running_var],
            _ => Vec::new(),
        }
    }

    /// Output shape for an input of `shape`, batch axis included.
    pub fn output_shape(&self, shape: &[usize]) -> Result<Vec<usize>, TensorError> {
        let rank4 = |op| match shape {
            [n, c, h, w] => Ok((*n, *c, *h, *w)),
            _ => Err(shape_err(op, "rank 4", shape)),
        };
        match self {
            Layer::Conv2d(l) => {
                let (n, c, h, w) = rank4("conv2d")?;
                let ws = l.weight.shape();
                let (k_out, k_in, kh, kw) = (ws[0], ws[1], ws[2], ws[3]);
                let p = l.geom.padding;
                if c != k_in || h + 2 * p < kh || w + 2 * p < kw {
                    return Err(shape_err("conv2d", format!("{k_in} channels"), shape));
                }
                Ok(vec![
                    n,
                    k_out,
                    (h + 2 * p - kh) / l.geom.stride + 1,
                    (w + 2 * p - kw) / l.geom.stride + 1,
                ])
            }
            Layer::BatchNorm2d(l) => {
                let (_, c, _, _) = rank4("batchnorm2d")?;
                if c != l.channels() {
                    return Err(shape_err("batchnorm2d", format!("{} channels", l.channels()), shape));
                }
                Ok(shape.to_vec())
            }
            Layer::MaxPool2d { .. } => {
                let (n, c, h, w) = rank4("maxpool2d")?;
                Ok(vec![n, c, h / 2, w / 2])
            }
            Layer::Flatten { .. } => Ok(vec![shape[0], shape[1..].iter().product()]),
            Layer::Dense(l) => {
                let d = l.weight.shape()[0];
                match shape {
                    [n, sd] if *sd == d => Ok(vec![*n, l.weight.shape()[1]]),
                    _ => Err(shape_err("dense", format!("[N, {d}]"), shape)),
                }
            }
            Layer::Elu { .. } | Layer::Dropout { .. } | Layer::Softmax { .. } => Ok(shape.to_vec()),
        }
    }
}

fn flatten<T: Scalar>(x: Tensor<T>) -> Result<Tensor<T>, TensorError> {
    let n = *x
        .shape()
        .first()
        .ok_or_else(|| shape_err("flatten", "rank >= 1", x.shape()))?;
    let rest = if n == 0 { 0 } else { x.len() / n };
    x.reshape(&[n, rest])
}
