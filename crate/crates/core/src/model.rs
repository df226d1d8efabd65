//! The four-block CNN, inference, and the `SERM` model file.
//!
//! Stack: 4 × [conv 3×3 pad 1 → batch norm → ELU → max-pool 2×2 → dropout
//! 0.25] with widths 16/32/64/128, then flatten → dense 256 → ELU → dropout
//! 0.5 → dense 12 → softmax. A 1 × 128 × 130 input pools down to 128 × 8 × 8.
//!
//! File layout (little-endian):
//!
//! ```text
//! "SERM" | u32 version | u32 header_len | header (JSON, UTF-8)
//!        | f32 parameters and buffers in stack order | u32 CRC-32
//! ```
//!
//! The CRC covers the header and the float payload.

use std::fs;
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{ClassLabel, Emotion, Gender, NUM_CLASSES};
use crate::dsp::{MelSpectrogram, CANONICAL_FRAMES, DEFAULT_N_MELS};
use crate::nn::{BatchNorm2d, Conv2d, ConvGeometry, Dense, Layer, Mode};
use crate::optim::metrics::rank_classes;
use crate::rng::{self, Stream};
use crate::tensor::{Scalar, Tensor, TensorError};

pub const MODEL_MAGIC: &[u8; 4] = b"SERM";
pub const MODEL_FORMAT_VERSION: u32 = 1;
const STD_FLOOR: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("model file version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("model file checksum mismatch (stored {stored:#010x}, computed {computed:#010x})")]
    ChecksumFailure { stored: u32, computed: u32 },
    #[error("model file truncated: {0}")]
    TruncatedFile(String),
    #[error("not a model file: {0}")]
    BadFormat(String),
    #[error("model I/O: {0}")]
    Io(#[from] std::io::Error),
}

/// Hyperparameters that determine the layer stack.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    /// `[channels, mel bands, frames]`
    pub input_shape: [usize; 3],
    pub conv_widths: Vec<usize>,
    pub kernel: usize,
    pub hidden: usize,
    pub n_classes: usize,
    pub conv_dropout: f64,
    pub dense_dropout: f64,
    pub elu_alpha: f64,
}

impl Default for Architecture {
    fn default() -> Self {
        Self {
            input_shape: [1, DEFAULT_N_MELS, CANONICAL_FRAMES],
            conv_widths: vec![16, 32, 64, 128],
            kernel: 3,
            hidden: 256,
            n_classes: NUM_CLASSES,
            conv_dropout: 0.25,
            dense_dropout: 0.5,
            elu_alpha: 1.0,
        }
    }
}

impl Architecture {
    /// `[C, H, W]` entering the flatten layer.
    pub fn pooled_shape(&self) -> [usize; 3] {
        let [_, mut h, mut w] = self.input_shape;
        for _ in &self.conv_widths {
            h /= 2;
            w /= 2;
        }
        let c = self.conv_widths.last().copied().unwrap_or(self.input_shape[0]);
        [c, h, w]
    }

    pub fn flatten_size(&self) -> usize {
        self.pooled_shape().iter().product()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RankedClass {
    pub label: ClassLabel,
    pub probability: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictionResult {
    /// All classes, most probable first; ties by class index.
    pub ranked: Vec<RankedClass>,
    pub top1: ClassLabel,
}

impl PredictionResult {
    fn from_probs(probs: &[f32], labels: &[ClassLabel]) -> Self {
        let ranked: Vec<RankedClass> = rank_classes(probs)
            .into_iter()
            .map(|i| RankedClass {
                label: labels[i],
                probability: probs[i] as f64,
            })
            .collect();
        let top1 = ranked[0].label;
        Self { ranked, top1 }
    }

    pub fn probability_of(&self, label: ClassLabel) -> Option<f64> {
        self.ranked.iter().find(|r| r.label == label).map(|r| r.probability)
    }

    pub fn rank_of(&self, label: ClassLabel) -> Option<usize> {
        self.ranked.iter().position(|r| r.label == label)
    }
}

#[derive(Debug, Clone)]
pub struct SerModel {
    pub architecture: Architecture,
    pub layers: Vec<Layer<f32>>,
    pub class_labels: Vec<ClassLabel>,
    /// Standardize each input to zero mean and unit variance before the first layer.
    pub standardize: bool,
    pub version: u32,
}

fn uniform_init(shape: &[usize], fan_in: usize, rng: &mut ChaCha8Rng) -> Tensor<f32> {
    // He-uniform bound for ELU/ReLU-like activations
    let limit = (6.0 / fan_in as f64).sqrt();
    Tensor::from_fn(shape, |_| ((2.0 * rng.gen::<f64>() - 1.0) * limit) as f32)
}

fn build_layers(arch: &Architecture, seed: u64) -> Vec<Layer<f32>> {
    let mut rng = rng::stream(seed, Stream::Init);
    let k = arch.kernel;
    let mut layers = Vec::new();
    let mut c_in = arch.input_shape[0];
    for &c_out in &arch.conv_widths {
        let fan_in = c_in * k * k;
        layers.push(Layer::Conv2d(Conv2d::new(
            uniform_init(&[c_out, c_in, k, k], fan_in, &mut rng),
            Tensor::zeros(&[c_out]),
            ConvGeometry {
                stride: 1,
                padding: k / 2,
            },
        )));
        layers.push(Layer::BatchNorm2d(BatchNorm2d::new(c_out)));
        layers.push(Layer::elu(arch.elu_alpha));
        layers.push(Layer::maxpool());
        layers.push(Layer::dropout(arch.conv_dropout));
        c_in = c_out;
    }
    let flat = arch.flatten_size();
    layers.push(Layer::flatten());
    layers.push(Layer::Dense(Dense::new(
        uniform_init(&[flat, arch.hidden], flat, &mut rng),
        Tensor::zeros(&[arch.hidden]),
    )));
    layers.push(Layer::elu(arch.elu_alpha));
    layers.push(Layer::dropout(arch.dense_dropout));
    layers.push(Layer::Dense(Dense::new(
        uniform_init(&[arch.hidden, arch.n_classes], arch.hidden, &mut rng),
        Tensor::zeros(&[arch.n_classes]),
    )));
    layers.push(Layer::softmax());
    layers
}

/// The default network with weights drawn from `seed`.
pub fn build_ser_model(seed: u64) -> SerModel {
    SerModel::build(Architecture::default(), seed)
}

impl SerModel {
    pub fn build(architecture: Architecture, seed: u64) -> Self {
        let layers = build_layers(&architecture, seed);
        let class_labels = (0..architecture.n_classes)
            .map(|i| ClassLabel::from_index(i).unwrap_or_else(|| ClassLabel::new(Gender::Male, Emotion::ALL[i % 6])))
            .collect();
        Self {
            architecture,
            layers,
            class_labels,
            standardize: true,
            version: MODEL_FORMAT_VERSION,
        }
    }

    pub fn input_shape(&self) -> [usize; 3] {
        self.architecture.input_shape
    }

    pub fn parameter_count(&self) -> usize {
        self.layers
            .iter()
            .flat_map(|l| l.parameters())
            .map(|(_, t)| t.len())
            .sum()
    }

    pub fn buffer_count(&self) -> usize {
        self.layers.iter().flat_map(|l| l.buffers()).map(|(_, t)| t.len()).sum()
    }

    /// Shape after each layer for a batch of one.
    pub fn shape_trace(&self) -> Result<Vec<Vec<usize>>, TensorError> {
        let [c, h, w] = self.input_shape();
        let mut shape = vec![1, c, h, w];
        let mut trace = Vec::with_capacity(self.layers.len());
        for l in &self.layers {
            shape = l.output_shape(&shape)?;
            trace.push(shape.clone());
        }
        Ok(trace)
    }

    /// Flattened model input for one spectrogram, standardized if enabled.
    pub fn prepare_input(&self, features: &MelSpectrogram) -> Result<Vec<f32>, TensorError> {
        let [c, h, w] = self.input_shape();
        let values = &features.values;
        if c != 1 || values.rows != h || values.cols != w {
            return Err(crate::tensor::shape_err(
                "predict",
                format!("[{h}, {w}] spectrogram"),
                &[values.rows, values.cols],
            ));
        }
        Ok(standardize_values(&values.data, self.standardize))
    }

    /// Stack `inputs` (each from [`prepare_input`](Self::prepare_input)) into `[N, C, H, W]`.
    pub fn batch_tensor(&self, inputs: &[Vec<f32>]) -> Result<Tensor<f32>, TensorError> {
        let [c, h, w] = self.input_shape();
        let data: Vec<f32> = inputs.iter().flat_map(|v| v.iter().copied()).collect();
        Tensor::new(vec![inputs.len(), c, h, w], data)
    }

    /// Eval-mode forward through the whole stack, softmax included.
    pub fn infer(&self, x: &Tensor<f32>) -> Result<Tensor<f32>, TensorError> {
        let mut h = x.clone();
        for l in &self.layers {
            h = l.infer(&h)?;
        }
        Ok(h)
    }

    /// Train-mode forward up to the logits (the trailing softmax is left to the loss).
    pub fn forward_logits(&mut self, x: Tensor<f32>, rng: &mut ChaCha8Rng) -> Result<Tensor<f32>, TensorError> {
        let n = self.logit_layers();
        let mut h = x;
        for l in &mut self.layers[..n] {
            h = l.forward(h, Mode::Train, rng)?;
        }
        Ok(h)
    }

    /// Backward from the gradient with respect to the logits.
    pub fn backward_logits(&mut self, grad: Tensor<f32>) -> Result<(), TensorError> {
        let n = self.logit_layers();
        let mut g = grad;
        for l in self.layers[..n].iter_mut().rev() {
            g = l.backward(g)?;
        }
        Ok(())
    }

    fn logit_layers(&self) -> usize {
        match self.layers.last() {
            Some(Layer::Softmax { .. }) => self.layers.len() - 1,
            _ => self.layers.len(),
        }
    }

    /// Ranked distribution over all classes for one spectrogram.
    pub fn predict(&self, features: &MelSpectrogram) -> Result<PredictionResult, TensorError> {
        let input = self.prepare_input(features)?;
        let probs = self.infer(&self.batch_tensor(&[input])?)?;
        Ok(PredictionResult::from_probs(probs.data(), &self.class_labels))
    }

    /// Class probabilities for many spectrograms, `chunk` at a time.
    pub fn predict_probs(&self, features: &[&MelSpectrogram], chunk: usize) -> Result<Vec<Vec<f32>>, TensorError> {
        let mut out = Vec::with_capacity(features.len());
        for group in features.chunks(chunk.max(1)) {
            let inputs = group
                .iter()
                .map(|f| self.prepare_input(f))
                .collect::<Result<Vec<_>, _>>()?;
            let probs = self.infer(&self.batch_tensor(&inputs)?)?;
            let k = probs.shape()[1];
            out.extend(probs.data().chunks_exact(k).map(|r| r.to_vec()));
        }
        Ok(out)
    }

    pub fn rank(&self, probs: &[f32]) -> PredictionResult {
        PredictionResult::from_probs(probs, &self.class_labels)
    }

    fn header(&self) -> ModelHeader {
        let mut tensors = Vec::new();
        for (i, l) in self.layers.iter().enumerate() {
            for (name, t) in l.parameters().into_iter().chain(l.buffers()) {
                tensors.push(TensorEntry {
                    layer: i,
                    kind: l.kind().to_string(),
                    name: name.to_string(),
                    shape: t.shape().to_vec(),
                });
            }
        }
        ModelHeader {
            architecture: self.architecture.clone(),
            class_labels: self.class_labels.clone(),
            standardize: self.standardize,
            layers: self.layers.iter().map(|l| l.kind().to_string()).collect(),
            tensors,
        }
    }

    fn stored_tensors(&self) -> impl Iterator<Item = &Tensor<f32>> {
        self.layers
            .iter()
            .flat_map(|l| l.parameters().into_iter().chain(l.buffers()).map(|(_, t)| t))
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>, ModelError> {
        let header = serde_json::to_vec(&self.header()).map_err(|e| ModelError::BadFormat(e.to_string()))?;
        let n_floats: usize = self.stored_tensors().map(|t| t.len()).sum();
        let mut out = Vec::with_capacity(12 + header.len() + 4 * n_floats + 4);
        out.extend_from_slice(MODEL_MAGIC);
        out.extend_from_slice(&self.version.to_le_bytes());
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        for t in self.stored_tensors() {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let crc = crc32fast::hash(&out[12..]);
        out.extend_from_slice(&crc.to_le_bytes());
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ModelError> {
        if bytes.len() < 12 {
            return Err(ModelError::TruncatedFile(format!(
                "{} bytes, need at least 12 for the preamble",
                bytes.len()
            )));
        }
        if &bytes[0..4] != MODEL_MAGIC {
            return Err(ModelError::BadFormat("missing SERM magic".into()));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != MODEL_FORMAT_VERSION {
            return Err(ModelError::VersionMismatch {
                found: version,
                expected: MODEL_FORMAT_VERSION,
            });
        }
        let header_len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let header_end = 12usize
            .checked_add(header_len)
            .filter(|&e| e + 4 <= bytes.len())
            .ok_or_else(|| ModelError::TruncatedFile("header runs past end of file".into()))?;
        let header: ModelHeader = serde_json::from_slice(&bytes[12..header_end])
            .map_err(|e| ModelError::BadFormat(format!("header: {e}")))?;

        let mut model = SerModel::build(header.architecture.clone(), 0);
        let n_floats: usize = model.stored_tensors().map(|t| t.len()).sum();
        let expected_len = header_end + 4 * n_floats + 4;
        if bytes.len() < expected_len {
            return Err(ModelError::TruncatedFile(format!(
                "{} bytes, architecture needs {expected_len}",
                bytes.len()
            )));
        }
        if bytes.len() > expected_len {
            return Err(ModelError::BadFormat(format!(
                "{} trailing bytes after checksum",
                bytes.len() - expected_len
            )));
        }
        let stored = u32::from_le_bytes(bytes[expected_len - 4..].try_into().unwrap());
        let computed = crc32fast::hash(&bytes[12..expected_len - 4]);
        if stored != computed {
            return Err(ModelError::ChecksumFailure { stored, computed });
        }

        let rebuilt = model.header();
        if rebuilt.layers != header.layers || rebuilt.tensors != header.tensors {
            return Err(ModelError::BadFormat(
                "tensor table does not match the declared architecture".into(),
            ));
        }
        if header.class_labels.len() != header.architecture.n_classes {
            return Err(ModelError::BadFormat("class label count mismatch".into()));
        }

        let mut floats = bytes[header_end..expected_len - 4]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()));
        for l in &mut model.layers {
            for t in l.parameters_mut() {
                for v in t.data_mut() {
                    *v = floats.next().expect("length checked above");
                }
            }
            for t in l.buffers_mut() {
                for v in t.data_mut() {
                    *v = floats.next().expect("length checked above");
                }
            }
        }
        model.class_labels = header.class_labels;
        model.standardize = header.standardize;
        model.version = version;
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        Self::from_bytes(&fs::read(path)?)
    }

    /// One-line-per-layer description.
    pub fn summary(&self) -> Vec<LayerSummary> {
        let trace = self.shape_trace().unwrap_or_default();
        self.layers
            .iter()
            .enumerate()
            .map(|(i, l)| LayerSummary {
                kind: l.kind().to_string(),
                output_shape: trace.get(i).map(|s| s[1..].to_vec()).unwrap_or_default(),
                parameters: l.parameters().iter().map(|(_, t)| t.len()).sum(),
            })
            .collect()
    }
}

pub fn save_model(model: &SerModel, path: &Path) -> Result<(), ModelError> {
    model.save(path)
}

pub fn load_model(path: &Path) -> Result<SerModel, ModelError> {
    SerModel::load(path)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LayerSummary {
    pub kind: String,
    pub output_shape: Vec<usize>,
    pub parameters: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TensorEntry {
    layer: usize,
    kind: String,
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ModelHeader {
    architecture: Architecture,
    class_labels: Vec<ClassLabel>,
    standardize: bool,
    layers: Vec<String>,
    tensors: Vec<TensorEntry>,
}

/// Subtract the mean and divide by the standard deviation (floored at 1e-6).
pub fn standardize_values(values: &[f64], enabled: bool) -> Vec<f32> {
    if !enabled {
        return values.iter().map(|&v| v as f32).collect();
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let std = var.sqrt().max(STD_FLOOR);
    values.iter().map(|&v| ((v - mean) / std) as f32).collect()
}

/// Mean and population standard deviation, for diagnostics.
pub fn tensor_stats<T: Scalar>(t: &Tensor<T>) -> (f64, f64) {
    let n = t.len() as f64;
    let mean = t.data().iter().map(|v| v.as_f64()).sum::<f64>() / n;
    let var = t.data().iter().map(|v| (v.as_f64() - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}
