//! Speech emotion recognition from log-mel spectrograms.
//!
//! WAV audio becomes a 128 × 130 dB mel spectrogram ([`dsp`]), labelled
//! from RAVDESS file names into 12 gender × emotion classes ([`dataset`]),
//! and classified by a four-block CNN trained from scratch with Adam
//! ([`nn`], [`optim`], [`model`]). [`eval`] scores a blind split and
//! [`service`] serves predictions over HTTP.

pub mod audio_io;
pub mod cli;
pub mod dataset;
pub mod dsp;
pub mod eval;
pub mod model;
pub mod nn;
pub mod optim;
pub mod pipeline;
pub mod rng;
pub mod service;
pub mod tensor;

pub use audio_io::{decode_wav, resample, AudioClip};
pub use dataset::{ClassLabel, Emotion, Gender, LabeledExample};
pub use dsp::{MelExtractor, MelSpectrogram};
pub use model::{build_ser_model, PredictionResult, SerModel};
pub use tensor::Tensor;
