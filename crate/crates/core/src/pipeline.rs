//! WAV bytes to model-ready features: decode, resample to the extractor's
//! rate, log-mel, fix to the canonical frame count.

use thiserror::Error;

use crate::audio_io::{self, AudioError};
use crate::dsp::{DspError, MelExtractor, MelSpectrogram, CANONICAL_FRAMES};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Audio(#[from] AudioError),
    #[error(transparent)]
    Dsp(#[from] DspError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Processed {
    pub features: MelSpectrogram,
    /// Decoded duration before cropping or padding.
    pub input_seconds: f64,
    /// Duration of audio the fixed frame count covers.
    pub window_seconds: f64,
    pub cropped: bool,
    pub padded: bool,
}

pub fn features_from_wav(bytes: &[u8], extractor: &MelExtractor) -> Result<Processed, PipelineError> {
    let clip = audio_io::decode_wav(bytes)?;
    let clip = audio_io::resample(&clip, extractor.mel.sample_rate)?;
    let native_frames = extractor.stft.n_frames(clip.len());
    let features = extractor.features(&clip, CANONICAL_FRAMES)?;
    let window_seconds = ((CANONICAL_FRAMES - 1) * extractor.stft.hop) as f64 / extractor.mel.sample_rate as f64;
    Ok(Processed {
        features,
        input_seconds: clip.duration_seconds(),
        window_seconds,
        cropped: native_frames > CANONICAL_FRAMES,
        padded: native_frames < CANONICAL_FRAMES,
    })
}
