//! Log-mel feature extraction.
//!
//! Pipeline: power STFT (Hann, reflect-centered) → slaney-normalized mel
//! filterbank → decibels with an 80 dB dynamic-range floor → fixed frame
//! count. Defaults produce a 128 × 130 matrix from 3 s of 22.05 kHz audio.

use std::io::{Read, Write};
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use thiserror::Error;

use crate::audio_io::{AudioClip, CANONICAL_SAMPLE_RATE};

pub const DEFAULT_N_FFT: usize = 2048;
pub const DEFAULT_HOP: usize = 512;
pub const DEFAULT_N_MELS: usize = 128;
/// Frames produced by [`CANONICAL_CLIP_SAMPLES`] with the default hop.
pub const CANONICAL_FRAMES: usize = 130;
/// 3.0 s at the canonical rate.
pub const CANONICAL_CLIP_SAMPLES: usize = 66_150;

pub const AMIN: f64 = 1e-10;
pub const TOP_DB: f64 = 80.0;

const CACHE_MAGIC: &[u8; 4] = b"SERF";
const CACHE_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum DspError {
    #[error("frequency must be non-negative, got {0}")]
    DomainError(f64),
    #[error("clip has no samples")]
    InsufficientSamples,
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("mel filter {row} has no support on the FFT bin grid")]
    DegenerateFilter { row: usize },
    #[error("clip sample rate {clip} Hz does not match mel sample rate {mel} Hz")]
    RateMismatch { clip: u32, mel: u32 },
    #[error("feature cache: {0}")]
    Cache(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Window {
    Hann,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StftParams {
    pub n_fft: usize,
    pub hop: usize,
    pub window: Window,
}

impl Default for StftParams {
    fn default() -> Self {
        Self {
            n_fft: DEFAULT_N_FFT,
            hop: DEFAULT_HOP,
            window: Window::Hann,
        }
    }
}

impl StftParams {
    pub fn validate(&self) -> Result<(), DspError> {
        if !self.n_fft.is_power_of_two() || self.n_fft < 2 {
            return Err(DspError::InvalidParams(format!(
                "n_fft {} is not a power of two",
                self.n_fft
            )));
        }
        if self.hop == 0 || self.hop > self.n_fft {
            return Err(DspError::InvalidParams(format!(
                "hop {} must be in 1..={}",
                self.hop, self.n_fft
            )));
        }
        Ok(())
    }

    pub fn n_bins(&self) -> usize {
        self.n_fft / 2 + 1
    }

    /// Frame count for a signal of `len` samples under center padding.
    pub fn n_frames(&self, len: usize) -> usize {
        1 + len / self.hop
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MelParams {
    pub n_mels: usize,
    pub f_min: f64,
    pub f_max: f64,
    pub sample_rate: u32,
}

impl Default for MelParams {
    fn default() -> Self {
        Self::for_rate(CANONICAL_SAMPLE_RATE)
    }
}

impl MelParams {
    /// 128 bands covering `0..=sample_rate/2`.
    pub fn for_rate(sample_rate: u32) -> Self {
        Self {
            n_mels: DEFAULT_N_MELS,
            f_min: 0.0,
            f_max: sample_rate as f64 / 2.0,
            sample_rate,
        }
    }

    pub fn validate(&self) -> Result<(), DspError> {
        let nyquist = self.sample_rate as f64 / 2.0;
        if self.n_mels == 0 {
            return Err(DspError::InvalidParams("n_mels must be at least 1".into()));
        }
        if !(self.f_min >= 0.0 && self.f_min < self.f_max && self.f_max <= nyquist) {
            return Err(DspError::InvalidParams(format!(
                "need 0 <= f_min < f_max <= {nyquist}, got f_min={} f_max={}",
                self.f_min, self.f_max
            )));
        }
        Ok(())
    }
}

/// Row-major dense matrix of `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn column(&self, c: usize) -> Vec<f64> {
        (0..self.rows).map(|r| self.get(r, c)).collect()
    }
}

/// dB-scaled mel spectrogram, `n_mels` rows by `n_frames` columns.
#[derive(Debug, Clone, PartialEq)]
pub struct MelSpectrogram {
    pub values: Matrix,
    pub params: MelParams,
    /// Lowest value any entry may take (global max minus [`TOP_DB`]).
    pub floor_db: f64,
}

impl MelSpectrogram {
    pub fn n_mels(&self) -> usize {
        self.values.rows
    }

    pub fn n_frames(&self) -> usize {
        self.values.cols
    }
}

/// HTK mel scale: `2595 log10(1 + f/700)`.
pub fn hz_to_mel(f: f64) -> Result<f64, DspError> {
    if f < 0.0 || f.is_nan() {
        return Err(DspError::DomainError(f));
    }
    Ok(2595.0 * (1.0 + f / 700.0).log10())
}

pub fn mel_to_hz(m: f64) -> Result<f64, DspError> {
    if m < 0.0 || m.is_nan() {
        return Err(DspError::DomainError(m));
    }
    Ok(700.0 * (10f64.powf(m / 2595.0) - 1.0))
}

/// Periodic Hann window of length `n`.
pub fn hann_window(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos())
        .collect()
}

// Reflect (no edge repeat) an arbitrary index into 0..len.
fn reflect_index(i: isize, len: usize) -> usize {
    if len == 1 {
        return 0;
    }
    let period = 2 * (len as isize - 1);
    let mut k = i.rem_euclid(period);
    if k >= len as isize {
        k = period - k;
    }
    k as usize
}

/// Power spectrogram `|STFT|²`, shape `(n_fft/2 + 1) × (1 + len/hop)`.
pub fn stft_power(clip: &AudioClip, p: &StftParams) -> Result<Matrix, DspError> {
    p.validate()?;
    if clip.samples.is_empty() {
        return Err(DspError::InsufficientSamples);
    }
    let x = &clip.samples;
    let n_fft = p.n_fft;
    let pad = (n_fft / 2) as isize;
    let n_frames = p.n_frames(x.len());
    let n_bins = p.n_bins();
    let window = match p.window {
        Window::Hann => hann_window(n_fft),
    };

    let fft: Arc<dyn rustfft::Fft<f64>> = FftPlanner::new().plan_fft_forward(n_fft);
    let mut buf = vec![Complex::new(0.0, 0.0); n_fft];
    let mut scratch = vec![Complex::new(0.0, 0.0); fft.get_inplace_scratch_len()];
    let mut out = Matrix::zeros(n_bins, n_frames);

    for t in 0..n_frames {
        let start = (t * p.hop) as isize - pad;
        for (n, slot) in buf.iter_mut().enumerate() {
            let idx = reflect_index(start + n as isize, x.len());
            *slot = Complex::new(window[n] * x[idx] as f64, 0.0);
        }
        fft.process_with_scratch(&mut buf, &mut scratch);
        for (k, c) in buf.iter().take(n_bins).enumerate() {
            out.data[k * n_frames + t] = c.norm_sqr();
        }
    }
    Ok(out)
}

/// Triangular mel filters with slaney area normalization, `n_mels × (n_fft/2 + 1)`.
pub fn mel_filterbank(p: &MelParams, n_fft: usize) -> Result<Matrix, DspError> {
    p.validate()?;
    let n_bins = n_fft / 2 + 1;
    let centers = mel_band_edges(p)?;
    let bin_hz: Vec<f64> = (0..n_bins)
        .map(|k| k as f64 * p.sample_rate as f64 / n_fft as f64)
        .collect();

    let mut fb = Matrix::zeros(p.n_mels, n_bins);
    for r in 0..p.n_mels {
        let (lo, mid, hi) = (centers[r], centers[r + 1], centers[r + 2]);
        let norm = 2.0 / (hi - lo);
        let mut any = false;
        for (k, &f) in bin_hz.iter().enumerate() {
            let rising = (f - lo) / (mid - lo);
            let falling = (hi - f) / (hi - mid);
            let w = rising.min(falling).max(0.0);
            if w > 0.0 {
                any = true;
                fb.data[r * n_bins + k] = w * norm;
            }
        }
        if !any {
            return Err(DspError::DegenerateFilter { row: r });
        }
    }
    Ok(fb)
}

/// The `n_mels + 2` band edges in Hz, equally spaced on the mel axis.
pub fn mel_band_edges(p: &MelParams) -> Result<Vec<f64>, DspError> {
    let lo = hz_to_mel(p.f_min)?;
    let hi = hz_to_mel(p.f_max)?;
    let n = p.n_mels + 2;
    (0..n)
        .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (n - 1) as f64))
        .collect()
}

fn matmul(a: &Matrix, b: &Matrix) -> Matrix {
    assert_eq!(a.cols, b.rows);
    let mut out = Matrix::zeros(a.rows, b.cols);
    for i in 0..a.rows {
        let orow = &mut out.data[i * b.cols..(i + 1) * b.cols];
        for k in 0..a.cols {
            let w = a.data[i * a.cols + k];
            if w == 0.0 {
                continue;
            }
            let brow = &b.data[k * b.cols..(k + 1) * b.cols];
            for (o, &v) in orow.iter_mut().zip(brow) {
                *o += w * v;
            }
        }
    }
    out
}

/// Linear-power mel spectrogram. Builds the filterbank on each call; use
/// [`MelExtractor`] to reuse it.
pub fn mel_spectrogram(clip: &AudioClip, sp: &StftParams, mp: &MelParams) -> Result<Matrix, DspError> {
    MelExtractor::new(*sp, *mp)?.mel_power(clip)
}

/// Decibel conversion: `10 log10(max(p, AMIN))`, floored at `max - TOP_DB`.
pub fn power_to_db(mel: &Matrix, params: MelParams) -> MelSpectrogram {
    let mut values = mel.clone();
    for v in values.data.iter_mut() {
        *v = 10.0 * v.max(AMIN).log10();
    }
    let max = values.data.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let floor_db = max - TOP_DB;
    for v in values.data.iter_mut() {
        *v = v.max(floor_db);
    }
    MelSpectrogram {
        values,
        params,
        floor_db,
    }
}

/// Center-crop or pad (with `floor_db`) to exactly `target_frames` columns.
/// Odd padding puts the extra frame on the right.
pub fn fix_length(spec: &MelSpectrogram, target_frames: usize) -> MelSpectrogram {
    let t = spec.n_frames();
    if t == target_frames {
        return spec.clone();
    }
    let rows = spec.n_mels();
    let mut out = Matrix {
        rows,
        cols: target_frames,
        data: vec![spec.floor_db; rows * target_frames],
    };
    if t > target_frames {
        let offset = (t - target_frames) / 2;
        for r in 0..rows {
            let src = &spec.values.row(r)[offset..offset + target_frames];
            out.data[r * target_frames..(r + 1) * target_frames].copy_from_slice(src);
        }
    } else {
        let left = (target_frames - t) / 2;
        for r in 0..rows {
            out.data[r * target_frames + left..r * target_frames + left + t].copy_from_slice(spec.values.row(r));
        }
    }
    MelSpectrogram {
        values: out,
        params: spec.params,
        floor_db: spec.floor_db,
    }
}

/// STFT and mel parameters with a precomputed filterbank. Immutable after
/// construction, so one instance can be shared across threads.
#[derive(Debug, Clone)]
pub struct MelExtractor {
    pub stft: StftParams,
    pub mel: MelParams,
    filterbank: Matrix,
}

impl MelExtractor {
    pub fn new(stft: StftParams, mel: MelParams) -> Result<Self, DspError> {
        stft.validate()?;
        let filterbank = mel_filterbank(&mel, stft.n_fft)?;
        Ok(Self { stft, mel, filterbank })
    }

    pub fn filterbank(&self) -> &Matrix {
        &self.filterbank
    }

    pub fn mel_power(&self, clip: &AudioClip) -> Result<Matrix, DspError> {
        if clip.sample_rate != self.mel.sample_rate {
            return Err(DspError::RateMismatch {
                clip: clip.sample_rate,
                mel: self.mel.sample_rate,
            });
        }
        let power = stft_power(clip, &self.stft)?;
        Ok(matmul(&self.filterbank, &power))
    }

    /// dB mel spectrogram at exactly `target_frames` columns.
    pub fn features(&self, clip: &AudioClip, target_frames: usize) -> Result<MelSpectrogram, DspError> {
        let db = power_to_db(&self.mel_power(clip)?, self.mel);
        Ok(fix_length(&db, target_frames))
    }
}

impl Default for MelExtractor {
    fn default() -> Self {
        Self::new(StftParams::default(), MelParams::default()).expect("default feature parameters are valid")
    }
}

/// Write a feature cache record: `SERF`, version, n_mels, n_frames, then f32 LE row-major.
pub fn write_feature_cache<W: Write>(spec: &MelSpectrogram, mut w: W) -> Result<(), DspError> {
    w.write_all(CACHE_MAGIC)?;
    w.write_all(&CACHE_VERSION.to_le_bytes())?;
    w.write_all(&(spec.n_mels() as u32).to_le_bytes())?;
    w.write_all(&(spec.n_frames() as u32).to_le_bytes())?;
    for &v in &spec.values.data {
        w.write_all(&(v as f32).to_le_bytes())?;
    }
    Ok(())
}

/// Read a feature cache record. The returned matrix carries `params` and a
/// floor recomputed from its maximum.
pub fn read_feature_cache<R: Read>(mut r: R, params: MelParams) -> Result<MelSpectrogram, DspError> {
    let mut header = [0u8; 16];
    r.read_exact(&mut header)
        .map_err(|_| DspError::Cache("truncated header".into()))?;
    if &header[0..4] != CACHE_MAGIC {
        return Err(DspError::Cache("bad magic".into()));
    }
    let version = u32::from_le_bytes(header[4..8].try_into().unwrap());
    if version != CACHE_VERSION {
        return Err(DspError::Cache(format!("version {version}, expected {CACHE_VERSION}")));
    }
    let rows = u32::from_le_bytes(header[8..12].try_into().unwrap()) as usize;
    let cols = u32::from_le_bytes(header[12..16].try_into().unwrap()) as usize;
    let mut raw = vec![0u8; rows * cols * 4];
    r.read_exact(&mut raw)
        .map_err(|_| DspError::Cache("truncated payload".into()))?;
    let data: Vec<f64> = raw
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    let max = data.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(MelSpectrogram {
        values: Matrix { rows, cols, data },
        params,
        floor_db: max - TOP_DB,
    })
}
