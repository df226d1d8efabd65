//! WAV ingestion and sample-rate conversion.
//!
//! Everything downstream works on mono `f32` samples in `[-1, 1]` at
//! [`CANONICAL_SAMPLE_RATE`]. Decoding accepts PCM16 and IEEE float32 RIFF
//! files with one or two channels; stereo is folded to mono by averaging.

use std::f64::consts::PI;

use thiserror::Error;

/// Sample rate every clip is converted to before feature extraction.
pub const CANONICAL_SAMPLE_RATE: u32 = 22_050;

const FORMAT_PCM: u16 = 1;
const FORMAT_IEEE_FLOAT: u16 = 3;
const FORMAT_EXTENSIBLE: u16 = 0xFFFE;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum AudioError {
    #[error("malformed WAV container: {0}")]
    MalformedContainer(String),
    #[error("unsupported WAV encoding: {0}")]
    UnsupportedEncoding(String),
    #[error("WAV file contains no audio frames")]
    EmptyAudio,
    #[error("invalid sample rate {0}")]
    InvalidSampleRate(u32),
}

/// Decoded mono audio.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    pub samples: Vec<f32>,
    pub sample_rate: u32,
    pub source_id: Option<String>,
}

impl AudioClip {
    pub fn new(samples: Vec<f32>, sample_rate: u32) -> Self {
        Self {
            samples,
            sample_rate,
            source_id: None,
        }
    }

    pub fn with_source(mut self, source_id: impl Into<String>) -> Self {
        self.source_id = Some(source_id.into());
        self
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_seconds(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}

struct FmtChunk {
    format: u16,
    channels: u16,
    sample_rate: u32,
    bits_per_sample: u16,
}

fn read_u16(b: &[u8], at: usize) -> u16 {
    u16::from_le_bytes([b[at], b[at + 1]])
}

fn read_u32(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes([b[at], b[at + 1], b[at + 2], b[at + 3]])
}

fn parse_fmt(body: &[u8]) -> Result<FmtChunk, AudioError> {
    if body.len() < 16 {
        return Err(AudioError::MalformedContainer("fmt chunk shorter than 16 bytes".into()));
    }
    let mut format = read_u16(body, 0);
    let channels = read_u16(body, 2);
    let sample_rate = read_u32(body, 4);
    let bits_per_sample = read_u16(body, 14);
    if format == FORMAT_EXTENSIBLE {
        // WAVE_FORMAT_EXTENSIBLE: the real format tag is the first two bytes of the sub-format GUID.
        if body.len() < 26 {
            return Err(AudioError::MalformedContainer(
                "truncated WAVE_FORMAT_EXTENSIBLE fmt chunk".into(),
            ));
        }
        format = read_u16(body, 24);
    }
    Ok(FmtChunk {
        format,
        channels,
        sample_rate,
        bits_per_sample,
    })
}

/// Decode a RIFF/WAVE byte buffer into a mono clip.
pub fn decode_wav(bytes: &[u8]) -> Result<AudioClip, AudioError> {
    if bytes.len() < 12 || &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(AudioError::MalformedContainer("missing RIFF/WAVE header".into()));
    }

    let mut fmt: Option<FmtChunk> = None;
    let mut data: Option<&[u8]> = None;
    let mut pos = 12;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = read_u32(bytes, pos + 4) as usize;
        let start = pos + 8;
        // A truncated final data chunk is tolerated: keep whatever whole frames arrived.
        let end = start.saturating_add(size).min(bytes.len());
        match id {
            b"fmt " => {
                if start + size > bytes.len() {
                    return Err(AudioError::MalformedContainer("truncated fmt chunk".into()));
                }
                fmt = Some(parse_fmt(&bytes[start..end])?);
            }
            b"data" => data = Some(&bytes[start..end]),
            _ => {}
        }
        if data.is_some() && fmt.is_some() {
            break;
        }
        // chunks are word aligned
        pos = start.saturating_add(size).saturating_add(size & 1);
    }

    let fmt = fmt.ok_or_else(|| AudioError::MalformedContainer("missing fmt chunk".into()))?;
    let data = data.ok_or_else(|| AudioError::MalformedContainer("missing data chunk".into()))?;

    let bytes_per_sample = match (fmt.format, fmt.bits_per_sample) {
        (FORMAT_PCM, 16) => 2,
        (FORMAT_IEEE_FLOAT, 32) => 4,
        (f, b) => {
            return Err(AudioError::UnsupportedEncoding(format!(
                "format tag {f} with {b} bits per sample (supported: PCM16, float32)"
            )))
        }
    };
    if !(1..=2).contains(&fmt.channels) {
        return Err(AudioError::UnsupportedEncoding(format!(
            "{} channels (supported: 1 or 2)",
            fmt.channels
        )));
    }
    if fmt.sample_rate == 0 {
        return Err(AudioError::MalformedContainer("sample rate is zero".into()));
    }

    let channels = fmt.channels as usize;
    let frame_bytes = bytes_per_sample * channels;
    let n_frames = data.len() / frame_bytes;
    if n_frames == 0 {
        return Err(AudioError::EmptyAudio);
    }

    let sample_at = |offset: usize| -> f32 {
        if bytes_per_sample == 2 {
            i16::from_le_bytes([data[offset], data[offset + 1]]) as f32 / 32768.0
        } else {
            let v = f32::from_le_bytes([data[offset], data[offset + 1], data[offset + 2], data[offset + 3]]);
            if v.is_finite() {
                v.clamp(-1.0, 1.0)
            } else {
                0.0
            }
        }
    };

    let samples = (0..n_frames)
        .map(|i| {
            let base = i * frame_bytes;
            if channels == 1 {
                sample_at(base)
            } else {
                0.5 * (sample_at(base) + sample_at(base + bytes_per_sample))
            }
        })
        .collect();

    Ok(AudioClip::new(samples, fmt.sample_rate))
}

/// Encode a clip as a mono IEEE float32 WAV file.
pub fn encode_wav_f32(clip: &AudioClip) -> Vec<u8> {
    encode_wav(clip, FORMAT_IEEE_FLOAT)
}

/// Encode a clip as mono 16-bit PCM. Samples are scaled by 32768 and saturated.
pub fn encode_wav_pcm16(clip: &AudioClip) -> Vec<u8> {
    encode_wav(clip, FORMAT_PCM)
}

fn encode_wav(clip: &AudioClip, format: u16) -> Vec<u8> {
    let bits: u16 = if format == FORMAT_PCM { 16 } else { 32 };
    let block_align = bits / 8;
    let data_len = clip.samples.len() * block_align as usize;
    let mut out = Vec::with_capacity(44 + data_len);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&((36 + data_len) as u32).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&format.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&clip.sample_rate.to_le_bytes());
    out.extend_from_slice(&(clip.sample_rate * block_align as u32).to_le_bytes());
    out.extend_from_slice(&block_align.to_le_bytes());
    out.extend_from_slice(&bits.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&(data_len as u32).to_le_bytes());
    for &s in &clip.samples {
        if format == FORMAT_PCM {
            let v = (s as f64 * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
            out.extend_from_slice(&v.to_le_bytes());
        } else {
            out.extend_from_slice(&s.to_le_bytes());
        }
    }
    out
}

/// Taps each output sample draws from the input.
pub const RESAMPLE_TAPS: usize = 64;
const KAISER_BETA: f64 = 8.6;
// Fraction of the output Nyquist kept in the passband.
const CUTOFF_ROLLOFF: f64 = 0.94;
const MAX_TABLE_PHASES: u64 = 4096;

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

/// Zeroth-order modified Bessel function of the first kind (power series).
fn bessel_i0(x: f64) -> f64 {
    let half = x / 2.0;
    let mut term = 1.0;
    let mut sum = 1.0;
    for k in 1..64 {
        let r = half / k as f64;
        term *= r * r;
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
    }
    sum
}

/// Windowed-sinc interpolation kernel for one fractional phase.
///
/// `frac` in `[0, 1)` is the offset of the output instant past input index
/// `base`; tap `j` multiplies input `base + j - (TAPS/2 - 1)`. Taps are
/// normalized to unit DC gain.
struct SincKernel {
    cutoff: f64,
    i0_beta: f64,
}

impl SincKernel {
    fn new(cutoff: f64) -> Self {
        Self {
            cutoff,
            i0_beta: bessel_i0(KAISER_BETA),
        }
    }

    fn taps(&self, frac: f64, out: &mut [f64; RESAMPLE_TAPS]) {
        let half = (RESAMPLE_TAPS / 2) as f64;
        let mut sum = 0.0;
        for (j, tap) in out.iter_mut().enumerate() {
            // distance from the output instant to this input sample
            let d = (j as f64 - (half - 1.0)) - frac;
            let x = 2.0 * self.cutoff * d;
            let sinc = if x.abs() < 1e-12 {
                1.0
            } else {
                (PI * x).sin() / (PI * x)
            };
            let r = d / half;
            let window = if r.abs() >= 1.0 {
                0.0
            } else {
                bessel_i0(KAISER_BETA * (1.0 - r * r).sqrt()) / self.i0_beta
            };
            *tap = sinc * window;
            sum += *tap;
        }
        for tap in out.iter_mut() {
            *tap /= sum;
        }
    }
}

/// Band-limited sample-rate conversion with a polyphase Kaiser-windowed sinc.
///
/// Output length is `round(len * target / source)`, so duration is preserved
/// to within half an output sample period. Equal rates return the clip
/// unchanged.
pub fn resample(clip: &AudioClip, target_rate: u32) -> Result<AudioClip, AudioError> {
    if target_rate == 0 {
        return Err(AudioError::InvalidSampleRate(target_rate));
    }
    if clip.sample_rate == 0 {
        return Err(AudioError::InvalidSampleRate(clip.sample_rate));
    }
    if clip.sample_rate == target_rate {
        return Ok(clip.clone());
    }

    let src = clip.sample_rate as u64;
    let dst = target_rate as u64;
    let g = gcd(src, dst);
    let up = dst / g;
    let down = src / g;

    let in_len = clip.samples.len() as u64;
    let out_len = ((in_len * dst + src / 2) / src) as usize;

    let cutoff = 0.5 * (dst as f64 / src as f64).min(1.0) * CUTOFF_ROLLOFF;
    let kernel = SincKernel::new(cutoff);

    // Phase table when the rational ratio is small enough, otherwise taps are built per sample.
    let table: Option<Vec<[f64; RESAMPLE_TAPS]>> = (up <= MAX_TABLE_PHASES).then(|| {
        (0..up)
            .map(|p| {
                let mut taps = [0.0; RESAMPLE_TAPS];
                kernel.taps(p as f64 / up as f64, &mut taps);
                taps
            })
            .collect()
    });

    let input = &clip.samples;
    let offset = (RESAMPLE_TAPS / 2 - 1) as i64;
    let mut scratch = [0.0; RESAMPLE_TAPS];
    let mut out = Vec::with_capacity(out_len);
    for n in 0..out_len as u64 {
        let pos = n * down;
        let base = (pos / up) as i64;
        let phase = pos % up;
        let taps = match &table {
            Some(t) => &t[phase as usize],
            None => {
                kernel.taps(phase as f64 / up as f64, &mut scratch);
                &scratch
            }
        };
        let mut acc = 0.0f64;
        for (j, &h) in taps.iter().enumerate() {
            let idx = base + j as i64 - offset;
            if idx >= 0 && (idx as usize) < input.len() {
                acc += h * input[idx as usize] as f64;
            }
        }
        out.push(acc.clamp(-1.0, 1.0) as f32);
    }

    Ok(AudioClip {
        samples: out,
        sample_rate: target_rate,
        source_id: clip.source_id.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pcm16_wav(channels: u16, frames: &[i16]) -> Vec<u8> {
        let data_len = frames.len() * 2;
        let mut out = Vec::new();
        out.extend_from_slice(b"RIFF");
        out.extend_from_slice(&((36 + data_len) as u32).to_le_bytes());
        out.extend_from_slice(b"WAVE");
        out.extend_from_slice(b"fmt ");
        out.extend_from_slice(&16u32.to_le_bytes());
        out.extend_from_slice(&1u16.to_le_bytes());
        out.extend_from_slice(&channels.to_le_bytes());
        out.extend_from_slice(&8000u32.to_le_bytes());
        out.extend_from_slice(&(8000 * 2 * channels as u32).to_le_bytes());
        out.extend_from_slice(&(2 * channels).to_le_bytes());
        out.extend_from_slice(&16u16.to_le_bytes());
        out.extend_from_slice(b"data");
        out.extend_from_slice(&(data_len as u32).to_le_bytes());
        for f in frames {
            out.extend_from_slice(&f.to_le_bytes());
        }
        out
    }

    #[test]
    fn pcm16_scaling() {
        let clip = decode_wav(&pcm16_wav(1, &[16384, -32768, 0])).unwrap();
        assert_eq!(clip.samples, vec![0.5, -1.0, 0.0]);
        assert_eq!(clip.sample_rate, 8000);
    }

    #[test]
    fn stereo_is_averaged() {
        let clip = AudioClip::new(vec![0.2, 0.6], 8000);
        // build a float stereo file by hand: one frame L=0.2 R=0.6
        let mut bytes = encode_wav_f32(&clip);
        bytes[22] = 2; // channels
        bytes[32] = 8; // block align
        let clip = decode_wav(&bytes).unwrap();
        assert_eq!(clip.samples.len(), 1);
        assert!((clip.samples[0] - 0.4).abs() < 1e-7);
    }

    #[test]
    fn rejects_garbage() {
        assert!(matches!(decode_wav(&[0u8]), Err(AudioError::MalformedContainer(_))));
        let mut no_data = pcm16_wav(1, &[1, 2]);
        no_data[36..40].copy_from_slice(b"junk");
        assert!(matches!(decode_wav(&no_data), Err(AudioError::MalformedContainer(_))));
    }

    #[test]
    fn rejects_other_codecs() {
        let mut bytes = pcm16_wav(1, &[1, 2]);
        bytes[20] = 2; // ADPCM
        assert!(matches!(decode_wav(&bytes), Err(AudioError::UnsupportedEncoding(_))));
        let mut bytes = pcm16_wav(1, &[1, 2]);
        bytes[34] = 24;
        assert!(matches!(decode_wav(&bytes), Err(AudioError::UnsupportedEncoding(_))));
    }

    #[test]
    fn empty_data_chunk() {
        assert_eq!(decode_wav(&pcm16_wav(1, &[])), Err(AudioError::EmptyAudio));
    }

    #[test]
    fn identity_resample_is_bit_exact() {
        let clip = AudioClip::new(vec![0.1, -0.3, 0.25, 0.0], CANONICAL_SAMPLE_RATE);
        assert_eq!(resample(&clip, CANONICAL_SAMPLE_RATE).unwrap(), clip);
    }

    #[test]
    fn dc_is_preserved() {
        let clip = AudioClip::new(vec![0.7; 22_050], 44_100);
        let out = resample(&clip, 22_050).unwrap();
        assert_eq!(out.len(), 11_025);
        for &s in &out.samples[64..out.len() - 64] {
            assert!((s - 0.7).abs() < 1e-3, "{s}");
        }
    }

    #[test]
    fn large_ratio_falls_back_to_direct_taps() {
        // 44101 / 22050 share no factor, so the phase table would have 22050 entries.
        let clip = AudioClip::new(vec![0.3; 4410], 44_101);
        let out = resample(&clip, 22_050).unwrap();
        assert_eq!(out.len(), 2205);
        assert!((out.samples[1000] - 0.3).abs() < 1e-3);
    }

    #[test]
    fn zero_target_rate_rejected() {
        let clip = AudioClip::new(vec![0.0; 4], 8000);
        assert_eq!(resample(&clip, 0), Err(AudioError::InvalidSampleRate(0)));
    }
}
