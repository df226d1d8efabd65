//! Shared fixtures for the integration tests.
#![allow(dead_code)]

pub mod oracles;

use std::f64::consts::PI;
use std::io::Cursor;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use ser_core::audio_io::AudioClip;
use ser_core::dataset::{ClassLabel, LabeledExample};
use ser_core::dsp::MelExtractor;
use ser_core::pipeline::features_from_wav;

pub const RATE: u32 = 22_050;

/// PCM16 mono WAV written by `hound`, independent of the crate's encoder.
pub fn wav_pcm16(samples: &[f32], rate: u32) -> Vec<u8> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut buf = Cursor::new(Vec::new());
    {
        let mut w = hound::WavWriter::new(&mut buf, spec).unwrap();
        for &s in samples {
            w.write_sample((s.clamp(-1.0, 1.0) * 32767.0).round() as i16).unwrap();
        }
        w.finalize().unwrap();
    }
    buf.into_inner()
}

pub fn sine(freq: f64, rate: u32, n: usize, amp: f64) -> Vec<f32> {
    (0..n)
        .map(|i| (amp * (2.0 * PI * freq * i as f64 / rate as f64).sin()) as f32)
        .collect()
}

/// A voiced, syllabic 3 s clip whose pitch, vibrato and rhythm depend on
/// `class` and `variant`.
pub fn synthetic_voice(class: usize, variant: usize, seconds: f64) -> Vec<f32> {
    let n = (seconds * RATE as f64) as usize;
    let f0 = 95.0 + 23.0 * class as f64 + 7.0 * variant as f64;
    let vibrato = 3.0 + (class % 5) as f64;
    let syllables = 2.0 + (class % 4) as f64 + 0.5 * variant as f64;
    let mut rng = ChaCha8Rng::seed_from_u64((class * 97 + variant) as u64);
    let mut phase = 0.0f64;
    (0..n)
        .map(|i| {
            let t = i as f64 / RATE as f64;
            let f = f0 * (1.0 + 0.03 * (2.0 * PI * vibrato * t).sin());
            phase += 2.0 * PI * f / RATE as f64;
            let env = (PI * syllables * t).sin().abs().powf(1.5);
            let voiced: f64 = (1..=8)
                .map(|h| (h as f64 * phase).sin() / (h as f64).powf(1.0 + 0.1 * (class % 3) as f64))
                .sum();
            let noise = rng.gen_range(-1.0..1.0) * 0.01;
            (0.3 * env * voiced + noise) as f32
        })
        .collect()
}

/// 16 labelled examples built from synthetic audio through the real pipeline.
pub fn memorization_set() -> Vec<LabeledExample> {
    let extractor = MelExtractor::default();
    (0..16)
        .map(|i| {
            let class = i % 12;
            let variant = i / 12;
            let wav = wav_pcm16(&synthetic_voice(class, variant, 3.0), RATE);
            let p = features_from_wav(&wav, &extractor).unwrap();
            LabeledExample {
                features: p.features,
                label: ClassLabel::from_index(class).unwrap(),
                actor_id: 1 + (i % 23) as u8,
                source_id: format!("synthetic-{i:02}"),
            }
        })
        .collect()
}

pub fn clip(samples: Vec<f32>) -> AudioClip {
    AudioClip::new(samples, RATE)
}

/// Every valid audio-only speech file name: 8 emotions × 2 intensities
/// (neutral has only normal) × 2 statements × 2 repetitions × 24 actors.
pub fn ravdess_speech_grid() -> Vec<String> {
    let mut names = Vec::new();
    for actor in 1..=24 {
        for emotion in 1..=8 {
            let intensities: &[u8] = if emotion == 1 { &[1] } else { &[1, 2] };
            for &intensity in intensities {
                for statement in 1..=2 {
                    for repetition in 1..=2 {
                        names.push(format!(
                            "03-01-{emotion:02}-{intensity:02}-{statement:02}-{repetition:02}-{actor:02}.wav"
                        ));
                    }
                }
            }
        }
    }
    names
}

/// Split keys for the full grid, in grid order.
pub fn grid_split_keys() -> Vec<ser_core::dataset::SplitKey> {
    use ser_core::dataset::{convert_label, parse_ravdess_filename, SplitKey};
    ravdess_speech_grid()
        .iter()
        .map(|n| {
            let raw = parse_ravdess_filename(n).unwrap();
            SplitKey {
                actor_id: raw.actor_id,
                emotion: convert_label(&raw).emotion,
            }
        })
        .collect()
}

/// A small network with the same layer kinds, for fast tests.
pub fn tiny_architecture() -> ser_core::model::Architecture {
    ser_core::model::Architecture {
        input_shape: [1, 16, 20],
        conv_widths: vec![4, 8],
        kernel: 3,
        hidden: 16,
        ..Default::default()
    }
}

/// A spectrogram of the given shape with values drawn from `seed`.
pub fn random_spectrogram(rows: usize, cols: usize, seed: u64) -> ser_core::dsp::MelSpectrogram {
    use ser_core::dsp::{Matrix, MelParams, MelSpectrogram};
    let mut g = ChaCha8Rng::seed_from_u64(seed);
    MelSpectrogram {
        values: Matrix {
            rows,
            cols,
            data: (0..rows * cols).map(|_| g.gen_range(-80.0..0.0)).collect(),
        },
        params: MelParams::default(),
        floor_db: -80.0,
    }
}

/// `n` random labelled spectrograms for `arch`, cycling through the classes.
pub fn random_examples(arch: &ser_core::model::Architecture, n: usize, seed: u64) -> Vec<LabeledExample> {
    (0..n)
        .map(|i| LabeledExample {
            features: random_spectrogram(arch.input_shape[1], arch.input_shape[2], seed * 1000 + i as u64),
            label: ClassLabel::from_index(i % arch.n_classes).unwrap(),
            actor_id: 1 + (i % 24) as u8,
            source_id: format!("random-{i}"),
        })
        .collect()
}
