//! Structured synthetic EEG.
//!
//! Each channel carries unit-RMS `1/f^β` background noise. Class `c < 12`
//! adds a Hann-windowed burst at `4 + 3c` Hz on three class-specific
//! channels; class 12 (silence) adds nothing. A fixed per-subject mixing
//! matrix `I + m·G/√C` then blends the channels, so subjects differ the way
//! head geometry makes real recordings differ.

use std::fmt::Write as _;
use std::sync::Arc;

use num_complex::Complex;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rustfft::{Fft, FftPlanner};

use super::{DataError, TrialSet, N_CLASSES, SILENCE};
use crate::seed;
use crate::signal::{parse_key_values, Event, RawRecording, MONTAGE_64, SPEECH_CHANNELS};

const TAG_MIXING: u64 = 1 << 48;
const TAG_TRIAL: u64 = 2 << 48;
const TAG_BLOCK: u64 = 3 << 48;
const CARRIERS: usize = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub n_subjects: usize,
    pub trials_per_class_per_subject: usize,
    pub n_channels: usize,
    pub n_samples: usize,
    pub sample_rate_hz: f64,
    /// Spectral slope of the background; 1.0 is pink noise.
    pub noise_exponent: f64,
    /// Peak signature RMS relative to the unit-RMS background.
    pub signature_snr: f64,
    /// Strength `m` of the off-diagonal part of the subject mixing matrix.
    pub subject_mixing: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_subjects: 8,
            trials_per_class_per_subject: 10,
            n_channels: 10,
            n_samples: 1500,
            sample_rate_hz: 1000.0,
            noise_exponent: 1.0,
            signature_snr: 1.0,
            subject_mixing: 0.5,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), DataError> {
        let bad = |m: String| Err(DataError::Config(m));
        if self.n_subjects == 0 || self.n_subjects > u16::MAX as usize + 1 {
            return bad(format!("n_subjects must be in 1..=65536, got {}", self.n_subjects));
        }
        if self.trials_per_class_per_subject == 0 {
            return bad("trials_per_class_per_subject must be at least 1".into());
        }
        if self.n_channels == 0 {
            return bad("n_channels must be at least 1".into());
        }
        if self.n_samples < 2 {
            return bad(format!("n_samples must be at least 2, got {}", self.n_samples));
        }
        if !(self.sample_rate_hz > 0.0) || !self.sample_rate_hz.is_finite() {
            return bad(format!("sample_rate_hz must be positive, got {}", self.sample_rate_hz));
        }
        let top = signature_hz(SILENCE - 1);
        if top >= self.sample_rate_hz / 2.0 {
            return bad(format!(
                "sample_rate_hz {} puts the {top} Hz signature above Nyquist",
                self.sample_rate_hz
            ));
        }
        if !self.noise_exponent.is_finite() {
            return bad("noise_exponent must be finite".into());
        }
        if !(self.signature_snr >= 0.0) || !self.signature_snr.is_finite() {
            return bad(format!("signature_snr must be >= 0, got {}", self.signature_snr));
        }
        if !(self.subject_mixing >= 0.0) || !self.subject_mixing.is_finite() {
            return bad(format!("subject_mixing must be >= 0, got {}", self.subject_mixing));
        }
        Ok(())
    }

    pub fn n_trials(&self) -> usize {
        self.n_subjects * self.trials_per_class_per_subject * N_CLASSES
    }

    pub fn parse(text: &str) -> Result<Self, DataError> {
        let mut cfg = Self::default();
        let kv = parse_key_values(text)?;
        for (line, key, value) in kv {
            cfg.set(&key, &value)
                .map_err(|r| DataError::Config(format!("line {line}: {r}")))?;
        }
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        fn p<T: std::str::FromStr>(key: &str, v: &str) -> Result<T, String> {
            v.parse().map_err(|_| format!("cannot parse {key} from {v:?}"))
        }
        match key {
            "n_subjects" => self.n_subjects = p(key, value)?,
            "trials_per_class_per_subject" => self.trials_per_class_per_subject = p(key, value)?,
            "n_channels" => self.n_channels = p(key, value)?,
            "n_samples" => self.n_samples = p(key, value)?,
            "sample_rate_hz" => self.sample_rate_hz = p(key, value)?,
            "noise_exponent" => self.noise_exponent = p(key, value)?,
            "signature_snr" => self.signature_snr = p(key, value)?,
            "subject_mixing" => self.subject_mixing = p(key, value)?,
            "seed" => self.seed = p(key, value)?,
            other => return Err(format!("unknown key {other:?}")),
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "n_subjects = {}", self.n_subjects);
        let _ = writeln!(s, "trials_per_class_per_subject = {}", self.trials_per_class_per_subject);
        let _ = writeln!(s, "n_channels = {}", self.n_channels);
        let _ = writeln!(s, "n_samples = {}", self.n_samples);
        let _ = writeln!(s, "sample_rate_hz = {}", self.sample_rate_hz);
        let _ = writeln!(s, "noise_exponent = {}", self.noise_exponent);
        let _ = writeln!(s, "signature_snr = {}", self.signature_snr);
        let _ = writeln!(s, "subject_mixing = {}", self.subject_mixing);
        let _ = writeln!(s, "seed = {}", self.seed);
        s
    }
}

pub fn signature_hz(class: u8) -> f64 {
    4.0 + 3.0 * class as f64
}

/// Channels carrying the signature of `class` (empty for silence).
pub fn signature_channels(class: u8, n_channels: usize) -> Vec<usize> {
    if class >= SILENCE {
        return Vec::new();
    }
    let k = CARRIERS.min(n_channels);
    (0..k)
        .map(|j| (CARRIERS * class as usize + j) % n_channels)
        .collect()
}

/// The ten speech channels first, then the rest of the 64-channel montage,
/// then `Ch<i>` placeholders.
pub fn default_channel_names(n: usize) -> Vec<String> {
    let mut names: Vec<String> = SPEECH_CHANNELS.iter().map(|s| s.to_string()).collect();
    for m in MONTAGE_64 {
        if !names.iter().any(|n| n == m) {
            names.push(m.to_string());
        }
    }
    let mut i = names.len();
    while names.len() < n {
        names.push(format!("Ch{i}"));
        i += 1;
    }
    names.truncate(n);
    names
}

/// `I + m·G/√C` with standard normal `G`, row-major.
pub fn mixing_matrix(cfg: &SynthConfig, subject: usize) -> Vec<f64> {
    let c = cfg.n_channels;
    let mut rng = seed::derived_rng(cfg.seed, TAG_MIXING | subject as u64);
    let scale = cfg.subject_mixing / (c as f64).sqrt();
    let mut m = vec![0.0; c * c];
    for i in 0..c {
        for j in 0..c {
            let g: f64 = rng.sample(StandardNormal);
            m[i * c + j] = if i == j { 1.0 } else { 0.0 } + scale * g;
        }
    }
    m
}

struct NoiseShaper {
    len: usize,
    gains: Vec<f64>,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl NoiseShaper {
    fn new(len: usize, exponent: f64) -> Self {
        let mut planner = FftPlanner::new();
        // Power falls as f^-β, so amplitude as f^-β/2; DC is removed.
        let gains = (0..len)
            .map(|k| {
                let f = k.min(len - k);
                if f == 0 {
                    0.0
                } else {
                    (f as f64).powf(-exponent / 2.0)
                }
            })
            .collect();
        Self {
            len,
            gains,
            forward: planner.plan_fft_forward(len),
            inverse: planner.plan_fft_inverse(len),
        }
    }

    /// Unit-RMS coloured noise written into `out`.
    fn fill(&self, rng: &mut ChaCha8Rng, out: &mut [f64]) {
        let mut buf: Vec<Complex<f64>> = (0..self.len)
            .map(|_| Complex::new(rng.sample(StandardNormal), 0.0))
            .collect();
        self.forward.process(&mut buf);
        for (b, g) in buf.iter_mut().zip(&self.gains) {
            *b *= g;
        }
        self.inverse.process(&mut buf);
        let rms = (buf.iter().map(|z| z.re * z.re).sum::<f64>() / self.len as f64).sqrt();
        let inv = if rms > 0.0 { 1.0 / rms } else { 0.0 };
        for (o, z) in out.iter_mut().zip(&buf) {
            *o = z.re * inv;
        }
    }
}

/// Adds the class burst to channel-major `buf` (row stride `stride`) over
/// `[offset, offset + n_samples)`.
fn add_signature(
    cfg: &SynthConfig,
    rng: &mut ChaCha8Rng,
    class: u8,
    buf: &mut [f64],
    stride: usize,
    offset: usize,
) {
    let carriers = signature_channels(class, cfg.n_channels);
    if carriers.is_empty() || cfg.signature_snr == 0.0 {
        return;
    }
    let n = cfg.n_samples;
    let width = (2 * n / 3).max(2);
    let jitter_span = n / 6;
    let start = n / 12 + if jitter_span > 0 { rng.gen_range(0..=jitter_span) } else { 0 };
    let start = start.min(n - width.min(n));
    let width = width.min(n - start);
    let w = 2.0 * std::f64::consts::PI * signature_hz(class) / cfg.sample_rate_hz;
    for &ch in &carriers {
        let phase: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
        let gain: f64 = rng.gen_range(0.8..1.2);
        let amp = cfg.signature_snr * std::f64::consts::SQRT_2 * gain;
        let row = &mut buf[ch * stride + offset..];
        for k in 0..width {
            let env = 0.5 - 0.5 * (2.0 * std::f64::consts::PI * k as f64 / (width - 1) as f64).cos();
            row[start + k] += amp * env * (w * (start + k) as f64 + phase).sin();
        }
    }
}

/// `out = M · src` for a channel-major block of `len` samples per channel.
fn mix(m: &[f64], c: usize, len: usize, src: &[f64], out: &mut [f64]) {
    for i in 0..c {
        let dst = &mut out[i * len..(i + 1) * len];
        dst.fill(0.0);
        for j in 0..c {
            let g = m[i * c + j];
            for (d, s) in dst.iter_mut().zip(&src[j * len..(j + 1) * len]) {
                *d += g * s;
            }
        }
    }
}

/// Epoched corpus: trials ordered by subject, then repetition, then class.
/// Values are rounded to `f32` so the set survives a container roundtrip.
pub fn synth_generate(cfg: &SynthConfig) -> Result<TrialSet, DataError> {
    cfg.validate()?;
    let (c, n) = (cfg.n_channels, cfg.n_samples);
    let per_subject = cfg.trials_per_class_per_subject * N_CLASSES;
    let shaper = NoiseShaper::new(n, cfg.noise_exponent);
    let mut data = vec![0.0; cfg.n_trials() * c * n];
    let mut labels = Vec::with_capacity(cfg.n_trials());
    let mut subjects = Vec::with_capacity(cfg.n_trials());
    let mut src = vec![0.0; c * n];
    for s in 0..cfg.n_subjects {
        let m = mixing_matrix(cfg, s);
        for t in 0..per_subject {
            let class = (t % N_CLASSES) as u8;
            let mut rng = seed::derived_rng(cfg.seed, TAG_TRIAL | ((s as u64) << 32) | t as u64);
            for ch in 0..c {
                shaper.fill(&mut rng, &mut src[ch * n..(ch + 1) * n]);
            }
            add_signature(cfg, &mut rng, class, &mut src, n, 0);
            let idx = s * per_subject + t;
            mix(&m, c, n, &src, &mut data[idx * c * n..(idx + 1) * c * n]);
            labels.push(class);
            subjects.push(s as u16);
        }
    }
    let mut out = TrialSet::new(
        data,
        c,
        n,
        labels,
        subjects,
        default_channel_names(c),
        cfg.sample_rate_hz,
    )?;
    out.quantize_f32();
    Ok(out)
}

/// Continuous recording with one event per trial: per subject a block of
/// `[0.5 s lead | (0.5 s baseline | trial | 0.5 s gap) × trials]`, with
/// coloured noise running through the whole block.
pub fn synth_recording(cfg: &SynthConfig) -> Result<RawRecording, DataError> {
    cfg.validate()?;
    let (c, n) = (cfg.n_channels, cfg.n_samples);
    let half = (0.5 * cfg.sample_rate_hz).round() as usize;
    let per_subject = cfg.trials_per_class_per_subject * N_CLASSES;
    let stride = half + n + half;
    let block = half + per_subject * stride;
    let total = block * cfg.n_subjects;
    let shaper = NoiseShaper::new(block, cfg.noise_exponent);
    let mut data = vec![0.0; c * total];
    let mut events = Vec::with_capacity(cfg.n_trials());
    let mut src = vec![0.0; c * block];
    let mut mixed = vec![0.0; c * block];
    for s in 0..cfg.n_subjects {
        let mut rng = seed::derived_rng(cfg.seed, TAG_BLOCK | s as u64);
        for ch in 0..c {
            shaper.fill(&mut rng, &mut src[ch * block..(ch + 1) * block]);
        }
        for t in 0..per_subject {
            let class = (t % N_CLASSES) as u8;
            let onset = half + t * stride + half;
            add_signature(cfg, &mut rng, class, &mut src, block, onset);
            events.push(Event {
                onset_sample: s * block + onset,
                label: class,
                subject_id: s as u16,
            });
        }
        mix(&mixing_matrix(cfg, s), c, block, &src, &mut mixed);
        for ch in 0..c {
            data[ch * total + s * block..ch * total + (s + 1) * block]
                .copy_from_slice(&mixed[ch * block..(ch + 1) * block]);
        }
    }
    for v in &mut data {
        *v = *v as f32 as f64;
    }
    Ok(RawRecording::new(
        data,
        default_channel_names(c),
        cfg.sample_rate_hz,
        events,
    )?)
}
