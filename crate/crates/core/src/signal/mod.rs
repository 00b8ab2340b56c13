//! EEG preprocessing: band-pass filtering, epoching, baseline correction and
//! channel selection. Everything here runs in `f64`; trial payloads are
//! narrowed to `f32` only when written to disk.

mod filter;

pub use filter::{design_butterworth_bandpass, odd_extend, Biquad, BiquadCascade};

use std::collections::HashMap;
use std::fmt::Write as _;

use rayon::prelude::*;
use thiserror::Error;

use crate::data::{ClassVocabulary, N_CLASSES};

/// Channels over Broca's and Wernicke's areas, in canonical order.
pub const SPEECH_CHANNELS: [&str; 10] = [
    "AF3", "F3", "F5", "FC3", "FC5", "T7", "C5", "TP7", "CP5", "P5",
];

/// 64-electrode extended 10-20 montage.
pub const MONTAGE_64: [&str; 64] = [
    "Fp1", "Fp2", "AF7", "AF3", "AFz", "AF4", "AF8", "F7", "F5", "F3", "F1", "Fz", "F2", "F4",
    "F6", "F8", "FT7", "FC5", "FC3", "FC1", "FCz", "FC2", "FC4", "FC6", "FT8", "T7", "C5", "C3",
    "C1", "Cz", "C2", "C4", "C6", "T8", "TP7", "CP5", "CP3", "CP1", "CPz", "CP2", "CP4", "CP6",
    "TP8", "P7", "P5", "P3", "P1", "Pz", "P2", "P4", "P6", "P8", "PO7", "PO3", "POz", "PO4",
    "PO8", "O1", "Oz", "O2", "Iz", "TP9", "TP10", "FT9",
];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SignalError {
    #[error("invalid {name}: {reason}")]
    InvalidParameter { name: &'static str, reason: String },
    #[error("{0}")]
    Precondition(String),
    #[error("signal of {len} samples is too short for edge padding, need at least {min}")]
    SignalTooShort { len: usize, min: usize },
    #[error("event {index} at sample {onset} does not fit: {reason}")]
    EventOutOfRange {
        index: usize,
        onset: usize,
        reason: String,
    },
    #[error("unknown channel {0:?}")]
    UnknownChannel(String),
    #[error("config line {line}: {reason}")]
    Config { line: usize, reason: String },
}

/// Task event marking a trial onset.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Event {
    pub onset_sample: usize,
    pub label: u8,
    pub subject_id: u16,
}

/// Continuous multi-channel recording, channel-major.
#[derive(Debug, Clone, PartialEq)]
pub struct RawRecording {
    data: Vec<f64>,
    n_samples: usize,
    pub sample_rate_hz: f64,
    pub channel_names: Vec<String>,
    pub events: Vec<Event>,
}

fn check_unique(names: &[String]) -> Result<(), SignalError> {
    let mut seen = HashMap::new();
    for (i, n) in names.iter().enumerate() {
        if let Some(j) = seen.insert(n.as_str(), i) {
            return Err(SignalError::Precondition(format!(
                "channel name {n:?} appears at positions {j} and {i}"
            )));
        }
    }
    Ok(())
}

impl RawRecording {
    pub fn new(
        data: Vec<f64>,
        channel_names: Vec<String>,
        sample_rate_hz: f64,
        events: Vec<Event>,
    ) -> Result<Self, SignalError> {
        if !(sample_rate_hz > 0.0) {
            return Err(SignalError::InvalidParameter {
                name: "sample_rate_hz",
                reason: format!("must be positive, got {sample_rate_hz}"),
            });
        }
        if channel_names.is_empty() {
            return Err(SignalError::Precondition("recording has no channels".into()));
        }
        if data.len() % channel_names.len() != 0 {
            return Err(SignalError::Precondition(format!(
                "{} values do not divide into {} channels",
                data.len(),
                channel_names.len()
            )));
        }
        check_unique(&channel_names)?;
        let n_samples = data.len() / channel_names.len();
        for (index, e) in events.iter().enumerate() {
            if e.label as usize >= N_CLASSES {
                return Err(SignalError::EventOutOfRange {
                    index,
                    onset: e.onset_sample,
                    reason: format!("label {} is not below {N_CLASSES}", e.label),
                });
            }
            if e.onset_sample >= n_samples {
                return Err(SignalError::EventOutOfRange {
                    index,
                    onset: e.onset_sample,
                    reason: format!("recording has {n_samples} samples"),
                });
            }
        }
        Ok(Self {
            data,
            n_samples,
            sample_rate_hz,
            channel_names,
            events,
        })
    }

    pub fn n_channels(&self) -> usize {
        self.channel_names.len()
    }

    pub fn n_samples(&self) -> usize {
        self.n_samples
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        &self.data[c * self.n_samples..(c + 1) * self.n_samples]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Applies `f` to every channel independently. Channels are processed in
    /// parallel; each result depends only on its own channel.
    pub fn map_channels<F>(&self, f: F) -> Result<Self, SignalError>
    where
        F: Fn(&[f64]) -> Result<Vec<f64>, SignalError> + Sync,
    {
        let chans: Vec<Vec<f64>> = (0..self.n_channels())
            .into_par_iter()
            .map(|c| f(self.channel(c)))
            .collect::<Result<_, _>>()?;
        let mut data = Vec::with_capacity(self.data.len());
        for ch in chans {
            if ch.len() != self.n_samples {
                return Err(SignalError::Precondition(format!(
                    "channel map changed length {} -> {}",
                    self.n_samples,
                    ch.len()
                )));
            }
            data.extend(ch);
        }
        Ok(Self {
            data,
            ..self.clone()
        })
    }
}

/// Epoched trials `[trial, channel, sample]` with labels and subject ids.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialSet {
    data: Vec<f64>,
    n_trials: usize,
    n_channels: usize,
    n_samples: usize,
    pub labels: Vec<u8>,
    pub subject_ids: Vec<u16>,
    pub channel_names: Vec<String>,
    pub sample_rate_hz: f64,
    pub class_names: Vec<String>,
}

impl TrialSet {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        data: Vec<f64>,
        n_channels: usize,
        n_samples: usize,
        labels: Vec<u8>,
        subject_ids: Vec<u16>,
        channel_names: Vec<String>,
        sample_rate_hz: f64,
    ) -> Result<Self, SignalError> {
        let n_trials = labels.len();
        if subject_ids.len() != n_trials {
            return Err(SignalError::Precondition(format!(
                "{} labels but {} subject ids",
                n_trials,
                subject_ids.len()
            )));
        }
        if channel_names.len() != n_channels {
            return Err(SignalError::Precondition(format!(
                "{} channel names for {n_channels} channels",
                channel_names.len()
            )));
        }
        if data.len() != n_trials * n_channels * n_samples {
            return Err(SignalError::Precondition(format!(
                "payload of {} values, expected {n_trials}x{n_channels}x{n_samples}",
                data.len()
            )));
        }
        if let Some(i) = labels.iter().position(|&l| l as usize >= N_CLASSES) {
            return Err(SignalError::Precondition(format!(
                "trial {i} has label {} >= {N_CLASSES}",
                labels[i]
            )));
        }
        if !(sample_rate_hz > 0.0) {
            return Err(SignalError::InvalidParameter {
                name: "sample_rate_hz",
                reason: format!("must be positive, got {sample_rate_hz}"),
            });
        }
        check_unique(&channel_names)?;
        Ok(Self {
            data,
            n_trials,
            n_channels,
            n_samples,
            labels,
            subject_ids,
            channel_names,
            sample_rate_hz,
            class_names: ClassVocabulary::default().names().to_vec(),
        })
    }

    pub fn n_trials(&self) -> usize {
        self.n_trials
    }

    pub fn n_channels(&self) -> usize {
        self.n_channels
    }

    pub fn n_samples(&self) -> usize {
        self.n_samples
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn trial(&self, i: usize) -> &[f64] {
        let len = self.n_channels * self.n_samples;
        &self.data[i * len..(i + 1) * len]
    }

    pub fn channel(&self, trial: usize, c: usize) -> &[f64] {
        let t = self.trial(trial);
        &t[c * self.n_samples..(c + 1) * self.n_samples]
    }

    /// Distinct subject ids in ascending order.
    pub fn subjects(&self) -> Vec<u16> {
        let mut s = self.subject_ids.clone();
        s.sort_unstable();
        s.dedup();
        s
    }

    /// Trials at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Self {
        let mut data = Vec::with_capacity(indices.len() * self.n_channels * self.n_samples);
        for &i in indices {
            data.extend_from_slice(self.trial(i));
        }
        Self {
            data,
            n_trials: indices.len(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            subject_ids: indices.iter().map(|&i| self.subject_ids[i]).collect(),
            ..self.clone_meta()
        }
    }

    fn clone_meta(&self) -> Self {
        Self {
            data: Vec::new(),
            n_trials: 0,
            n_channels: self.n_channels,
            n_samples: self.n_samples,
            labels: Vec::new(),
            subject_ids: Vec::new(),
            channel_names: self.channel_names.clone(),
            sample_rate_hz: self.sample_rate_hz,
            class_names: self.class_names.clone(),
        }
    }

    /// Rounds every sample to the nearest `f32`.
    pub fn quantize_f32(&mut self) {
        for v in &mut self.data {
            *v = *v as f32 as f64;
        }
    }

    /// Counts per class label.
    pub fn class_histogram(&self) -> [usize; N_CLASSES] {
        let mut h = [0; N_CLASSES];
        for &l in &self.labels {
            h[l as usize] += 1;
        }
        h
    }
}

fn seconds_to_samples(seconds: f64, rate: f64) -> usize {
    (seconds * rate).round() as usize
}

/// Cuts one trial per event, `round(trial_seconds·fs)` samples from the
/// onset, and subtracts per channel the mean of the
/// `round(baseline_seconds·fs)` samples just before the onset.
pub fn segment_trials(
    recording: &RawRecording,
    trial_seconds: f64,
    baseline_seconds: f64,
) -> Result<TrialSet, SignalError> {
    if !(trial_seconds > 0.0) {
        return Err(SignalError::InvalidParameter {
            name: "trial_seconds",
            reason: format!("must be positive, got {trial_seconds}"),
        });
    }
    if !(baseline_seconds >= 0.0) {
        return Err(SignalError::InvalidParameter {
            name: "baseline_seconds",
            reason: format!("must be non-negative, got {baseline_seconds}"),
        });
    }
    let fs = recording.sample_rate_hz;
    let n_trial = seconds_to_samples(trial_seconds, fs);
    let n_base = seconds_to_samples(baseline_seconds, fs);
    if n_trial == 0 {
        return Err(SignalError::InvalidParameter {
            name: "trial_seconds",
            reason: "rounds to zero samples".into(),
        });
    }
    let n_ch = recording.n_channels();
    let mut data = Vec::with_capacity(recording.events.len() * n_ch * n_trial);
    for (index, e) in recording.events.iter().enumerate() {
        let onset = e.onset_sample;
        if onset < n_base {
            return Err(SignalError::EventOutOfRange {
                index,
                onset,
                reason: format!("needs {n_base} baseline samples before onset"),
            });
        }
        if onset + n_trial > recording.n_samples() {
            return Err(SignalError::EventOutOfRange {
                index,
                onset,
                reason: format!(
                    "needs {n_trial} samples after onset, recording has {}",
                    recording.n_samples()
                ),
            });
        }
        for c in 0..n_ch {
            let ch = recording.channel(c);
            let baseline = if n_base > 0 {
                ch[onset - n_base..onset].iter().sum::<f64>() / n_base as f64
            } else {
                0.0
            };
            data.extend(ch[onset..onset + n_trial].iter().map(|v| v - baseline));
        }
    }
    TrialSet::new(
        data,
        n_ch,
        n_trial,
        recording.events.iter().map(|e| e.label).collect(),
        recording.events.iter().map(|e| e.subject_id).collect(),
        recording.channel_names.clone(),
        fs,
    )
}

/// Keeps the named channels, reordered to follow `names`.
pub fn select_channels<S: AsRef<str>>(
    trials: &TrialSet,
    names: &[S],
) -> Result<TrialSet, SignalError> {
    let idx = channel_indices(&trials.channel_names, names)?;
    let n_s = trials.n_samples;
    let mut data = Vec::with_capacity(trials.n_trials * idx.len() * n_s);
    for t in 0..trials.n_trials {
        for &c in &idx {
            data.extend_from_slice(trials.channel(t, c));
        }
    }
    Ok(TrialSet {
        data,
        n_channels: idx.len(),
        channel_names: names.iter().map(|n| n.as_ref().to_string()).collect(),
        n_trials: trials.n_trials,
        labels: trials.labels.clone(),
        subject_ids: trials.subject_ids.clone(),
        ..trials.clone_meta()
    })
}

fn channel_indices<S: AsRef<str>>(
    available: &[String],
    names: &[S],
) -> Result<Vec<usize>, SignalError> {
    if names.is_empty() {
        return Err(SignalError::Precondition("no channels requested".into()));
    }
    let requested: Vec<String> = names.iter().map(|n| n.as_ref().to_string()).collect();
    check_unique(&requested)?;
    requested
        .iter()
        .map(|n| {
            available
                .iter()
                .position(|a| a == n)
                .ok_or_else(|| SignalError::UnknownChannel(n.clone()))
        })
        .collect()
}

/// Preprocessing parameters, defaulting to a 5th-order 0.5–120 Hz band,
/// 1.5 s trials with a 0.5 s baseline, and the ten speech channels.
#[derive(Debug, Clone, PartialEq)]
pub struct PreprocessConfig {
    pub filter_order: usize,
    pub low_hz: f64,
    pub high_hz: f64,
    pub trial_seconds: f64,
    pub baseline_seconds: f64,
    pub channels: Vec<String>,
    /// Forward-backward filtering; single causal pass when false.
    pub zero_phase: bool,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            filter_order: 5,
            low_hz: 0.5,
            high_hz: 120.0,
            trial_seconds: 1.5,
            baseline_seconds: 0.5,
            channels: SPEECH_CHANNELS.iter().map(|s| s.to_string()).collect(),
            zero_phase: true,
        }
    }
}

/// Splits `key = value` lines, skipping blanks and `#` comments.
pub(crate) fn parse_key_values(text: &str) -> Result<Vec<(usize, String, String)>, SignalError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| SignalError::Config {
            line: i + 1,
            reason: format!("expected `key = value`, got {line:?}"),
        })?;
        out.push((i + 1, k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

impl PreprocessConfig {
    /// Parses `key = value` lines over the defaults. Unknown keys are errors.
    pub fn parse(text: &str) -> Result<Self, SignalError> {
        let mut cfg = Self::default();
        for (line, key, value) in parse_key_values(text)? {
            cfg.set(&key, &value).map_err(|reason| SignalError::Config { line, reason })?;
        }
        Ok(cfg)
    }

    /// Sets one key from its text form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        let num = |v: &str| -> Result<f64, String> {
            v.parse().map_err(|_| format!("cannot parse {key} from {v:?}"))
        };
        match key {
            "filter_order" => {
                self.filter_order = value
                    .parse()
                    .map_err(|_| format!("cannot parse {key} from {value:?}"))?
            }
            "low_hz" => self.low_hz = num(value)?,
            "high_hz" => self.high_hz = num(value)?,
            "trial_seconds" => self.trial_seconds = num(value)?,
            "baseline_seconds" => self.baseline_seconds = num(value)?,
            "channels" => {
                self.channels = value
                    .split(',')
                    .map(|s| s.trim().to_string())
                    .filter(|s| !s.is_empty())
                    .collect()
            }
            "zero_phase" => {
                self.zero_phase = value
                    .parse()
                    .map_err(|_| format!("zero_phase must be true or false, got {value:?}"))?
            }
            other => return Err(format!("unknown key {other:?}")),
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "filter_order = {}", self.filter_order);
        let _ = writeln!(s, "low_hz = {}", self.low_hz);
        let _ = writeln!(s, "high_hz = {}", self.high_hz);
        let _ = writeln!(s, "trial_seconds = {}", self.trial_seconds);
        let _ = writeln!(s, "baseline_seconds = {}", self.baseline_seconds);
        let _ = writeln!(s, "channels = {}", self.channels.join(","));
        let _ = writeln!(s, "zero_phase = {}", self.zero_phase);
        s
    }
}

/// Band-pass every channel of the continuous recording, epoch with baseline
/// correction, then keep the configured channels.
pub fn preprocess(recording: &RawRecording, config: &PreprocessConfig) -> Result<TrialSet, SignalError> {
    channel_indices(&recording.channel_names, &config.channels)?;
    let cascade = design_butterworth_bandpass(
        config.filter_order,
        config.low_hz,
        config.high_hz,
        recording.sample_rate_hz,
    )?;
    let filtered = if config.zero_phase {
        recording.map_channels(|x| cascade.apply_zero_phase(x))?
    } else {
        recording.map_channels(|x| Ok(cascade.filter(x)))?
    };
    let trials = segment_trials(&filtered, config.trial_seconds, config.baseline_seconds)?;
    select_channels(&trials, &config.channels)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("C{i}")).collect()
    }

    fn ev(onset: usize, label: u8) -> Event {
        Event {
            onset_sample: onset,
            label,
            subject_id: 0,
        }
    }

    #[test]
    fn constant_recording_gives_zero_trial() {
        let rec = RawRecording::new(vec![7.0; 2 * 3000], names(2), 1000.0, vec![ev(1000, 3)]).unwrap();
        let t = segment_trials(&rec, 1.5, 0.5).unwrap();
        assert_eq!(t.n_samples(), 1500);
        assert!(t.data().iter().all(|&v| v == 0.0));
        assert_eq!(t.labels, vec![3]);
    }

    #[test]
    fn ramp_baseline_arithmetic() {
        let ramp: Vec<f64> = (0..4000).map(|n| n as f64).collect();
        let rec = RawRecording::new(ramp, names(1), 1000.0, vec![ev(1000, 0)]).unwrap();
        let t = segment_trials(&rec, 1.5, 0.5).unwrap();
        for (k, &v) in t.channel(0, 0).iter().enumerate() {
            assert_eq!(v, (1000 + k) as f64 - 749.5);
        }
    }

    #[test]
    fn edge_events_name_their_index() {
        let rec = RawRecording::new(
            vec![0.0; 3000],
            names(1),
            1000.0,
            vec![ev(1000, 0), ev(400, 1), ev(2000, 2)],
        )
        .unwrap();
        match segment_trials(&rec, 1.5, 0.5).unwrap_err() {
            SignalError::EventOutOfRange { index, .. } => assert_eq!(index, 1),
            e => panic!("{e}"),
        }
        let rec = RawRecording::new(vec![0.0; 3000], names(1), 1000.0, vec![ev(2000, 2)]).unwrap();
        match segment_trials(&rec, 1.5, 0.5).unwrap_err() {
            SignalError::EventOutOfRange { index, .. } => assert_eq!(index, 0),
            e => panic!("{e}"),
        }
    }

    #[test]
    fn select_identity_and_reorder() {
        let ch: Vec<String> = MONTAGE_64.iter().map(|s| s.to_string()).collect();
        let data: Vec<f64> = (0..64 * 5).map(|i| i as f64).collect();
        let t = TrialSet::new(data, 64, 5, vec![0], vec![0], ch.clone(), 1000.0).unwrap();
        assert_eq!(select_channels(&t, &ch).unwrap(), t);
        let s = select_channels(&t, &SPEECH_CHANNELS).unwrap();
        assert_eq!(s.n_channels(), 10);
        let s = select_channels(&t, &["C5", "AF3"]).unwrap();
        let c5 = MONTAGE_64.iter().position(|&n| n == "C5").unwrap();
        assert_eq!(s.channel(0, 0), t.channel(0, c5));
        assert_eq!(s.channel_names, vec!["C5", "AF3"]);
        match select_channels(&t, &["C5", "XX9"]).unwrap_err() {
            SignalError::UnknownChannel(n) => assert_eq!(n, "XX9"),
            e => panic!("{e}"),
        }
    }

    #[test]
    fn montage_has_unique_names_and_speech_subset() {
        let ch: Vec<String> = MONTAGE_64.iter().map(|s| s.to_string()).collect();
        check_unique(&ch).unwrap();
        for n in SPEECH_CHANNELS {
            assert!(MONTAGE_64.contains(&n), "{n}");
        }
    }

    #[test]
    fn config_roundtrip_and_unknown_key() {
        let cfg = PreprocessConfig::default();
        assert_eq!(PreprocessConfig::parse(&cfg.to_text()).unwrap(), cfg);
        let cfg = PreprocessConfig::parse("# c\nlow_hz = 1.0\n\nchannels = C5, AF3\n").unwrap();
        assert_eq!(cfg.low_hz, 1.0);
        assert_eq!(cfg.channels, vec!["C5", "AF3"]);
        let e = PreprocessConfig::parse("low_hz = 1\nnotch = 50\n").unwrap_err();
        assert!(matches!(e, SignalError::Config { line: 2, .. }), "{e}");
        assert!(PreprocessConfig::parse("high_hz = fast").is_err());
    }

    #[test]
    fn preprocess_empty_events() {
        let ch: Vec<String> = MONTAGE_64.iter().map(|s| s.to_string()).collect();
        let rec = RawRecording::new(vec![0.0; 64 * 2000], ch, 1000.0, vec![]).unwrap();
        let t = preprocess(&rec, &PreprocessConfig::default()).unwrap();
        assert_eq!(t.n_trials(), 0);
        assert_eq!(t.n_channels(), 10);
        assert_eq!(t.n_samples(), 1500);
    }

    #[test]
    fn preprocess_rejects_missing_channel_up_front() {
        let rec = RawRecording::new(vec![0.0; 2 * 2000], names(2), 1000.0, vec![]).unwrap();
        let e = preprocess(&rec, &PreprocessConfig::default()).unwrap_err();
        assert_eq!(e, SignalError::UnknownChannel("AF3".into()));
    }
}
