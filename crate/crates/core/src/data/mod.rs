//! Dataset container I/O, the class vocabulary, the synthetic EEG corpus and
//! label shuffling.

mod container;
mod synth;

pub use container::{
    decode_dataset, decode_recording, encode_dataset, encode_recording, payload_sha256,
    read_dataset, read_recording, write_dataset, write_recording,
};
pub use synth::{
    default_channel_names, mixing_matrix, signature_channels, signature_hz, synth_generate,
    synth_recording, SynthConfig,
};

pub use crate::signal::TrialSet;

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use thiserror::Error;

use crate::seed;
use crate::signal::SignalError;

pub const N_CLASSES: usize = 13;

/// Label index of the silent phase.
pub const SILENCE: u8 = 12;

const CLASS_NAMES: [&str; N_CLASSES] = [
    "ambulance",
    "clock",
    "hello",
    "help me",
    "light",
    "pain",
    "stop",
    "thank you",
    "toilet",
    "TV",
    "water",
    "yes",
    "silence",
];

/// Twelve spoken words and the silent phase, indexed 0..=12.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassVocabulary {
    names: Vec<String>,
}

impl Default for ClassVocabulary {
    fn default() -> Self {
        Self {
            names: CLASS_NAMES.iter().map(|s| s.to_string()).collect(),
        }
    }
}

impl ClassVocabulary {
    pub fn new(names: Vec<String>) -> Result<Self, DataError> {
        if names.len() != N_CLASSES {
            return Err(DataError::Format(format!(
                "vocabulary needs {N_CLASSES} names, got {}",
                names.len()
            )));
        }
        let mut sorted = names.clone();
        sorted.sort();
        sorted.dedup();
        if sorted.len() != names.len() {
            return Err(DataError::Format("vocabulary names must be unique".into()));
        }
        Ok(Self { names })
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn name(&self, label: u8) -> Option<&str> {
        self.names.get(label as usize).map(String::as_str)
    }

    pub fn index_of(&self, name: &str) -> Option<u8> {
        self.names.iter().position(|n| n == name).map(|i| i as u8)
    }
}

#[derive(Debug, Error)]
pub enum DataError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad magic: expected {expected:?}")]
    BadMagic { expected: &'static str },
    #[error("truncated {section}: expected {expected} bytes, found {actual}")]
    Truncated {
        section: &'static str,
        expected: usize,
        actual: usize,
    },
    #[error("trial {trial} has label {label}, labels must be below {N_CLASSES}")]
    InvalidLabel { trial: usize, label: u8 },
    #[error("format: {0}")]
    Format(String),
    #[error(transparent)]
    Signal(#[from] SignalError),
    #[error("config: {0}")]
    Config(String),
}

/// Writes `bytes` to a sibling temp file and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty());
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "out".into());
    let tmp_name = format!(".{name}.tmp-{}", std::process::id());
    let tmp = match dir {
        Some(d) => d.join(tmp_name),
        None => Path::new(&tmp_name).to_path_buf(),
    };
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path)
}

/// Permutes labels uniformly with a seeded shuffle; data and subjects stay put.
pub fn shuffle_labels(trials: &TrialSet, seed: u64) -> Result<TrialSet, DataError> {
    if trials.n_trials() == 0 {
        return Err(DataError::Format("cannot shuffle labels of an empty trial set".into()));
    }
    let mut out = trials.clone();
    out.labels.shuffle(&mut seed::rng(seed));
    Ok(out)
}

/// One manifest line: `path \t n_trials \t n_subjects \t sha256(payload)`.
pub fn manifest_line(path: &Path, trials: &TrialSet) -> String {
    format!(
        "{}\t{}\t{}\t{}",
        path.display(),
        trials.n_trials(),
        trials.subjects().len(),
        payload_sha256(trials)
    )
}

/// Adds or replaces the entry for `path` in a plain-text corpus manifest.
pub fn update_manifest(manifest: &Path, path: &Path, trials: &TrialSet) -> Result<(), DataError> {
    let line = manifest_line(path, trials);
    let key = format!("{}\t", path.display());
    let existing = match std::fs::read_to_string(manifest) {
        Ok(s) => s,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => String::new(),
        Err(e) => return Err(e.into()),
    };
    let mut lines: Vec<String> = existing
        .lines()
        .filter(|l| !l.starts_with(&key))
        .map(str::to_string)
        .collect();
    lines.push(line);
    let mut text = lines.join("\n");
    text.push('\n');
    write_atomic(manifest, text.as_bytes())?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vocabulary_has_thirteen_unique_entries() {
        let v = ClassVocabulary::default();
        assert_eq!(v.names().len(), 13);
        assert_eq!(v.name(2), Some("hello"));
        assert_eq!(v.name(12), Some("silence"));
        assert_eq!(v.index_of("water"), Some(10));
        assert!(ClassVocabulary::new(vec!["a".into(); 13]).is_err());
    }

    fn tiny() -> TrialSet {
        TrialSet::new(
            (0..12 * 2 * 3).map(|i| i as f64).collect(),
            2,
            3,
            (0..12).map(|i| (i % 4) as u8).collect(),
            (0..12).map(|i| (i / 4) as u16).collect(),
            vec!["a".into(), "b".into()],
            100.0,
        )
        .unwrap()
    }

    #[test]
    fn shuffle_preserves_histogram_and_data() {
        let t = tiny();
        let s = shuffle_labels(&t, 9).unwrap();
        assert_eq!(s.class_histogram(), t.class_histogram());
        assert_eq!(s.data(), t.data());
        assert_eq!(s.subject_ids, t.subject_ids);
        assert_eq!(shuffle_labels(&t, 9).unwrap(), s);
        assert_ne!(shuffle_labels(&t, 10).unwrap().labels, t.labels);
        let empty = t.subset(&[]);
        assert!(shuffle_labels(&empty, 1).is_err());
    }

    #[test]
    fn manifest_replaces_entries() {
        let dir = tempfile::tempdir().unwrap();
        let m = dir.path().join("MANIFEST");
        let t = tiny();
        update_manifest(&m, Path::new("a.cdt"), &t).unwrap();
        update_manifest(&m, Path::new("b.cdt"), &t).unwrap();
        update_manifest(&m, Path::new("a.cdt"), &t.subset(&[0, 1])).unwrap();
        let text = std::fs::read_to_string(&m).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 2);
        assert!(lines[1].starts_with("a.cdt\t2\t1\t"));
        assert_eq!(lines[1].split('\t').nth(3).unwrap().len(), 64);
    }
}
