//! The `CDT1` binary container.
//!
//! Trial sets (version 1), little-endian:
//!
//! ```text
//! "CDT1" | version u16 = 1 | n_trials u32 | n_channels u16 | n_samples u32 | sample_rate f64
//! channel names: (len u16 | utf-8) * n_channels
//! labels: u8 * n_trials
//! subjects: u16 * n_trials
//! payload: f32 * n_trials * n_channels * n_samples, trial-major
//! ```
//!
//! Raw recordings (version 2) share the header with `n_events` in place of
//! `n_trials`, carry an event block of `(onset u32 | label u8 | subject u16)`
//! instead of the label and subject blocks, and store a channel-major payload
//! of `n_channels * n_samples` values.

use std::path::Path;

use sha2::{Digest, Sha256};

use super::{write_atomic, DataError, TrialSet, N_CLASSES};
use crate::signal::{Event, RawRecording};

const MAGIC: &[u8; 4] = b"CDT1";
const VERSION_TRIALS: u16 = 1;
const VERSION_RECORDING: u16 = 2;

struct Header {
    version: u16,
    count: usize,
    n_channels: usize,
    n_samples: usize,
    sample_rate: f64,
}

fn push_header(out: &mut Vec<u8>, h: &Header) -> Result<(), DataError> {
    let count = u32::try_from(h.count).map_err(|_| DataError::Format("too many trials".into()))?;
    let n_channels =
        u16::try_from(h.n_channels).map_err(|_| DataError::Format("too many channels".into()))?;
    let n_samples =
        u32::try_from(h.n_samples).map_err(|_| DataError::Format("too many samples".into()))?;
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&h.version.to_le_bytes());
    out.extend_from_slice(&count.to_le_bytes());
    out.extend_from_slice(&n_channels.to_le_bytes());
    out.extend_from_slice(&n_samples.to_le_bytes());
    out.extend_from_slice(&h.sample_rate.to_le_bytes());
    Ok(())
}

fn push_names(out: &mut Vec<u8>, names: &[String]) -> Result<(), DataError> {
    for n in names {
        let len = u16::try_from(n.len())
            .map_err(|_| DataError::Format(format!("channel name too long: {n:?}")))?;
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(n.as_bytes());
    }
    Ok(())
}

fn push_payload(out: &mut Vec<u8>, values: &[f64]) {
    out.reserve(values.len() * 4);
    for &v in values {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
}

pub fn encode_dataset(trials: &TrialSet) -> Result<Vec<u8>, DataError> {
    let mut out = Vec::new();
    push_header(
        &mut out,
        &Header {
            version: VERSION_TRIALS,
            count: trials.n_trials(),
            n_channels: trials.n_channels(),
            n_samples: trials.n_samples(),
            sample_rate: trials.sample_rate_hz,
        },
    )?;
    push_names(&mut out, &trials.channel_names)?;
    out.extend_from_slice(&trials.labels);
    for &s in &trials.subject_ids {
        out.extend_from_slice(&s.to_le_bytes());
    }
    push_payload(&mut out, trials.data());
    Ok(out)
}

pub fn encode_recording(rec: &RawRecording) -> Result<Vec<u8>, DataError> {
    let mut out = Vec::new();
    push_header(
        &mut out,
        &Header {
            version: VERSION_RECORDING,
            count: rec.events.len(),
            n_channels: rec.n_channels(),
            n_samples: rec.n_samples(),
            sample_rate: rec.sample_rate_hz,
        },
    )?;
    push_names(&mut out, &rec.channel_names)?;
    for e in &rec.events {
        let onset = u32::try_from(e.onset_sample)
            .map_err(|_| DataError::Format("event onset exceeds u32".into()))?;
        out.extend_from_slice(&onset.to_le_bytes());
        out.push(e.label);
        out.extend_from_slice(&e.subject_id.to_le_bytes());
    }
    push_payload(&mut out, rec.data());
    Ok(out)
}

/// SHA-256 of the little-endian `f32` payload, hex encoded.
pub fn payload_sha256(trials: &TrialSet) -> String {
    let mut bytes = Vec::new();
    push_payload(&mut bytes, trials.data());
    hex::encode(Sha256::digest(&bytes))
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, section: &'static str) -> Result<&'a [u8], DataError> {
        let left = self.buf.len() - self.pos;
        if left < n {
            return Err(DataError::Truncated {
                section,
                expected: n,
                actual: left,
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self, section: &'static str) -> Result<u16, DataError> {
        Ok(u16::from_le_bytes(self.take(2, section)?.try_into().unwrap()))
    }

    fn u32(&mut self, section: &'static str) -> Result<u32, DataError> {
        Ok(u32::from_le_bytes(self.take(4, section)?.try_into().unwrap()))
    }

    fn header(&mut self) -> Result<Header, DataError> {
        if self.buf.len() < 4 || &self.buf[..4] != MAGIC {
            return Err(DataError::BadMagic { expected: "CDT1" });
        }
        self.pos = 4;
        let version = self.u16("header")?;
        let count = self.u32("header")? as usize;
        let n_channels = self.u16("header")? as usize;
        let n_samples = self.u32("header")? as usize;
        let sample_rate = f64::from_le_bytes(self.take(8, "header")?.try_into().unwrap());
        Ok(Header {
            version,
            count,
            n_channels,
            n_samples,
            sample_rate,
        })
    }

    fn names(&mut self, n: usize) -> Result<Vec<String>, DataError> {
        (0..n)
            .map(|_| {
                let len = self.u16("channel names")? as usize;
                let raw = self.take(len, "channel names")?;
                String::from_utf8(raw.to_vec())
                    .map_err(|_| DataError::Format("channel name is not UTF-8".into()))
            })
            .collect()
    }

    fn payload(&mut self, values: usize) -> Result<Vec<f64>, DataError> {
        let expected = values * 4;
        let left = self.buf.len() - self.pos;
        if left != expected {
            if left < expected {
                return Err(DataError::Truncated {
                    section: "payload",
                    expected,
                    actual: left,
                });
            }
            return Err(DataError::Format(format!(
                "{} trailing bytes after payload",
                left - expected
            )));
        }
        let raw = self.take(expected, "payload")?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect())
    }
}

pub fn decode_dataset(bytes: &[u8]) -> Result<TrialSet, DataError> {
    let mut r = Reader { buf: bytes, pos: 0 };
    let h = r.header()?;
    if h.version != VERSION_TRIALS {
        return Err(DataError::Format(format!(
            "expected a trial set (version {VERSION_TRIALS}), found version {}",
            h.version
        )));
    }
    let names = r.names(h.n_channels)?;
    let labels = r.take(h.count, "labels")?.to_vec();
    if let Some(trial) = labels.iter().position(|&l| l as usize >= N_CLASSES) {
        return Err(DataError::InvalidLabel {
            trial,
            label: labels[trial],
        });
    }
    let subjects = (0..h.count)
        .map(|_| r.u16("subjects"))
        .collect::<Result<Vec<_>, _>>()?;
    let data = r.payload(h.count * h.n_channels * h.n_samples)?;
    Ok(TrialSet::new(
        data,
        h.n_channels,
        h.n_samples,
        labels,
        subjects,
        names,
        h.sample_rate,
    )?)
}

pub fn decode_recording(bytes: &[u8]) -> Result<RawRecording, DataError> {
    let mut r = Reader { buf: bytes, pos: 0 };
    let h = r.header()?;
    if h.version != VERSION_RECORDING {
        return Err(DataError::Format(format!(
            "expected a raw recording (version {VERSION_RECORDING}), found version {}",
            h.version
        )));
    }
    let names = r.names(h.n_channels)?;
    let mut events = Vec::with_capacity(h.count);
    for trial in 0..h.count {
        let onset = r.u32("events")? as usize;
        let label = r.take(1, "events")?[0];
        if label as usize >= N_CLASSES {
            return Err(DataError::InvalidLabel { trial, label });
        }
        let subject_id = r.u16("events")?;
        events.push(Event {
            onset_sample: onset,
            label,
            subject_id,
        });
    }
    let data = r.payload(h.n_channels * h.n_samples)?;
    Ok(RawRecording::new(data, names, h.sample_rate, events)?)
}

pub fn write_dataset(trials: &TrialSet, path: &Path) -> Result<(), DataError> {
    write_atomic(path, &encode_dataset(trials)?)?;
    Ok(())
}

pub fn read_dataset(path: &Path) -> Result<TrialSet, DataError> {
    decode_dataset(&std::fs::read(path)?)
}

pub fn write_recording(rec: &RawRecording, path: &Path) -> Result<(), DataError> {
    write_atomic(path, &encode_recording(rec)?)?;
    Ok(())
}

pub fn read_recording(path: &Path) -> Result<RawRecording, DataError> {
    decode_recording(&std::fs::read(path)?)
}
