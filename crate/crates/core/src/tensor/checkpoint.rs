//! `CDK1` parameter checkpoints.
//!
//! Layout, all little-endian:
//!
//! ```text
//! "CDK1"
//! repeated: name_len u16 | name utf-8 | rank u8 | dims u32 * rank | values f32 * prod(dims)
//! optional trailer: 0u16 | config_len u32 | config utf-8
//! ```
//!
//! Tensor names are never empty, so a zero name length marks the trailer.

use super::{Result, Tensor, TensorError};

const MAGIC: &[u8; 4] = b"CDK1";

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub tensor: Tensor<f32>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Checkpoint {
    pub tensors: Vec<NamedTensor>,
    /// `key = value` text record embedded by model checkpoints.
    pub config: Option<String>,
}

impl Checkpoint {
    pub fn get(&self, name: &str) -> Option<&Tensor<f32>> {
        self.tensors
            .iter()
            .find(|t| t.name == name)
            .map(|t| &t.tensor)
    }
}

fn err(msg: impl Into<String>) -> TensorError {
    TensorError::Checkpoint(msg.into())
}

pub fn write_checkpoint(ckpt: &Checkpoint) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    for nt in &ckpt.tensors {
        let name = nt.name.as_bytes();
        if name.is_empty() || name.len() > u16::MAX as usize {
            return Err(err(format!("invalid tensor name length {}", name.len())));
        }
        let shape = nt.tensor.shape();
        if shape.len() > u8::MAX as usize {
            return Err(err(format!("rank {} too large", shape.len())));
        }
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name);
        out.push(shape.len() as u8);
        for &d in shape {
            let d = u32::try_from(d).map_err(|_| err(format!("dimension {d} exceeds u32")))?;
            out.extend_from_slice(&d.to_le_bytes());
        }
        for v in nt.tensor.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    if let Some(cfg) = &ckpt.config {
        out.extend_from_slice(&0u16.to_le_bytes());
        out.extend_from_slice(&(cfg.len() as u32).to_le_bytes());
        out.extend_from_slice(cfg.as_bytes());
    }
    Ok(out)
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(err(format!(
                "truncated {what}: need {n} bytes at offset {}, {} left",
                self.pos,
                self.buf.len() - self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn done(&self) -> bool {
        self.pos == self.buf.len()
    }
}

pub fn read_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(err("bad magic, expected CDK1"));
    }
    let mut cur = Cursor { buf: bytes, pos: 4 };
    let mut ckpt = Checkpoint::default();
    while !cur.done() {
        let name_len = cur.u16("name length")? as usize;
        if name_len == 0 {
            let len = cur.u32("config length")? as usize;
            let text = cur.take(len, "config record")?;
            let text = std::str::from_utf8(text).map_err(|_| err("config is not UTF-8"))?;
            ckpt.config = Some(text.to_string());
            if !cur.done() {
                return Err(err("trailing bytes after config record"));
            }
            break;
        }
        let name = std::str::from_utf8(cur.take(name_len, "name")?)
            .map_err(|_| err("tensor name is not UTF-8"))?
            .to_string();
        let rank = cur.take(1, "rank")?[0] as usize;
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(cur.u32("dims")? as usize);
        }
        let numel: usize = dims.iter().product();
        let raw = cur.take(numel * 4, &format!("values of {name}"))?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let tensor = Tensor::new(dims, data).map_err(|e| err(format!("{name}: {e}")))?;
        ckpt.tensors.push(NamedTensor { name, tensor });
    }
    Ok(ckpt)
}
