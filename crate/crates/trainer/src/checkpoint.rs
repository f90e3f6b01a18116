//! Checkpoint container: little-endian binary, magic `FRLC`, a `u32`
//! version, a `u32` section count, then sections of
//! `u32 name length | name | u64 payload length | payload`.

use std::path::Path;

use anyhow::{bail, Context, Result};
use fastrl_core::AdamState;

pub const MAGIC: &[u8; 4] = b"FRLC";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Checkpoint {
    pub sections: Vec<(String, Vec<u8>)>,
}

impl Checkpoint {
    pub fn push(&mut self, name: &str, payload: Vec<u8>) {
        self.sections.push((name.to_string(), payload));
    }

    pub fn get(&self, name: &str) -> Result<&[u8]> {
        self.sections
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, p)| p.as_slice())
            .with_context(|| format!("checkpoint has no `{name}` section"))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.sections.len() as u32).to_le_bytes());
        for (name, payload) in &self.sections {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
            out.extend_from_slice(payload);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        if r.take(4)? != MAGIC {
            bail!("not a checkpoint (bad magic)");
        }
        let version = r.u32()?;
        if version != VERSION {
            bail!("checkpoint version {version} is not supported (this build reads version {VERSION})");
        }
        let count = r.u32()?;
        let mut sections = Vec::with_capacity(count as usize);
        for _ in 0..count {
            let len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(len)?).context("section name")?.to_string();
            let len = r.u64()? as usize;
            sections.push((name, r.take(len)?.to_vec()));
        }
        if !r.is_done() {
            bail!("trailing bytes after the last checkpoint section");
        }
        Ok(Self { sections })
    }

    /// Writes through a temporary file so a crash never leaves a torn checkpoint.
    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("frlc.tmp");
        std::fs::write(&tmp, self.to_bytes()).with_context(|| format!("writing {}", tmp.display()))?;
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
        Self::from_bytes(&bytes).with_context(|| format!("loading {}", path.display()))
    }
}

pub struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let Some(end) = end else {
            bail!("checkpoint truncated: wanted {n} bytes at offset {}", self.pos);
        };
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    pub fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    pub fn f32s(&mut self) -> Result<Vec<f32>> {
        let n = self.u64()? as usize;
        let raw = self.take(n.checked_mul(4).context("tensor length overflow")?)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect())
    }

    pub fn is_done(&self) -> bool {
        self.pos == self.bytes.len()
    }
}

fn put_f32s(out: &mut Vec<u8>, xs: &[f32]) {
    out.extend_from_slice(&(xs.len() as u64).to_le_bytes());
    for x in xs {
        out.extend_from_slice(&x.to_le_bytes());
    }
}

/// `u32 count`, then per tensor `u32 name length | name | u64 length | f32 values`.
pub fn encode_tensors(tensors: &[(&str, Vec<f32>)]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, values) in tensors {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        put_f32s(&mut out, values);
    }
    out
}

pub fn decode_tensors(bytes: &[u8]) -> Result<Vec<(String, Vec<f32>)>> {
    let mut r = Reader::new(bytes);
    let n = r.u32()?;
    let mut out = Vec::with_capacity(n as usize);
    for _ in 0..n {
        let len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(len)?)?.to_string();
        out.push((name, r.f32s()?));
    }
    if !r.is_done() {
        bail!("trailing bytes in tensor section");
    }
    Ok(out)
}

/// Per optimizer: `u64 step count | first moment | second moment`.
pub fn encode_optimizers(opts: &[&AdamState<f32>]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&(opts.len() as u32).to_le_bytes());
    for o in opts {
        out.extend_from_slice(&o.step_count.to_le_bytes());
        put_f32s(&mut out, &o.first_moment);
        put_f32s(&mut out, &o.second_moment);
    }
    out
}

pub fn decode_optimizers_into(bytes: &[u8], opts: &mut [&mut AdamState<f32>]) -> Result<()> {
    let mut r = Reader::new(bytes);
    let n = r.u32()? as usize;
    if n != opts.len() {
        bail!("checkpoint holds {n} optimizer states, expected {}", opts.len());
    }
    for o in opts.iter_mut() {
        let steps = r.u64()?;
        let m = r.f32s()?;
        let v = r.f32s()?;
        if m.len() != o.len() || v.len() != o.len() {
            bail!(
                "optimizer state length {} does not match {} parameters",
                m.len(),
                o.len()
            );
        }
        o.step_count = steps;
        o.first_moment = m;
        o.second_moment = v;
    }
    if !r.is_done() {
        bail!("trailing bytes in optimizer section");
    }
    Ok(())
}
