//! Self-describing binary checkpoint container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "SQTGCKPT"                      8-byte magic
//! version: u32
//! header:    len u64, UTF-8 key=value text, crc32 u32
//! vocab:     len u64, UTF-8 one token per line, crc32 u32
//! directory: len u64, entries, crc32 u32
//!     count u32, then per tensor:
//!     name_len u32, name, rank u32, dims u64×rank, offset u64, numel u64, crc32 u32
//! data:      f32 blocks at directory offsets (bytes from data start)
//! ```
//!
//! Every length is checked against the bytes actually present before any
//! buffer is allocated, so a truncated or corrupted file fails with an
//! [`Error::Integrity`] naming the first bad block.

use std::collections::BTreeMap;
use std::path::Path;

use seqtag_tensor::{Real, Tensor};

use crate::config::Settings;
use crate::error::{Error, Result};
use crate::tokenizer::Vocab;

pub const MAGIC: &[u8; 8] = b"SQTGCKPT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    /// Model configuration (encoder, head, tag set, ...).
    pub config: Settings,
    /// Run metadata: seed, epoch, task, kind.
    pub metadata: Settings,
    pub vocab: Vocab,
    pub tensors: Vec<NamedTensor>,
}

/// Outcome of copying checkpoint tensors into live parameters.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LoadReport {
    pub loaded: Vec<String>,
    /// Parameters with no tensor in the checkpoint; left as initialized.
    pub missing: Vec<String>,
}

impl Checkpoint {
    pub fn new(vocab: Vocab) -> Self {
        Checkpoint {
            config: Settings::new(),
            metadata: Settings::new(),
            vocab,
            tensors: Vec::new(),
        }
    }

    /// Appends `params` (cast to f32) with `prefix` prepended to each name.
    pub fn add_params<F: Real>(&mut self, prefix: &str, params: &[(String, Tensor<F>)]) {
        for (name, t) in params {
            self.tensors.push(NamedTensor {
                name: format!("{prefix}{name}"),
                shape: t.shape().to_vec(),
                data: t.data().iter().map(|x| x.to_f32().unwrap()).collect(),
            });
        }
    }

    pub fn push(&mut self, name: impl Into<String>, shape: &[usize], data: Vec<f32>) {
        self.tensors.push(NamedTensor {
            name: name.into(),
            shape: shape.to_vec(),
            data,
        });
    }

    pub fn tensor(&self, name: &str) -> Option<&NamedTensor> {
        self.tensors.iter().find(|t| t.name == name)
    }

    pub fn has_prefix(&self, prefix: &str) -> bool {
        self.tensors.iter().any(|t| t.name.starts_with(prefix))
    }

    /// Copies tensors named `prefix + param_name` into `params`.
    ///
    /// A shape mismatch is an error; absent tensors are reported, not fatal.
    pub fn load_into<F: Real>(&self, prefix: &str, params: &[(String, Tensor<F>)]) -> Result<LoadReport> {
        let by_name: BTreeMap<&str, &NamedTensor> = self.tensors.iter().map(|t| (t.name.as_str(), t)).collect();
        let mut report = LoadReport::default();
        for (name, t) in params {
            let full = format!("{prefix}{name}");
            match by_name.get(full.as_str()) {
                Some(saved) => {
                    if saved.shape != t.shape() {
                        return Err(Error::Contract(format!(
                            "checkpoint tensor `{full}` has shape {:?}, model expects {:?}",
                            saved.shape,
                            t.shape()
                        )));
                    }
                    let values: Vec<F> = saved.data.iter().map(|&x| F::from_f32(x).unwrap()).collect();
                    t.set_data(&values)?;
                    report.loaded.push(name.clone());
                }
                None => report.missing.push(name.clone()),
            }
        }
        Ok(report)
    }

    fn header_text(&self) -> String {
        let mut s = Settings::new();
        s.merge_prefixed("config.", &self.config);
        s.merge_prefixed("meta.", &self.metadata);
        s.to_text()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        write_block(&mut out, self.header_text().as_bytes());
        write_block(&mut out, self.vocab.to_text().as_bytes());

        let mut dir = Vec::new();
        dir.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        let mut data = Vec::new();
        for t in &self.tensors {
            let block: Vec<u8> = t.data.iter().flat_map(|x| x.to_le_bytes()).collect();
            dir.extend_from_slice(&(t.name.len() as u32).to_le_bytes());
            dir.extend_from_slice(t.name.as_bytes());
            dir.extend_from_slice(&(t.shape.len() as u32).to_le_bytes());
            for &d in &t.shape {
                dir.extend_from_slice(&(d as u64).to_le_bytes());
            }
            dir.extend_from_slice(&(data.len() as u64).to_le_bytes());
            dir.extend_from_slice(&(t.data.len() as u64).to_le_bytes());
            dir.extend_from_slice(&crc32fast::hash(&block).to_le_bytes());
            data.extend_from_slice(&block);
        }
        write_block(&mut out, &dir);
        out.extend_from_slice(&data);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8, "magic")? != MAGIC {
            return Err(integrity("magic"));
        }
        let version = r.u32("version")?;
        if version != FORMAT_VERSION {
            return Err(Error::Version {
                found: version,
                expected: FORMAT_VERSION,
            });
        }
        let header = std::str::from_utf8(r.block("header")?).map_err(|_| integrity("header"))?;
        let header = Settings::parse(header, "checkpoint header").map_err(|_| integrity("header"))?;
        let vocab_text = std::str::from_utf8(r.block("vocab")?).map_err(|_| integrity("vocab"))?;
        let vocab = Vocab::from_text(vocab_text).map_err(|_| integrity("vocab"))?;
        let dir = r.block("directory")?;
        let data = &bytes[r.pos..];

        let mut d = Reader { bytes: dir, pos: 0 };
        let count = d.u32("directory")? as usize;
        let mut tensors = Vec::with_capacity(count.min(dir.len()));
        let mut expected_offset = 0u64;
        for _ in 0..count {
            let name_len = d.u32("directory")? as usize;
            let name = std::str::from_utf8(d.take(name_len, "directory")?)
                .map_err(|_| integrity("directory"))?
                .to_string();
            let rank = d.u32("directory")? as usize;
            if rank > 8 {
                return Err(integrity("directory"));
            }
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(d.u64("directory")? as usize);
            }
            let offset = d.u64("directory")?;
            let numel = d.u64("directory")?;
            let crc = d.u32("directory")?;
            let block = format!("tensor `{name}`");
            let expected = shape.iter().try_fold(1usize, |a, &b| a.checked_mul(b));
            if offset != expected_offset || expected != Some(numel as usize) || shape.contains(&0) {
                return Err(Error::Integrity { block });
            }
            let len = (numel as usize).checked_mul(4).ok_or_else(|| integrity(&block))?;
            let start = offset as usize;
            let raw = data.get(start..start + len).ok_or_else(|| integrity(&block))?;
            if crc32fast::hash(raw) != crc {
                return Err(Error::Integrity { block });
            }
            let values = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            expected_offset += len as u64;
            tensors.push(NamedTensor {
                name,
                shape,
                data: values,
            });
        }
        if d.pos != dir.len() {
            return Err(integrity("directory"));
        }
        if expected_offset as usize != data.len() {
            return Err(integrity("data"));
        }
        Ok(Checkpoint {
            config: header.section("config."),
            metadata: header.section("meta."),
            vocab,
            tensors,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

fn integrity(block: &str) -> Error {
    Error::Integrity {
        block: block.to_string(),
    }
}

fn write_block(out: &mut Vec<u8>, payload: &[u8]) {
    out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
    out.extend_from_slice(payload);
    out.extend_from_slice(&crc32fast::hash(payload).to_le_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, block: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).ok_or_else(|| integrity(block))?;
        let s = self.bytes.get(self.pos..end).ok_or_else(|| integrity(block))?;
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, block: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, block)?.try_into().unwrap()))
    }

    fn u64(&mut self, block: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, block)?.try_into().unwrap()))
    }

    /// A length-prefixed, crc-suffixed block.
    fn block(&mut self, block: &str) -> Result<&'a [u8]> {
        let len = self.u64(block)?;
        let len = usize::try_from(len).map_err(|_| integrity(block))?;
        let payload = self.take(len, block)?;
        if crc32fast::hash(payload) != self.u32(block)? {
            return Err(integrity(block));
        }
        Ok(payload)
    }
}
