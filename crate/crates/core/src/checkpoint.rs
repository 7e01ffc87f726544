//! Binary checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic        4 bytes  "RFOD"
//! version      u32
//! config_len   u32      followed by the training config as JSON
//! tensor_count u32
//! manifest     tensor_count x { name_len u16, name, rank u8, dims u32 x rank,
//!                               offset u64, numel u64 }
//! payload_len  u64      followed by the f32 payload; offsets are relative
//!                       to the payload start
//! digest       32 bytes SHA-256 of every preceding byte
//! ```

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::{build_networks_split, image_shape, NamedTensor};
use crate::tensor::Tensor;
use crate::training::{Checkpoint, ErrorMap, TrainConfig};

pub const MAGIC: &[u8; 4] = b"RFOD";
pub const FORMAT_VERSION: u32 = 1;
pub const ERROR_MAP_NAME: &str = "error_map";
const DIGEST_LEN: usize = 32;

/// One manifest entry as read back from a container.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub name: String,
    pub dims: Vec<usize>,
    pub offset: u64,
    pub numel: u64,
}

fn collect_tensors(ckpt: &Checkpoint) -> Vec<NamedTensor> {
    let nets = &ckpt.networks;
    let mut tensors = nets.encoder.named_tensors();
    tensors.extend(nets.decoder.named_tensors());
    tensors.extend(nets.discriminator.named_tensors());
    if let Some(c) = &ckpt.error_map {
        tensors.push(NamedTensor {
            name: ERROR_MAP_NAME.into(),
            dims: vec![3, 128, 128],
            data: c.data().to_vec(),
        });
    }
    tensors
}

/// Serializes a checkpoint into container bytes.
pub fn encode_checkpoint(ckpt: &Checkpoint) -> Result<Vec<u8>> {
    let tensors = collect_tensors(ckpt);
    let config = serde_json::to_vec(&ckpt.config)?;
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(config.len() as u32).to_le_bytes());
    out.extend_from_slice(&config);
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    let mut offset = 0u64;
    for t in &tensors {
        out.extend_from_slice(&(t.name.len() as u16).to_le_bytes());
        out.extend_from_slice(t.name.as_bytes());
        out.push(t.dims.len() as u8);
        for &d in &t.dims {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        out.extend_from_slice(&offset.to_le_bytes());
        out.extend_from_slice(&(t.data.len() as u64).to_le_bytes());
        offset += 4 * t.data.len() as u64;
    }
    out.extend_from_slice(&offset.to_le_bytes());
    for t in &tensors {
        for v in &t.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::CorruptContainer(format!("truncated while reading {what}")))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

/// Parsed container: config, manifest and payload view.
pub struct Container<'a> {
    pub version: u32,
    pub config: TrainConfig,
    pub manifest: Vec<ManifestEntry>,
    payload: &'a [u8],
}

impl Container<'_> {
    pub fn tensor(&self, entry: &ManifestEntry) -> NamedTensor {
        let start = entry.offset as usize;
        let bytes = &self.payload[start..start + 4 * entry.numel as usize];
        NamedTensor {
            name: entry.name.clone(),
            dims: entry.dims.clone(),
            data: bytes
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect(),
        }
    }

    /// Number of tensors whose payload bytes are actually present.
    pub fn payload_tensor_count(&self) -> usize {
        self.manifest
            .iter()
            .filter(|e| (e.offset + 4 * e.numel) as usize <= self.payload.len())
            .count()
    }
}

/// Validates framing, digest and manifest bounds.
pub fn parse_container(bytes: &[u8]) -> Result<Container<'_>> {
    if bytes.len() < MAGIC.len() + 4 {
        return Err(Error::CorruptContainer("file too short for header".into()));
    }
    if &bytes[..4] != MAGIC {
        return Err(Error::CorruptContainer("bad magic bytes".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(Error::VersionMismatch {
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    if bytes.len() < 8 + DIGEST_LEN {
        return Err(Error::CorruptContainer("truncated before digest".into()));
    }
    let (body, digest) = bytes.split_at(bytes.len() - DIGEST_LEN);
    let mut r = Reader { buf: body, pos: 8 };
    let config_len = r.u32("config length")? as usize;
    let config: TrainConfig = serde_json::from_slice(r.take(config_len, "config")?)
        .map_err(|e| Error::CorruptContainer(format!("config: {e}")))?;
    let count = r.u32("tensor count")? as usize;
    let mut manifest = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        let name_len = r.u16("tensor name length")? as usize;
        let name = String::from_utf8(r.take(name_len, "tensor name")?.to_vec())
            .map_err(|_| Error::CorruptContainer("tensor name is not utf-8".into()))?;
        let rank = r.u8("tensor rank")? as usize;
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(r.u32("tensor dims")? as usize);
        }
        let offset = r.u64("tensor offset")?;
        let numel = r.u64("tensor element count")?;
        if dims.iter().product::<usize>() as u64 != numel {
            return Err(Error::CorruptContainer(format!("tensor {name}: dims disagree with element count")));
        }
        manifest.push(ManifestEntry { name, dims, offset, numel });
    }
    let payload_len = r.u64("payload length")? as usize;
    let payload = r.take(payload_len, "payload")?;
    if r.pos != body.len() {
        return Err(Error::CorruptContainer("trailing bytes after payload".into()));
    }
    if Sha256::digest(body).as_slice() != digest {
        return Err(Error::CorruptContainer("digest mismatch".into()));
    }
    for e in &manifest {
        let end = e.offset.checked_add(4 * e.numel);
        if end.is_none_or(|end| end as usize > payload.len()) {
            return Err(Error::CorruptContainer(format!("tensor {} exceeds payload", e.name)));
        }
    }
    Ok(Container {
        version,
        config,
        manifest,
        payload,
    })
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let container = parse_container(bytes)?;
    let by_name: HashMap<&str, &ManifestEntry> =
        container.manifest.iter().map(|e| (e.name.as_str(), e)).collect();
    let lookup = |name: &str| by_name.get(name).map(|e| container.tensor(e));
    let cfg = container.config.clone();
    let mut networks = build_networks_split(cfg.seed, cfg.discriminator_seed(), &cfg.arch);
    networks.encoder.load_named(&lookup)?;
    networks.decoder.load_named(&lookup)?;
    networks.discriminator.load_named(&lookup)?;
    let error_map = match lookup(ERROR_MAP_NAME) {
        Some(t) => {
            if t.dims != [3, 128, 128] {
                return Err(Error::CorruptContainer("error map has wrong dims".into()));
            }
            Some(ErrorMap::new(Tensor::from_vec(image_shape(1), t.data)?)?)
        }
        None => None,
    };
    Ok(Checkpoint {
        config: cfg,
        networks,
        error_map,
    })
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    let bytes = encode_checkpoint(ckpt)?;
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}
