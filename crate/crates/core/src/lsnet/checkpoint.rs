//! Checkpoint container.
//!
//! Layout:
//!
//! ```text
//! b"LSNETCKP"            8-byte magic
//! u64 (LE)               header length in bytes
//! header                 UTF-8 JSON: config, seed, tensor table
//! payload                concatenated little-endian f32 arrays
//! ```
//!
//! Offsets in the tensor table are relative to the start of the payload.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::model::{LsNet, LsNetConfig};
use super::param::{NamedArray, ParameterSet};
use crate::{Error, Result};

const MAGIC: &[u8; 8] = b"LSNETCKP";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub dtype: String,
    pub offset: u64,
    pub trainable: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format_version: u32,
    pub config: LsNetConfig,
    pub seed: u64,
    pub tensors: Vec<TensorEntry>,
}

pub fn encode(config: &LsNetConfig, seed: u64, params: &ParameterSet<f32>) -> Result<Vec<u8>> {
    let mut offset = 0u64;
    let tensors = params
        .entries
        .iter()
        .map(|e| {
            let t = TensorEntry {
                name: e.name.clone(),
                shape: e.shape.clone(),
                dtype: "f32le".into(),
                offset,
                trainable: e.trainable,
            };
            offset += 4 * e.data.len() as u64;
            t
        })
        .collect();
    let header = CheckpointHeader {
        format_version: 1,
        config: config.clone(),
        seed,
        tensors,
    };
    let header = serde_json::to_vec_pretty(&header)?;
    let mut out = Vec::with_capacity(16 + header.len() + offset as usize);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    for e in &params.entries {
        for v in &e.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode(bytes: &[u8]) -> Result<(CheckpointHeader, ParameterSet<f32>)> {
    let bad = |m: &str| Error::Checkpoint(m.to_string());
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(bad("missing magic"));
    }
    let hlen = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let payload_start = 16usize
        .checked_add(hlen)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| bad("truncated header"))?;
    let header: CheckpointHeader = serde_json::from_slice(&bytes[16..payload_start])?;
    let payload = &bytes[payload_start..];
    let mut entries = Vec::with_capacity(header.tensors.len());
    let mut expected_offset = 0u64;
    for t in &header.tensors {
        if t.dtype != "f32le" {
            return Err(bad(&format!("unsupported dtype {} for {}", t.dtype, t.name)));
        }
        if t.offset != expected_offset {
            return Err(bad(&format!("non-contiguous offset for {}", t.name)));
        }
        let n: usize = t.shape.iter().product();
        let start = t.offset as usize;
        let end = start + 4 * n;
        let raw = payload
            .get(start..end)
            .ok_or_else(|| bad(&format!("truncated payload at {}", t.name)))?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        entries.push(NamedArray {
            name: t.name.clone(),
            shape: t.shape.clone(),
            trainable: t.trainable,
            data,
        });
        expected_offset = end as u64;
    }
    if expected_offset as usize != payload.len() {
        return Err(bad("trailing bytes after payload"));
    }
    Ok((header, ParameterSet { entries }))
}

pub fn save(model: &LsNet<f32>, path: &Path) -> Result<()> {
    let bytes = encode(&model.config, model.seed, &model.parameters())?;
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<LsNet<f32>> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    let (header, params) = decode(&bytes)?;
    let mut model = LsNet::new(header.config, header.seed)?;
    model.load_parameters(&params)?;
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bit_exact() {
        let model = LsNet::<f32>::new(LsNetConfig::with_classes(5), 11).unwrap();
        let params = model.parameters();
        let bytes = encode(&model.config, model.seed, &params).unwrap();
        let (header, back) = decode(&bytes).unwrap();
        assert_eq!(header.seed, 11);
        assert_eq!(header.config, model.config);
        for (a, b) in params.entries.iter().zip(&back.entries) {
            assert_eq!(a.name, b.name);
            let ab: Vec<u32> = a.data.iter().map(|v| v.to_bits()).collect();
            let bb: Vec<u32> = b.data.iter().map(|v| v.to_bits()).collect();
            assert_eq!(ab, bb);
        }
    }

    #[test]
    fn corrupted_containers_are_rejected() {
        let model = LsNet::<f32>::new(LsNetConfig::default(), 1).unwrap();
        let bytes = encode(&model.config, 1, &model.parameters()).unwrap();
        assert!(decode(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(decode(&bad).is_err());
        let mut extra = bytes;
        extra.push(0);
        assert!(decode(&extra).is_err());
    }
}
