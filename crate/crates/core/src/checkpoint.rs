//! Model checkpoints: `PVCK` magic, little-endian u64 header length, a JSON
//! header describing named tensors, then the tensors as little-endian f64.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

const MAGIC: &[u8; 4] = b"PVCK";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorSpec {
    pub name: String,
    pub shape: Vec<usize>,
    /// Offset into the data block, in elements.
    pub offset: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub kind: String,
    pub version: u64,
    pub tensors: Vec<TensorSpec>,
    #[serde(default)]
    pub meta: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub data: Vec<f64>,
}

impl Checkpoint {
    pub fn new(kind: &str, version: u64, meta: serde_json::Value) -> Self {
        Self {
            header: CheckpointHeader {
                kind: kind.to_string(),
                version,
                tensors: Vec::new(),
                meta,
            },
            data: Vec::new(),
        }
    }

    pub fn push(&mut self, name: &str, shape: &[usize], values: &[f64]) {
        assert_eq!(shape.iter().product::<usize>(), values.len(), "tensor {name} shape mismatch");
        self.header.tensors.push(TensorSpec {
            name: name.to_string(),
            shape: shape.to_vec(),
            offset: self.data.len(),
        });
        self.data.extend_from_slice(values);
    }

    pub fn tensor(&self, name: &str) -> Result<&[f64]> {
        let spec = self
            .header
            .tensors
            .iter()
            .find(|t| t.name == name)
            .ok_or_else(|| Error::Data(format!("checkpoint has no tensor {name:?}")))?;
        let len: usize = spec.shape.iter().product();
        self.data
            .get(spec.offset..spec.offset + len)
            .ok_or_else(|| Error::Data(format!("tensor {name:?} exceeds data block")))
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = serde_json::to_vec(&self.header)?;
        let mut out = Vec::with_capacity(12 + header.len() + self.data.len() * 8);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Data(format!("malformed checkpoint: {m}"));
        if bytes.len() < 12 || &bytes[..4] != MAGIC {
            return Err(bad("bad magic"));
        }
        let hlen = u64::from_le_bytes(bytes[4..12].try_into().unwrap()) as usize;
        let body = bytes.get(12..).ok_or_else(|| bad("truncated"))?;
        if body.len() < hlen || (body.len() - hlen) % 8 != 0 {
            return Err(bad("inconsistent lengths"));
        }
        let header: CheckpointHeader = serde_json::from_slice(&body[..hlen])?;
        let data = body[hlen..]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(Self { header, data })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::experiment::write_atomic(path, &self.to_bytes()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_preserves_bits() {
        let mut ck = Checkpoint::new("test", 3, serde_json::json!({"note": "x"}));
        ck.push("a", &[2, 2], &[1.0, -0.0, f64::MIN_POSITIVE, 1e300]);
        ck.push("b", &[1], &[std::f64::consts::PI]);
        let back = Checkpoint::from_bytes(&ck.to_bytes().unwrap()).unwrap();
        assert_eq!(back.header, ck.header);
        assert_eq!(
            back.data.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            ck.data.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
        assert_eq!(back.tensor("b").unwrap(), &[std::f64::consts::PI]);
        assert!(back.tensor("c").is_err());
        assert!(Checkpoint::from_bytes(b"PVCK").is_err());
    }
}
