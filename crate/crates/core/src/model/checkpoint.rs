//! Versioned binary container for parameters and optimizer state.
//!
//! Layout: `PACECKPT`, `u32` version, `u64` header length, JSON header,
//! then raw little-endian payload. The header lists every array with its
//! section, name, dtype tag (`f64` or `c128`), shape, offset and length.

use std::io::Write;
use std::path::Path;

use indexmap::IndexMap;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::params::{Param, ParameterStore};
use super::Architecture;
use crate::error::{Error, Result};
use crate::tensor::{ComplexArray, RealArray};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"PACECKPT";
const VERSION: u32 = 1;
const GRADIENT_CONVENTION: &str = "complex gradients are dL/dRe + j dL/dIm";

/// Model parameters plus named auxiliary sections (optimizer moments) and
/// free-form metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub architecture: Architecture,
    pub params: ParameterStore,
    pub sections: IndexMap<String, ParameterStore>,
    pub meta: serde_json::Value,
}

impl Checkpoint {
    pub fn new(architecture: Architecture, params: ParameterStore) -> Self {
        Self {
            architecture,
            params,
            sections: IndexMap::new(),
            meta: serde_json::Value::Null,
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut entries = Vec::new();
        let mut payload = Vec::new();
        let all = std::iter::once(("params", &self.params))
            .chain(self.sections.iter().map(|(k, v)| (k.as_str(), v)));
        for (section, store) in all {
            for (name, p) in store.iter() {
                let offset = payload.len() as u64;
                match p {
                    Param::Real(a) => a.data().iter().for_each(|v| payload.extend(v.to_le_bytes())),
                    Param::Complex(a) => a.data().iter().for_each(|z| {
                        payload.extend(z.re.to_le_bytes());
                        payload.extend(z.im.to_le_bytes());
                    }),
                }
                entries.push(ArrayEntry {
                    section: section.to_string(),
                    name: name.to_string(),
                    dtype: if p.is_complex() { "c128" } else { "f64" }.to_string(),
                    shape: p.shape().to_vec(),
                    offset,
                    length: payload.len() as u64 - offset,
                });
            }
        }
        let header = Header {
            version: VERSION,
            gradient_convention: GRADIENT_CONVENTION.to_string(),
            architecture: self.architecture.clone(),
            meta: self.meta.clone(),
            arrays: entries,
            payload_length: payload.len() as u64,
        };
        let json = serde_json::to_vec(&header)?;
        let mut out = Vec::with_capacity(20 + json.len() + payload.len());
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend(VERSION.to_le_bytes());
        out.extend((json.len() as u64).to_le_bytes());
        out.extend(json);
        out.extend(payload);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::IncompatibleCheckpoint(m.to_string());
        if bytes.len() < 20 || &bytes[..8] != CHECKPOINT_MAGIC {
            return Err(bad("missing PACECKPT magic"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != VERSION {
            return Err(bad(&format!("unsupported version {version}")));
        }
        let hlen = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
        let body = &bytes[20..];
        if hlen > body.len() {
            return Err(bad("header length exceeds file"));
        }
        let header: Header = serde_json::from_slice(&body[..hlen])
            .map_err(|e| bad(&format!("header: {e}")))?;
        if header.gradient_convention != GRADIENT_CONVENTION {
            return Err(bad("gradient convention differs"));
        }
        let payload = &body[hlen..];
        if payload.len() as u64 != header.payload_length {
            return Err(bad("payload length does not match header"));
        }
        let mut params = ParameterStore::new();
        let mut sections: IndexMap<String, ParameterStore> = IndexMap::new();
        for e in &header.arrays {
            let (start, end) = (e.offset as usize, (e.offset + e.length) as usize);
            if end > payload.len() || start > end {
                return Err(bad(&format!("array {} out of bounds", e.name)));
            }
            let raw: Vec<f64> = payload[start..end]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            let count: usize = e.shape.iter().product();
            let p = match e.dtype.as_str() {
                "f64" if raw.len() == count => Param::Real(RealArray::from_vec(&e.shape, raw)?),
                "c128" if raw.len() == 2 * count => Param::Complex(ComplexArray::from_vec(
                    &e.shape,
                    raw.chunks_exact(2).map(|c| Complex64::new(c[0], c[1])).collect(),
                )?),
                _ => return Err(bad(&format!("array {} has a bad dtype or length", e.name))),
            };
            let target = if e.section == "params" {
                &mut params
            } else {
                sections.entry(e.section.clone()).or_default()
            };
            target
                .insert(e.name.clone(), p)
                .map_err(|_| bad(&format!("duplicate array {}", e.name)))?;
        }
        let expected = super::init_params(&header.architecture, 0)
            .map_err(|e| bad(&format!("architecture: {e}")))?;
        if !expected.same_layout(&params) {
            return Err(bad("parameters do not match the embedded architecture"));
        }
        Ok(Self {
            architecture: header.architecture,
            params,
            sections,
            meta: header.meta,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct ArrayEntry {
    section: String,
    name: String,
    dtype: String,
    shape: Vec<usize>,
    offset: u64,
    length: u64,
}

#[derive(Serialize, Deserialize)]
struct Header {
    version: u32,
    gradient_convention: String,
    architecture: Architecture,
    meta: serde_json::Value,
    arrays: Vec<ArrayEntry>,
    payload_length: u64,
}

/// Writes atomically (temporary file then rename).
pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    let bytes = ckpt.to_bytes()?;
    let tmp = path.with_extension("tmp");
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(&bytes)?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    Checkpoint::from_bytes(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{init_params, ModelConfig};
    use crate::spectral::ModeSpec;

    fn ckpt() -> Checkpoint {
        let arch = Architecture::Single(ModelConfig::pace(4, 3, ModeSpec::new(3, 3), 2));
        let params = init_params(&arch, 9).unwrap();
        let mut c = Checkpoint::new(arch, params.clone());
        c.sections.insert("adam_m".into(), params.zeros_like());
        c.meta = serde_json::json!({"epoch": 3});
        c
    }

    #[test]
    fn round_trip_is_exact() {
        let c = ckpt();
        let back = Checkpoint::from_bytes(&c.to_bytes().unwrap()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn corruption_is_detected() {
        let bytes = ckpt().to_bytes().unwrap();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(Checkpoint::from_bytes(&bad), Err(Error::IncompatibleCheckpoint(_))));
        let short = &bytes[..bytes.len() - 8];
        assert!(matches!(Checkpoint::from_bytes(short), Err(Error::IncompatibleCheckpoint(_))));
    }

    #[test]
    fn mismatched_architecture_is_rejected() {
        let mut c = ckpt();
        if let Architecture::Single(m) = &mut c.architecture {
            m.channels = 8;
        }
        let bytes = c.to_bytes().unwrap();
        assert!(matches!(Checkpoint::from_bytes(&bytes), Err(Error::IncompatibleCheckpoint(_))));
    }
}
