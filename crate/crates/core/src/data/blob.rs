use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{assemble_instance, SimDomain, SimulationInstance};
use crate::grid::ComplexGrid2D;

pub const BLOB_MAGIC: &[u8; 7] = b"PACEDS1";
/// `[eps, src_re, src_im, field_re, field_im]`.
pub const BLOB_CHANNELS: usize = 5;
const HEADER_LEN: usize = 7 + 4 + 4 + 1 + BLOB_CHANNELS + 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dtype {
    F32,
    F64,
}

impl Dtype {
    fn tag(self) -> u8 {
        match self {
            Dtype::F32 => 0,
            Dtype::F64 => 1,
        }
    }

    fn from_tag(t: u8) -> Result<Self> {
        match t {
            0 => Ok(Dtype::F32),
            1 => Ok(Dtype::F64),
            other => Err(Error::Format(format!("unknown dtype tag {other}"))),
        }
    }

    pub fn width(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 => 8,
        }
    }
}

/// One record on disk:
/// `magic | u32 M | u32 N | u8 channel count | u8 dtype per channel |
/// u64 payload bytes | channels, row-major, little-endian`.
#[derive(Debug, Clone, PartialEq)]
pub struct RecordBlob {
    pub rows: usize,
    pub cols: usize,
    pub dtypes: [Dtype; BLOB_CHANNELS],
    /// Values widened to f64; `F32` channels hold f32-representable values.
    pub channels: [Vec<f64>; BLOB_CHANNELS],
}

impl RecordBlob {
    /// Permittivity must be real; the target is required.
    pub fn from_instance(inst: &SimulationInstance, dtype: Dtype) -> Result<Self> {
        let (m, n) = inst.shape();
        if inst.eps.data().iter().any(|z| z.im != 0.0) {
            return Err(Error::Format("record blobs store real permittivity only".into()));
        }
        let target = inst.target()?;
        let narrow = |v: Vec<f64>| match dtype {
            Dtype::F64 => v,
            Dtype::F32 => v.into_iter().map(|x| x as f32 as f64).collect(),
        };
        Ok(Self {
            rows: m,
            cols: n,
            dtypes: [dtype; BLOB_CHANNELS],
            channels: [
                narrow(inst.eps.real_parts()),
                narrow(inst.source_field.real_parts()),
                narrow(inst.source_field.imag_parts()),
                narrow(target.real_parts()),
                narrow(target.imag_parts()),
            ],
        })
    }

    /// Rebuilds the instance; priors are recomputed from the permittivity.
    pub fn to_instance(&self, domain: SimDomain, wavelength: f64) -> Result<SimulationInstance> {
        if (domain.rows, domain.cols) != (self.rows, self.cols) {
            return Err(Error::ShapeMismatch(format!(
                "blob is {}x{}, domain is {}x{}",
                self.rows, self.cols, domain.rows, domain.cols
            )));
        }
        let (m, n) = (self.rows, self.cols);
        let c = &self.channels;
        let complex = |re: &[f64], im: &[f64]| {
            ComplexGrid2D::from_fn(m, n, |i, j| num_complex::Complex64::new(re[i * n + j], im[i * n + j]))
        };
        let eps = ComplexGrid2D::from_real(m, n, &c[0])?;
        assemble_instance(eps, complex(&c[1], &c[2]), wavelength, domain, Some(complex(&c[3], &c[4])))
    }

    pub fn payload_len(&self) -> usize {
        self.dtypes.iter().map(|d| d.width() * self.rows * self.cols).sum()
    }

    pub fn encoded_len(&self) -> usize {
        HEADER_LEN + self.payload_len()
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.encoded_len());
        out.extend_from_slice(BLOB_MAGIC);
        out.extend_from_slice(&(self.rows as u32).to_le_bytes());
        out.extend_from_slice(&(self.cols as u32).to_le_bytes());
        out.push(BLOB_CHANNELS as u8);
        out.extend(self.dtypes.iter().map(|d| d.tag()));
        out.extend_from_slice(&(self.payload_len() as u64).to_le_bytes());
        for (d, ch) in self.dtypes.iter().zip(&self.channels) {
            for &v in ch {
                match d {
                    Dtype::F32 => out.extend_from_slice(&(v as f32).to_le_bytes()),
                    Dtype::F64 => out.extend_from_slice(&v.to_le_bytes()),
                }
            }
        }
        out
    }

    /// Rejects bad magic, unknown tags and any length disagreement.
    pub fn decode(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_LEN {
            return Err(Error::Format(format!("blob of {} bytes is shorter than its header", bytes.len())));
        }
        if &bytes[..7] != BLOB_MAGIC {
            return Err(Error::Format("bad blob magic".into()));
        }
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().expect("4 bytes")) as usize;
        let (rows, cols) = (u32_at(7), u32_at(11));
        if bytes[15] as usize != BLOB_CHANNELS {
            return Err(Error::Format(format!("expected {BLOB_CHANNELS} channels, header says {}", bytes[15])));
        }
        let mut dtypes = [Dtype::F64; BLOB_CHANNELS];
        for (k, d) in dtypes.iter_mut().enumerate() {
            *d = Dtype::from_tag(bytes[16 + k])?;
        }
        let declared = u64::from_le_bytes(bytes[21..29].try_into().expect("8 bytes")) as usize;
        let plane = rows
            .checked_mul(cols)
            .ok_or_else(|| Error::Format("blob dimensions overflow".into()))?;
        let expected: usize = dtypes.iter().map(|d| d.width() * plane).sum();
        if declared != expected || bytes.len() - HEADER_LEN != declared {
            return Err(Error::Format(format!(
                "payload length mismatch: header {declared}, dims imply {expected}, found {}",
                bytes.len() - HEADER_LEN
            )));
        }
        let mut channels: [Vec<f64>; BLOB_CHANNELS] = Default::default();
        let mut off = HEADER_LEN;
        for (d, ch) in dtypes.iter().zip(channels.iter_mut()) {
            let w = d.width();
            *ch = bytes[off..off + w * plane]
                .chunks_exact(w)
                .map(|b| match d {
                    Dtype::F32 => f32::from_le_bytes(b.try_into().expect("4 bytes")) as f64,
                    Dtype::F64 => f64::from_le_bytes(b.try_into().expect("8 bytes")),
                })
                .collect();
            off += w * plane;
        }
        Ok(Self {
            rows,
            cols,
            dtypes,
            channels,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::build_domain;
    use num_complex::Complex64;
    use proptest::prelude::*;

    fn inst() -> SimulationInstance {
        let d = build_domain(1.0, 2.0, 4, 6).unwrap();
        let eps = ComplexGrid2D::from_fn(4, 6, |i, j| Complex64::new(2.0 + (i * j) as f64 * 0.37, 0.0));
        let src = ComplexGrid2D::from_fn(4, 6, |i, _| Complex64::new(i as f64, -0.5));
        let t = ComplexGrid2D::from_fn(4, 6, |i, j| Complex64::new((i as f64).sin(), 1.0 / (1.0 + j as f64)));
        assemble_instance(eps, src, 1.55, d, Some(t)).unwrap()
    }

    #[test]
    fn instance_round_trip_f64_is_exact() {
        let i = inst();
        let blob = RecordBlob::from_instance(&i, Dtype::F64).unwrap();
        let bytes = blob.encode();
        assert_eq!(bytes.len(), blob.encoded_len());
        let back = RecordBlob::decode(&bytes).unwrap();
        assert_eq!(back, blob);
        assert_eq!(back.encode(), bytes);
        assert_eq!(back.to_instance(i.domain, i.wavelength).unwrap(), i);
    }

    #[test]
    fn f32_round_trip_is_stable() {
        let blob = RecordBlob::from_instance(&inst(), Dtype::F32).unwrap();
        let bytes = blob.encode();
        assert_eq!(RecordBlob::decode(&bytes).unwrap(), blob);
        assert_eq!(bytes.len(), 29 + 5 * 4 * 24);
    }

    #[test]
    fn corruption_is_detected() {
        let bytes = RecordBlob::from_instance(&inst(), Dtype::F64).unwrap().encode();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(RecordBlob::decode(&bad).is_err());
        assert!(RecordBlob::decode(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[7] = 5;
        assert!(RecordBlob::decode(&bad).is_err());
        let mut bad = bytes.clone();
        bad[16] = 9;
        assert!(RecordBlob::decode(&bad).is_err());
        let mut long = bytes;
        long.push(0);
        assert!(RecordBlob::decode(&long).is_err());
    }

    proptest! {
        #[test]
        fn arbitrary_blobs_round_trip(
            rows in 1usize..5, cols in 1usize..5,
            f32_mask in proptest::collection::vec(any::<bool>(), 5),
            seed in any::<u64>(),
        ) {
            let mut x = seed;
            let mut next = || { x = x.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407); (x >> 11) as f64 / (1u64 << 53) as f64 - 0.5 };
            let dtypes: [Dtype; 5] = std::array::from_fn(|k| if f32_mask[k] { Dtype::F32 } else { Dtype::F64 });
            let channels: [Vec<f64>; 5] = std::array::from_fn(|k| {
                (0..rows * cols).map(|_| { let v = next(); if f32_mask[k] { v as f32 as f64 } else { v } }).collect()
            });
            let blob = RecordBlob { rows, cols, dtypes, channels };
            prop_assert_eq!(RecordBlob::decode(&blob.encode()).unwrap(), blob);
        }
    }
}
