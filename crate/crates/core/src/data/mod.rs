//! On-disk datasets: `manifest.json` plus one `records.bin` holding every
//! [`RecordBlob`] back to back at the offsets the manifest lists.

mod blob;

use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{Read, Seek, SeekFrom, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use blob::{Dtype, RecordBlob, BLOB_CHANNELS, BLOB_MAGIC};

use crate::error::{Error, Result};
use crate::fdfd::{GeneratedDataset, GenerationConfig, RecordStatus, Split};
use crate::field::{DeviceSpec, SimDomain, SimulationInstance};
use crate::train::{Sample, TrainData, MIXUP_PROBABILITY};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const RECORDS_FILE: &str = "records.bin";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub id: usize,
    pub device_index: usize,
    pub device: DeviceSpec,
    pub domain: SimDomain,
    pub port: usize,
    pub wavelength: f64,
    pub split: Split,
    /// Byte range in `records.bin`; both zero for failed records.
    pub offset: u64,
    pub length: u64,
    pub residual: Option<f64>,
    pub status: RecordStatus,
}

/// How training superposes records. Stored so the choice travels with the
/// data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixupRule {
    pub probability: f64,
    pub partner: String,
    pub weights: String,
}

impl Default for MixupRule {
    fn default() -> Self {
        Self {
            probability: MIXUP_PROBABILITY,
            partner: "uniform over other records of the same device".into(),
            weights: "two independent unit-magnitude phases, uniform on [0, 2pi)".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub seed: u64,
    pub config_hash: String,
    pub config: GenerationConfig,
    pub dtype: Dtype,
    pub mixup: MixupRule,
    /// Largest relative superposition mismatch found at generation time.
    pub mixup_check_error: Option<f64>,
    pub records: Vec<ManifestRecord>,
}

impl DatasetManifest {
    /// Unique ids, disjoint device-level splits and the 72/8/20 proportions
    /// (up to rounding) over devices.
    pub fn validate(&self) -> Result<()> {
        if self.format_version != FORMAT_VERSION {
            return Err(Error::Format(format!("unsupported format version {}", self.format_version)));
        }
        let mut ids = HashSet::new();
        let mut device_split: BTreeMap<usize, Split> = BTreeMap::new();
        for r in &self.records {
            if !ids.insert(r.id) {
                return Err(Error::Format(format!("duplicate record id {}", r.id)));
            }
            if *device_split.entry(r.device_index).or_insert(r.split) != r.split {
                return Err(Error::Format(format!("device {} spans several splits", r.device_index)));
            }
        }
        let n = device_split.len();
        let count = |s| device_split.values().filter(|&&v| v == s).count();
        let train = (0.72 * n as f64).round() as usize;
        let val = ((0.08 * n as f64).round() as usize).min(n - train.min(n));
        if n > 0 && (count(Split::Train), count(Split::Val)) != (train, val) {
            return Err(Error::Format("split proportions deviate from 72/8/20".into()));
        }
        Ok(())
    }

    pub fn records_in(&self, split: Split) -> impl Iterator<Item = &ManifestRecord> {
        self.records
            .iter()
            .filter(move |r| r.split == split && r.status == RecordStatus::Ok)
    }
}

/// Writes `manifest.json` and `records.bin` into `dir`. Byte-identical for
/// identical datasets.
pub fn write_dataset(dir: &Path, ds: &GeneratedDataset, dtype: Dtype) -> Result<DatasetManifest> {
    std::fs::create_dir_all(dir)?;
    let mut bin = Vec::new();
    let mut records = Vec::with_capacity(ds.records.len());
    for r in &ds.records {
        let (offset, length) = match &r.instance {
            Some(inst) if r.status == RecordStatus::Ok => {
                let bytes = RecordBlob::from_instance(inst, dtype)?.encode();
                let off = bin.len() as u64;
                bin.extend_from_slice(&bytes);
                (off, bytes.len() as u64)
            }
            _ => (0, 0),
        };
        records.push(ManifestRecord {
            id: r.id,
            device_index: r.device_index,
            device: r.device.clone(),
            domain: r.domain,
            port: r.port,
            wavelength: r.wavelength,
            split: r.split,
            offset,
            length,
            residual: r.residual,
            status: r.status.clone(),
        });
    }
    let manifest = DatasetManifest {
        format_version: FORMAT_VERSION,
        seed: ds.seed,
        config_hash: ds.config.config_hash(),
        config: ds.config.clone(),
        dtype,
        mixup: MixupRule::default(),
        mixup_check_error: ds.mixup_check_error,
        records,
    };
    let mut f = File::create(dir.join(RECORDS_FILE))?;
    f.write_all(&bin)?;
    f.sync_all()?;
    let json = serde_json::to_vec_pretty(&manifest).map_err(|e| Error::Format(e.to_string()))?;
    std::fs::write(dir.join(MANIFEST_FILE), json)?;
    Ok(manifest)
}

pub fn read_manifest(dir: &Path) -> Result<DatasetManifest> {
    let text = std::fs::read_to_string(dir.join(MANIFEST_FILE))?;
    let m: DatasetManifest = serde_json::from_str(&text).map_err(|e| Error::Format(format!("manifest: {e}")))?;
    m.validate()?;
    Ok(m)
}

fn read_blob(file: &mut File, rec: &ManifestRecord, file_len: u64) -> Result<RecordBlob> {
    if rec.status != RecordStatus::Ok {
        return Err(Error::Format(format!("record {} failed at generation", rec.id)));
    }
    if rec.offset.checked_add(rec.length).is_none_or(|end| end > file_len) {
        return Err(Error::Format(format!("record {} lies past the end of {RECORDS_FILE}", rec.id)));
    }
    let mut buf = vec![0u8; rec.length as usize];
    file.seek(SeekFrom::Start(rec.offset))?;
    file.read_exact(&mut buf)?;
    RecordBlob::decode(&buf)
}

/// Reads and decodes the given records, in order.
pub fn read_records(dir: &Path, records: &[&ManifestRecord]) -> Result<Vec<SimulationInstance>> {
    let mut f = File::open(dir.join(RECORDS_FILE))?;
    let len = f.metadata()?.len();
    records
        .iter()
        .map(|r| read_blob(&mut f, r, len)?.to_instance(r.domain, r.wavelength))
        .collect()
}

pub fn read_blob_of(dir: &Path, rec: &ManifestRecord) -> Result<RecordBlob> {
    let mut f = File::open(dir.join(RECORDS_FILE))?;
    let len = f.metadata()?.len();
    read_blob(&mut f, rec, len)
}

/// Samples of one split, in manifest order.
pub fn load_split(dir: &Path, manifest: &DatasetManifest, split: Split) -> Result<Vec<Sample>> {
    let recs: Vec<&ManifestRecord> = manifest.records_in(split).collect();
    let insts = read_records(dir, &recs)?;
    Ok(recs
        .into_iter()
        .zip(insts)
        .map(|(r, instance)| Sample {
            id: r.id.to_string(),
            device: r.device_index,
            instance,
        })
        .collect())
}

/// Train and validation splits of the dataset in `dir`.
pub fn load_train_data(dir: &Path) -> Result<TrainData> {
    let m = read_manifest(dir)?;
    Ok(TrainData {
        train: load_split(dir, &m, Split::Train)?,
        val: load_split(dir, &m, Split::Val)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fdfd::generate_dataset;

    fn tiny() -> GenerationConfig {
        GenerationConfig {
            rows: 16,
            cols: 32,
            mixup_checks: 1,
            ..GenerationConfig::desk_mmi()
        }
    }

    #[test]
    fn write_read_round_trip() {
        let ds = generate_dataset(&tiny(), 3, 7).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let m = write_dataset(dir.path(), &ds, Dtype::F64).unwrap();
        assert_eq!(read_manifest(dir.path()).unwrap(), m);
        let recs: Vec<&ManifestRecord> = m.records.iter().collect();
        let insts = read_records(dir.path(), &recs).unwrap();
        for (inst, r) in insts.iter().zip(&ds.records) {
            assert_eq!(Some(inst), r.instance.as_ref());
        }
        let blob = read_blob_of(dir.path(), recs[1]).unwrap();
        assert_eq!(RecordBlob::decode(&blob.encode()).unwrap(), blob);
        assert_eq!(m.mixup.probability, 0.5);
    }

    #[test]
    fn split_hygiene() {
        let ds = generate_dataset(&tiny(), 4, 2).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let m = write_dataset(dir.path(), &ds, Dtype::F64).unwrap();
        let mut seen = HashSet::new();
        for s in [Split::Train, Split::Val, Split::Test] {
            for r in m.records_in(s) {
                assert!(seen.insert(r.id));
            }
        }
        assert_eq!(seen.len(), m.records.len());
        let mut dup = m.clone();
        dup.records[1].id = dup.records[0].id;
        assert!(dup.validate().is_err());
    }

    #[test]
    fn truncated_records_file_is_detected() {
        let ds = generate_dataset(&tiny(), 1, 3).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let m = write_dataset(dir.path(), &ds, Dtype::F64).unwrap();
        let path = dir.path().join(RECORDS_FILE);
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
        let last = m.records.last().unwrap();
        assert!(matches!(read_records(dir.path(), &[last]), Err(Error::Format(_))));
    }
}
