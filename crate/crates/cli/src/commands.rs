use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use pace_core::data::{load_split, load_train_data, read_blob_of, read_manifest, write_dataset, Dtype, RecordBlob};
use pace_core::fdfd::{generate_dataset, GenerationConfig, RecordStatus, Split};
use pace_core::model::{load_checkpoint, predict, Architecture};
use pace_core::spectrum::{parseval_error, radial_spectrum};
use pace_core::train::{evaluate, train_sequential, ModelPredictor, SessionOptions, TrainConfig};
use pace_core::{ComplexGrid2D, Error};

use crate::{EvalArgs, GenerateArgs, SpectrumArgs, TrainArgs};

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

pub fn generate(a: GenerateArgs) -> Result<()> {
    let cfg = match GenerationConfig::preset(&a.config) {
        Some(c) => c,
        None => read_json(Path::new(&a.config))?,
    };
    let t = Instant::now();
    let ds = generate_dataset(&cfg, a.n, a.seed)?;
    let dtype = if a.f32 { Dtype::F32 } else { Dtype::F64 };
    let m = write_dataset(&a.out, &ds, dtype)?;
    let ok: Vec<f64> = m.records.iter().filter_map(|r| r.residual).collect();
    let failed = m.records.iter().filter(|r| r.status != RecordStatus::Ok).count();
    let mean = ok.iter().sum::<f64>() / ok.len().max(1) as f64;
    println!(
        "records: {} ({} failed)\nmean residual: {mean:.3e}\nsuperposition check: {}\nwall time: {:.2}s",
        m.records.len(),
        failed,
        m.mixup_check_error.map_or("skipped".to_string(), |e| format!("{e:.3e}")),
        t.elapsed().as_secs_f64()
    );
    Ok(())
}

pub fn train(a: TrainArgs) -> Result<()> {
    let arch: Architecture = read_json(&a.model_config)?;
    let cfg: TrainConfig = match &a.train_config {
        Some(p) => read_json(p)?,
        None => TrainConfig::default(),
    };
    let data = load_train_data(&a.data)?;
    let opts = SessionOptions {
        out_dir: Some(a.out.clone()),
        resume: a.resume,
        halt_after: a.halt_after,
        verbose: !a.quiet,
    };
    let out = match &a.stage1 {
        Some(p) => {
            let Architecture::Cascade(c) = &arch else {
                bail!("--stage1 needs a cascade model config");
            };
            let ckpt = load_checkpoint(p)?;
            train_sequential(&data, &ckpt, &c.stage2, c.distillation, &cfg, &opts)?
        }
        None => pace_core::train::train(&data, &arch, None, &cfg, &opts)?,
    };
    let last = out.report.last().context("no epoch finished")?;
    println!(
        "epochs: {}{}\ntrain nmse: {}\nval nmse: {}\ncheckpoints: {}",
        out.report.rows.len(),
        if out.completed { "" } else { " (halted)" },
        last.train_nmse,
        last.val_nmse.map_or("-".into(), |v| v.to_string()),
        a.out.display()
    );
    Ok(())
}

pub fn eval(a: EvalArgs) -> Result<()> {
    let split: Split = a.split.parse()?;
    let manifest = read_manifest(&a.data)?;
    let ckpt = load_checkpoint(&a.checkpoint)?;
    let samples = load_split(&a.data, &manifest, split)?;
    let first = samples.first().ok_or(Error::EmptyDataset)?;
    let (m, n) = first.instance.shape();
    let modes = ckpt.architecture.max_modes();
    if modes.validate(m, n).is_err() {
        return Err(Error::IncompatibleCheckpoint(format!(
            "modes ({}, {}) do not fit the {m}x{n} grid of the data",
            modes.modes_x, modes.modes_z
        ))
        .into());
    }
    let p = ModelPredictor {
        architecture: &ckpt.architecture,
        params: &ckpt.params,
    };
    let ev = evaluate(&samples, &p)?;
    println!("{} nmse: {} ({} samples)", split.as_str(), ev.mean, samples.len());
    if let Some(path) = &a.per_sample {
        let mut s = String::from("id,nmse\n");
        for (sample, v) in samples.iter().zip(&ev.per_sample) {
            let _ = writeln!(s, "{},{v}", sample.id);
        }
        std::fs::write(path, s)?;
    }
    if let Some(path) = &a.json {
        let j = serde_json::json!({
            "split": split.as_str(),
            "count": samples.len(),
            "nmse": ev.mean,
        });
        std::fs::write(path, serde_json::to_string_pretty(&j)?)?;
    }
    Ok(())
}

fn blob_field(blob: &RecordBlob) -> Result<ComplexGrid2D> {
    let (re, im) = (&blob.channels[3], &blob.channels[4]);
    Ok(ComplexGrid2D::from_vec(
        blob.rows,
        blob.cols,
        re.iter().zip(im).map(|(&a, &b)| num_complex::Complex64::new(a, b)).collect(),
    )?)
}

pub fn spectrum(a: SpectrumArgs) -> Result<()> {
    let field = match (&a.field, &a.checkpoint, &a.data, a.sample) {
        (Some(f), _, _, _) => blob_field(&RecordBlob::decode(&std::fs::read(f)?)?)?,
        (None, Some(ck), Some(dir), Some(id)) => {
            let m = read_manifest(dir)?;
            let rec = m
                .records
                .iter()
                .find(|r| r.id == id)
                .with_context(|| format!("no record {id}"))?;
            let inst = read_blob_of(dir, rec)?.to_instance(rec.domain, rec.wavelength)?;
            let ckpt = load_checkpoint(ck)?;
            predict(&ckpt.architecture, &inst, &ckpt.params)?
        }
        (None, None, Some(dir), Some(id)) => {
            let m = read_manifest(dir)?;
            let rec = m
                .records
                .iter()
                .find(|r| r.id == id)
                .with_context(|| format!("no record {id}"))?;
            blob_field(&read_blob_of(dir, rec)?)?
        }
        _ => bail!("give --field FILE, or --data DIR --sample ID [--checkpoint CKPT]"),
    };
    let report = radial_spectrum(&field)?;
    let csv = report.to_csv();
    match &a.out {
        Some(p) => std::fs::write(p, &csv)?,
        None => print!("{csv}"),
    }
    if let Some(p) = &a.png {
        crate::plot::spectrum_png(&report.energies, p)?;
    }
    eprintln!(
        "bins: {}  total energy: {:.6e}  parseval rel. error: {:.3e}",
        report.bins(),
        report.total_energy,
        parseval_error(&field, &report)
    );
    Ok(())
}
