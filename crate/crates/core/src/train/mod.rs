//! Loss, AdamW, mix-up and the (joint or sequential) training loop.
//!
//! Per-sample gradients may be computed concurrently; they are summed in
//! batch order on one thread, so a run is bit-reproducible for a fixed seed
//! regardless of the worker count.

mod gradcheck;
mod loss;
mod mixup;
mod optim;
mod report;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::SimulationInstance;
use crate::grid::ComplexGrid2D;
use crate::model::{
    forward, init_params, load_checkpoint, predict, save_checkpoint, Architecture, Checkpoint,
    ForwardOptions, Gradients, ParameterStore,
};

pub use gradcheck::{gradient_check, GradCheckConfig, GradCheckEntry, GradCheckReport};
pub use loss::{l1_complex_distance, l2_complex_distance, nmse_loss, nmse_sample, rotate};
pub use mixup::mixup_superpose;
pub use optim::{
    adamw_step, adamw_step_masked, cosine_lr, OptimizerState, ADAM_BETA1, ADAM_BETA2, ADAM_EPS,
};
pub use report::{
    steps_from_csv, steps_to_csv, EpochRecord, LossReport, StepLog, REPORT_HEADER, STEPS_HEADER,
};

pub const LAST_CHECKPOINT: &str = "last.ckpt";
pub const BEST_CHECKPOINT: &str = "best.ckpt";
pub const REPORT_FILE: &str = "report.csv";
pub const STEPS_FILE: &str = "steps.csv";

/// Probability that a training element is replaced by a superposition.
pub const MIXUP_PROBABILITY: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LrSchedule {
    #[default]
    Cosine,
}

/// Joint optimizes `L_I + L_II`; sequential trains stage II only.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    #[default]
    Joint,
    Sequential,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub base_lr: f64,
    pub lr_floor: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub lr_schedule: LrSchedule,
    pub seed: u64,
    pub mixup_enabled: bool,
    pub grad_check_mode: bool,
    pub mode: TrainMode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            base_lr: 2e-3,
            lr_floor: 0.0,
            weight_decay: 1e-5,
            batch_size: 4,
            lr_schedule: LrSchedule::Cosine,
            seed: 0,
            mixup_enabled: false,
            grad_check_mode: false,
            mode: TrainMode::Joint,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::InvalidConfig("epochs must be at least 1".into()));
        }
        if !(self.base_lr > 0.0 && self.base_lr.is_finite()) {
            return Err(Error::InvalidConfig(format!("learning rate {} must be positive", self.base_lr)));
        }
        if !(0.0..=self.base_lr).contains(&self.lr_floor) {
            return Err(Error::InvalidConfig("lr floor must lie in [0, base_lr]".into()));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::InvalidConfig("weight decay must be non-negative".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch size must be positive".into()));
        }
        Ok(())
    }

    fn fingerprint(&self) -> String {
        serde_json::to_string(self).unwrap_or_default()
    }
}

/// A labelled instance. `device` groups records for mix-up.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: String,
    pub device: usize,
    pub instance: SimulationInstance,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainData {
    pub train: Vec<Sample>,
    pub val: Vec<Sample>,
}

/// Per-stage N-MSE of one sample. A stage is `None` when it is not part of
/// the objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossTerms {
    pub stage1: Option<f64>,
    pub stage2: Option<f64>,
}

impl LossTerms {
    pub fn total(&self) -> f64 {
        self.stage1.unwrap_or(0.0) + self.stage2.unwrap_or(0.0)
    }

    /// N-MSE of the last stage in the objective.
    pub fn output(&self) -> f64 {
        self.stage2.or(self.stage1).unwrap_or(0.0)
    }
}

/// Objective and its gradient for one instance.
pub fn loss_and_gradients(
    arch: &Architecture,
    params: &ParameterStore,
    inst: &SimulationInstance,
    mode: TrainMode,
    depth_rng: Option<&mut ChaCha8Rng>,
) -> Result<(LossTerms, Gradients)> {
    let detach = mode == TrainMode::Sequential;
    if detach && !matches!(arch, Architecture::Cascade(_)) {
        return Err(Error::InvalidConfig("sequential training needs a cascade".into()));
    }
    let target = inst.target()?;
    let trace = forward(
        arch,
        inst,
        params,
        ForwardOptions {
            depth_rng,
            detach_stage1: detach,
        },
    )?;
    let mut seeds = Vec::new();
    let mut terms = [None, None];
    for (s, &v) in trace.predictions.iter().enumerate() {
        if detach && s == 0 {
            continue;
        }
        let (l, g) = loss::nmse_with_grad(trace.tape.value(v), target, 1.0, 0)?;
        terms[s] = Some(l);
        seeds.push((v, g));
    }
    let mut grads = params.zeros_like();
    trace.tape.backward(&seeds, &mut grads)?;
    Ok((
        LossTerms {
            stage1: terms[0],
            stage2: terms[1],
        },
        grads,
    ))
}

/// Anything that maps an instance to a field.
pub trait Predictor: Sync {
    fn predict(&self, inst: &SimulationInstance) -> Result<ComplexGrid2D>;
}

pub struct ModelPredictor<'a> {
    pub architecture: &'a Architecture,
    pub params: &'a ParameterStore,
}

impl Predictor for ModelPredictor<'_> {
    fn predict(&self, inst: &SimulationInstance) -> Result<ComplexGrid2D> {
        predict(self.architecture, inst, self.params)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub mean: f64,
    /// Aligned with the evaluated samples.
    pub per_sample: Vec<f64>,
}

/// Mean per-sample N-MSE, without augmentation or dropping.
pub fn evaluate(samples: &[Sample], predictor: &dyn Predictor) -> Result<Evaluation> {
    if samples.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let per_sample = samples
        .par_iter()
        .enumerate()
        .map(|(k, s)| {
            let pred = predictor.predict(&s.instance)?;
            loss::nmse_sample(&pred, s.instance.target()?, k)
        })
        .collect::<Result<Vec<f64>>>()?;
    let mean = per_sample.iter().sum::<f64>() / per_sample.len() as f64;
    Ok(Evaluation { mean, per_sample })
}

/// RMS of all training targets, used as the output scale.
pub fn target_rms(samples: &[Sample]) -> Result<f64> {
    let mut sum = 0.0;
    let mut count = 0usize;
    for s in samples {
        let t = s.instance.target()?;
        sum += t.norm_sqr();
        count += t.len();
    }
    if count == 0 || !(sum > 0.0) {
        return Err(Error::EmptyDataset);
    }
    Ok((sum / count as f64).sqrt())
}

const PURPOSE_SHUFFLE: u64 = 1;
const PURPOSE_MIXUP: u64 = 2;
const PURPOSE_DEPTH: u64 = 3;

/// Independent stream per (purpose, epoch, position).
fn derived_rng(seed: u64, purpose: u64, epoch: u64, position: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    for (k, w) in [seed, purpose, epoch, position].iter().enumerate() {
        key[8 * k..8 * k + 8].copy_from_slice(&w.to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}

/// Options that do not affect the training trajectory.
#[derive(Debug, Clone, Default)]
pub struct SessionOptions {
    /// Where checkpoints and CSV logs go; nothing is written when `None`.
    pub out_dir: Option<PathBuf>,
    /// Continue from `out_dir/last.ckpt` when it exists.
    pub resume: bool,
    /// Stop after this many epochs have completed in total.
    pub halt_after: Option<usize>,
    /// Report each finished epoch to stderr.
    pub verbose: bool,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub architecture: Architecture,
    pub params: ParameterStore,
    /// Parameters of the epoch with the lowest validation N-MSE (train
    /// N-MSE when there is no validation split).
    pub best_params: ParameterStore,
    pub report: LossReport,
    pub steps: Vec<StepLog>,
    pub grad_check: Option<GradCheckReport>,
    /// False when stopped early by `halt_after`.
    pub completed: bool,
}

/// Trains from `init` (or a fresh initialization under `cfg.seed`). Unset
/// output scales are resolved to the RMS of the training targets.
pub fn train(
    data: &TrainData,
    arch: &Architecture,
    init: Option<ParameterStore>,
    cfg: &TrainConfig,
    opts: &SessionOptions,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if data.train.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut arch = arch.clone();
    if arch.stages().iter().any(|c| c.output_scale.is_none()) {
        arch.resolve_output_scale(target_rms(&data.train)?);
    }
    arch.validate()?;
    let mut params = match init {
        Some(p) => p,
        None => init_params(&arch, cfg.seed)?,
    };
    let reference = init_params(&arch, cfg.seed)?;
    if !params.same_layout(&reference) {
        return Err(Error::IncompatibleCheckpoint(
            "initial parameters do not match the architecture".into(),
        ));
    }
    drop(reference);

    let grad_check = if cfg.grad_check_mode {
        let report = gradient_check(
            &arch,
            &params,
            &data.train[0].instance,
            cfg.mode,
            &GradCheckConfig::default(),
        )?;
        if !report.passes(1e-4, 0.99, 1e-3) {
            return Err(Error::InvalidConfig(format!(
                "gradient check failed: max relative error {:.3e}",
                report.max_rel_error()
            )));
        }
        Some(report)
    } else {
        None
    };

    let b = cfg.batch_size;
    let steps_per_epoch = data.train.len().div_ceil(b);
    let total_steps = cfg.epochs * steps_per_epoch;
    let frozen = |name: &str| cfg.mode == TrainMode::Sequential && name.starts_with("stage1.");

    let mut state = OptimizerState::new(&params);
    let mut report = LossReport::default();
    let mut steps: Vec<StepLog> = Vec::new();
    let mut best_val = f64::INFINITY;
    let mut best_params = params.clone();
    let mut start_epoch = 1;

    let out = opts.out_dir.as_deref();
    if let Some(dir) = out {
        std::fs::create_dir_all(dir)?;
    }
    let last_path = out.map(|d| d.join(LAST_CHECKPOINT));
    if let (true, Some(path)) = (opts.resume, &last_path) {
        if path.exists() {
            let r = restore(path, &arch, cfg)?;
            params = r.params;
            state = r.state;
            report = r.report;
            best_val = r.best_val;
            start_epoch = r.epoch + 1;
            best_params = match out.map(|d| d.join(BEST_CHECKPOINT)) {
                Some(p) if p.exists() => load_checkpoint(&p)?.params,
                _ => params.clone(),
            };
            let steps_path = out.expect("resume needs a directory").join(STEPS_FILE);
            if steps_path.exists() {
                steps = steps_from_csv(&std::fs::read_to_string(&steps_path)?)?;
                steps.retain(|s| s.epoch <= r.epoch);
            }
        }
    }

    // Same-device partners for mix-up.
    let mut by_device: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (k, s) in data.train.iter().enumerate() {
        by_device.entry(s.device).or_default().push(k);
    }

    let mut completed = true;
    for epoch in start_epoch..=cfg.epochs {
        if opts.halt_after.is_some_and(|h| epoch > h) {
            completed = false;
            break;
        }
        let mut order: Vec<usize> = (0..data.train.len()).collect();
        order.shuffle(&mut derived_rng(cfg.seed, PURPOSE_SHUFFLE, epoch as u64, 0));

        let mut epoch_lr = None;
        let (mut sum_total, mut sum_out, mut sum1, mut sum2) = (0.0, 0.0, 0.0, 0.0);
        for (bi, chunk) in order.chunks(b).enumerate() {
            let step = (epoch - 1) * steps_per_epoch + bi;
            let lr = cosine_lr(step, total_steps, cfg.base_lr, cfg.lr_floor);
            epoch_lr.get_or_insert(lr);
            let base_pos = bi * b;

            let results = chunk
                .par_iter()
                .enumerate()
                .map(|(j, &idx)| {
                    let pos = (base_pos + j) as u64;
                    let inst = if cfg.mixup_enabled {
                        mixed_instance(data, &by_device, idx, cfg.seed, epoch as u64, pos)?
                    } else {
                        data.train[idx].instance.clone()
                    };
                    let mut depth = derived_rng(cfg.seed, PURPOSE_DEPTH, epoch as u64, pos);
                    loss_and_gradients(&arch, &params, &inst, cfg.mode, Some(&mut depth))
                })
                .collect::<Result<Vec<_>>>()?;

            let mut grads = params.zeros_like();
            let n = results.len() as f64;
            let (mut t, mut l1, mut l2) = (0.0, 0.0, 0.0);
            for (terms, g) in &results {
                grads.accumulate(g)?;
                t += terms.total();
                l1 += terms.stage1.unwrap_or(0.0);
                l2 += terms.stage2.unwrap_or(0.0);
                sum_out += terms.output();
            }
            grads.scale(1.0 / n);
            let first = results[0].0;
            let log = StepLog {
                step: step + 1,
                epoch,
                lr,
                loss_total: t / n,
                stage1: first.stage1.map(|_| l1 / n),
                stage2: first.stage2.map(|_| l2 / n),
            };
            if !log.loss_total.is_finite() || !grads.is_finite() {
                return Err(Error::InvalidConfig(format!(
                    "training diverged at step {} (loss {})",
                    log.step, log.loss_total
                )));
            }
            sum_total += t;
            sum1 += l1;
            sum2 += l2;
            adamw_step_masked(&mut params, &grads, &mut state, lr, cfg.weight_decay, frozen)?;
            steps.push(log);
        }

        let count = data.train.len() as f64;
        let stages_active = objective_stages(&arch, cfg.mode);
        let val = if data.val.is_empty() {
            None
        } else {
            let p = ModelPredictor {
                architecture: &arch,
                params: &params,
            };
            Some(evaluate(&data.val, &p)?.mean)
        };
        let record = EpochRecord {
            epoch,
            lr: epoch_lr.unwrap_or(0.0),
            train_nmse: sum_out / count,
            val_nmse: val,
            loss_total: sum_total / count,
            stage1: stages_active[0].then_some(sum1 / count),
            stage2: stages_active[1].then_some(sum2 / count),
        };
        if opts.verbose {
            eprintln!(
                "epoch {epoch:>4}  lr {:.3e}  train {:.5}  val {}",
                record.lr,
                record.train_nmse,
                val.map_or("-".to_string(), |v| format!("{v:.5}"))
            );
        }
        let score = val.unwrap_or(record.train_nmse);
        let improved = score < best_val;
        if improved {
            best_val = score;
            best_params = params.clone();
        }
        report.rows.push(record);

        if let Some(dir) = out {
            if improved {
                save_checkpoint(&dir.join(BEST_CHECKPOINT), &Checkpoint::new(arch.clone(), params.clone()))?;
            }
            let mut ckpt = Checkpoint::new(arch.clone(), params.clone());
            ckpt.sections.insert("adam_m".into(), state.m.clone());
            ckpt.sections.insert("adam_v".into(), state.v.clone());
            ckpt.meta = serde_json::json!({
                "epoch": epoch,
                "step": state.step,
                "best_val_bits": best_val.to_bits(),
                "train_config": cfg.fingerprint(),
                "report_csv": report.to_csv(),
            });
            save_checkpoint(&dir.join(LAST_CHECKPOINT), &ckpt)?;
            write_atomic(&dir.join(REPORT_FILE), report.to_csv().as_bytes())?;
            write_atomic(&dir.join(STEPS_FILE), steps_to_csv(&steps).as_bytes())?;
        }
    }

    Ok(TrainOutcome {
        architecture: arch,
        params,
        best_params,
        report,
        steps,
        grad_check,
        completed,
    })
}

/// Trains stage II of `stage2` on top of a frozen stage-I checkpoint. The
/// checkpoint may hold a single model or a cascade (its stage I is used).
pub fn train_sequential(
    data: &TrainData,
    stage1: &Checkpoint,
    stage2: &crate::model::ModelConfig,
    distillation: bool,
    cfg: &TrainConfig,
    opts: &SessionOptions,
) -> Result<TrainOutcome> {
    let s1 = match &stage1.architecture {
        Architecture::Single(c) => c.clone(),
        Architecture::Cascade(c) => c.stage1.clone(),
    };
    let mut s2 = stage2.clone();
    if s2.output_scale.is_none() {
        s2.output_scale = s1.output_scale;
    }
    let arch = Architecture::Cascade(crate::model::CascadeConfig {
        stage1: s1,
        stage2: s2,
        distillation,
    });
    arch.validate()?;
    let mut arch_resolved = arch.clone();
    if arch_resolved.stages().iter().any(|c| c.output_scale.is_none()) {
        arch_resolved.resolve_output_scale(target_rms(&data.train)?);
    }
    let mut params = init_params(&arch_resolved, cfg.seed)?;
    for (name, p) in stage1.params.iter() {
        if !name.starts_with("stage1.") {
            continue;
        }
        let dst = params.by_name_mut(name).ok_or_else(|| {
            Error::IncompatibleCheckpoint(format!("stage-I parameter {name} has no slot"))
        })?;
        if dst.shape() != p.shape() {
            return Err(Error::IncompatibleCheckpoint(format!("shape of {name} differs")));
        }
        *dst = p.clone();
    }
    let cfg = TrainConfig {
        mode: TrainMode::Sequential,
        ..cfg.clone()
    };
    train(data, &arch_resolved, Some(params), &cfg, opts)
}

fn objective_stages(arch: &Architecture, mode: TrainMode) -> [bool; 2] {
    match (arch, mode) {
        (Architecture::Single(_), _) => [true, false],
        (Architecture::Cascade(_), TrainMode::Joint) => [true, true],
        (Architecture::Cascade(_), TrainMode::Sequential) => [false, true],
    }
}

/// With probability [`MIXUP_PROBABILITY`], superposes the sample with a
/// random same-device partner using unit-magnitude random phases.
fn mixed_instance(
    data: &TrainData,
    by_device: &BTreeMap<usize, Vec<usize>>,
    idx: usize,
    seed: u64,
    epoch: u64,
    pos: u64,
) -> Result<SimulationInstance> {
    let s = &data.train[idx];
    let mut rng = derived_rng(seed, PURPOSE_MIXUP, epoch, pos);
    let partners: Vec<usize> = by_device[&s.device].iter().copied().filter(|&k| k != idx).collect();
    if partners.is_empty() || rng.gen::<f64>() >= MIXUP_PROBABILITY {
        return Ok(s.instance.clone());
    }
    let other = &data.train[*partners.choose(&mut rng).expect("nonempty")];
    let tau = std::f64::consts::TAU;
    let w = [
        Complex64::from_polar(1.0, rng.gen::<f64>() * tau),
        Complex64::from_polar(1.0, rng.gen::<f64>() * tau),
    ];
    mixup_superpose(&[&s.instance, &other.instance], &w)
}

struct Restored {
    params: ParameterStore,
    state: OptimizerState,
    report: LossReport,
    best_val: f64,
    epoch: usize,
}

fn restore(path: &Path, arch: &Architecture, cfg: &TrainConfig) -> Result<Restored> {
    let ckpt = load_checkpoint(path)?;
    if &ckpt.architecture != arch {
        return Err(Error::IncompatibleCheckpoint(
            "resume checkpoint has a different architecture".into(),
        ));
    }
    let bad = |what: &str| Error::IncompatibleCheckpoint(format!("resume checkpoint lacks {what}"));
    let meta = &ckpt.meta;
    if meta["train_config"].as_str() != Some(cfg.fingerprint().as_str()) {
        return Err(Error::IncompatibleCheckpoint(
            "resume checkpoint was written under a different training config".into(),
        ));
    }
    let epoch = meta["epoch"].as_u64().ok_or_else(|| bad("epoch"))? as usize;
    let step = meta["step"].as_u64().ok_or_else(|| bad("step"))?;
    let best_val = f64::from_bits(meta["best_val_bits"].as_u64().ok_or_else(|| bad("best_val_bits"))?);
    let report = LossReport::from_csv(meta["report_csv"].as_str().ok_or_else(|| bad("report"))?)?;
    let mut sections = ckpt.sections;
    let m = sections.shift_remove("adam_m").ok_or_else(|| bad("adam_m"))?;
    let v = sections.shift_remove("adam_v").ok_or_else(|| bad("adam_v"))?;
    Ok(Restored {
        params: ckpt.params,
        state: OptimizerState { step, m, v },
        report,
        best_val,
        epoch,
    })
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

#[cfg(test)]
mod tests;
