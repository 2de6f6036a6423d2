use super::*;
use crate::field::{assemble_instance, build_domain};
use crate::model::{CascadeConfig, ModelConfig, Stage, STAGE2_INPUTS};
use crate::spectral::ModeSpec;

/// Instance on device `dev` (fixed permittivity per device) with a smooth
/// synthetic target that depends on the source column.
fn instance(m: usize, n: usize, dev: u64, port: usize) -> SimulationInstance {
    let mut rng = ChaCha8Rng::seed_from_u64(dev);
    let d = build_domain(0.05 * m as f64, 0.05 * n as f64, m, n).unwrap();
    let eps = ComplexGrid2D::from_fn(m, n, |_, _| {
        Complex64::new(if rng.gen::<bool>() { 12.11 } else { 2.07 }, 0.0)
    });
    let col = 1 + port;
    let src = ComplexGrid2D::from_fn(m, n, |_, j| Complex64::new((j == col) as u8 as f64, 0.0));
    let target = ComplexGrid2D::from_fn(m, n, |i, j| {
        let ph = 0.7 * (j as f64 - col as f64) + 0.2 * i as f64 + dev as f64;
        Complex64::from_polar(1.0 + 0.1 * (i as f64).sin(), ph)
    });
    assemble_instance(eps, src, 1.55, d, Some(target)).unwrap()
}

fn dataset(m: usize, n: usize, devices: u64, ports: usize) -> TrainData {
    let mut data = TrainData::default();
    for dev in 0..devices {
        for p in 0..ports {
            let s = Sample {
                id: format!("d{dev}p{p}"),
                device: dev as usize,
                instance: instance(m, n, dev, p),
            };
            if dev + 1 == devices {
                data.val.push(s);
            } else {
                data.train.push(s);
            }
        }
    }
    data
}

fn micro(num_blocks: usize, leading: usize) -> ModelConfig {
    ModelConfig {
        leading_single_axis_blocks: leading,
        drop_rate: 0.0,
        ..ModelConfig::pace(4, num_blocks, ModeSpec::new(3, 3), 2)
    }
}

fn micro_cascade() -> CascadeConfig {
    CascadeConfig {
        stage1: micro(3, 2),
        stage2: ModelConfig {
            in_channels: STAGE2_INPUTS,
            stage: Stage::StageII,
            ..micro(2, 0)
        },
        distillation: true,
    }
}

fn quick(epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        seed: 5,
        ..TrainConfig::default()
    }
}

#[test]
fn defaults_follow_reference_hyperparameters() {
    let c = TrainConfig::default();
    assert_eq!((c.epochs, c.base_lr, c.weight_decay, c.batch_size), (100, 2e-3, 1e-5, 4));
    assert_eq!(c.lr_schedule, LrSchedule::Cosine);
    let parsed: TrainConfig = serde_json::from_str("{}").unwrap();
    assert_eq!(parsed, c);
    assert!(TrainConfig { epochs: 0, ..c.clone() }.validate().is_err());
    assert!(TrainConfig { base_lr: 0.0, ..c }.validate().is_err());
}

#[test]
fn cascade_gradients_match_finite_differences() {
    let arch = Architecture::Cascade(micro_cascade());
    let mut arch = arch;
    arch.resolve_output_scale(1.0);
    let params = init_params(&arch, 3).unwrap();
    let inst = instance(6, 8, 1, 0);
    let cfg = GradCheckConfig {
        max_coordinates: Some(300),
        ..GradCheckConfig::default()
    };
    let r = gradient_check(&arch, &params, &inst, TrainMode::Joint, &cfg).unwrap();
    assert_eq!(r.entries.len(), 300);
    assert!(r.passes(1e-4, 0.99, 1e-3), "max rel error {:.3e}", r.max_rel_error());
}

#[test]
fn small_gradient_step_decreases_loss() {
    let mut arch = Architecture::Cascade(micro_cascade());
    arch.resolve_output_scale(1.0);
    let mut params = init_params(&arch, 4).unwrap();
    let inst = instance(6, 8, 2, 1);
    let (l0, g) = loss_and_gradients(&arch, &params, &inst, TrainMode::Joint, None).unwrap();
    for ((_, p), (_, gp)) in params.iter_mut().zip(g.iter()) {
        for k in 0..p.real_count() {
            p.set_real_at(k, p.real_at(k) - 1e-6 * gp.real_at(k));
        }
    }
    let (l1, _) = loss_and_gradients(&arch, &params, &inst, TrainMode::Joint, None).unwrap();
    assert!(l1.total() < l0.total());
}

#[test]
fn sequential_gradients_skip_stage_one() {
    let mut arch = Architecture::Cascade(micro_cascade());
    arch.resolve_output_scale(1.0);
    let params = init_params(&arch, 4).unwrap();
    let inst = instance(6, 8, 2, 1);
    let (terms, g) = loss_and_gradients(&arch, &params, &inst, TrainMode::Sequential, None).unwrap();
    assert!(terms.stage1.is_none() && terms.stage2.is_some());
    for (name, p) in g.iter() {
        if name.starts_with("stage1.") {
            assert!(p.to_reals().iter().all(|&v| v == 0.0), "{name}");
        }
    }
    assert!(g.by_name("distill.w").unwrap().to_reals().iter().any(|&v| v != 0.0));
}

#[test]
fn zero_target_is_rejected() {
    let arch = Architecture::Single(micro(1, 1));
    let params = init_params(&arch, 0).unwrap();
    let mut inst = instance(6, 8, 0, 0);
    inst.target = Some(ComplexGrid2D::zeros(6, 8));
    assert_eq!(
        loss_and_gradients(&arch, &params, &inst, TrainMode::Joint, None).unwrap_err(),
        Error::ZeroTargetNorm { sample: 0 }
    );
}

struct Identity;
impl Predictor for Identity {
    fn predict(&self, inst: &SimulationInstance) -> Result<ComplexGrid2D> {
        Ok(inst.target()?.clone())
    }
}

struct Zero;
impl Predictor for Zero {
    fn predict(&self, inst: &SimulationInstance) -> Result<ComplexGrid2D> {
        let (m, n) = inst.shape();
        Ok(ComplexGrid2D::zeros(m, n))
    }
}

#[test]
fn evaluate_identity_zero_and_repeat() {
    let data = dataset(6, 8, 2, 2);
    assert_eq!(evaluate(&data.train, &Identity).unwrap().mean, 0.0);
    assert_eq!(evaluate(&data.train, &Zero).unwrap().mean, 1.0);
    let arch = Architecture::Single(micro(2, 1));
    let params = init_params(&arch, 1).unwrap();
    let p = ModelPredictor {
        architecture: &arch,
        params: &params,
    };
    let a = evaluate(&data.train, &p).unwrap();
    let b = evaluate(&data.train, &p).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.per_sample.len(), data.train.len());
    assert_eq!(evaluate(&[], &Zero), Err(Error::EmptyDataset));
}

#[test]
fn one_epoch_writes_checkpoint_and_one_row() {
    let dir = tempfile::tempdir().unwrap();
    let mut data = dataset(6, 8, 3, 2);
    data.train.truncate(4);
    let opts = SessionOptions {
        out_dir: Some(dir.path().to_path_buf()),
        ..SessionOptions::default()
    };
    let out = train(&data, &Architecture::Single(micro(2, 1)), None, &quick(1), &opts).unwrap();
    assert_eq!(out.report.rows.len(), 1);
    assert_eq!(out.steps.len(), 1);
    assert!(dir.path().join(LAST_CHECKPOINT).exists());
    assert!(dir.path().join(BEST_CHECKPOINT).exists());
    let csv = std::fs::read_to_string(dir.path().join(REPORT_FILE)).unwrap();
    assert_eq!(LossReport::from_csv(&csv).unwrap(), out.report);
    assert!(out.architecture.stages()[0].output_scale.is_some());
}

#[test]
fn empty_training_split_is_rejected() {
    let data = TrainData::default();
    let r = train(&data, &Architecture::Single(micro(1, 1)), None, &quick(1), &SessionOptions::default());
    assert_eq!(r.unwrap_err(), Error::EmptyDataset);
}

#[test]
fn joint_cascade_logs_sum_of_stage_losses() {
    let data = dataset(6, 8, 3, 2);
    let out = train(
        &data,
        &Architecture::Cascade(micro_cascade()),
        None,
        &quick(2),
        &SessionOptions::default(),
    )
    .unwrap();
    assert_eq!(out.steps.len(), 2 * 1);
    for s in &out.steps {
        let (a, b) = (s.stage1.unwrap(), s.stage2.unwrap());
        assert!((s.loss_total - (a + b)).abs() <= 1e-12);
    }
    for r in &out.report.rows {
        assert!((r.loss_total - (r.stage1.unwrap() + r.stage2.unwrap())).abs() <= 1e-12);
    }
}

#[test]
fn sequential_training_freezes_stage_one() {
    let data = dataset(6, 8, 3, 2);
    let s1 = train(&data, &Architecture::Single(micro(3, 2)), None, &quick(1), &SessionOptions::default())
        .unwrap();
    let ckpt = Checkpoint::new(s1.architecture.clone(), s1.params.clone());
    let stage2 = micro_cascade().stage2;
    let seq = train_sequential(&data, &ckpt, &stage2, true, &quick(3), &SessionOptions::default()).unwrap();
    for (name, p) in s1.params.iter() {
        assert_eq!(seq.params.by_name(name).unwrap(), p, "{name}");
    }
    assert!(seq.report.rows.iter().all(|r| r.stage1.is_none() && r.stage2.is_some()));

    let joint = train(&data, &seq.architecture, None, &quick(3), &SessionOptions::default()).unwrap();
    let key = "stage2.head1.w";
    assert_ne!(joint.params.by_name(key), seq.params.by_name(key));
}

#[test]
fn runs_are_deterministic_and_resume_matches() {
    let data = dataset(6, 8, 3, 2);
    let arch = Architecture::Single(ModelConfig {
        drop_rate: 0.2,
        ..micro(3, 1)
    });
    let cfg = TrainConfig {
        batch_size: 3,
        mixup_enabled: true,
        ..quick(3)
    };
    let full_dir = tempfile::tempdir().unwrap();
    let run = |dir: &Path, halt: Option<usize>, resume: bool| {
        let opts = SessionOptions {
            out_dir: Some(dir.to_path_buf()),
            resume,
            halt_after: halt,
            verbose: false,
        };
        train(&data, &arch, None, &cfg, &opts).unwrap()
    };
    let full = run(full_dir.path(), None, false);
    assert!(full.completed);
    let again = run(tempfile::tempdir().unwrap().path(), None, false);
    assert_eq!(full.report, again.report);
    assert_eq!(full.params, again.params);

    let dir = tempfile::tempdir().unwrap();
    let halted = run(dir.path(), Some(2), false);
    assert!(!halted.completed);
    assert_eq!(halted.report.rows.len(), 2);
    let resumed = run(dir.path(), None, true);
    assert_eq!(resumed.report, full.report);
    assert_eq!(resumed.params, full.params);
    assert_eq!(resumed.steps, full.steps);
    for f in [REPORT_FILE, STEPS_FILE] {
        assert_eq!(
            std::fs::read(dir.path().join(f)).unwrap(),
            std::fs::read(full_dir.path().join(f)).unwrap()
        );
    }
}

#[test]
fn resume_rejects_a_different_config() {
    let data = dataset(6, 8, 2, 2);
    let dir = tempfile::tempdir().unwrap();
    let opts = SessionOptions {
        out_dir: Some(dir.path().to_path_buf()),
        resume: true,
        ..SessionOptions::default()
    };
    let arch = Architecture::Single(micro(1, 1));
    train(&data, &arch, None, &quick(1), &opts).unwrap();
    let other = TrainConfig { base_lr: 1e-3, ..quick(2) };
    assert!(matches!(
        train(&data, &arch, None, &other, &opts),
        Err(Error::IncompatibleCheckpoint(_))
    ));
}

#[test]
fn grad_check_mode_runs_before_training() {
    let data = dataset(6, 8, 2, 2);
    let cfg = TrainConfig {
        grad_check_mode: true,
        ..quick(1)
    };
    let out = train(&data, &Architecture::Single(micro(2, 1)), None, &cfg, &SessionOptions::default())
        .unwrap();
    assert!(out.grad_check.unwrap().entries.len() > 0);
}

