//! Operator blocks, model assembly and the two-stage cascade.
//!
//! A stage is `stem -> blocks -> head`. The stem is two 3x3 convolutions
//! with GELU in between. Each block computes
//! `v + drop(FFN(K(norm(v)) + v))` where `K` is either the single-axis
//! integral or the PACE operator (projection, cross-axis integral,
//! sigmoid self-gate). The head is two pointwise convolutions producing
//! `(Re, Im)` of the field.

mod checkpoint;
pub mod params;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{SpectralOp, Tape, Var};
use crate::error::{Error, Result};
use crate::field::SimulationInstance;
use crate::grid::ComplexGrid2D;
use crate::spectral::{
    param_count, CrossAxisKernel, FactorizedKernel, KernelVariant, ModeSpec,
};
use crate::tensor::RealArray;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_MAGIC};
pub use params::{Gradients, Param, ParamId, ParameterStore};

/// Pre-norm epsilon.
pub const NORM_EPS: f64 = 1e-5;
/// Real input channels of a stage-I model.
pub const STAGE1_INPUTS: usize = 8;
/// Real input channels of a stage-II model.
pub const STAGE2_INPUTS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Stage {
    StageI,
    StageII,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Nonlinearity {
    /// Tanh-approximated GELU.
    Gelu,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockKind {
    SingleAxis,
    Pace,
}

/// Hyperparameters of one block.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PaceBlockConfig {
    pub channels: usize,
    pub modes: ModeSpec,
    pub groups: usize,
    pub ffn_expansion: usize,
    pub nonlinearity: Nonlinearity,
    /// Keep probability in `(0, 1]`.
    pub survival_prob: f64,
}

impl PaceBlockConfig {
    pub fn validate(&self) -> Result<()> {
        if self.groups == 0 || self.channels % self.groups != 0 {
            return Err(Error::IndivisibleChannels {
                channels: self.channels,
                groups: self.groups,
            });
        }
        if !(self.survival_prob > 0.0 && self.survival_prob <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "survival probability {} outside (0, 1]",
                self.survival_prob
            )));
        }
        if self.ffn_expansion == 0 || self.channels == 0 {
            return Err(Error::InvalidConfig("zero-width block".into()));
        }
        Ok(())
    }
}

fn default_leading() -> usize {
    2
}
fn default_expansion() -> usize {
    2
}
fn default_drop_rate() -> f64 {
    0.1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub in_channels: usize,
    pub channels: usize,
    pub num_blocks: usize,
    #[serde(default = "default_leading")]
    pub leading_single_axis_blocks: usize,
    pub modes: ModeSpec,
    pub groups: usize,
    #[serde(default = "default_expansion")]
    pub ffn_expansion: usize,
    pub head_channels: usize,
    pub stage: Stage,
    /// Stochastic-depth drop rate of the last block; earlier blocks scale
    /// linearly down to 0 at the first.
    #[serde(default = "default_drop_rate")]
    pub drop_rate: f64,
    /// Fixed multiplier on the head output, so the network works at unit
    /// scale. `None` is resolved from the training targets before
    /// initialization.
    #[serde(default)]
    pub output_scale: Option<f64>,
}

impl ModelConfig {
    /// Single-stage PACE model with the default two leading single-axis
    /// blocks.
    pub fn pace(channels: usize, num_blocks: usize, modes: ModeSpec, groups: usize) -> Self {
        Self {
            in_channels: STAGE1_INPUTS,
            channels,
            num_blocks,
            leading_single_axis_blocks: default_leading().min(num_blocks),
            modes,
            groups,
            ffn_expansion: default_expansion(),
            head_channels: 2 * channels,
            stage: Stage::StageI,
            drop_rate: default_drop_rate(),
            output_scale: None,
        }
    }

    /// Model whose every block is single-axis factorized.
    pub fn single_axis(channels: usize, num_blocks: usize, modes: ModeSpec) -> Self {
        Self {
            leading_single_axis_blocks: num_blocks,
            groups: 1,
            ..Self::pace(channels, num_blocks, modes, 1)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let expected = match self.stage {
            Stage::StageI => STAGE1_INPUTS,
            Stage::StageII => STAGE2_INPUTS,
        };
        if self.in_channels != expected {
            return Err(Error::InvalidConfig(format!(
                "{:?} takes {expected} input channels, config has {}",
                self.stage, self.in_channels
            )));
        }
        if self.leading_single_axis_blocks > self.num_blocks {
            return Err(Error::InvalidConfig(format!(
                "{} leading single-axis blocks exceed {} blocks",
                self.leading_single_axis_blocks, self.num_blocks
            )));
        }
        if self.head_channels == 0
            || !self.output_scale.is_none_or(|s| s > 0.0 && s.is_finite())
        {
            return Err(Error::InvalidConfig("bad head configuration".into()));
        }
        if !(0.0..1.0).contains(&self.drop_rate) {
            return Err(Error::InvalidConfig(format!("drop rate {} outside [0, 1)", self.drop_rate)));
        }
        if self.modes.modes_x == 0 || self.modes.modes_z == 0 {
            return Err(Error::InvalidConfig("modes must be positive".into()));
        }
        for k in 0..self.num_blocks {
            self.block_config(k).validate()?;
        }
        Ok(())
    }

    pub fn scale(&self) -> f64 {
        self.output_scale.unwrap_or(1.0)
    }

    pub fn block_kind(&self, k: usize) -> BlockKind {
        if k < self.leading_single_axis_blocks {
            BlockKind::SingleAxis
        } else {
            BlockKind::Pace
        }
    }

    pub fn block_config(&self, k: usize) -> PaceBlockConfig {
        let rate = if self.num_blocks > 1 {
            self.drop_rate * k as f64 / (self.num_blocks - 1) as f64
        } else {
            self.drop_rate
        };
        PaceBlockConfig {
            channels: self.channels,
            modes: self.modes,
            groups: match self.block_kind(k) {
                BlockKind::SingleAxis => 1,
                BlockKind::Pace => self.groups,
            },
            ffn_expansion: self.ffn_expansion,
            nonlinearity: Nonlinearity::Gelu,
            survival_prob: 1.0 - rate,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CascadeConfig {
    pub stage1: ModelConfig,
    pub stage2: ModelConfig,
    pub distillation: bool,
}

impl CascadeConfig {
    pub fn validate(&self) -> Result<()> {
        self.stage1.validate()?;
        self.stage2.validate()?;
        if self.stage1.stage != Stage::StageI || self.stage2.stage != Stage::StageII {
            return Err(Error::InvalidConfig("cascade needs a StageI then a StageII model".into()));
        }
        let (a, b) = (self.stage1.modes, self.stage2.modes);
        if b.modes_x < a.modes_x || b.modes_z < a.modes_z {
            return Err(Error::ModeOrderingViolation(format!(
                "stage II modes ({}, {}) below stage I modes ({}, {})",
                b.modes_x, b.modes_z, a.modes_x, a.modes_z
            )));
        }
        Ok(())
    }
}

/// A single model or a two-stage cascade.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Architecture {
    Single(ModelConfig),
    Cascade(CascadeConfig),
}

impl Architecture {
    pub fn validate(&self) -> Result<()> {
        match self {
            Architecture::Single(c) => {
                c.validate()?;
                if c.stage != Stage::StageI {
                    return Err(Error::InvalidConfig("a single model must be StageI".into()));
                }
                Ok(())
            }
            Architecture::Cascade(c) => c.validate(),
        }
    }

    pub fn stages(&self) -> Vec<&ModelConfig> {
        match self {
            Architecture::Single(c) => vec![c],
            Architecture::Cascade(c) => vec![&c.stage1, &c.stage2],
        }
    }

    pub fn stages_mut(&mut self) -> Vec<&mut ModelConfig> {
        match self {
            Architecture::Single(c) => vec![c],
            Architecture::Cascade(c) => vec![&mut c.stage1, &mut c.stage2],
        }
    }

    /// Fills every unset output scale with `scale`.
    pub fn resolve_output_scale(&mut self, scale: f64) {
        for c in self.stages_mut() {
            c.output_scale.get_or_insert(scale);
        }
    }

    /// Largest retained mode counts over all stages.
    pub fn max_modes(&self) -> ModeSpec {
        self.stages().iter().fold(ModeSpec::new(0, 0), |m, c| {
            ModeSpec::new(m.modes_x.max(c.modes.modes_x), m.modes_z.max(c.modes.modes_z))
        })
    }
}

pub(crate) const STAGE_PREFIX: [&str; 2] = ["stage1.", "stage2."];
pub(crate) const DISTILL_W: &str = "distill.w";
pub(crate) const DISTILL_B: &str = "distill.b";

fn conv_param(rng: &mut ChaCha8Rng, co: usize, ci: usize, k: usize) -> Param {
    let std = 1.0 / ((ci * k * k) as f64).sqrt();
    let normal = Normal::new(0.0, std).expect("finite std");
    Param::Real(RealArray::from_fn(&[co, ci, k, k], |_| normal.sample(rng)))
}

fn zeros(shape: &[usize]) -> Param {
    Param::Real(RealArray::zeros(shape))
}

fn conv_pair(
    store: &mut ParameterStore,
    rng: &mut ChaCha8Rng,
    name: &str,
    co: usize,
    ci: usize,
    k: usize,
) -> Result<()> {
    store.insert(format!("{name}.w"), conv_param(rng, co, ci, k))?;
    store.insert(format!("{name}.b"), zeros(&[co]))?;
    Ok(())
}

fn init_stage(
    store: &mut ParameterStore,
    cfg: &ModelConfig,
    prefix: &str,
    rng: &mut ChaCha8Rng,
) -> Result<()> {
    let c = cfg.channels;
    conv_pair(store, rng, &format!("{prefix}stem.conv0"), c, cfg.in_channels, 3)?;
    conv_pair(store, rng, &format!("{prefix}stem.conv1"), c, c, 3)?;
    for k in 0..cfg.num_blocks {
        let p = format!("{prefix}block{k}.");
        let bc = cfg.block_config(k);
        store.insert(format!("{p}norm.gamma"), Param::Real(RealArray::from_fn(&[c], |_| 1.0)))?;
        store.insert(format!("{p}norm.beta"), zeros(&[c]))?;
        let (kv, kh) = match cfg.block_kind(k) {
            BlockKind::SingleAxis => {
                let f = FactorizedKernel::random(cfg.modes, c, c, 1, rng)?;
                (f.kernel_v.weights, f.kernel_h.weights)
            }
            BlockKind::Pace => {
                conv_pair(store, rng, &format!("{p}proj"), c, c, 1)?;
                let x = CrossAxisKernel::random(cfg.modes, c, bc.groups, rng)?;
                (x.kernel_v.weights, x.kernel_h.weights)
            }
        };
        store.insert(format!("{p}kernel.v"), Param::Complex(kv))?;
        store.insert(format!("{p}kernel.h"), Param::Complex(kh))?;
        if cfg.block_kind(k) == BlockKind::Pace {
            conv_pair(store, rng, &format!("{p}gate"), c, c, 1)?;
        }
        let e = bc.ffn_expansion * c;
        conv_pair(store, rng, &format!("{p}ffn0"), e, c, 1)?;
        conv_pair(store, rng, &format!("{p}ffn1"), c, e, 1)?;
    }
    conv_pair(store, rng, &format!("{prefix}head0"), cfg.head_channels, c, 1)?;
    conv_pair(store, rng, &format!("{prefix}head1"), 2, cfg.head_channels, 1)?;
    Ok(())
}

/// Deterministic initialization of every trainable array.
pub fn init_params(arch: &Architecture, seed: u64) -> Result<ParameterStore> {
    arch.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParameterStore::new();
    match arch {
        Architecture::Single(c) => init_stage(&mut store, c, STAGE_PREFIX[0], &mut rng)?,
        Architecture::Cascade(c) => {
            init_stage(&mut store, &c.stage1, STAGE_PREFIX[0], &mut rng)?;
            init_stage(&mut store, &c.stage2, STAGE_PREFIX[1], &mut rng)?;
            if c.distillation {
                store.insert(
                    DISTILL_W,
                    conv_param(&mut rng, c.stage2.channels, c.stage1.channels, 1),
                )?;
                store.insert(DISTILL_B, zeros(&[c.stage2.channels]))?;
            }
        }
    }
    Ok(store)
}

fn stage_count(cfg: &ModelConfig) -> Result<usize> {
    let c = cfg.channels;
    let conv = |co: usize, ci: usize, k: usize| co * ci * k * k + co;
    let mut n = conv(c, cfg.in_channels, 3) + conv(c, c, 3);
    for k in 0..cfg.num_blocks {
        let bc = cfg.block_config(k);
        let e = bc.ffn_expansion * c;
        n += 2 * c + conv(e, c, 1) + conv(c, e, 1);
        let (kh, kv) = (cfg.modes.modes_z, cfg.modes.modes_x);
        n += match cfg.block_kind(k) {
            BlockKind::SingleAxis => {
                2 * param_count(KernelVariant::SingleAxisFactorized, kh, kv, c, c, 1)?
            }
            BlockKind::Pace => {
                2 * param_count(KernelVariant::GroupedCrossAxis, kh, kv, c, c, bc.groups)?
                    + 2 * conv(c, c, 1)
            }
        };
    }
    Ok(n + conv(cfg.head_channels, c, 1) + conv(2, cfg.head_channels, 1))
}

/// Real-parameter count from the layer formulas.
pub fn count_parameters(arch: &Architecture) -> Result<usize> {
    arch.validate()?;
    match arch {
        Architecture::Single(c) => stage_count(c),
        Architecture::Cascade(c) => {
            let d = if c.distillation {
                c.stage2.channels * c.stage1.channels + c.stage2.channels
            } else {
                0
            };
            Ok(stage_count(&c.stage1)? + stage_count(&c.stage2)? + d)
        }
    }
}

/// Stage-I input channels: `Re/Im` of the normalized permittivity, source,
/// and both wave priors. The permittivity is divided by its maximum.
pub fn encode_instance(inst: &SimulationInstance) -> Result<RealArray> {
    let (m, n) = inst.shape();
    let eps_max = inst.eps.data().iter().map(|z| z.re).fold(0.0, f64::max);
    if !(eps_max > 0.0) {
        return Err(Error::InvalidConfig("permittivity map has no positive entry".into()));
    }
    let mut data = Vec::with_capacity(STAGE1_INPUTS * m * n);
    let eps = inst.eps.scale((1.0 / eps_max).into());
    for g in [&eps, &inst.source_field, &inst.prior_x, &inst.prior_z] {
        g.ensure_shape(m, n, "input channel")?;
        data.extend(g.data().iter().map(|z| z.re));
        data.extend(g.data().iter().map(|z| z.im));
    }
    RealArray::from_vec(&[STAGE1_INPUTS, m, n], data)
}

fn encode_eps(inst: &SimulationInstance) -> Result<RealArray> {
    let full = encode_instance(inst)?;
    let (m, n) = inst.shape();
    RealArray::from_vec(&[2, m, n], full.data()[..2 * m * n].to_vec())
}

/// `[2, M, N]` real tensor to a complex grid.
pub fn decode_field(t: &RealArray) -> Result<ComplexGrid2D> {
    let &[2, m, n] = t.shape() else {
        return Err(Error::ShapeMismatch(format!("head output shape {:?}", t.shape())));
    };
    let (re, im) = t.data().split_at(m * n);
    ComplexGrid2D::from_vec(
        m,
        n,
        re.iter().zip(im).map(|(&a, &b)| num_complex::Complex64::new(a, b)).collect(),
    )
}

/// Stochastic depth: `None` runs every block with unit scale.
pub type DepthRng<'a> = Option<&'a mut ChaCha8Rng>;

struct Names {
    prefix: String,
}

impl Names {
    fn id(&self, store: &ParameterStore, rest: &str) -> Result<ParamId> {
        store.id(&format!("{}{rest}", self.prefix))
    }
}

fn conv(tape: &mut Tape, names: &Names, x: Var, layer: &str) -> Result<Var> {
    let s = tape.store();
    tape.conv(x, names.id(s, &format!("{layer}.w"))?, names.id(s, &format!("{layer}.b"))?)
}

/// Stem: 3x3 conv, GELU, 3x3 conv. Resolution is preserved.
pub fn stem_forward(tape: &mut Tape, cfg: &ModelConfig, prefix: &str, x: Var) -> Result<Var> {
    let names = Names {
        prefix: prefix.to_string(),
    };
    let c = tape.value(x).shape().first().copied().unwrap_or(0);
    if c != cfg.in_channels {
        return Err(Error::ShapeMismatch(format!(
            "stem expects {} channels, got {c}",
            cfg.in_channels
        )));
    }
    let h = conv(tape, &names, x, "stem.conv0")?;
    let h = tape.gelu(h);
    conv(tape, &names, h, "stem.conv1")
}

/// Head: two pointwise convs to `(Re, Im)`, times the output scale.
pub fn head_forward(tape: &mut Tape, cfg: &ModelConfig, prefix: &str, v: Var) -> Result<Var> {
    let names = Names {
        prefix: prefix.to_string(),
    };
    let h = conv(tape, &names, v, "head0")?;
    let h = tape.gelu(h);
    let out = conv(tape, &names, h, "head1")?;
    Ok(tape.scale(out, cfg.scale()))
}

/// `v -> [0, 1/p] * (FFN(K(norm v) + v)) + v`. Block kind follows `cfg`.
pub fn block_forward(
    tape: &mut Tape,
    cfg: &ModelConfig,
    prefix: &str,
    k: usize,
    v: Var,
    depth: &mut DepthRng,
) -> Result<Var> {
    let bc = cfg.block_config(k);
    let [c, _, _] = <[usize; 3]>::try_from(tape.value(v).shape())
        .map_err(|_| Error::ShapeMismatch("block input must be rank 3".into()))?;
    if c != bc.channels {
        return Err(Error::ShapeMismatch(format!(
            "block {k} expects {} channels, got {c}",
            bc.channels
        )));
    }
    let names = Names {
        prefix: format!("{prefix}block{k}."),
    };
    let keep = match depth {
        Some(rng) if bc.survival_prob < 1.0 => {
            if rng.gen::<f64>() < bc.survival_prob {
                Some(1.0 / bc.survival_prob)
            } else {
                None
            }
        }
        _ => Some(1.0),
    };
    let Some(scale) = keep else {
        return Ok(v);
    };
    let s = tape.store();
    let vn = tape.channel_norm(
        v,
        names.id(s, "norm.gamma")?,
        names.id(s, "norm.beta")?,
        NORM_EPS,
    )?;
    let (kv, kh) = (names.id(s, "kernel.v")?, names.id(s, "kernel.h")?);
    let kout = match cfg.block_kind(k) {
        BlockKind::SingleAxis => tape.spectral(vn, SpectralOp::SingleAxis, kv, kh)?,
        BlockKind::Pace => {
            let p = conv(tape, &names, vn, "proj")?;
            let u = tape.gelu(p);
            let integral = tape.spectral(u, SpectralOp::CrossAxis, kv, kh)?;
            let gpre = conv(tape, &names, u, "gate")?;
            let gate = tape.sigmoid(gpre);
            tape.mul(integral, gate)?
        }
    };
    let inner = tape.add(kout, v)?;
    let h = conv(tape, &names, inner, "ffn0")?;
    let h = tape.gelu(h);
    let mut f = conv(tape, &names, h, "ffn1")?;
    if scale != 1.0 {
        f = tape.scale(f, scale);
    }
    tape.add(f, v)
}

/// Vars produced by one stage.
struct StageOut {
    pred: Var,
    tap: Var,
    blocks: Vec<Var>,
}

fn stage_forward(
    tape: &mut Tape,
    cfg: &ModelConfig,
    prefix: &str,
    input: Var,
    depth: &mut DepthRng,
    inject: Option<(Var, usize)>,
) -> Result<StageOut> {
    let [_, m, n] = <[usize; 3]>::try_from(tape.value(input).shape())
        .map_err(|_| Error::ShapeMismatch("stage input must be rank 3".into()))?;
    cfg.modes.validate(m, n)?;
    let mut v = stem_forward(tape, cfg, prefix, input)?;
    let mut blocks = Vec::with_capacity(cfg.num_blocks);
    let mut tap = v;
    for k in 0..cfg.num_blocks {
        if let Some((gate, at)) = inject {
            if at == k {
                v = tape.mul(v, gate)?;
            }
        }
        if k + 1 == cfg.num_blocks {
            tap = v;
        }
        v = block_forward(tape, cfg, prefix, k, v, depth)?;
        blocks.push(v);
    }
    if let Some((gate, at)) = inject {
        if at >= cfg.num_blocks {
            v = tape.mul(v, gate)?;
        }
    }
    let pred = head_forward(tape, cfg, prefix, v)?;
    Ok(StageOut { pred, tap, blocks })
}

/// Recorded forward pass: the tape plus the vars needed for reverse mode.
pub struct ForwardTrace<'p> {
    pub tape: Tape<'p>,
    /// One `[2, M, N]` prediction per stage, in stage order.
    pub predictions: Vec<Var>,
    /// Stage-I distillation tap (input of its last block).
    pub tap: Var,
    /// Output of every block, stage by stage.
    pub blocks: Vec<Var>,
    /// Cross-stage distillation gate, when enabled.
    pub distill_gate: Option<Var>,
}

impl ForwardTrace<'_> {
    pub fn prediction(&self, stage: usize) -> Result<ComplexGrid2D> {
        let v = self
            .predictions
            .get(stage)
            .ok_or_else(|| Error::InvalidConfig(format!("no stage {stage} in trace")))?;
        decode_field(self.tape.value(*v))
    }

    /// Prediction of the final stage.
    pub fn output(&self) -> Result<ComplexGrid2D> {
        self.prediction(self.predictions.len() - 1)
    }
}

/// How to run a forward pass.
#[derive(Default)]
pub struct ForwardOptions<'a> {
    /// Stochastic-depth RNG; `None` disables dropping.
    pub depth_rng: DepthRng<'a>,
    /// Treat stage-I outputs as constants (sequential cascade training).
    pub detach_stage1: bool,
}

/// Forward pass of any architecture with recording.
pub fn forward<'p>(
    arch: &Architecture,
    inst: &SimulationInstance,
    store: &'p ParameterStore,
    opts: ForwardOptions,
) -> Result<ForwardTrace<'p>> {
    let ForwardOptions {
        mut depth_rng,
        detach_stage1,
    } = opts;
    let mut tape = Tape::new(store);
    let x = tape.input(encode_instance(inst)?)?;
    match arch {
        Architecture::Single(cfg) => {
            let s = stage_forward(&mut tape, cfg, STAGE_PREFIX[0], x, &mut depth_rng, None)?;
            Ok(ForwardTrace {
                tape,
                predictions: vec![s.pred],
                tap: s.tap,
                blocks: s.blocks,
                distill_gate: None,
            })
        }
        Architecture::Cascade(cc) => {
            cc.validate()?;
            let s1 = stage_forward(&mut tape, &cc.stage1, STAGE_PREFIX[0], x, &mut depth_rng, None)?;
            let (pred1, tap) = if detach_stage1 {
                let p = tape.value(s1.pred).clone();
                let t = tape.value(s1.tap).clone();
                (tape.input(p)?, tape.input(t)?)
            } else {
                (s1.pred, s1.tap)
            };
            let (pred2, gate, s2_blocks) =
                stage2_forward(&mut tape, cc, inst, pred1, Some(tap), &mut depth_rng)?;
            let mut blocks = s1.blocks;
            blocks.extend(s2_blocks);
            Ok(ForwardTrace {
                tape,
                predictions: vec![s1.pred, pred2],
                tap: s1.tap,
                blocks,
                distill_gate: gate,
            })
        }
    }
}

/// Stage II on `(pred_I, eps)`; the distillation gate is applied only when
/// enabled and a tap is given.
fn stage2_forward(
    tape: &mut Tape,
    cc: &CascadeConfig,
    inst: &SimulationInstance,
    pred1: Var,
    tap: Option<Var>,
    depth: &mut DepthRng,
) -> Result<(Var, Option<Var>, Vec<Var>)> {
    let normalized = tape.scale(pred1, 1.0 / cc.stage1.scale());
    let eps = tape.input(encode_eps(inst)?)?;
    let input2 = tape.concat(&[normalized, eps])?;
    let gate = match (cc.distillation, tap) {
        (true, Some(tap)) => {
            let s = tape.store();
            let pre = tape.conv(tap, s.id(DISTILL_W)?, s.id(DISTILL_B)?)?;
            Some(tape.sigmoid(pre))
        }
        _ => None,
    };
    let inject = gate.map(|g| (g, cc.stage2.leading_single_axis_blocks));
    let s2 = stage_forward(tape, &cc.stage2, STAGE_PREFIX[1], input2, depth, inject)?;
    Ok((s2.pred, gate, s2.blocks))
}

/// Runs stage II alone on a given stage-I prediction and optional stage-I
/// tap `[C_I, M, N]`.
pub fn refine(
    cfg: &CascadeConfig,
    inst: &SimulationInstance,
    pred_stage1: &ComplexGrid2D,
    tap: Option<&RealArray>,
    store: &ParameterStore,
) -> Result<ComplexGrid2D> {
    cfg.validate()?;
    let mut tape = Tape::new(store);
    let (m, n) = (pred_stage1.rows(), pred_stage1.cols());
    let mut data = pred_stage1.real_parts();
    data.extend(pred_stage1.imag_parts());
    let p = tape.input(RealArray::from_vec(&[2, m, n], data)?)?;
    let t = tap.map(|t| tape.input(t.clone())).transpose()?;
    let (pred, _, _) = stage2_forward(&mut tape, cfg, inst, p, t, &mut None)?;
    decode_field(tape.value(pred))
}

/// Single-stage forward. Returns the prediction and, if `record`, the trace.
pub fn model_forward<'p>(
    inst: &SimulationInstance,
    cfg: &ModelConfig,
    store: &'p ParameterStore,
    record: bool,
    depth_rng: DepthRng,
) -> Result<(ComplexGrid2D, Option<ForwardTrace<'p>>)> {
    let arch = Architecture::Single(cfg.clone());
    let trace = forward(
        &arch,
        inst,
        store,
        ForwardOptions {
            depth_rng,
            detach_stage1: false,
        },
    )?;
    let pred = trace.output()?;
    Ok((pred, record.then_some(trace)))
}

/// Two-stage forward: `(pred_I, pred_II)`.
pub fn cascade_forward(
    inst: &SimulationInstance,
    cfg: &CascadeConfig,
    store: &ParameterStore,
) -> Result<(ComplexGrid2D, ComplexGrid2D)> {
    let trace = forward(&Architecture::Cascade(cfg.clone()), inst, store, ForwardOptions::default())?;
    Ok((trace.prediction(0)?, trace.prediction(1)?))
}

/// Deterministic prediction of the final stage.
pub fn predict(arch: &Architecture, inst: &SimulationInstance, store: &ParameterStore) -> Result<ComplexGrid2D> {
    forward(arch, inst, store, ForwardOptions::default())?.output()
}
