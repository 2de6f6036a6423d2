//! Random device sampling and batch FDFD dataset generation.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::pml::PmlSpec;
use super::simulate::{simulate_ports, simulate_sources};
use super::solve::SolverConfig;
use crate::error::{Error, Result};
use crate::field::{
    build_domain, DeviceKind, DeviceSpec, Port, PortSide, Rect, SimDomain, SimulationInstance,
    SourceSpec,
};

/// Closed sampling interval; `lo == hi` is a fixed value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Span {
    pub lo: f64,
    pub hi: f64,
}

impl Span {
    pub const fn new(lo: f64, hi: f64) -> Self {
        Span { lo, hi }
    }

    pub const fn fixed(v: f64) -> Self {
        Span { lo: v, hi: v }
    }

    pub fn mean(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }

    pub fn contains(&self, v: f64) -> bool {
        v >= self.lo && v <= self.hi
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> f64 {
        if self.hi > self.lo {
            rng.gen_range(self.lo..self.hi)
        } else {
            self.lo
        }
    }

    fn validate(&self, what: &str) -> Result<()> {
        if !(self.lo.is_finite() && self.hi.is_finite() && self.lo <= self.hi) {
            return Err(Error::InvalidConfig(format!("{what}: bad interval")));
        }
        Ok(())
    }
}

/// Device-family sampling table. All lengths in micrometers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationConfig {
    pub name: String,
    pub kind: DeviceKind,
    pub rows: usize,
    pub cols: usize,
    pub ports_per_side: usize,
    pub length: Span,
    pub width: Span,
    pub port_length: f64,
    pub port_width: Span,
    pub taper_length: f64,
    pub taper_width: f64,
    pub border_width: f64,
    pub pml_width: f64,
    pub wavelength: Span,
    /// Etched area fraction of the body (MMI only).
    #[serde(default)]
    pub cavity_ratio: Option<Span>,
    /// Cavity (MMI) or meta-atom (metaline) size along x.
    pub feature_x: Span,
    /// Cavity (MMI) or meta-atom (metaline) size along z.
    pub feature_z: Span,
    /// Meta-atom layers and atoms per layer (metaline only).
    #[serde(default)]
    pub atom_layers: usize,
    #[serde(default)]
    pub atoms_per_layer: usize,
    pub eps_background: f64,
    pub eps_etch: f64,
    #[serde(default = "default_pml_order")]
    pub pml_order: u32,
    #[serde(default)]
    pub solver: SolverConfig,
    /// Number of superposition spot checks run after generation.
    #[serde(default = "default_mixup_checks")]
    pub mixup_checks: usize,
}

fn default_pml_order() -> u32 {
    3
}

fn default_mixup_checks() -> usize {
    5
}

/// Rule that turns a sampled cavity ratio into a cavity count.
pub const CAVITY_RULE: &str =
    "count = max(1, round(ratio * body_area / (mean(feature_x) * mean(feature_z))))";

impl GenerationConfig {
    fn base(name: &str, kind: DeviceKind, rows: usize, cols: usize) -> Self {
        Self {
            name: name.into(),
            kind,
            rows,
            cols,
            ports_per_side: 3,
            length: Span::new(20.0, 30.0),
            width: Span::new(5.5, 7.0),
            port_length: 1.5,
            port_width: Span::new(0.8, 1.1),
            taper_length: 4.5,
            taper_width: 1.3,
            border_width: 0.25,
            pml_width: 1.5,
            wavelength: Span::new(1.53, 1.565),
            cavity_ratio: Some(Span::new(0.05, 0.1)),
            feature_x: Span::new(0.3, 0.6),
            feature_z: Span::new(0.6, 1.5),
            atom_layers: 0,
            atoms_per_layer: 0,
            eps_background: 12.11,
            eps_etch: 2.07,
            pml_order: 3,
            solver: SolverConfig::default(),
            mixup_checks: 5,
        }
    }

    pub fn etched_mmi_3x3() -> Self {
        Self::base("etched_mmi_3x3", DeviceKind::EtchedMmi, 80, 384)
    }

    pub fn etched_mmi_5x5() -> Self {
        Self {
            ports_per_side: 5,
            length: Span::new(25.0, 35.0),
            width: Span::new(7.5, 9.0),
            ..Self::base("etched_mmi_5x5", DeviceKind::EtchedMmi, 80, 384)
        }
    }

    pub fn metaline_3x3() -> Self {
        Self {
            length: Span::new(8.0, 10.0),
            width: Span::new(10.0, 12.0),
            port_width: Span::new(0.5, 0.8),
            taper_length: 3.0,
            cavity_ratio: None,
            feature_x: Span::new(0.2, 0.9),
            feature_z: Span::new(0.3, 0.8),
            atom_layers: 2,
            atoms_per_layer: 10,
            ..Self::base("metaline_3x3", DeviceKind::Metaline, 128, 144)
        }
    }

    /// Reduced etched MMI on a 32x64 grid for desk-scale experiments.
    pub fn desk_mmi() -> Self {
        Self {
            length: Span::new(4.0, 5.0),
            width: Span::new(2.0, 2.4),
            port_length: 0.5,
            port_width: Span::new(0.45, 0.55),
            taper_length: 0.0,
            taper_width: 0.0,
            border_width: 0.1,
            pml_width: 0.5,
            feature_x: Span::new(0.2, 0.4),
            feature_z: Span::new(0.3, 0.6),
            ..Self::base("desk_mmi", DeviceKind::EtchedMmi, 32, 64)
        }
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "etched_mmi_3x3" => Some(Self::etched_mmi_3x3()),
            "etched_mmi_5x5" => Some(Self::etched_mmi_5x5()),
            "metaline_3x3" => Some(Self::metaline_3x3()),
            "desk_mmi" => Some(Self::desk_mmi()),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (s, what) in [
            (self.length, "length"),
            (self.width, "width"),
            (self.port_width, "port_width"),
            (self.wavelength, "wavelength"),
            (self.feature_x, "feature_x"),
            (self.feature_z, "feature_z"),
        ] {
            s.validate(what)?;
            if !(s.lo > 0.0) {
                return Err(Error::InvalidConfig(format!("{what} must be positive")));
            }
        }
        if self.ports_per_side == 0 {
            return Err(Error::InvalidConfig("ports_per_side must be >= 1".into()));
        }
        if self.kind == DeviceKind::EtchedMmi && self.cavity_ratio.is_none() {
            return Err(Error::InvalidConfig("etched MMI needs cavity_ratio".into()));
        }
        if self.kind == DeviceKind::Metaline && (self.atom_layers == 0 || self.atoms_per_layer == 0)
        {
            return Err(Error::InvalidConfig("metaline needs atom layers".into()));
        }
        if !(self.pml_width > 0.0) {
            return Err(Error::InvalidConfig("pml_width must be positive".into()));
        }
        build_domain(1.0, 1.0, self.rows, self.cols)?;
        Ok(())
    }

    /// Domain extents `(l_x, l_z)` for a sampled body size.
    pub fn extents(&self, length: f64, width: f64) -> (f64, f64) {
        let l_z = 2.0 * (self.pml_width + self.port_length + self.taper_length) + length;
        let l_x = 2.0 * (self.pml_width + self.border_width) + width;
        (l_x, l_z)
    }

    /// PML description matching `pml_width` on `domain`.
    pub fn pml_for(&self, domain: &SimDomain) -> PmlSpec {
        let cells = |dl: f64| ((self.pml_width / dl).round() as usize).max(4);
        PmlSpec {
            thickness_cells: cells(domain.dl_x),
            z_thickness_cells: Some(cells(domain.dl_z)),
            polynomial_order: self.pml_order,
            ..PmlSpec::default()
        }
    }

    pub fn config_hash(&self) -> String {
        use sha2::{Digest, Sha256};
        let json = serde_json::to_vec(self).expect("config serializes");
        let digest = Sha256::digest(&json);
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// One sampled device: geometry, grid and wavelength shared by all its ports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampledDevice {
    pub spec: DeviceSpec,
    pub domain: SimDomain,
    pub wavelength: f64,
}

/// Sample device `index` of a dataset seeded with `seed`. Depends only on
/// `(cfg, seed, index)`.
pub fn sample_device(cfg: &GenerationConfig, seed: u64, index: u64) -> Result<SampledDevice> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    let length = cfg.length.sample(&mut rng);
    let width = cfg.width.sample(&mut rng);
    let port_width = cfg.port_width.sample(&mut rng);
    let wavelength = cfg.wavelength.sample(&mut rng);
    let (l_x, l_z) = cfg.extents(length, width);
    let domain = build_domain(l_x, l_z, cfg.rows, cfg.cols)?;

    let x0 = cfg.pml_width + cfg.border_width;
    let z0 = cfg.pml_width + cfg.port_length + cfg.taper_length;
    let body = Rect::from_bounds(x0, x0 + width, z0, z0 + length);
    let pitch = width / cfg.ports_per_side as f64;
    let mut ports = Vec::with_capacity(2 * cfg.ports_per_side);
    for side in [PortSide::Left, PortSide::Right] {
        for k in 0..cfg.ports_per_side {
            let source_z = match side {
                PortSide::Left => cfg.pml_width + 0.5 * cfg.port_length,
                PortSide::Right => l_z - cfg.pml_width - 0.5 * cfg.port_length,
            };
            ports.push(Port {
                side,
                center_x: x0 + pitch * (k as f64 + 0.5),
                width: port_width,
                taper_length: cfg.taper_length,
                taper_width: cfg.taper_width,
                source_z,
            });
        }
    }

    let rects = match cfg.kind {
        DeviceKind::EtchedMmi => {
            let ratio = cfg.cavity_ratio.expect("validated").sample(&mut rng);
            let mean_area = cfg.feature_x.mean() * cfg.feature_z.mean();
            let count = ((ratio * body.area() / mean_area).round() as usize).max(1);
            (0..count)
                .map(|_| {
                    let sx = cfg.feature_x.sample(&mut rng).min(width);
                    let sz = cfg.feature_z.sample(&mut rng).min(length);
                    let cx = x0 + 0.5 * sx + rng.gen::<f64>() * (width - sx);
                    let cz = z0 + 0.5 * sz + rng.gen::<f64>() * (length - sz);
                    Rect {
                        center: [cx, cz],
                        size: [sx, sz],
                    }
                })
                .collect()
        }
        DeviceKind::Metaline => {
            let atom_pitch = width / cfg.atoms_per_layer as f64;
            let mut rects = Vec::with_capacity(cfg.atom_layers * cfg.atoms_per_layer);
            for layer in 0..cfg.atom_layers {
                let cz = z0 + length * (layer as f64 + 1.0) / (cfg.atom_layers as f64 + 1.0);
                for a in 0..cfg.atoms_per_layer {
                    let sx = cfg.feature_x.sample(&mut rng).min(0.9 * atom_pitch);
                    let sz = cfg.feature_z.sample(&mut rng).min(length / cfg.atom_layers as f64);
                    rects.push(Rect {
                        center: [x0 + atom_pitch * (a as f64 + 0.5), cz],
                        size: [sx, sz],
                    });
                }
            }
            rects
        }
    };

    let spec = DeviceSpec {
        kind: cfg.kind,
        body,
        ports,
        rects,
        eps_background: cfg.eps_background,
        eps_etch: cfg.eps_etch,
        eps_cladding: None,
    };
    spec.validate()?;
    Ok(SampledDevice {
        spec,
        domain,
        wavelength,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::InvalidConfig(format!("unknown split `{other}`"))),
        }
    }
}

/// Device-level 72/8/20 assignment, seeded independently of the geometry.
pub fn assign_splits(n_devices: usize, seed: u64) -> Vec<Split> {
    let n_train = (0.72 * n_devices as f64).round() as usize;
    let n_val = ((0.08 * n_devices as f64).round() as usize).min(n_devices - n_train.min(n_devices));
    let mut order: Vec<usize> = (0..n_devices).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_5e1f);
    for i in (1..n_devices).rev() {
        order.swap(i, rng.gen_range(0..=i));
    }
    let mut splits = vec![Split::Test; n_devices];
    for (rank, &d) in order.iter().enumerate() {
        splits[d] = if rank < n_train {
            Split::Train
        } else if rank < n_train + n_val {
            Split::Val
        } else {
            Split::Test
        };
    }
    splits
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "state", content = "message", rename_all = "snake_case")]
pub enum RecordStatus {
    Ok,
    Failed(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedRecord {
    pub id: usize,
    pub device_index: usize,
    pub device: DeviceSpec,
    pub port: usize,
    pub wavelength: f64,
    pub split: Split,
    pub domain: SimDomain,
    pub residual: Option<f64>,
    pub status: RecordStatus,
    pub instance: Option<SimulationInstance>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedDataset {
    pub config: GenerationConfig,
    pub seed: u64,
    pub records: Vec<GeneratedRecord>,
    /// Largest relative mismatch between a superposed-source solve and the
    /// weighted sum of single-port fields over the spot checks.
    pub mixup_check_error: Option<f64>,
}

impl GeneratedDataset {
    pub fn ok_records(&self) -> impl Iterator<Item = &GeneratedRecord> {
        self.records.iter().filter(|r| r.status == RecordStatus::Ok)
    }
}

/// Worker count: `PACE_THREADS` if set and positive, else rayon's default.
pub fn worker_threads() -> usize {
    std::env::var("PACE_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(rayon::current_num_threads)
}

/// Sample `n_devices` devices, solve every input port and assign splits.
/// Output is independent of the worker count.
pub fn generate_dataset(
    cfg: &GenerationConfig,
    n_devices: usize,
    seed: u64,
) -> Result<GeneratedDataset> {
    if n_devices == 0 {
        return Err(Error::InvalidConfig("n_devices must be >= 1".into()));
    }
    cfg.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(worker_threads())
        .build()
        .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?;
    let splits = assign_splits(n_devices, seed);

    let per_device: Vec<Result<(SampledDevice, Vec<Result<(SimulationInstance, f64)>>)>> = pool
        .install(|| {
            (0..n_devices)
                .into_par_iter()
                .map(|d| {
                    let dev = sample_device(cfg, seed, d as u64)?;
                    let pml = cfg.pml_for(&dev.domain);
                    let ports = dev.spec.input_ports();
                    let solved = simulate_ports(
                        &dev.spec,
                        &ports,
                        dev.wavelength,
                        &dev.domain,
                        &pml,
                        &cfg.solver,
                    );
                    let solved = match solved {
                        Ok(v) => v,
                        Err(e) => ports.iter().map(|_| Err(e.clone())).collect(),
                    };
                    Ok((dev, solved))
                })
                .collect()
        });

    let mut records = Vec::new();
    for (d, entry) in per_device.into_iter().enumerate() {
        let (dev, solved) = entry?;
        let ports = dev.spec.input_ports();
        for (port, outcome) in ports.into_iter().zip(solved) {
            let (status, residual, instance) = match outcome {
                Ok((inst, res)) => (RecordStatus::Ok, Some(res), Some(inst)),
                Err(e) => (RecordStatus::Failed(e.to_string()), None, None),
            };
            records.push(GeneratedRecord {
                id: records.len(),
                device_index: d,
                device: dev.spec.clone(),
                port,
                wavelength: dev.wavelength,
                split: splits[d],
                domain: dev.domain,
                residual,
                status,
                instance,
            });
        }
    }

    let mut dataset = GeneratedDataset {
        config: cfg.clone(),
        seed,
        records,
        mixup_check_error: None,
    };
    dataset.mixup_check_error = mixup_spot_check(&dataset, cfg.mixup_checks, seed)?;
    Ok(dataset)
}

/// Re-solve `checks` random within-device port pairs with unit-phase weights
/// and return the largest relative mismatch against the superposed fields.
pub fn mixup_spot_check(
    dataset: &GeneratedDataset,
    checks: usize,
    seed: u64,
) -> Result<Option<f64>> {
    let mut by_device: Vec<Vec<&GeneratedRecord>> = Vec::new();
    for r in dataset.ok_records() {
        if by_device.len() <= r.device_index {
            by_device.resize(r.device_index + 1, Vec::new());
        }
        by_device[r.device_index].push(r);
    }
    let eligible: Vec<&Vec<&GeneratedRecord>> =
        by_device.iter().filter(|v| v.len() >= 2).collect();
    if eligible.is_empty() || checks == 0 {
        return Ok(None);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(u64::MAX);
    let mut worst = 0.0f64;
    for _ in 0..checks {
        let group = eligible[rng.gen_range(0..eligible.len())];
        let a = rng.gen_range(0..group.len());
        let mut b = rng.gen_range(0..group.len() - 1);
        if b >= a {
            b += 1;
        }
        let (ra, rb) = (group[a], group[b]);
        let wa = Complex64::from_polar(1.0, rng.gen_range(0.0..std::f64::consts::TAU));
        let wb = Complex64::from_polar(1.0, rng.gen_range(0.0..std::f64::consts::TAU));
        let mut sa = SourceSpec::new(ra.port, ra.wavelength);
        sa.amplitude = wa;
        let mut sb = SourceSpec::new(rb.port, rb.wavelength);
        sb.amplitude = wb;
        let pml = dataset.config.pml_for(&ra.domain);
        let (combined, _) =
            simulate_sources(&ra.device, &[sa, sb], &ra.domain, &pml, &dataset.config.solver)?;
        let ua = ra.instance.as_ref().expect("ok record").target()?;
        let ub = rb.instance.as_ref().expect("ok record").target()?;
        let sum = ua.scale(wa).axpy(wb, ub)?;
        let truth = combined.target()?;
        let err = sum.axpy(Complex64::new(-1.0, 0.0), truth)?.norm_sqr().sqrt()
            / truth.norm_sqr().sqrt();
        worst = worst.max(err);
    }
    Ok(Some(worst))
}
