//! Descriptive timing of the FDFD oracle against a model forward pass.

use std::fmt::Write as _;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use pace_core::fdfd::{sample_device, simulate_sources, worker_threads, GenerationConfig};
use pace_core::field::SourceSpec;
use pace_core::model::{init_params, predict, Architecture, ModelConfig};
use pace_core::spectral::ModeSpec;

use crate::BenchArgs;

pub const BENCH_HEADER: &str = "grid,task,repeats,cold_ms,median_ms,p95_ms,ratio,hardware,threads";

#[derive(Debug, Clone)]
struct Row {
    grid: (usize, usize),
    task: &'static str,
    times_ms: Vec<f64>,
    ratio: Option<f64>,
}

fn parse_grid(s: &str) -> Result<(usize, usize)> {
    let (m, n) = s
        .split_once(['x', 'X'])
        .with_context(|| format!("grid '{s}' is not MxN"))?;
    Ok((m.trim().parse()?, n.trim().parse()?))
}

/// Nearest-rank percentile of a non-empty sample.
fn percentile(sorted: &[f64], q: f64) -> f64 {
    let rank = ((q * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
    sorted[rank - 1]
}

fn median(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

fn stats(times: &[f64]) -> (f64, f64, f64) {
    let mut s = times.to_vec();
    s.sort_by(f64::total_cmp);
    (times[0], median(&s), percentile(&s, 0.95))
}

fn hardware() -> String {
    std::fs::read_to_string("/proc/cpuinfo")
        .ok()
        .and_then(|t| {
            t.lines()
                .find(|l| l.starts_with("model name"))
                .and_then(|l| l.split_once(':'))
                .map(|(_, v)| v.trim().replace(',', " "))
        })
        .unwrap_or_else(|| std::env::consts::ARCH.to_string())
}

fn default_model(m: usize, n: usize) -> Architecture {
    let mut c = ModelConfig::pace(16, 4, ModeSpec::new(8.min(m), 12.min(n)), 4);
    c.output_scale = Some(1.0);
    Architecture::Single(c)
}

pub fn run(a: BenchArgs) -> Result<()> {
    if a.repeats == 0 {
        bail!("--repeats must be at least 1");
    }
    let given: Option<Architecture> = match &a.model_config {
        Some(p) => Some(serde_json::from_str(&std::fs::read_to_string(p)?)?),
        None => None,
    };
    let mut rows = Vec::new();
    for g in &a.grids {
        let (m, n) = parse_grid(g)?;
        let gen = GenerationConfig {
            rows: m,
            cols: n,
            ..GenerationConfig::desk_mmi()
        };
        let dev = sample_device(&gen, 0, 0)?;
        let pml = gen.pml_for(&dev.domain);
        let src = SourceSpec::new(dev.spec.input_ports()[0], dev.wavelength);

        let mut solve_ms = Vec::with_capacity(a.repeats);
        let mut inst = None;
        for _ in 0..a.repeats {
            let t = Instant::now();
            let (i, _) = simulate_sources(&dev.spec, &[src], &dev.domain, &pml, &gen.solver)?;
            solve_ms.push(t.elapsed().as_secs_f64() * 1e3);
            inst = Some(i);
        }
        let inst = inst.expect("at least one repeat");

        let arch = given.clone().unwrap_or_else(|| default_model(m, n));
        let params = init_params(&arch, 0)?;
        let mut model_ms = Vec::with_capacity(a.repeats);
        for _ in 0..a.repeats {
            let t = Instant::now();
            let out = predict(&arch, &inst, &params)?;
            model_ms.push(t.elapsed().as_secs_f64() * 1e3);
            std::hint::black_box(out);
        }
        let ratio = stats(&solve_ms).1 / stats(&model_ms).1;
        rows.push(Row {
            grid: (m, n),
            task: "fdfd_solve",
            times_ms: solve_ms,
            ratio: None,
        });
        rows.push(Row {
            grid: (m, n),
            task: "model_forward",
            times_ms: model_ms,
            ratio: Some(ratio),
        });
    }

    let hw = hardware();
    let threads = worker_threads();
    let mut csv = format!("{BENCH_HEADER}\n");
    let mut md = format!(
        "Hardware: {hw}, threads: {threads}. Descriptive timings only.\n\n\
         | grid | task | repeats | cold ms | median ms | p95 ms | solver/model |\n\
         |---|---|---|---|---|---|---|\n"
    );
    for r in &rows {
        let (cold, med, p95) = stats(&r.times_ms);
        let ratio = r.ratio.map_or(String::new(), |x| x.to_string());
        let grid = format!("{}x{}", r.grid.0, r.grid.1);
        let _ = writeln!(
            csv,
            "{grid},{},{},{cold},{med},{p95},{ratio},{hw},{threads}",
            r.task,
            r.times_ms.len()
        );
        let _ = writeln!(
            md,
            "| {grid} | {} | {} | {cold:.3} | {med:.3} | {p95:.3} | {} |",
            r.task,
            r.times_ms.len(),
            r.ratio.map_or(String::new(), |x| format!("{x:.2}"))
        );
    }
    print!("{md}");
    if let Some(dir) = &a.out {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("bench.csv"), csv)?;
        std::fs::write(dir.join("bench.md"), md)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn order_statistics() {
        let s = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(median(&s), 2.5);
        assert_eq!(percentile(&s, 0.95), 4.0);
        assert_eq!(percentile(&[7.0], 0.95), 7.0);
        assert_eq!(parse_grid("32x64").unwrap(), (32, 64));
        assert!(parse_grid("32").is_err());
    }
}
