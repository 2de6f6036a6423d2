//! Minimal raster line charts. The tidy CSV written next to every image is
//! the authoritative artifact.

use std::fmt::Write as _;
use std::io::BufWriter;
use std::path::Path;

use anyhow::{anyhow, Context, Result};
use pace_core::train::LossReport;

use crate::PlotArgs;

const W: usize = 640;
const H: usize = 400;
const MARGIN: usize = 40;
const PALETTE: [[u8; 3]; 4] = [[31, 119, 180], [214, 39, 40], [44, 160, 44], [148, 103, 189]];

struct Canvas {
    px: Vec<u8>,
}

impl Canvas {
    fn new() -> Self {
        Self { px: vec![255; W * H * 3] }
    }

    fn set(&mut self, x: i64, y: i64, c: [u8; 3]) {
        if (0..W as i64).contains(&x) && (0..H as i64).contains(&y) {
            let k = (y as usize * W + x as usize) * 3;
            self.px[k..k + 3].copy_from_slice(&c);
        }
    }

    fn line(&mut self, (x0, y0): (i64, i64), (x1, y1): (i64, i64), c: [u8; 3]) {
        let (dx, dy) = ((x1 - x0).abs(), -(y1 - y0).abs());
        let (sx, sy) = (if x0 < x1 { 1 } else { -1 }, if y0 < y1 { 1 } else { -1 });
        let (mut x, mut y, mut err) = (x0, y0, dx + dy);
        loop {
            self.set(x, y, c);
            if x == x1 && y == y1 {
                break;
            }
            let e2 = 2 * err;
            if e2 >= dy {
                err += dy;
                x += sx;
            }
            if e2 <= dx {
                err += dx;
                y += sy;
            }
        }
    }

    fn write_png(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
        let mut enc = png::Encoder::new(BufWriter::new(f), W as u32, H as u32);
        enc.set_color(png::ColorType::Rgb);
        enc.set_depth(png::BitDepth::Eight);
        let mut w = enc.write_header()?;
        w.write_image_data(&self.px)?;
        Ok(())
    }
}

/// Draws each series against a shared x range, y on a log10 scale.
fn chart(series: &[Vec<(f64, f64)>], path: &Path) -> Result<()> {
    let pts = series.iter().flatten().filter(|(_, y)| *y > 0.0);
    let (mut x0, mut x1, mut y0, mut y1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for &(x, y) in pts {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y.log10());
        y1 = y1.max(y.log10());
    }
    if x0 > x1 {
        return Err(anyhow!("nothing positive to plot"));
    }
    if x1 == x0 {
        x1 = x0 + 1.0;
    }
    let (y0, y1) = (y0.floor(), y1.ceil().max(y0.floor() + 1.0));
    let (pw, ph) = ((W - 2 * MARGIN) as f64, (H - 2 * MARGIN) as f64);
    let map = |x: f64, ly: f64| {
        (
            (MARGIN as f64 + (x - x0) / (x1 - x0) * pw).round() as i64,
            (MARGIN as f64 + (y1 - ly) / (y1 - y0) * ph).round() as i64,
        )
    };
    let mut c = Canvas::new();
    let mut d = y0;
    while d <= y1 {
        c.line(map(x0, d), map(x1, d), [225, 225, 225]);
        d += 1.0;
    }
    let black = [0, 0, 0];
    c.line(map(x0, y0), map(x1, y0), black);
    c.line(map(x0, y0), map(x0, y1), black);
    for (k, s) in series.iter().enumerate() {
        let col = PALETTE[k % PALETTE.len()];
        let pos: Vec<(i64, i64)> = s.iter().filter(|(_, y)| *y > 0.0).map(|&(x, y)| map(x, y.log10())).collect();
        for w in pos.windows(2) {
            c.line(w[0], w[1], col);
        }
        for &p in &pos {
            c.set(p.0, p.1, col);
        }
    }
    c.write_png(path)
}

pub fn spectrum_png(energies: &[f64], path: &Path) -> Result<()> {
    let s: Vec<(f64, f64)> = energies.iter().enumerate().map(|(k, &e)| (k as f64, e)).collect();
    chart(&[s], path)
}

pub fn export(a: PlotArgs) -> Result<()> {
    let text = std::fs::read_to_string(&a.report).with_context(|| format!("reading {}", a.report.display()))?;
    let report = LossReport::from_csv(&text).map_err(|e| anyhow!("malformed report: {e}"))?;
    std::fs::create_dir_all(&a.out)?;

    let metrics: [(&str, fn(&pace_core::train::EpochRecord) -> Option<f64>); 4] = [
        ("train_nmse", |r| Some(r.train_nmse)),
        ("val_nmse", |r| r.val_nmse),
        ("stage1", |r| r.stage1),
        ("stage2", |r| r.stage2),
    ];
    let mut tidy = String::from("epoch,metric,value\n");
    let mut series = Vec::new();
    for (name, get) in metrics {
        let s: Vec<(f64, f64)> = report
            .rows
            .iter()
            .filter_map(|r| get(r).map(|v| (r.epoch as f64, v)))
            .collect();
        if s.is_empty() {
            continue;
        }
        for r in &report.rows {
            if let Some(v) = get(r) {
                let _ = writeln!(tidy, "{},{name},{v}", r.epoch);
            }
        }
        series.push(s);
    }
    std::fs::write(a.out.join("loss_curve.csv"), tidy)?;
    chart(&series, &a.out.join("loss.png"))?;

    if let Some(p) = &a.spectrum {
        let text = std::fs::read_to_string(p)?;
        let mut lines = text.lines();
        if lines.next().map(str::trim) != Some("bin,energy,fraction") {
            return Err(anyhow!("malformed spectrum CSV {}", p.display()));
        }
        let mut energies = Vec::new();
        let mut tidy = String::from("bin,energy\n");
        for l in lines.filter(|l| !l.trim().is_empty()) {
            let cols: Vec<&str> = l.split(',').collect();
            let e: f64 = cols
                .get(1)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| anyhow!("malformed spectrum row '{l}'"))?;
            let _ = writeln!(tidy, "{},{e}", energies.len());
            energies.push(e);
        }
        std::fs::write(a.out.join("spectrum.csv"), tidy)?;
        spectrum_png(&energies, &a.out.join("spectrum.png"))?;
    }
    Ok(())
}
