use std::fmt::Write as _;

use crate::error::{Error, Result};

pub const REPORT_HEADER: &str = "epoch,lr,train_nmse,val_nmse,loss_total,stage1,stage2";
pub const STEPS_HEADER: &str = "step,epoch,lr,loss_total,stage1,stage2";

/// One row per finished epoch. `lr` is the rate of the epoch's first step.
/// Stage columns are empty when that stage is not part of the objective.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train_nmse: f64,
    pub val_nmse: Option<f64>,
    pub loss_total: f64,
    pub stage1: Option<f64>,
    pub stage2: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct LossReport {
    pub rows: Vec<EpochRecord>,
}

/// Batch means of one optimizer step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepLog {
    pub step: usize,
    pub epoch: usize,
    pub lr: f64,
    pub loss_total: f64,
    pub stage1: Option<f64>,
    pub stage2: Option<f64>,
}

fn cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn parse_f64(s: &str, line: usize) -> Result<f64> {
    s.trim()
        .parse::<f64>()
        .map_err(|_| Error::Format(format!("line {line}: '{s}' is not a number")))
}

fn parse_opt(s: &str, line: usize) -> Result<Option<f64>> {
    if s.trim().is_empty() {
        Ok(None)
    } else {
        parse_f64(s, line).map(Some)
    }
}

fn parse_usize(s: &str, line: usize) -> Result<usize> {
    s.trim()
        .parse::<usize>()
        .map_err(|_| Error::Format(format!("line {line}: '{s}' is not an integer")))
}

fn data_lines<'a>(text: &'a str, header: &str) -> Result<Vec<(usize, Vec<&'a str>)>> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    match lines.next() {
        Some((_, h)) if h.trim() == header => {}
        Some((_, h)) => return Err(Error::Format(format!("unexpected header '{h}'"))),
        None => return Err(Error::Format("empty report".into())),
    }
    let width = header.split(',').count();
    lines
        .map(|(i, l)| {
            let cols: Vec<&str> = l.split(',').collect();
            if cols.len() != width {
                return Err(Error::Format(format!(
                    "line {}: expected {width} columns, found {}",
                    i + 1,
                    cols.len()
                )));
            }
            Ok((i + 1, cols))
        })
        .collect()
}

impl LossReport {
    /// Floats are written in shortest round-trip form.
    pub fn to_csv(&self) -> String {
        let mut s = format!("{REPORT_HEADER}\n");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{}",
                r.epoch,
                r.lr,
                r.train_nmse,
                cell(r.val_nmse),
                r.loss_total,
                cell(r.stage1),
                cell(r.stage2)
            );
        }
        s
    }

    /// Errors with `Format` on a missing header, a ragged row, a negative
    /// entry or a report without rows.
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut rows = Vec::new();
        for (line, c) in data_lines(text, REPORT_HEADER)? {
            let r = EpochRecord {
                epoch: parse_usize(c[0], line)?,
                lr: parse_f64(c[1], line)?,
                train_nmse: parse_f64(c[2], line)?,
                val_nmse: parse_opt(c[3], line)?,
                loss_total: parse_f64(c[4], line)?,
                stage1: parse_opt(c[5], line)?,
                stage2: parse_opt(c[6], line)?,
            };
            let vals = [Some(r.lr), Some(r.train_nmse), r.val_nmse, Some(r.loss_total), r.stage1, r.stage2];
            if vals.iter().flatten().any(|v| !(*v >= 0.0)) {
                return Err(Error::Format(format!("line {line}: entries must be non-negative")));
            }
            rows.push(r);
        }
        if rows.is_empty() {
            return Err(Error::Format("report has no rows".into()));
        }
        Ok(Self { rows })
    }

    pub fn last(&self) -> Option<&EpochRecord> {
        self.rows.last()
    }
}

pub fn steps_to_csv(steps: &[StepLog]) -> String {
    let mut s = format!("{STEPS_HEADER}\n");
    for l in steps {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{}",
            l.step,
            l.epoch,
            l.lr,
            l.loss_total,
            cell(l.stage1),
            cell(l.stage2)
        );
    }
    s
}

pub fn steps_from_csv(text: &str) -> Result<Vec<StepLog>> {
    data_lines(text, STEPS_HEADER)?
        .into_iter()
        .map(|(line, c)| {
            Ok(StepLog {
                step: parse_usize(c[0], line)?,
                epoch: parse_usize(c[1], line)?,
                lr: parse_f64(c[2], line)?,
                loss_total: parse_f64(c[3], line)?,
                stage1: parse_opt(c[4], line)?,
                stage2: parse_opt(c[5], line)?,
            })
        })
        .collect()
}
