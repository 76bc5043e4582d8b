//! Trajectory CSV and ground-truth CSV formats.
//!
//! Trajectory header: `frame,x_det,y_det,miss,x_trk,y_trk,x_gt,y_gt,ms`.
//! Numbers use six decimals and a `.` separator; absent values are empty.

use std::fmt::Write as _;

use csv::{ReaderBuilder, StringRecord};
use thiserror::Error;

use super::{FrameRecord, Trajectory};

pub const TRAJECTORY_HEADER: &str = "frame,x_det,y_det,miss,x_trk,y_trk,x_gt,y_gt,ms";
pub const TRUTH_HEADER: &str = "frame,x_gt,y_gt";

#[derive(Debug, Error, PartialEq)]
pub enum CsvError {
    #[error("line {line}: expected header `{expected}`")]
    Header { line: usize, expected: &'static str },
    #[error("line {line}: expected {expected} fields, found {found}")]
    FieldCount { line: usize, expected: usize, found: usize },
    #[error("line {line}: bad `{field}` value `{value}`")]
    BadField { line: usize, field: &'static str, value: String },
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("line {line}: {message}")]
    Inconsistent { line: usize, message: &'static str },
}

fn push_opt(out: &mut String, v: Option<f64>) {
    out.push(',');
    if let Some(v) = v {
        let _ = write!(out, "{v:.6}");
    }
}

/// Render a trajectory. `timing` selects whether the `ms` column is filled.
pub fn format_trajectory(traj: &Trajectory, timing: bool) -> String {
    let mut out = String::with_capacity(64 * (traj.records.len() + 1));
    out.push_str(TRAJECTORY_HEADER);
    out.push('\n');
    for r in &traj.records {
        let _ = write!(out, "{}", r.frame);
        push_opt(&mut out, r.detection.map(|d| d.0));
        push_opt(&mut out, r.detection.map(|d| d.1));
        out.push_str(if r.detection.is_some() { ",0" } else { ",1" });
        push_opt(&mut out, r.tracked.map(|d| d.0));
        push_opt(&mut out, r.tracked.map(|d| d.1));
        push_opt(&mut out, r.truth.map(|d| d.0));
        push_opt(&mut out, r.truth.map(|d| d.1));
        push_opt(&mut out, if timing { r.ms } else { None });
        out.push('\n');
    }
    out
}

const FIELDS: [&str; 9] = ["frame", "x_det", "y_det", "miss", "x_trk", "y_trk", "x_gt", "y_gt", "ms"];

fn parse_opt(line: usize, field: &'static str, s: &str) -> Result<Option<f64>, CsvError> {
    if s.is_empty() {
        return Ok(None);
    }
    match s.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(Some(v)),
        _ => Err(CsvError::BadField { line, field, value: s.to_string() }),
    }
}

fn pair(
    line: usize,
    x: Option<f64>,
    y: Option<f64>,
    message: &'static str,
) -> Result<Option<(f64, f64)>, CsvError> {
    match (x, y) {
        (Some(x), Some(y)) => Ok(Some((x, y))),
        (None, None) => Ok(None),
        _ => Err(CsvError::Inconsistent { line, message }),
    }
}

/// Rows of a headed CSV with the given header, paired with their line
/// numbers. Blank lines are skipped.
fn rows<'a>(
    text: &'a str,
    header: &'static str,
) -> Result<impl Iterator<Item = Result<(usize, StringRecord), CsvError>> + 'a, CsvError> {
    let mut reader = ReaderBuilder::new().has_headers(true).flexible(true).from_reader(text.as_bytes());
    let expected: Vec<&str> = header.split(',').collect();
    match reader.headers() {
        Ok(h) if h.iter().eq(expected.iter().copied()) => {}
        _ => return Err(CsvError::Header { line: 1, expected: header }),
    }
    let width = expected.len();
    Ok(reader.into_records().enumerate().map(move |(i, rec)| {
        let rec = rec.map_err(|e| CsvError::Malformed {
            line: e.position().map_or(i + 2, |p| p.line() as usize),
            message: e.to_string(),
        })?;
        let line = rec.position().map_or(i + 2, |p| p.line() as usize);
        if rec.len() != width {
            return Err(CsvError::FieldCount { line, expected: width, found: rec.len() });
        }
        Ok((line, rec))
    }))
}

/// Parse a trajectory CSV as written by [`format_trajectory`].
pub fn parse_trajectory(text: &str) -> Result<Trajectory, CsvError> {
    let mut records: Vec<FrameRecord> = Vec::new();
    for row in rows(text, TRAJECTORY_HEADER)? {
        let (line, f) = row?;
        let frame = f[0]
            .parse::<usize>()
            .map_err(|_| CsvError::BadField { line, field: "frame", value: f[0].to_string() })?;
        let miss = match &f[3] {
            "0" => false,
            "1" => true,
            other => return Err(CsvError::BadField { line, field: "miss", value: other.to_string() }),
        };
        let num = |i: usize| parse_opt(line, FIELDS[i], &f[i]);
        let detection = pair(line, num(1)?, num(2)?, "x_det and y_det must both be present or absent")?;
        if detection.is_some() == miss {
            return Err(CsvError::Inconsistent { line, message: "miss flag disagrees with detection" });
        }
        if records.last().is_some_and(|r| frame <= r.frame) {
            return Err(CsvError::Inconsistent { line, message: "frame indices must increase" });
        }
        records.push(FrameRecord {
            frame,
            detection,
            tracked: pair(line, num(4)?, num(5)?, "x_trk and y_trk must both be present or absent")?,
            truth: pair(line, num(6)?, num(7)?, "x_gt and y_gt must both be present or absent")?,
            ms: num(8)?,
        });
    }
    Ok(Trajectory { records })
}

pub fn format_truth(centers: &[(f64, f64)]) -> String {
    let mut out = String::from(TRUTH_HEADER);
    out.push('\n');
    for (k, (x, y)) in centers.iter().enumerate() {
        let _ = writeln!(out, "{k},{x:.6},{y:.6}");
    }
    out
}

/// Parse `frame,x_gt,y_gt` rows; frames must be `0, 1, 2, …` in order.
pub fn parse_truth(text: &str) -> Result<Vec<(f64, f64)>, CsvError> {
    let mut out = Vec::new();
    for row in rows(text, TRUTH_HEADER)? {
        let (line, f) = row?;
        if f[0].parse::<usize>().ok() != Some(out.len()) {
            return Err(CsvError::BadField { line, field: "frame", value: f[0].to_string() });
        }
        match (parse_opt(line, "x_gt", &f[1])?, parse_opt(line, "y_gt", &f[2])?) {
            (Some(x), Some(y)) => out.push((x, y)),
            _ => return Err(CsvError::Inconsistent { line, message: "truth rows need both coordinates" }),
        }
    }
    Ok(out)
}
