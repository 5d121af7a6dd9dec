//! Label CSV rows: `frame,class,track,azimuth,elevation` on the 100 ms grid.
//!
//! The same format carries references (dataset metadata) and decoded
//! predictions, so the scorer consumes both sides symmetrically.

use std::fs;
use std::path::Path;

use crate::error::{Result, SeldError};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LabelRow {
    pub frame: usize,
    pub class: usize,
    pub track: usize,
    pub azimuth: i64,
    pub elevation: i64,
}

pub fn write_label_csv(path: &Path, rows: &[LabelRow]) -> Result<()> {
    let mut out = String::new();
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.frame, r.class, r.track, r.azimuth, r.elevation
        ));
    }
    fs::write(path, out).map_err(|e| SeldError::io(path.display().to_string(), e))
}

pub fn read_label_csv(path: &Path) -> Result<Vec<LabelRow>> {
    let text =
        fs::read_to_string(path).map_err(|e| SeldError::io(path.display().to_string(), e))?;
    parse_label_csv(&text).map_err(|msg| SeldError::Format(format!("{}: {msg}", path.display())))
}

pub fn parse_label_csv(text: &str) -> std::result::Result<Vec<LabelRow>, String> {
    let mut rows = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(|f| f.trim()).collect();
        if fields.len() != 5 {
            return Err(format!("line {}: expected 5 fields, got {}", lineno + 1, fields.len()));
        }
        let parse_u = |s: &str, what: &str| {
            s.parse::<usize>().map_err(|_| format!("line {}: bad {what} `{s}`", lineno + 1))
        };
        let parse_i = |s: &str, what: &str| {
            s.parse::<i64>().map_err(|_| format!("line {}: bad {what} `{s}`", lineno + 1))
        };
        rows.push(LabelRow {
            frame: parse_u(fields[0], "frame")?,
            class: parse_u(fields[1], "class")?,
            track: parse_u(fields[2], "track")?,
            azimuth: parse_i(fields[3], "azimuth")?,
            elevation: parse_i(fields[4], "elevation")?,
        });
    }
    Ok(rows)
}
