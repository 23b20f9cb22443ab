//! The plain-text point cloud format used across the toolkit.
//!
//! Layout: a header line `CLOUD v1 <count> <stamp_seconds>` followed by one
//! `x y z intensity` line per point, space-separated, written with nine
//! decimal places. Readers reject files whose point count disagrees with the
//! header.

use crate::geometry::{Point3, PointCloud};
use std::fmt::Write as _;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CloudIoError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {what}")]
    Malformed { line: usize, what: String },
    #[error("count mismatch: header says {expected}, file has {found}")]
    CountMismatch { expected: usize, found: usize },
}

fn malformed(line: usize, what: impl Into<String>) -> CloudIoError {
    CloudIoError::Malformed { line, what: what.into() }
}

pub fn write_cloud_string(cloud: &PointCloud) -> String {
    let mut out = String::with_capacity(16 + cloud.len() * 48);
    let _ = writeln!(out, "CLOUD v1 {} {:.9}", cloud.len(), cloud.stamp);
    for p in &cloud.points {
        let _ = writeln!(out, "{:.9} {:.9} {:.9} {:.9}", p.x, p.y, p.z, p.intensity);
    }
    out
}

pub fn write_cloud(path: &Path, cloud: &PointCloud) -> Result<(), CloudIoError> {
    std::fs::write(path, write_cloud_string(cloud))?;
    Ok(())
}

pub fn parse_cloud(text: &str) -> Result<PointCloud, CloudIoError> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or_else(|| malformed(1, "empty file"))?;
    let fields: Vec<&str> = header.split_whitespace().collect();
    if fields.len() != 4 || fields[0] != "CLOUD" || fields[1] != "v1" {
        return Err(malformed(1, "expected header `CLOUD v1 <count> <stamp>`"));
    }
    let expected: usize = fields[2]
        .parse()
        .map_err(|_| malformed(1, format!("bad count `{}`", fields[2])))?;
    let stamp: f64 = fields[3]
        .parse()
        .map_err(|_| malformed(1, format!("bad stamp `{}`", fields[3])))?;
    if !stamp.is_finite() || stamp < 0.0 {
        return Err(malformed(1, format!("stamp {stamp} out of range")));
    }

    let mut points = Vec::with_capacity(expected);
    for (idx, line) in lines {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let mut it = line.split_whitespace();
        let mut next = |name: &str| -> Result<f64, CloudIoError> {
            it.next()
                .ok_or_else(|| malformed(line_no, format!("missing {name}")))?
                .parse::<f64>()
                .map_err(|_| malformed(line_no, format!("bad {name}")))
        };
        let x = next("x")?;
        let y = next("y")?;
        let z = next("z")?;
        let intensity = next("intensity")?;
        if it.next().is_some() {
            return Err(malformed(line_no, "trailing fields"));
        }
        if ![x, y, z].iter().all(|v| v.is_finite()) {
            return Err(malformed(line_no, "non-finite coordinate"));
        }
        if !(0.0..=1.0).contains(&intensity) {
            return Err(malformed(line_no, format!("intensity {intensity} outside [0, 1]")));
        }
        points.push(Point3 { x, y, z, intensity });
    }
    if points.len() != expected {
        return Err(CloudIoError::CountMismatch { expected, found: points.len() });
    }
    Ok(PointCloud::new(points, stamp, ""))
}

pub fn read_cloud(path: &Path) -> Result<PointCloud, CloudIoError> {
    let text = std::fs::read_to_string(path)?;
    parse_cloud(&text)
}
