//! On-disk formats for event streams and trajectories.
//!
//! Events: one per line, `t x y p`, timestamps in seconds with 9 decimal
//! places, polarity 0/1 on disk mapped to -1/+1 in memory. Trajectories:
//! `t tx ty tz qx qy qz qw` with unit quaternions.
//!
//! Parsers are strict by default and reject rather than guess; the lenient
//! event reader (non-monotone streams get stable-sorted) is an explicit
//! opt-in.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use thiserror::Error;

use crate::event::Event;
use crate::geometry::Pose;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FormatError {
    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },
    #[error("{path}: {message}")]
    Io { path: String, message: String },
}

fn io_err(path: &Path, e: std::io::Error) -> FormatError {
    FormatError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> FormatError {
    FormatError::Parse {
        path: path.display().to_string(),
        line,
        message: message.into(),
    }
}

/// Read an event stream. In strict mode a timestamp that goes backwards is
/// an error; in lenient mode the stream is stable-sorted by time instead.
pub fn read_events(path: &Path, strict: bool) -> Result<Vec<Event>, FormatError> {
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    let reader = BufReader::new(file);
    let mut events = Vec::new();
    let mut monotone = true;
    for (idx, line) in reader.lines().enumerate() {
        let lineno = idx + 1;
        let line = line.map_err(|e| io_err(path, e))?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut parts = line.split_whitespace();
        let mut next = |name: &str| {
            parts
                .next()
                .ok_or_else(|| parse_err(path, lineno, format!("missing field {name}")))
        };
        let t: f64 = next("t")?
            .parse()
            .map_err(|_| parse_err(path, lineno, "bad timestamp"))?;
        let x: u16 = next("x")?
            .parse()
            .map_err(|_| parse_err(path, lineno, "bad x coordinate"))?;
        let y: u16 = next("y")?
            .parse()
            .map_err(|_| parse_err(path, lineno, "bad y coordinate"))?;
        let p_raw = next("p")?;
        let polarity = match p_raw {
            "0" => -1i8,
            "1" => 1i8,
            other => {
                return Err(parse_err(path, lineno, format!("bad polarity {other:?}")));
            }
        };
        if parts.next().is_some() {
            return Err(parse_err(path, lineno, "trailing fields"));
        }
        if !t.is_finite() {
            return Err(parse_err(path, lineno, "non-finite timestamp"));
        }
        if let Some(prev) = events.last() {
            let prev: &Event = prev;
            if t < prev.t {
                if strict {
                    return Err(parse_err(path, lineno, "timestamps must be non-decreasing"));
                }
                monotone = false;
            }
        }
        events.push(Event::new(x, y, t, polarity));
    }
    if !monotone {
        events.sort_by(|a, b| a.t.total_cmp(&b.t));
    }
    Ok(events)
}

pub fn write_events(path: &Path, events: &[Event]) -> Result<(), FormatError> {
    let file = File::create(path).map_err(|e| io_err(path, e))?;
    let mut w = BufWriter::new(file);
    for e in events {
        let p = if e.polarity > 0 { 1 } else { 0 };
        writeln!(w, "{:.9} {} {} {}", e.t, e.x, e.y, p).map_err(|e| io_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

/// Read a timestamped trajectory, `t tx ty tz qx qy qz qw` per line.
/// Quaternions must be unit to within 1e-3 and are renormalized.
pub fn read_trajectory(path: &Path) -> Result<Vec<(f64, Pose)>, FormatError> {
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    let reader = BufReader::new(file);
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let lineno = idx + 1;
        let line = line.map_err(|e| io_err(path, e))?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let values: Result<Vec<f64>, _> = line.split_whitespace().map(str::parse).collect();
        let v = values.map_err(|_| parse_err(path, lineno, "bad number"))?;
        if v.len() != 8 {
            return Err(parse_err(path, lineno, format!("expected 8 fields, got {}", v.len())));
        }
        let q_norm = (v[4] * v[4] + v[5] * v[5] + v[6] * v[6] + v[7] * v[7]).sqrt();
        if (q_norm - 1.0).abs() > 1e-3 {
            return Err(parse_err(
                path,
                lineno,
                format!("quaternion norm {q_norm:.6} too far from 1"),
            ));
        }
        out.push((v[0], Pose::from_tq([v[1], v[2], v[3]], [v[4], v[5], v[6], v[7]])));
    }
    Ok(out)
}

pub fn write_trajectory(path: &Path, traj: &[(f64, Pose)]) -> Result<(), FormatError> {
    let file = File::create(path).map_err(|e| io_err(path, e))?;
    let mut w = BufWriter::new(file);
    for (t, pose) in traj {
        let tr = pose.translation;
        let q = pose.rotation.quaternion();
        writeln!(
            w,
            "{:.9} {:.9} {:.9} {:.9} {:.9} {:.9} {:.9} {:.9}",
            t, tr.x, tr.y, tr.z, q.i, q.j, q.k, q.w
        )
        .map_err(|e| io_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}
