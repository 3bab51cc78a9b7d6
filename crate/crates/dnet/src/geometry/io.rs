//! Cloud serialisation: a plain text format for datasets and an ASCII PLY
//! export that carries one extra scalar per point for visualisation.
//!
//! The text format is whitespace-separated floats, one point per line, either
//! `x y z` or `x y z nx ny nz`; `#` starts a comment.  All values are written
//! with six decimal places, so round-trips are exact to about 5e-7.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use super::PointCloud;
use crate::error::{Error, Result};

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse { path: path.display().to_string(), line, msg: msg.into() }
}

fn read_to_string(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path.display().to_string(), e))
}

// ── text format ───────────────────────────────────────────────────────────

/// Reads a cloud from the text format (3 or 6 columns, `#` comments).
pub fn load_cloud(path: impl AsRef<Path>) -> Result<PointCloud> {
    let path = path.as_ref();
    let text = read_to_string(path)?;
    let mut points = Vec::new();
    let mut normals = Vec::new();
    let mut cols: Option<usize> = None;
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 3 && fields.len() != 6 {
            return Err(parse_err(
                path,
                line_no,
                format!("expected 3 or 6 columns, found {}", fields.len()),
            ));
        }
        match cols {
            None => cols = Some(fields.len()),
            Some(c) if c != fields.len() => {
                return Err(parse_err(
                    path,
                    line_no,
                    format!("inconsistent column count: {} after {}", fields.len(), c),
                ));
            }
            _ => {}
        }
        let mut vals = [0.0f32; 6];
        for (slot, field) in fields.iter().enumerate() {
            let v: f32 = field
                .parse()
                .map_err(|_| parse_err(path, line_no, format!("not a number: {field:?}")))?;
            if !v.is_finite() {
                return Err(parse_err(path, line_no, format!("non-finite value {field:?}")));
            }
            vals[slot] = v;
        }
        points.push([vals[0], vals[1], vals[2]]);
        if fields.len() == 6 {
            normals.push([vals[3], vals[4], vals[5]]);
        }
    }
    if points.is_empty() {
        return Err(parse_err(path, 1, "file contains no points"));
    }
    let normals = if normals.is_empty() { None } else { Some(normals) };
    PointCloud::with_normals(points, normals)
        .map_err(|e| parse_err(path, 1, format!("invalid cloud: {e}")))
}

/// Writes a cloud in the text format with six decimal places.
pub fn save_cloud(cloud: &PointCloud, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = Vec::with_capacity(cloud.len() * 48);
    match cloud.normals() {
        Some(normals) => {
            for (p, n) in cloud.points().iter().zip(normals) {
                writeln!(
                    out,
                    "{:.6} {:.6} {:.6} {:.6} {:.6} {:.6}",
                    p[0], p[1], p[2], n[0], n[1], n[2]
                )
                .expect("write to vec");
            }
        }
        None => {
            for p in cloud.points() {
                writeln!(out, "{:.6} {:.6} {:.6}", p[0], p[1], p[2]).expect("write to vec");
            }
        }
    }
    write_bytes(path, &out)
}

// ── PLY with a per-point scalar ───────────────────────────────────────────

/// Writes an ASCII PLY whose vertices carry a `distinction` scalar.
pub fn export_ply_scalar(cloud: &PointCloud, scores: &[f32], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if scores.len() != cloud.len() {
        return Err(Error::dim(
            "export_ply_scalar",
            format!("{} scores for {} points", scores.len(), cloud.len()),
        ));
    }
    let mut out = Vec::with_capacity(cloud.len() * 52 + 160);
    writeln!(out, "ply").unwrap();
    writeln!(out, "format ascii 1.0").unwrap();
    writeln!(out, "element vertex {}", cloud.len()).unwrap();
    writeln!(out, "property float x").unwrap();
    writeln!(out, "property float y").unwrap();
    writeln!(out, "property float z").unwrap();
    writeln!(out, "property float distinction").unwrap();
    writeln!(out, "end_header").unwrap();
    for (p, s) in cloud.points().iter().zip(scores) {
        writeln!(out, "{:.6} {:.6} {:.6} {:.6}", p[0], p[1], p[2], s).expect("write to vec");
    }
    write_bytes(path, &out)
}

/// Consumes header lines until `want`, skipping comments.
fn expect_header<'a>(
    path: &Path,
    lines: &mut impl Iterator<Item = (usize, &'a str)>,
    want: &str,
) -> Result<()> {
    for (idx, raw) in lines.by_ref() {
        let line = raw.trim();
        if line.starts_with("comment") {
            continue;
        }
        if line == want {
            return Ok(());
        }
        return Err(parse_err(path, idx + 1, format!("expected {want:?}, found {line:?}")));
    }
    Err(parse_err(path, 1, format!("header ended before {want:?}")))
}

/// Reads back a PLY produced by [`export_ply_scalar`].
pub fn import_ply_scalar(path: impl AsRef<Path>) -> Result<(PointCloud, Vec<f32>)> {
    let path = path.as_ref();
    let text = read_to_string(path)?;
    let mut lines = text.lines().enumerate();

    expect_header(path, &mut lines, "ply")?;
    expect_header(path, &mut lines, "format ascii 1.0")?;

    let n: usize = loop {
        let (idx, raw) = lines
            .next()
            .ok_or_else(|| parse_err(path, 1, "header ended before element vertex"))?;
        let line = raw.trim();
        if line.starts_with("comment") {
            continue;
        }
        let count = line
            .strip_prefix("element vertex ")
            .ok_or_else(|| parse_err(path, idx + 1, format!("expected element vertex, found {line:?}")))?;
        break count
            .trim()
            .parse()
            .map_err(|_| parse_err(path, idx + 1, format!("bad vertex count {count:?}")))?;
    };
    for prop in ["x", "y", "z", "distinction"] {
        expect_header(path, &mut lines, &format!("property float {prop}"))?;
    }
    expect_header(path, &mut lines, "end_header")?;

    let mut points = Vec::with_capacity(n);
    let mut scores = Vec::with_capacity(n);
    for (idx, raw) in lines {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if points.len() == n {
            return Err(parse_err(path, idx + 1, "more data rows than declared vertices"));
        }
        let vals: Vec<f32> = line
            .split_whitespace()
            .map(|f| f.parse().map_err(|_| parse_err(path, idx + 1, format!("not a number: {f:?}"))))
            .collect::<Result<_>>()?;
        if vals.len() != 4 {
            return Err(parse_err(path, idx + 1, format!("expected 4 values, found {}", vals.len())));
        }
        points.push([vals[0], vals[1], vals[2]]);
        scores.push(vals[3]);
    }
    if points.len() != n {
        return Err(parse_err(
            path,
            1,
            format!("declared {} vertices but found {}", n, points.len()),
        ));
    }
    Ok((PointCloud::new(points)?, scores))
}

// ── tests ─────────────────────────────────────────────────────────────────
