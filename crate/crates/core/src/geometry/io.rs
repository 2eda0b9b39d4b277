//! ASCII PLY and whitespace-separated xyz text.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use super::cloud::{PointCloud, Vec3};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CloudFormat {
    PlyAscii,
    XyzText,
}

impl CloudFormat {
    /// Guesses the format from a file extension (`.ply` or anything else as xyz).
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("ply") => CloudFormat::PlyAscii,
            _ => CloudFormat::XyzText,
        }
    }
}

impl FromStr for CloudFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ply" | "ply-ascii" => Ok(CloudFormat::PlyAscii),
            "xyz" | "xyz-text" => Ok(CloudFormat::XyzText),
            other => Err(Error::InvalidArgument(format!("unknown cloud format {other:?}"))),
        }
    }
}

pub fn load_cloud(path: impl AsRef<Path>, format: CloudFormat) -> Result<PointCloud> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    match format {
        CloudFormat::PlyAscii => parse_ply_ascii(&text),
        CloudFormat::XyzText => parse_xyz(&text),
    }
}

/// Loads a cloud, picking the format from the file extension.
pub fn load_cloud_auto(path: impl AsRef<Path>) -> Result<PointCloud> {
    let path = path.as_ref();
    load_cloud(path, CloudFormat::from_path(path))
}

fn parse_err(line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        message: message.into(),
    }
}

fn parse_coord(token: &str, line: usize) -> Result<f64> {
    let v: f64 = token
        .parse()
        .map_err(|_| parse_err(line, format!("invalid number {token:?}")))?;
    if !v.is_finite() {
        return Err(parse_err(line, format!("non-finite coordinate {token:?}")));
    }
    Ok(v)
}

fn finish(points: Vec<Vec3>, normals: Vec<Vec3>, has_normals: bool, last_line: usize) -> Result<PointCloud> {
    if points.is_empty() {
        return Err(parse_err(last_line, "empty cloud"));
    }
    if has_normals {
        PointCloud::with_normals(points, normals).map_err(|e| parse_err(last_line, e.to_string()))
    } else {
        Ok(PointCloud::new(points))
    }
}

/// Parses xyz text: `x y z` per line with optional `nx ny nz`; `#` starts a comment.
pub fn parse_xyz(text: &str) -> Result<PointCloud> {
    let mut points = Vec::new();
    let mut normals = Vec::new();
    let mut columns = None;
    let mut last_line = 0;
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        last_line = line_no;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let values = line
            .split_whitespace()
            .map(|t| parse_coord(t, line_no))
            .collect::<Result<Vec<_>>>()?;
        if values.len() != 3 && values.len() != 6 {
            return Err(parse_err(
                line_no,
                format!("expected 3 or 6 columns, found {}", values.len()),
            ));
        }
        match columns {
            None => columns = Some(values.len()),
            Some(c) if c != values.len() => {
                return Err(parse_err(line_no, "inconsistent column count"));
            }
            _ => {}
        }
        points.push(Vec3::new(values[0], values[1], values[2]));
        if values.len() == 6 {
            normals.push(Vec3::new(values[3], values[4], values[5]));
        }
    }
    finish(points, normals, columns == Some(6), last_line)
}

#[derive(Debug)]
struct PlyElement {
    name: String,
    count: usize,
    properties: Vec<String>,
    has_list: bool,
}

const PLY_SCALAR_TYPES: &[&str] = &[
    "char", "uchar", "short", "ushort", "int", "uint", "float", "double", "int8", "uint8",
    "int16", "uint16", "int32", "uint32", "float32", "float64",
];

/// Parses an ASCII PLY file, reading `x y z` and optional `nx ny nz` from the vertex element.
pub fn parse_ply_ascii(text: &str) -> Result<PointCloud> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
    match lines.next() {
        Some((_, "ply")) => {}
        Some((n, _)) => return Err(parse_err(n, "missing 'ply' magic")),
        None => return Err(parse_err(1, "empty file")),
    }

    let mut elements: Vec<PlyElement> = Vec::new();
    let mut saw_format = false;
    let mut header_end = None;
    for (n, line) in lines.by_ref() {
        let mut tok = line.split_whitespace();
        match tok.next() {
            Some("format") => {
                if tok.next() != Some("ascii") {
                    return Err(parse_err(n, "only ascii PLY is supported"));
                }
                saw_format = true;
            }
            Some("comment") | Some("obj_info") | None => {}
            Some("element") => {
                let name = tok.next().ok_or_else(|| parse_err(n, "element without name"))?;
                let count = tok
                    .next()
                    .and_then(|c| c.parse().ok())
                    .ok_or_else(|| parse_err(n, "element without valid count"))?;
                elements.push(PlyElement {
                    name: name.to_string(),
                    count,
                    properties: Vec::new(),
                    has_list: false,
                });
            }
            Some("property") => {
                let element = elements
                    .last_mut()
                    .ok_or_else(|| parse_err(n, "property before any element"))?;
                let ty = tok.next().ok_or_else(|| parse_err(n, "property without type"))?;
                if ty == "list" {
                    element.has_list = true;
                    let name = tok.nth(2).ok_or_else(|| parse_err(n, "malformed list property"))?;
                    element.properties.push(name.to_string());
                } else {
                    if !PLY_SCALAR_TYPES.contains(&ty) {
                        return Err(parse_err(n, format!("unknown property type {ty:?}")));
                    }
                    let name = tok.next().ok_or_else(|| parse_err(n, "property without name"))?;
                    element.properties.push(name.to_string());
                }
            }
            Some("end_header") => {
                header_end = Some(n);
                break;
            }
            Some(other) => return Err(parse_err(n, format!("unexpected header keyword {other:?}"))),
        }
    }
    let header_end = header_end.ok_or_else(|| parse_err(1, "missing end_header"))?;
    if !saw_format {
        return Err(parse_err(header_end, "missing format line"));
    }

    let mut points = Vec::new();
    let mut normals = Vec::new();
    let mut has_normals = false;
    let mut last_line = header_end;
    let mut found_vertex = false;
    for element in &elements {
        if element.name != "vertex" {
            for _ in 0..element.count {
                let (n, _) = lines
                    .next()
                    .ok_or_else(|| parse_err(last_line + 1, format!("truncated {} element", element.name)))?;
                last_line = n;
            }
            continue;
        }
        found_vertex = true;
        if element.has_list {
            return Err(parse_err(header_end, "list properties on vertex are not supported"));
        }
        let col = |name: &str| element.properties.iter().position(|p| p == name);
        let (x, y, z) = match (col("x"), col("y"), col("z")) {
            (Some(x), Some(y), Some(z)) => (x, y, z),
            _ => return Err(parse_err(header_end, "vertex element lacks x, y, z")),
        };
        let normal_cols = match (col("nx"), col("ny"), col("nz")) {
            (Some(a), Some(b), Some(c)) => Some((a, b, c)),
            _ => None,
        };
        has_normals = normal_cols.is_some();
        for _ in 0..element.count {
            let (n, line) = lines
                .next()
                .ok_or_else(|| parse_err(last_line + 1, "truncated vertex element"))?;
            last_line = n;
            let values = line
                .split_whitespace()
                .map(|t| parse_coord(t, n))
                .collect::<Result<Vec<_>>>()?;
            if values.len() != element.properties.len() {
                return Err(parse_err(
                    n,
                    format!("expected {} values, found {}", element.properties.len(), values.len()),
                ));
            }
            points.push(Vec3::new(values[x], values[y], values[z]));
            if let Some((a, b, c)) = normal_cols {
                normals.push(Vec3::new(values[a], values[b], values[c]));
            }
        }
    }
    if !found_vertex {
        return Err(parse_err(header_end, "no vertex element"));
    }
    finish(points, normals, has_normals, last_line)
}

/// Serializes as ASCII PLY with 64-bit floats; values round-trip exactly.
pub fn to_ply_ascii(pc: &PointCloud) -> String {
    let mut out = String::with_capacity(64 + pc.len() * 60);
    out.push_str("ply\nformat ascii 1.0\n");
    let _ = writeln!(out, "element vertex {}", pc.len());
    out.push_str("property double x\nproperty double y\nproperty double z\n");
    if pc.normals().is_some() {
        out.push_str("property double nx\nproperty double ny\nproperty double nz\n");
    }
    out.push_str("end_header\n");
    for (i, p) in pc.points().iter().enumerate() {
        let _ = write!(out, "{} {} {}", p.x, p.y, p.z);
        if let Some(ns) = pc.normals() {
            let n = ns[i];
            let _ = write!(out, " {} {} {}", n.x, n.y, n.z);
        }
        out.push('\n');
    }
    out
}

pub fn to_xyz(pc: &PointCloud) -> String {
    let mut out = String::with_capacity(pc.len() * 40);
    for (i, p) in pc.points().iter().enumerate() {
        let _ = write!(out, "{} {} {}", p.x, p.y, p.z);
        if let Some(ns) = pc.normals() {
            let n = ns[i];
            let _ = write!(out, " {} {} {}", n.x, n.y, n.z);
        }
        out.push('\n');
    }
    out
}

pub fn save_cloud(path: impl AsRef<Path>, pc: &PointCloud, format: CloudFormat) -> Result<()> {
    let path = path.as_ref();
    let text = match format {
        CloudFormat::PlyAscii => to_ply_ascii(pc),
        CloudFormat::XyzText => to_xyz(pc),
    };
    fs::write(path, text).map_err(|e| Error::io(path, e))
}
