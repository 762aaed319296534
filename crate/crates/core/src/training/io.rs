//! Plain-text point cloud, label and manifest files.
//!
//! Point cloud: one point per line, `x y z [r g b] [label]`, whitespace
//! separated, `#` starts a comment. Every data line must have the same column
//! count (3, 4, 6 or 7). Colors above 1 mark the file as 0-255 and are rescaled.
//!
//! Label file: one integer per line.
//!
//! Manifest: `path<TAB>label[<TAB>split]` where `label` is a class index
//! (classification), a label-file path, or `-` for labels stored in the cloud
//! file (segmentation). Relative paths resolve against the manifest directory.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::geometry::{Point3, PointCloud};

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            Error::MissingFile(path.to_path_buf())
        } else {
            Error::Io(e)
        }
    })
}

/// Data lines with comments stripped, paired with 1-based line numbers.
fn data_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines().enumerate().filter_map(|(i, line)| {
        let body = line.split('#').next().unwrap_or("").trim();
        (!body.is_empty()).then_some((i + 1, body))
    })
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

pub fn parse_point_cloud(text: &str, path: &Path) -> Result<PointCloud> {
    let mut points = Vec::new();
    let mut colors = Vec::new();
    let mut labels = Vec::new();
    let mut width = None;
    for (ln, body) in data_lines(text) {
        let fields: Vec<&str> = body.split_whitespace().collect();
        let w = *width.get_or_insert(fields.len());
        if fields.len() != w {
            return Err(parse_err(path, ln, format!("expected {w} columns, found {}", fields.len())));
        }
        if !matches!(w, 3 | 4 | 6 | 7) {
            return Err(parse_err(path, ln, format!("unsupported column count {w}")));
        }
        let num = |k: usize| -> Result<f64> {
            let v: f64 = fields[k]
                .parse()
                .map_err(|_| parse_err(path, ln, format!("invalid number '{}'", fields[k])))?;
            if !v.is_finite() {
                return Err(parse_err(path, ln, "non-finite coordinate"));
            }
            Ok(v)
        };
        points.push(Point3::new(num(0)?, num(1)?, num(2)?));
        if w >= 6 {
            colors.push([num(3)?, num(4)?, num(5)?]);
        }
        if w == 4 || w == 7 {
            let f = fields[w - 1];
            labels.push(
                f.parse::<usize>()
                    .map_err(|_| parse_err(path, ln, format!("invalid label '{f}'")))?,
            );
        }
    }
    if points.is_empty() {
        return Err(parse_err(path, 0, "no points"));
    }
    let mut cloud = PointCloud::new(points);
    if !colors.is_empty() {
        if colors.iter().flatten().any(|&c| c > 1.0) {
            for c in colors.iter_mut().flatten() {
                *c /= 255.0;
            }
        }
        cloud.colors = Some(colors);
    }
    if !labels.is_empty() {
        cloud.labels = Some(labels);
    }
    Ok(cloud)
}

pub fn read_point_cloud(path: &Path) -> Result<PointCloud> {
    parse_point_cloud(&read_text(path)?, path)
}

pub fn format_point_cloud(cloud: &PointCloud) -> String {
    let mut out = String::with_capacity(cloud.len() * 48);
    for (i, p) in cloud.points.iter().enumerate() {
        write!(out, "{} {} {}", p.x, p.y, p.z).unwrap();
        if let Some(c) = &cloud.colors {
            write!(out, " {} {} {}", c[i][0], c[i][1], c[i][2]).unwrap();
        }
        if let Some(l) = &cloud.labels {
            write!(out, " {}", l[i]).unwrap();
        }
        out.push('\n');
    }
    out
}

pub fn write_point_cloud(path: &Path, cloud: &PointCloud) -> Result<()> {
    fs::write(path, format_point_cloud(cloud))?;
    Ok(())
}

pub fn read_labels(path: &Path) -> Result<Vec<usize>> {
    let text = read_text(path)?;
    data_lines(&text)
        .map(|(ln, body)| {
            body.parse::<usize>()
                .map_err(|_| parse_err(path, ln, format!("invalid label '{body}'")))
        })
        .collect()
}

pub fn write_labels(path: &Path, labels: &[usize]) -> Result<()> {
    let mut out = String::with_capacity(labels.len() * 3);
    for l in labels {
        writeln!(out, "{l}").unwrap();
    }
    fs::write(path, out)?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Split {
    #[default]
    Train,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LabelRef {
    Class(usize),
    File(PathBuf),
    Inline,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub cloud: PathBuf,
    pub label: LabelRef,
    pub split: Split,
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let text = read_text(path)?;
    let base = path.parent().unwrap_or(Path::new("."));
    let resolve = |p: &str| {
        let p = Path::new(p);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            base.join(p)
        }
    };
    let mut entries = Vec::new();
    for (ln, body) in data_lines(&text) {
        let cols: Vec<&str> = body.split('\t').map(str::trim).collect();
        if cols.len() < 2 || cols.len() > 3 {
            return Err(parse_err(path, ln, "expected path<TAB>label[<TAB>split]"));
        }
        let label = if cols[1] == "-" {
            LabelRef::Inline
        } else if let Ok(c) = cols[1].parse::<usize>() {
            LabelRef::Class(c)
        } else {
            LabelRef::File(resolve(cols[1]))
        };
        let split = match cols.get(2).copied() {
            None | Some("train") => Split::Train,
            Some("test") => Split::Test,
            Some(s) => return Err(parse_err(path, ln, format!("unknown split '{s}'"))),
        };
        entries.push(ManifestEntry {
            cloud: resolve(cols[0]),
            label,
            split,
        });
    }
    Ok(entries)
}

/// Writes entries with paths relative to `path`'s directory where possible.
pub fn write_manifest(path: &Path, entries: &[ManifestEntry]) -> Result<()> {
    let base = path.parent().unwrap_or(Path::new("."));
    let rel = |p: &Path| {
        p.strip_prefix(base)
            .unwrap_or(p)
            .to_string_lossy()
            .into_owned()
    };
    let mut out = String::new();
    for e in entries {
        let label = match &e.label {
            LabelRef::Class(c) => c.to_string(),
            LabelRef::File(p) => rel(p),
            LabelRef::Inline => "-".into(),
        };
        writeln!(out, "{}\t{}\t{}", rel(&e.cloud), label, e.split.as_str()).unwrap();
    }
    fs::write(path, out)?;
    Ok(())
}
