//! Text serialization for point sets.
//!
//! Layout: a header line `d=<dim> n=<count> classes=<k>`, then one line per
//! point holding the class id followed by `d` reals printed with 17
//! significant digits, so a parse/print cycle is byte-stable and values
//! survive exactly.

use std::path::Path;

use sdot_flow::{Dataset, Error, Result};

/// An in-memory point file: flat row-major coordinates plus one class id
/// per point. `classes` is the number of distinct class labels allowed
/// (every id is strictly below it).
#[derive(Debug, Clone, PartialEq)]
pub struct PointFile {
    pub dim: usize,
    pub classes: u32,
    pub points: Vec<f64>,
    pub class_ids: Vec<u32>,
}

impl PointFile {
    pub fn new(dim: usize, points: Vec<f64>, class_ids: Vec<u32>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("point dimension must be at least 1"));
        }
        if points.len() != class_ids.len() * dim {
            return Err(Error::DimensionMismatch {
                expected: class_ids.len() * dim,
                got: points.len(),
            });
        }
        if let Some(v) = points.iter().find(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("point coordinate {v}")));
        }
        let classes = class_ids.iter().max().map_or(1, |&m| m + 1);
        Ok(PointFile {
            dim,
            classes,
            points,
            class_ids,
        })
    }

    pub fn len(&self) -> usize {
        self.class_ids.len()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    /// A uniformly weighted dataset over these points.
    pub fn to_dataset(&self) -> Result<Dataset> {
        Dataset::new(
            self.dim,
            self.points.clone(),
            None,
            Some(self.class_ids.clone()),
        )
    }
}

pub fn write_points(path: &Path, file: &PointFile) -> Result<()> {
    let mut out = String::new();
    out.push_str(&format!(
        "d={} n={} classes={}\n",
        file.dim,
        file.len(),
        file.classes
    ));
    for i in 0..file.len() {
        out.push_str(&file.class_ids[i].to_string());
        for v in file.point(i) {
            out.push_str(&format!(" {v:.16e}"));
        }
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn read_points(path: &Path) -> Result<PointFile> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    let fail = |line: usize, what: String| Error::Format {
        path: path.to_path_buf(),
        offset: line as u64,
        what: format!("line {line}: {what}"),
    };

    let header = lines.next().ok_or_else(|| fail(1, "missing header".into()))?;
    let mut fields = header.split_whitespace();
    let mut header_num = |prefix: &str| -> Result<u64> {
        let field = fields
            .next()
            .ok_or_else(|| fail(1, format!("header is missing the {prefix}<value> field")))?;
        field
            .strip_prefix(prefix)
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| fail(1, format!("expected {prefix}<integer>, got {field:?}")))
    };
    let dim = header_num("d=")? as usize;
    let n = header_num("n=")? as usize;
    let classes = header_num("classes=")? as u32;
    if dim == 0 || classes == 0 {
        return Err(fail(1, "d and classes must be at least 1".into()));
    }

    let mut points = Vec::with_capacity(n * dim);
    let mut class_ids = Vec::with_capacity(n);
    for row in 0..n {
        let lineno = row + 2;
        let line = lines
            .next()
            .ok_or_else(|| fail(lineno, format!("expected {n} point lines, found {row}")))?;
        let mut parts = line.split_whitespace();
        let class: u32 = parts
            .next()
            .and_then(|c| c.parse().ok())
            .ok_or_else(|| fail(lineno, "expected a class id".into()))?;
        if class >= classes {
            return Err(fail(
                lineno,
                format!("class id {class} exceeds declared classes={classes}"),
            ));
        }
        class_ids.push(class);
        for k in 0..dim {
            let v: f64 = parts
                .next()
                .and_then(|c| c.parse().ok())
                .ok_or_else(|| fail(lineno, format!("expected coordinate {k}")))?;
            if !v.is_finite() {
                return Err(fail(lineno, format!("coordinate {k} is not finite")));
            }
            points.push(v);
        }
        if parts.next().is_some() {
            return Err(fail(lineno, format!("expected {} fields", dim + 1)));
        }
    }
    if let Some(extra) = lines.find(|l| !l.trim().is_empty()) {
        return Err(fail(n + 2, format!("unexpected trailing line {extra:?}")));
    }

    Ok(PointFile {
        dim,
        classes,
        points,
        class_ids,
    })
}
