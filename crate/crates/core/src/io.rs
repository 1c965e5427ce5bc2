//! Text formats: field CSV (`t,x[,y],value`), policy CSV, compact JSON arrays.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::{Field, Grid};
use crate::scalar::{Point, Real};

/// Rows of a field CSV: `(t, x, value)`.
#[derive(Clone, Debug, PartialEq)]
pub struct FieldRecords<S> {
    pub dim: usize,
    pub rows: Vec<(S, Point<S>, S)>,
}

fn header(dim: usize, value: &str) -> String {
    if dim == 1 {
        format!("t,x,{value}\n")
    } else {
        format!("t,x,y,{value}\n")
    }
}

/// CSV of node values; `{}` formatting of floats round-trips exactly.
pub fn grid_values_csv<S: Real, V: std::fmt::Display>(
    grid: &Grid<S>,
    value_name: &str,
    levels: usize,
    value: impl Fn(usize, usize) -> V,
) -> String {
    let mut out = header(grid.dim(), value_name);
    for n in 0..levels {
        let t = grid.time(n);
        for j in 0..grid.space_len() {
            let x = grid.point(j);
            if grid.dim() == 1 {
                let _ = writeln!(out, "{t},{},{}", x[0], value(n, j));
            } else {
                let _ = writeln!(out, "{t},{},{},{}", x[0], x[1], value(n, j));
            }
        }
    }
    out
}

pub fn field_to_csv<S: Real>(field: &Field<S>) -> String {
    let g = field.grid();
    grid_values_csv(g, "value", g.time_levels(), |n, j| field.at(n, j))
}

#[derive(Serialize)]
struct FieldJson<'a, S> {
    kind: String,
    dim: usize,
    t: Vec<S>,
    x: Vec<Vec<S>>,
    /// One row per time level, nodes in flat order (axis 0 fastest).
    values: Vec<&'a [S]>,
}

pub fn field_to_json<S: Real>(field: &Field<S>) -> Result<String> {
    let g = field.grid();
    let doc = FieldJson {
        kind: g.kind().to_string(),
        dim: g.dim(),
        t: (0..g.time_levels()).map(|n| g.time(n)).collect(),
        x: (0..g.dim())
            .map(|a| (0..g.nx(a)).map(|i| g.coord(a, i)).collect())
            .collect(),
        values: (0..g.time_levels()).map(|n| field.level(n)).collect(),
    };
    Ok(serde_json::to_string(&doc)?)
}

pub fn parse_field_csv<S: Real>(text: &str, origin: &str) -> Result<FieldRecords<S>> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, head) = lines.next().ok_or_else(|| Error::Parse {
        path: origin.to_string(),
        message: "empty file".into(),
    })?;
    let cols: Vec<&str> = head.split(',').map(str::trim).collect();
    let dim = match cols.as_slice() {
        ["t", "x", _] => 1,
        ["t", "x", "y", _] => 2,
        _ => {
            return Err(Error::Parse {
                path: format!("{origin}:1"),
                message: format!("expected header `t,x[,y],value`, got `{head}`"),
            })
        }
    };
    let mut rows = Vec::new();
    for (lineno, line) in lines {
        let parsed: std::result::Result<Vec<f64>, _> =
            line.split(',').map(|c| c.trim().parse::<f64>()).collect();
        let vals = parsed.map_err(|e| Error::Parse {
            path: format!("{origin}:{}", lineno + 1),
            message: e.to_string(),
        })?;
        if vals.len() != dim + 2 {
            return Err(Error::Parse {
                path: format!("{origin}:{}", lineno + 1),
                message: format!("expected {} columns, got {}", dim + 2, vals.len()),
            });
        }
        let mut x = [S::zero(); 2];
        for a in 0..dim {
            x[a] = S::lit(vals[1 + a]);
        }
        rows.push((S::lit(vals[0]), x, S::lit(vals[dim + 1])));
    }
    Ok(FieldRecords { dim, rows })
}

pub fn read_field_csv<S: Real>(path: &Path) -> Result<FieldRecords<S>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_field_csv(&text, &path.display().to_string())
}

/// Rebuilds a field on `grid` from its CSV; every node must be present in grid order.
pub fn field_from_csv<S: Real>(grid: &Grid<S>, text: &str) -> Result<Field<S>> {
    let recs = parse_field_csv::<S>(text, "<field>")?;
    if recs.dim != grid.dim() {
        return Err(Error::ShapeMismatch("CSV dimension differs from grid".into()));
    }
    Field::from_values(grid, recs.rows.into_iter().map(|r| r.2).collect())
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}
