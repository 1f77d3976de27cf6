//! Text serialization.
//!
//! Grid measures: a header line
//! `grid d=<dim> shape=<k1,...> box=<lo1,hi1;...>` followed by one density
//! value per line in row-major order. Particle measures: CSV rows
//! `x1,...,xd,w` under a `x1,...,xd,w` header line.

use std::fmt::Write as _;

use super::{Bounds, Grid, GridMeasure, ParticleMeasure};
use crate::error::{Error, Result};

fn join(values: impl IntoIterator<Item = String>, sep: &str) -> String {
    values.into_iter().collect::<Vec<_>>().join(sep)
}

pub fn grid_header(grid: &Grid) -> String {
    let b = grid.bounds();
    format!(
        "grid d={} shape={} box={}",
        grid.dim(),
        join(grid.shape().iter().map(|k| k.to_string()), ","),
        join(
            b.lower().iter().zip(b.upper()).map(|(lo, hi)| format!("{lo},{hi}")),
            ";"
        )
    )
}

pub fn write_grid(m: &GridMeasure) -> String {
    let mut out = grid_header(m.grid());
    out.push('\n');
    for v in m.values() {
        writeln!(out, "{v}").expect("writing to a String cannot fail");
    }
    out
}

fn parse_f64(s: &str) -> Result<f64> {
    s.trim()
        .parse::<f64>()
        .map_err(|_| Error::Parse(format!("not a number: {s:?}")))
}

pub fn parse_grid_header(line: &str) -> Result<Grid> {
    let mut fields = line.split_whitespace();
    if fields.next() != Some("grid") {
        return Err(Error::Parse("grid header must start with `grid`".into()));
    }
    let (mut dim, mut shape, mut bounds) = (None, None, None);
    for f in fields {
        let (key, value) = f
            .split_once('=')
            .ok_or_else(|| Error::Parse(format!("malformed header field {f:?}")))?;
        match key {
            "d" => dim = Some(value.parse::<usize>().map_err(|_| Error::Parse(format!("bad d={value}")))?),
            "shape" => {
                shape = Some(
                    value
                        .split(',')
                        .map(|k| k.parse::<usize>().map_err(|_| Error::Parse(format!("bad shape entry {k:?}"))))
                        .collect::<Result<Vec<_>>>()?,
                )
            }
            "box" => {
                let mut lower = Vec::new();
                let mut upper = Vec::new();
                for axis in value.split(';') {
                    let (lo, hi) = axis
                        .split_once(',')
                        .ok_or_else(|| Error::Parse(format!("bad box axis {axis:?}")))?;
                    lower.push(parse_f64(lo)?);
                    upper.push(parse_f64(hi)?);
                }
                bounds = Some(Bounds::new(lower, upper)?);
            }
            other => return Err(Error::Parse(format!("unknown header field {other:?}"))),
        }
    }
    let dim = dim.ok_or_else(|| Error::Parse("missing d=".into()))?;
    let shape = shape.ok_or_else(|| Error::Parse("missing shape=".into()))?;
    let bounds = bounds.ok_or_else(|| Error::Parse("missing box=".into()))?;
    if shape.len() != dim || bounds.dim() != dim {
        return Err(Error::Parse(format!("header declares d={dim} but shape/box disagree")));
    }
    Grid::new(bounds, shape)
}

/// Reads the grid text format. The mask is not serialized; every cell is
/// treated as part of the domain on reload.
pub fn read_grid(text: &str) -> Result<GridMeasure> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines.next().ok_or_else(|| Error::Parse("empty grid file".into()))?;
    let grid = parse_grid_header(header)?;
    let values = lines.map(parse_f64).collect::<Result<Vec<_>>>()?;
    if values.len() != grid.len() {
        return Err(Error::Parse(format!(
            "grid declares {} cells but the file has {} values",
            grid.len(),
            values.len()
        )));
    }
    let n = grid.len();
    GridMeasure::new(grid, values, vec![true; n])
}

pub fn write_particles(m: &ParticleMeasure) -> String {
    let mut out = String::new();
    let header: Vec<String> = (1..=m.dim()).map(|i| format!("x{i}")).chain(["w".to_string()]).collect();
    out.push_str(&header.join(","));
    out.push('\n');
    for (x, w) in m.iter() {
        for v in x {
            write!(out, "{v},").expect("writing to a String cannot fail");
        }
        writeln!(out, "{w}").expect("writing to a String cannot fail");
    }
    out
}

/// Reads particle CSV; a header line is optional.
pub fn read_particles(text: &str) -> Result<ParticleMeasure> {
    let mut dim = None;
    let mut coords = Vec::new();
    let mut weights = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if lineno == 0 && line.starts_with('x') {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() < 2 {
            return Err(Error::Parse(format!("line {}: need at least one coordinate and a weight", lineno + 1)));
        }
        let d = fields.len() - 1;
        match dim {
            None => dim = Some(d),
            Some(expected) if expected != d => {
                return Err(Error::Parse(format!(
                    "line {}: expected {expected} coordinates, found {d}",
                    lineno + 1
                )))
            }
            _ => {}
        }
        for f in &fields[..d] {
            coords.push(parse_f64(f)?);
        }
        weights.push(parse_f64(fields[d])?);
    }
    let dim = dim.ok_or_else(|| Error::Parse("particle file has no rows".into()))?;
    ParticleMeasure::from_flat(dim, coords, weights)
}
