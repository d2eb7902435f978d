//! Plain-text field snapshots: a five-line header (`dim`, `cells`,
//! `spacing`, `components`, `name`) followed by row-major values, one cell
//! per line with the cell's components space-separated. Values are written
//! with 17 significant digits.

use crate::grid::{GridSpec, ScalarField, VectorField};
use std::fs;
use std::io::Write;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SnapshotError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("snapshot parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("snapshot shape mismatch: {0}")]
    Shape(String),
}

/// Raw snapshot contents before binding to a grid.
#[derive(Debug, Clone)]
pub struct Snapshot {
    pub dim: usize,
    pub cells: Vec<usize>,
    pub spacing: Vec<f64>,
    pub components: usize,
    pub name: String,
    /// Cell-major values: `components` numbers per cell, cells row-major.
    pub values: Vec<f64>,
}

fn write_snapshot(
    path: &Path,
    grid: &GridSpec,
    components: usize,
    name: &str,
    cell_value: impl Fn(usize, usize) -> f64,
) -> Result<(), SnapshotError> {
    let mut out = String::new();
    out.push_str(&format!("dim {}\n", grid.dim()));
    out.push_str("cells");
    for a in 0..grid.dim() {
        out.push_str(&format!(" {}", grid.cells(a)));
    }
    out.push('\n');
    out.push_str("spacing");
    for a in 0..grid.dim() {
        out.push_str(&format!(" {:.17e}", grid.spacing(a)));
    }
    out.push('\n');
    out.push_str(&format!("components {components}\n"));
    out.push_str(&format!("name {name}\n"));
    for idx in 0..grid.cell_count() {
        for comp in 0..components {
            if comp > 0 {
                out.push(' ');
            }
            out.push_str(&format!("{:.17e}", cell_value(idx, comp)));
        }
        out.push('\n');
    }
    let mut file = fs::File::create(path)?;
    file.write_all(out.as_bytes())?;
    Ok(())
}

pub fn write_scalar(path: &Path, field: &ScalarField, name: &str) -> Result<(), SnapshotError> {
    write_snapshot(path, &field.grid, 1, name, |idx, _| field.data[idx])
}

pub fn write_vector(path: &Path, field: &VectorField, name: &str) -> Result<(), SnapshotError> {
    let grid = field.grid;
    write_snapshot(path, &grid, grid.dim(), name, |idx, comp| field.component(comp)[idx])
}

pub fn read_snapshot(path: &Path) -> Result<Snapshot, SnapshotError> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines().enumerate();
    let mut header = |key: &str| -> Result<(usize, Vec<String>), SnapshotError> {
        let (n, line) = lines
            .next()
            .ok_or_else(|| SnapshotError::Parse { line: 0, msg: format!("missing {key}") })?;
        let mut parts = line.split_whitespace();
        let head = parts.next().unwrap_or("");
        if head != key {
            return Err(SnapshotError::Parse {
                line: n + 1,
                msg: format!("expected `{key}`, found `{head}`"),
            });
        }
        Ok((n + 1, parts.map(str::to_string).collect()))
    };

    let (line, dims) = header("dim")?;
    let dim: usize = dims
        .first()
        .and_then(|s| s.parse().ok())
        .ok_or(SnapshotError::Parse { line, msg: "bad dim".into() })?;
    let (line, cells_s) = header("cells")?;
    let cells: Vec<usize> = cells_s
        .iter()
        .map(|s| s.parse().map_err(|_| SnapshotError::Parse { line, msg: "bad cells".into() }))
        .collect::<Result<_, _>>()?;
    let (line, spacing_s) = header("spacing")?;
    let spacing: Vec<f64> = spacing_s
        .iter()
        .map(|s| s.parse().map_err(|_| SnapshotError::Parse { line, msg: "bad spacing".into() }))
        .collect::<Result<_, _>>()?;
    let (line, comp_s) = header("components")?;
    let components: usize = comp_s
        .first()
        .and_then(|s| s.parse().ok())
        .ok_or(SnapshotError::Parse { line, msg: "bad components".into() })?;
    let (_, name_s) = header("name")?;
    let name = name_s.join(" ");

    let mut values = Vec::new();
    for (n, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        for tok in line.split_whitespace() {
            values.push(tok.parse().map_err(|_| SnapshotError::Parse {
                line: n + 1,
                msg: format!("bad value `{tok}`"),
            })?);
        }
    }
    let expect: usize = cells.iter().product::<usize>() * components;
    if values.len() != expect {
        return Err(SnapshotError::Shape(format!(
            "expected {expect} values, found {}",
            values.len()
        )));
    }
    Ok(Snapshot { dim, cells, spacing, components, name, values })
}

impl Snapshot {
    fn check_grid(&self, grid: &GridSpec) -> Result<(), SnapshotError> {
        if self.dim != grid.dim() {
            return Err(SnapshotError::Shape(format!(
                "snapshot dim {} vs grid dim {}",
                self.dim,
                grid.dim()
            )));
        }
        for a in 0..grid.dim() {
            if self.cells[a] != grid.cells(a) {
                return Err(SnapshotError::Shape(format!(
                    "axis {a}: snapshot cells {} vs grid {}",
                    self.cells[a],
                    grid.cells(a)
                )));
            }
        }
        Ok(())
    }

    pub fn into_scalar(self, grid: &GridSpec) -> Result<ScalarField, SnapshotError> {
        self.check_grid(grid)?;
        if self.components != 1 {
            return Err(SnapshotError::Shape(format!(
                "expected scalar snapshot, found {} components",
                self.components
            )));
        }
        Ok(ScalarField { grid: *grid, data: self.values })
    }

    pub fn into_vector(self, grid: &GridSpec) -> Result<VectorField, SnapshotError> {
        self.check_grid(grid)?;
        if self.components != grid.dim() {
            return Err(SnapshotError::Shape(format!(
                "expected {} components, found {}",
                grid.dim(),
                self.components
            )));
        }
        // cell-major file layout to component planes
        let n = grid.cell_count();
        let comps = self.components;
        let mut data = vec![0.0; n * comps];
        for idx in 0..n {
            for comp in 0..comps {
                data[comp * n + idx] = self.values[idx * comps + comp];
            }
        }
        Ok(VectorField { grid: *grid, data })
    }
}
