//! Plain-text interchange: measurement tables in, map tables out.
//!
//! Both formats are comma-separated with a fixed header line. Floats are
//! written in shortest round-trip form, so save followed by load reproduces
//! every value exactly. Parse errors carry 1-based line numbers.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use ndarray::Array2;

use crate::data::{LatticeSpec, MapTable, TrainingSet};
use crate::error::{Error, Result};

pub const MEASUREMENT_HEADER: &str = "x,y,z,Bx,By,Bz";
pub const MAP_TABLE_HEADER: &str = "x,y,z,mean_x,mean_y,mean_z,var_x,var_y,var_z,magnitude";

/// Split a table body into (line number, fields) rows, enforcing the header
/// on the first non-blank line and a fixed field count everywhere else.
fn table_rows<'a>(
    text: &'a str,
    header: &str,
    fields: usize,
) -> Result<Vec<(usize, Vec<&'a str>)>> {
    let mut rows = Vec::new();
    let mut seen_header = false;
    for (idx, line) in text.lines().enumerate() {
        let lineno = idx + 1;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if !seen_header {
            if line != header {
                return Err(Error::Data(format!(
                    "line {lineno}: expected header '{header}'"
                )));
            }
            seen_header = true;
            continue;
        }
        let split: Vec<&str> = line.split(',').collect();
        if split.len() != fields {
            return Err(Error::Data(format!(
                "line {lineno}: expected {fields} comma-separated values, got {}",
                split.len()
            )));
        }
        rows.push((lineno, split));
    }
    if !seen_header {
        return Err(Error::Data(format!("missing header '{header}'")));
    }
    Ok(rows)
}

fn parse_field(lineno: usize, name: &str, text: &str) -> Result<f64> {
    let value: f64 = text.trim().parse().map_err(|_| {
        Error::Data(format!(
            "line {lineno}: {name} '{}' is not a number",
            text.trim()
        ))
    })?;
    if !value.is_finite() {
        return Err(Error::Data(format!(
            "line {lineno}: {name} must be finite, got {value}"
        )));
    }
    Ok(value)
}

/// Parse measurement CSV text: the header, then one `x,y,z,Bx,By,Bz` row
/// per measurement. Component means are subtracted on construction.
pub fn parse_measurements(text: &str) -> Result<TrainingSet> {
    let rows = table_rows(text, MEASUREMENT_HEADER, 6)?;
    if rows.is_empty() {
        return Err(Error::Data("no measurement rows after the header".into()));
    }
    let names = ["x", "y", "z", "Bx", "By", "Bz"];
    let mut positions = Array2::zeros((rows.len(), 3));
    let mut raw = Array2::zeros((rows.len(), 3));
    for (r, (lineno, fields)) in rows.iter().enumerate() {
        for (c, field) in fields.iter().enumerate() {
            let value = parse_field(*lineno, names[c], field)?;
            if c < 3 {
                positions[[r, c]] = value;
            } else {
                raw[[r, c - 3]] = value;
            }
        }
    }
    TrainingSet::from_raw(positions, raw)
}

pub fn load_measurements(path: impl AsRef<Path>) -> Result<TrainingSet> {
    parse_measurements(&fs::read_to_string(path)?)
}

/// Format as measurement CSV. Rows hold the raw measurements (component
/// means added back), so loading the output reproduces the set.
pub fn format_measurements(data: &TrainingSet) -> String {
    let raw = data.raw_measurements();
    let mut out = String::with_capacity(32 * (data.len() + 1));
    out.push_str(MEASUREMENT_HEADER);
    out.push('\n');
    for (pos, b) in data.positions.rows().into_iter().zip(raw.rows()) {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            pos[0], pos[1], pos[2], b[0], b[1], b[2]
        );
    }
    out
}

pub fn save_measurements(path: impl AsRef<Path>, data: &TrainingSet) -> Result<()> {
    Ok(fs::write(path, format_measurements(data))?)
}

/// Recover the lattice behind a list of node coordinates laid out in linear
/// node order (last dimension fastest). Counts come from run lengths of the
/// slower coordinates; every row is then checked against the reconstruction.
fn infer_lattice(coords: &Array2<f64>) -> Result<LatticeSpec> {
    let m = coords.nrows();
    debug_assert!(m > 0);
    // Coordinates written by `format_map_table` round-trip exactly, so rows
    // of one z-run agree bitwise in x and y.
    let mut n3 = 1;
    while n3 < m && coords[[n3, 0]] == coords[[0, 0]] && coords[[n3, 1]] == coords[[0, 1]] {
        n3 += 1;
    }
    if !m.is_multiple_of(n3) {
        return Err(Error::Data(
            "rows do not form a regular lattice (ragged z runs)".into(),
        ));
    }
    let blocks = m / n3;
    let mut n2 = 1;
    while n2 < blocks && coords[[n2 * n3, 0]] == coords[[0, 0]] {
        n2 += 1;
    }
    if !blocks.is_multiple_of(n2) {
        return Err(Error::Data(
            "rows do not form a regular lattice (ragged y runs)".into(),
        ));
    }
    let n1 = blocks / n2;
    let counts = [n1, n2, n3];
    let lower = [coords[[0, 0]], coords[[0, 1]], coords[[0, 2]]];
    let steps = [n2 * n3, n3, 1];
    let mut spacing = [0.0; 3];
    for d in 0..3 {
        if counts[d] > 1 {
            spacing[d] = coords[[steps[d], d]] - lower[d];
            if spacing[d] <= 0.0 {
                return Err(Error::Data(format!(
                    "lattice coordinates must increase along dimension {d}"
                )));
            }
        }
    }
    let lattice = LatticeSpec {
        lower,
        spacing,
        counts,
    };
    for i1 in 0..n1 {
        for i2 in 0..n2 {
            for i3 in 0..n3 {
                let row = lattice.linear_index([i1, i2, i3]);
                let node = lattice.node_position([i1, i2, i3]);
                for d in 0..3 {
                    let got = coords[[row, d]];
                    if (got - node[d]).abs() > 1e-9 * node[d].abs().max(1.0) {
                        return Err(Error::Data(format!(
                            "row {} does not lie on the inferred lattice",
                            row + 1
                        )));
                    }
                }
            }
        }
    }
    Ok(lattice)
}

/// Parse map-table text: the header, then one
/// `x,y,z,mean_x,mean_y,mean_z,var_x,var_y,var_z,magnitude` row per lattice
/// node in linear node order. The lattice is inferred from the coordinates.
pub fn parse_map_table(text: &str) -> Result<MapTable> {
    let rows = table_rows(text, MAP_TABLE_HEADER, 10)?;
    if rows.is_empty() {
        return Err(Error::Data("no table rows after the header".into()));
    }
    let names = [
        "x",
        "y",
        "z",
        "mean_x",
        "mean_y",
        "mean_z",
        "var_x",
        "var_y",
        "var_z",
        "magnitude",
    ];
    let m = rows.len();
    let mut coords = Array2::zeros((m, 3));
    let mut means = Array2::zeros((m, 3));
    let mut variance_diag = Array2::zeros((m, 3));
    let mut magnitude = vec![0.0; m];
    for (r, (lineno, fields)) in rows.iter().enumerate() {
        for (c, field) in fields.iter().enumerate() {
            let value = parse_field(*lineno, names[c], field)?;
            match c {
                0..=2 => coords[[r, c]] = value,
                3..=5 => means[[r, c - 3]] = value,
                6..=8 => {
                    if value < 0.0 {
                        return Err(Error::Data(format!(
                            "line {lineno}: negative variance {value}"
                        )));
                    }
                    variance_diag[[r, c - 6]] = value;
                }
                _ => magnitude[r] = value,
            }
        }
    }
    let lattice = infer_lattice(&coords)?;
    MapTable::new(lattice, means, variance_diag, magnitude)
}

pub fn load_map_table(path: impl AsRef<Path>) -> Result<MapTable> {
    parse_map_table(&fs::read_to_string(path)?)
}

pub fn format_map_table(table: &MapTable) -> String {
    let lattice = &table.lattice;
    let mut out = String::with_capacity(64 * (table.magnitude.len() + 1));
    out.push_str(MAP_TABLE_HEADER);
    out.push('\n');
    for i1 in 0..lattice.counts[0] {
        for i2 in 0..lattice.counts[1] {
            for i3 in 0..lattice.counts[2] {
                let row = lattice.linear_index([i1, i2, i3]);
                let p = lattice.node_position([i1, i2, i3]);
                let mean = table.means.row(row);
                let var = table.variance_diag.row(row);
                let _ = writeln!(
                    out,
                    "{},{},{},{},{},{},{},{},{},{}",
                    p[0],
                    p[1],
                    p[2],
                    mean[0],
                    mean[1],
                    mean[2],
                    var[0],
                    var[1],
                    var[2],
                    table.magnitude[row]
                );
            }
        }
    }
    out
}

pub fn save_map_table(path: impl AsRef<Path>, table: &MapTable) -> Result<()> {
    Ok(fs::write(path, format_map_table(table))?)
}
