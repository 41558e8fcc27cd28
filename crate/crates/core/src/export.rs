//! Plain-text outputs: field CSV / legacy VTK, report and trajectory CSVs.
//!
//! Field CSV rows run z-major, then y, then x (x fastest), one row per cell
//! centre, every number written with 17 significant digits so that reading
//! the file back reproduces the field bit for bit.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::dep::CMSpectrum;
use crate::error::{Error, Result};
use crate::field::{ScalarField3, ScalarQuantity, VectorField3, VectorQuantity};
use crate::grid::Grid3;
use crate::metrics::{GapSweepReport, HeightDecayReport, UniformityReport};
use crate::particle::{Ensemble, Outcome, TrajectoryResult};

pub const SCALAR_HEADER: &str = "x_m,y_m,z_m,value";
pub const VECTOR_HEADER: &str = "x_m,y_m,z_m,value_x,value_y,value_z";

/// 17 significant digits.
fn num(v: f64) -> String {
    format!("{v:.16e}")
}

fn push_row(out: &mut String, cells: &[f64]) {
    for (n, v) in cells.iter().enumerate() {
        if n > 0 {
            out.push(',');
        }
        out.push_str(&num(*v));
    }
    out.push('\n');
}

pub fn scalar_csv(field: &ScalarField3<f64>) -> String {
    let g = &field.grid;
    let mut out = String::with_capacity(g.len() * 96);
    out.push_str(SCALAR_HEADER);
    out.push('\n');
    for (idx, v) in field.values.iter().enumerate() {
        let [i, j, k] = g.ijk(idx);
        let c = g.center(i, j, k);
        push_row(&mut out, &[c[0], c[1], c[2], *v]);
    }
    out
}

pub fn vector_csv(field: &VectorField3<f64>) -> String {
    let g = &field.grid;
    let mut out = String::with_capacity(g.len() * 144);
    out.push_str(VECTOR_HEADER);
    out.push('\n');
    for (idx, v) in field.values.iter().enumerate() {
        let [i, j, k] = g.ijk(idx);
        let c = g.center(i, j, k);
        push_row(&mut out, &[c[0], c[1], c[2], v[0], v[1], v[2]]);
    }
    out
}

/// Rows of a field CSV: coordinates and values.
fn read_rows(text: &str, header: &str, width: usize) -> Result<Vec<Vec<f64>>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == header => {}
        _ => return Err(Error::Parse { line: 1, message: format!("expected header `{header}`") }),
    }
    lines
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, l)| {
            let row = l
                .split(',')
                .map(|c| c.trim().parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::Parse { line: n + 1, message: e.to_string() })?;
            if row.len() != width {
                return Err(Error::Parse {
                    line: n + 1,
                    message: format!("expected {width} columns, found {}", row.len()),
                });
            }
            Ok(row)
        })
        .collect()
}

/// Grid implied by cell-centre coordinates in export order.
fn grid_from_rows(rows: &[Vec<f64>]) -> Result<Grid3<f64>> {
    let bad = |m: &str| Error::Parse { line: 0, message: m.to_string() };
    let first = rows.first().ok_or_else(|| bad("no data rows"))?;
    let nx = rows.iter().take_while(|r| r[1] == first[1] && r[2] == first[2]).count();
    let nxy = rows.iter().take_while(|r| r[2] == first[2]).count();
    if nx < 2 || nxy % nx != 0 || !rows.len().is_multiple_of(nxy) {
        return Err(bad("rows do not form a structured grid"));
    }
    let ny = nxy / nx;
    let nz = rows.len() / nxy;
    if ny < 2 || nz < 2 {
        return Err(bad("rows do not form a structured grid"));
    }
    let h = [rows[1][0] - first[0], rows[nx][1] - first[1], rows[nxy][2] - first[2]];
    let origin = [first[0] - h[0] / 2.0, first[1] - h[1] / 2.0, first[2] - h[2] / 2.0];
    let g = Grid3::new([nx, ny, nz], h, origin)?;
    for (idx, r) in rows.iter().enumerate() {
        let [i, j, k] = g.ijk(idx);
        let c = g.center(i, j, k);
        if (0..3).any(|a| (c[a] - r[a]).abs() > 1e-6 * h[a]) {
            return Err(Error::Parse { line: idx + 2, message: "coordinates are not in export order".into() });
        }
    }
    Ok(g)
}

pub fn read_scalar_csv(text: &str, quantity: ScalarQuantity) -> Result<ScalarField3<f64>> {
    let rows = read_rows(text, SCALAR_HEADER, 4)?;
    let grid = grid_from_rows(&rows)?;
    ScalarField3::new(grid, rows.iter().map(|r| r[3]).collect(), quantity)
}

pub fn read_vector_csv(text: &str, quantity: VectorQuantity) -> Result<VectorField3<f64>> {
    let rows = read_rows(text, VECTOR_HEADER, 6)?;
    let grid = grid_from_rows(&rows)?;
    VectorField3::new(grid, rows.iter().map(|r| [r[3], r[4], r[5]]).collect(), quantity)
}

fn vtk_header(g: &Grid3<f64>, title: &str) -> String {
    let c = g.center(0, 0, 0);
    format!(
        "# vtk DataFile Version 3.0\n{title}\nASCII\nDATASET STRUCTURED_POINTS\nDIMENSIONS {} {} {}\nORIGIN {} {} {}\nSPACING {} {} {}\nPOINT_DATA {}\n",
        g.nx,
        g.ny,
        g.nz,
        num(c[0]),
        num(c[1]),
        num(c[2]),
        num(g.dx),
        num(g.dy),
        num(g.dz),
        g.len()
    )
}

/// Legacy ASCII STRUCTURED_POINTS; points are the cell centres.
pub fn scalar_vtk(field: &ScalarField3<f64>) -> String {
    let name = field.quantity.name();
    let mut out = vtk_header(&field.grid, name);
    let _ = writeln!(out, "SCALARS {name} double 1\nLOOKUP_TABLE default");
    for v in &field.values {
        out.push_str(&num(*v));
        out.push('\n');
    }
    out
}

pub fn vector_vtk(field: &VectorField3<f64>) -> String {
    let name = field.quantity.name();
    let mut out = vtk_header(&field.grid, name);
    let _ = writeln!(out, "VECTORS {name} double");
    for v in &field.values {
        push_row_spaced(&mut out, v);
    }
    out
}

fn push_row_spaced(out: &mut String, v: &[f64; 3]) {
    let _ = writeln!(out, "{} {} {}", num(v[0]), num(v[1]), num(v[2]));
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, text)?;
    Ok(())
}

fn with_comment(provenance: &str, header: &str) -> String {
    let mut out = String::new();
    for line in provenance.lines() {
        let _ = writeln!(out, "# {line}");
    }
    out.push_str(header);
    out.push('\n');
    out
}

pub fn height_decay_csv(r: &HeightDecayReport<f64>, provenance: &str) -> String {
    let mut out = with_comment(provenance, "height_m,peak_grad_e2_v2_per_m3,relative_reduction");
    for n in 0..r.heights.len() {
        push_row(&mut out, &[r.heights[n], r.peak_grad_e2[n], r.relative_reduction[n]]);
    }
    out
}

pub fn gap_sweep_csv(r: &GapSweepReport<f64>, provenance: &str) -> String {
    let mut out = with_comment(provenance, "gap_m,height_m,peak_grad_e2_v2_per_m3");
    for n in 0..r.gaps.len() {
        push_row(&mut out, &[r.gaps[n], r.height, r.peak_grad_e2[n]]);
    }
    out
}

pub fn uniformity_csv(rows: &[UniformityReport<f64>], provenance: &str) -> String {
    let mut out = with_comment(provenance, "height_m,coefficient_of_variation");
    for r in rows {
        push_row(&mut out, &[r.height, r.coefficient_of_variation]);
    }
    out
}

pub fn spectrum_csv(s: &CMSpectrum<f64>) -> String {
    let mut out = String::from("frequency_hz,re_k,im_k\n");
    for n in 0..s.frequencies.len() {
        push_row(&mut out, &[s.frequencies[n], s.re_k[n], s.im_k[n]]);
    }
    out
}

/// The outcome label appears on the last row only.
pub fn trajectory_csv(t: &TrajectoryResult<f64>) -> String {
    let mut out = String::from("t_s,x_m,y_m,z_m,speed_m_s,outcome\n");
    let last = t.samples.len().saturating_sub(1);
    for (n, (s, v)) in t.samples.iter().zip(&t.speeds).enumerate() {
        let p = s.position;
        let label = if n == last { t.outcome.label() } else { String::new() };
        let _ = writeln!(out, "{},{},{},{},{},{}", num(s.time), num(p[0]), num(p[1]), num(p[2]), num(*v), label);
    }
    out
}

/// One row per release; `time_to_trap_s` is empty unless trapped.
pub fn ensemble_csv(e: &Ensemble<f64>) -> String {
    let mut out = String::from("release_x_m,release_y_m,release_z_m,outcome,time_to_trap_s\n");
    for (p, t) in e.releases.iter().zip(&e.trajectories) {
        let ttt = match t.outcome {
            Outcome::Trapped { .. } => num(t.final_state().time - t.samples[0].time),
            _ => String::new(),
        };
        let _ = writeln!(out, "{},{},{},{},{}", num(p[0]), num(p[1]), num(p[2]), t.outcome.label(), ttt);
    }
    out
}
