//! Derived quantities reported from solved fields: decay of the centreline
//! |∇(E²)| peak with height, its dependence on the tip gap, and the uniformity
//! of E² over horizontal slices.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{AxisLine, ScalarField3};
use crate::geometry::{rasterize_with, DeviceSpec, Materials};
use crate::scalar::Real;
use crate::solver::{line_profile, solve_fields, SolveConfig};

/// Which line through the constriction the peak is taken along.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum Centerline {
    /// Channel axis (x) through the middle of the gap.
    #[default]
    AlongChannel,
    /// Across the gap (y), from apex to apex.
    AcrossGap,
}

impl Centerline {
    pub fn name(self) -> &'static str {
        match self {
            Centerline::AlongChannel => "x",
            Centerline::AcrossGap => "y",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeightDecayReport<T> {
    pub heights: Vec<T>,
    pub peak_grad_e2: Vec<T>,
    /// 1 − peak/peak[0]
    pub relative_reduction: Vec<T>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GapSweepReport<T> {
    pub gaps: Vec<T>,
    pub height: T,
    pub peak_grad_e2: Vec<T>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct UniformityReport<T> {
    pub height: T,
    /// std/mean of E² over the slice interior.
    pub coefficient_of_variation: T,
}

/// Sampling line through tip pair `pair` at height `z`.
pub fn centerline<T: Real>(
    field: &ScalarField3<T>,
    spec: &DeviceSpec<T>,
    z: T,
    which: Centerline,
    pair: usize,
) -> Result<AxisLine<T>> {
    let g = &field.grid;
    let yc = spec.centerline_y();
    Ok(match which {
        Centerline::AlongChannel => {
            AxisLine { start: [g.origin[0], yc, z], end: [g.upper()[0], yc, z], samples: 4 * g.nx + 1 }
        }
        Centerline::AcrossGap => {
            let tp = spec.tip_pairs.get(pair).ok_or_else(|| Error::invalid(format!("no tip pair {pair}")))?;
            let half = tp.gap * T::half();
            AxisLine {
                start: [tp.center_x, yc - half, z],
                end: [tp.center_x, yc + half, z],
                samples: 4 * ((tp.gap / g.dy).ceil().to_usize().unwrap_or(1)) + 1,
            }
        }
    })
}

/// Maximum of `grad_e2_magnitude` along the chosen centreline at height `z`.
pub fn centerline_peak<T: Real>(
    grad_e2_magnitude: &ScalarField3<T>,
    spec: &DeviceSpec<T>,
    z: T,
    which: Centerline,
) -> Result<T> {
    let line = centerline(grad_e2_magnitude, spec, z, which, 0)?;
    let prof = line_profile(grad_e2_magnitude, &line)?;
    Ok(prof.into_iter().map(|(_, v)| v).fold(T::zero(), T::max))
}

pub fn height_decay<T: Real>(
    grad_e2_magnitude: &ScalarField3<T>,
    spec: &DeviceSpec<T>,
    heights: &[T],
    which: Centerline,
) -> Result<HeightDecayReport<T>> {
    if heights.is_empty() {
        return Err(Error::invalid("height list is empty"));
    }
    let peaks =
        heights.iter().map(|&z| centerline_peak(grad_e2_magnitude, spec, z, which)).collect::<Result<Vec<_>>>()?;
    let base = peaks[0];
    let relative_reduction =
        peaks.iter().map(|&p| if base > T::zero() { T::one() - p / base } else { T::zero() }).collect();
    Ok(HeightDecayReport { heights: heights.to_vec(), peak_grad_e2: peaks, relative_reduction })
}

/// One full solve per gap; peak centreline |∇(E²)| at `height` for each.
pub fn gap_sweep<T: Real>(
    template: &DeviceSpec<T>,
    gaps: &[T],
    height: T,
    resolution: T,
    materials: Materials<T>,
    cfg: &SolveConfig<T>,
    which: Centerline,
) -> Result<GapSweepReport<T>> {
    if gaps.is_empty() {
        return Err(Error::invalid("gap list is empty"));
    }
    if gaps.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::invalid("gaps must be strictly increasing"));
    }
    let mut peaks = Vec::with_capacity(gaps.len());
    for &gap in gaps {
        let spec = template.with_gap(gap);
        let mg = rasterize_with(&spec, resolution, materials)?;
        let sol = solve_fields(&mg, &spec, cfg)?;
        peaks.push(centerline_peak(&sol.grad_e2_magnitude, &spec, height, which)?);
    }
    Ok(GapSweepReport { gaps: gaps.to_vec(), height, peak_grad_e2: peaks })
}

/// Coefficient of variation of E² at height `z`, over cell-centre columns
/// excluding `margin` cells along each lateral boundary.
pub fn uniformity_with_margin<T: Real>(e2: &ScalarField3<T>, z: T, margin: usize) -> Result<UniformityReport<T>> {
    let g = &e2.grid;
    if 2 * margin >= g.nx || 2 * margin >= g.ny {
        return Err(Error::invalid("boundary margin leaves an empty slice"));
    }
    let mut values = Vec::with_capacity((g.nx - 2 * margin) * (g.ny - 2 * margin));
    for j in margin..g.ny - margin {
        for i in margin..g.nx - margin {
            values.push(e2.sample([g.center_coord(0, i), g.center_coord(1, j), z])?);
        }
    }
    let n = T::of(values.len() as f64);
    let mean = values.iter().copied().fold(T::zero(), |a, b| a + b) / n;
    let var = values.iter().map(|&v| (v - mean) * (v - mean)).fold(T::zero(), |a, b| a + b) / n;
    let cv = if mean != T::zero() { var.sqrt() / mean.abs() } else { T::zero() };
    Ok(UniformityReport { height: z, coefficient_of_variation: cv })
}

/// Uniformity with the standard 2-cell boundary margin.
pub fn uniformity<T: Real>(e2: &ScalarField3<T>, z: T) -> Result<UniformityReport<T>> {
    uniformity_with_margin(e2, z, 2)
}
