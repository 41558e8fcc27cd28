//! Open-top trapping chip: channel, electrodes and insulating tip pairs, and
//! their rasterization onto a cell-centred material grid.
//!
//! Each tip pair is two mirror-image triangular prisms standing on the glass
//! slide (z = 0) up to `insulator_height`. A tip's apex sits on the gap
//! boundary at `y = W/2 ± gap/2` and its base lies `base_depth` further toward
//! the side wall. Lengths are SI metres throughout.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid3;
use crate::scalar::{Real, Vec3};

/// How the electrodes on the two x faces are driven.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum ElectrodeMode<T> {
    /// Nominal RMS field in V/m; the voltage is field × channel length.
    AppliedField(T),
    /// RMS voltage across the x extent.
    Voltage(T),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TipPairSpec<T> {
    pub center_x: T,
    pub gap: T,
    /// Full opening angle of each tip, in degrees.
    pub tip_angle: T,
    /// Apex-to-base distance; `None` extends the tip to the side wall.
    pub base_depth: Option<T>,
    /// Length cut off the apex. 0 gives a sharp tip; otherwise the tip ends in
    /// a flat face on the gap boundary.
    pub truncation: T,
}

impl<T: Real> TipPairSpec<T> {
    pub fn sharp(center_x: T, gap: T, tip_angle: T) -> Self {
        Self { center_x, gap, tip_angle, base_depth: None, truncation: T::zero() }
    }

    pub fn depth(&self, channel_width: T) -> T {
        self.base_depth.unwrap_or((channel_width - self.gap) * T::half())
    }

    fn half_tan(&self) -> T {
        (self.tip_angle.to_radians() * T::half()).tan()
    }

    /// Half the tip's extent along x at its base.
    pub fn base_half_width(&self, channel_width: T) -> T {
        (self.depth(channel_width) + self.truncation) * self.half_tan()
    }

    /// Whether `(x, s)` lies in the tip cross-section, `s` being the distance
    /// from the channel centreline.
    #[inline]
    fn contains_folded(&self, x: T, s: T, channel_width: T) -> bool {
        let into = s - self.gap * T::half();
        if into < T::zero() || into > self.depth(channel_width) {
            return false;
        }
        (x - self.center_x).abs() <= (into + self.truncation) * self.half_tan()
    }

    /// Apex coordinates `(x, y)` of the lower and upper tips.
    pub fn apexes(&self, channel_width: T) -> [[T; 2]; 2] {
        let c = channel_width * T::half();
        let h = self.gap * T::half();
        [[self.center_x, c - h], [self.center_x, c + h]]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeviceSpec<T> {
    pub channel_length: T,
    pub channel_width: T,
    pub domain_height: T,
    pub insulator_height: T,
    pub tip_pairs: Vec<TipPairSpec<T>>,
    pub electrode_mode: ElectrodeMode<T>,
}

impl<T: Real> DeviceSpec<T> {
    /// Default 600 × 300 × 200 µm box with 60 µm photoresist and one sharp
    /// 30° tip pair at mid-channel, driven at 3×10⁴ V/m. Each tip is a
    /// free-standing triangular post 60 µm deep.
    pub fn reference(gap: T) -> Self {
        let um = T::of(1e-6);
        let tip = TipPairSpec {
            base_depth: Some(T::of(60.0) * um),
            ..TipPairSpec::sharp(T::of(300.0) * um, gap, T::of(30.0))
        };
        Self {
            channel_length: T::of(600.0) * um,
            channel_width: T::of(300.0) * um,
            domain_height: T::of(200.0) * um,
            insulator_height: T::of(60.0) * um,
            tip_pairs: vec![tip],
            electrode_mode: ElectrodeMode::AppliedField(T::of(3.0e4)),
        }
    }

    /// Voltage on the x = channel_length electrode (the other is grounded).
    pub fn drive_voltage(&self) -> T {
        match self.electrode_mode {
            ElectrodeMode::AppliedField(e) => e * self.channel_length,
            ElectrodeMode::Voltage(v) => v,
        }
    }

    /// Copy with every tip gap replaced.
    pub fn with_gap(&self, gap: T) -> Self {
        let mut s = self.clone();
        for tp in &mut s.tip_pairs {
            tp.gap = gap;
        }
        s
    }

    /// Copy with the drive scaled by `factor`.
    pub fn scaled_drive(&self, factor: T) -> Self {
        let mut s = self.clone();
        s.electrode_mode = match s.electrode_mode {
            ElectrodeMode::AppliedField(e) => ElectrodeMode::AppliedField(e * factor),
            ElectrodeMode::Voltage(v) => ElectrodeMode::Voltage(v * factor),
        };
        s
    }

    pub fn centerline_y(&self) -> T {
        self.channel_width * T::half()
    }

    pub fn validate(&self) -> Result<()> {
        let lengths = [
            ("channel_length", self.channel_length),
            ("channel_width", self.channel_width),
            ("domain_height", self.domain_height),
            ("insulator_height", self.insulator_height),
        ];
        for (name, v) in lengths {
            if !(v > T::zero()) || !v.is_finite() {
                return Err(Error::GeometryInvalid(format!("{name} must be positive")));
            }
        }
        if self.insulator_height > self.domain_height {
            return Err(Error::GeometryInvalid("insulator_height exceeds domain_height".into()));
        }
        if !self.drive_voltage().is_finite() {
            return Err(Error::GeometryInvalid("electrode drive must be finite".into()));
        }
        let w = self.channel_width;
        let mut spans = Vec::with_capacity(self.tip_pairs.len());
        for (n, tp) in self.tip_pairs.iter().enumerate() {
            if !(tp.gap > T::zero()) {
                return Err(Error::GeometryInvalid(format!("tip pair {n}: gap must be positive")));
            }
            if tp.gap >= w {
                return Err(Error::GeometryInvalid(format!("tip pair {n}: gap is not narrower than the channel")));
            }
            if !(tp.tip_angle > T::zero() && tp.tip_angle < T::of(180.0)) {
                return Err(Error::GeometryInvalid(format!("tip pair {n}: tip angle must lie in (0, 180) degrees")));
            }
            if tp.truncation < T::zero() {
                return Err(Error::GeometryInvalid(format!("tip pair {n}: truncation must be non-negative")));
            }
            let depth = tp.depth(w);
            if !(depth > T::zero()) {
                return Err(Error::GeometryInvalid(format!("tip pair {n}: base depth must be positive")));
            }
            let slack = w * T::of(1e-12);
            if tp.gap * T::half() + depth > w * T::half() + slack {
                return Err(Error::GeometryInvalid(format!("tip pair {n}: tip is deeper than the channel half-width")));
            }
            let hw = tp.base_half_width(w);
            if tp.center_x - hw < T::zero() || tp.center_x + hw > self.channel_length {
                return Err(Error::GeometryInvalid(format!("tip pair {n}: tip base extends past the electrodes")));
            }
            spans.push((tp.center_x - hw, tp.center_x + hw, n));
        }
        spans.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(std::cmp::Ordering::Equal));
        for pair in spans.windows(2) {
            if pair[1].0 < pair[0].1 {
                return Err(Error::GeometryInvalid(format!("tip pairs {} and {} overlap", pair[0].2, pair[1].2)));
            }
        }
        Ok(())
    }

    /// Whether a point lies inside any insulator prism (exact geometry, not
    /// the rasterized grid).
    pub fn inside_insulator(&self, p: Vec3<T>) -> bool {
        if p[2] < T::zero() || p[2] > self.insulator_height {
            return false;
        }
        let s = (p[1] - self.centerline_y()).abs();
        self.tip_pairs.iter().any(|tp| tp.contains_folded(p[0], s, self.channel_width))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[repr(u8)]
pub enum Label {
    Medium = 0,
    Insulator = 1,
}

/// Electrical properties assigned to the two labels.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Materials<T> {
    pub sigma_medium: T,
    pub eps_r_medium: T,
    pub sigma_insulator: T,
    pub eps_r_insulator: T,
}

impl<T: Real> Default for Materials<T> {
    /// 17.6 µS/cm aqueous sucrose buffer around photoresist.
    fn default() -> Self {
        Self {
            sigma_medium: T::of(1.76e-3),
            eps_r_medium: T::of(78.0),
            sigma_insulator: T::of(1.76e-9),
            eps_r_insulator: T::of(3.0),
        }
    }
}

impl<T: Real> Materials<T> {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_insulator >= T::zero()) || !(self.sigma_medium > self.sigma_insulator) {
            return Err(Error::invalid("conductivities must satisfy sigma_medium > sigma_insulator >= 0"));
        }
        if !(self.eps_r_medium > T::zero()) || !(self.eps_r_insulator > T::zero()) {
            return Err(Error::invalid("relative permittivities must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MaterialGrid<T> {
    grid: Grid3<T>,
    labels: Vec<Label>,
    materials: Materials<T>,
}

impl<T: Real> MaterialGrid<T> {
    pub fn from_labels(grid: Grid3<T>, labels: Vec<Label>, materials: Materials<T>) -> Result<Self> {
        if labels.len() != grid.len() {
            return Err(Error::GridMismatch);
        }
        materials.validate()?;
        Ok(Self { grid, labels, materials })
    }

    pub fn grid(&self) -> &Grid3<T> {
        &self.grid
    }

    pub fn labels(&self) -> &[Label] {
        &self.labels
    }

    pub fn materials(&self) -> &Materials<T> {
        &self.materials
    }

    pub fn label(&self, i: usize, j: usize, k: usize) -> Label {
        self.labels[self.grid.index(i, j, k)]
    }

    pub fn sigma(&self, label: Label) -> T {
        match label {
            Label::Medium => self.materials.sigma_medium,
            Label::Insulator => self.materials.sigma_insulator,
        }
    }

    pub fn eps_r(&self, label: Label) -> T {
        match label {
            Label::Medium => self.materials.eps_r_medium,
            Label::Insulator => self.materials.eps_r_insulator,
        }
    }

    pub fn insulator_fraction(&self) -> f64 {
        let n = self.labels.iter().filter(|&&l| l == Label::Insulator).count();
        n as f64 / self.labels.len() as f64
    }

    /// Label of the cell containing `point`.
    pub fn probe(&self, point: Vec3<T>) -> Result<Label> {
        let [i, j, k] = self.grid.cell_of(point)?;
        Ok(self.label(i, j, k))
    }
}

/// Rasterizes with the default buffer/photoresist materials.
pub fn rasterize<T: Real>(spec: &DeviceSpec<T>, resolution: T) -> Result<MaterialGrid<T>> {
    rasterize_with(spec, resolution, Materials::default())
}

/// Labels every cell whose centre lies inside a tip prism as insulator.
///
/// The lateral test uses the centre's distance from the channel centreline,
/// computed from the integer index, so mirrored cells get identical labels.
pub fn rasterize_with<T: Real>(
    spec: &DeviceSpec<T>,
    resolution: T,
    materials: Materials<T>,
) -> Result<MaterialGrid<T>> {
    if !(resolution > T::zero()) || !resolution.is_finite() {
        return Err(Error::invalid("resolution must be positive"));
    }
    spec.validate()?;
    materials.validate()?;
    for tp in &spec.tip_pairs {
        if resolution * T::of(6.0) > tp.gap {
            return Err(Error::ResolutionTooCoarse { gap: tp.gap.f64(), resolution: resolution.f64() });
        }
    }
    let grid =
        Grid3::covering([spec.channel_length, spec.channel_width, spec.domain_height], resolution, [T::zero(); 3])?;
    let (nx, ny) = (grid.nx, grid.ny);
    let half_dy = grid.dy * T::half();
    let w = spec.channel_width;

    let mut labels = vec![Label::Medium; grid.len()];
    labels.par_chunks_mut(grid.slab()).enumerate().for_each(|(k, slab)| {
        if grid.center_coord(2, k) > spec.insulator_height {
            return;
        }
        for j in 0..ny {
            let s = T::of((2 * j + 1).abs_diff(ny) as f64) * half_dy;
            for i in 0..nx {
                let x = grid.center_coord(0, i);
                if spec.tip_pairs.iter().any(|tp| tp.contains_folded(x, s, w)) {
                    slab[i + nx * j] = Label::Insulator;
                }
            }
        }
    });
    MaterialGrid::from_labels(grid, labels, materials)
}

/// Label of the cell containing `point`.
pub fn probe_material<T: Real>(mg: &MaterialGrid<T>, point: Vec3<T>) -> Result<Label> {
    mg.probe(point)
}
