//! Run configuration: INI-style `[section]` / `key = value` text (TOML
//! syntax), lengths in µm, conductivities in S/m, frequencies in Hz.
//!
//! `[tip_pair]` is written `[[tip_pair]]` and may repeat. The required
//! sections are `device`, `materials`, `drive`, `particle` and `solver`;
//! every other section falls back to defaults. Unknown keys are rejected.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::dep::{DielectricProps, ParticleModel};
use crate::error::{Error, Result};
use crate::geometry::{DeviceSpec, ElectrodeMode, Materials, TipPairSpec};
use crate::metrics::Centerline;
use crate::particle::{FluidProps, StepControl, StopRules};
use crate::solver::SolveConfig;

const UM: f64 = 1e-6;

pub const REQUIRED_SECTIONS: [&str; 5] = ["device", "materials", "drive", "particle", "solver"];

/// Bundled scenario configs, by name.
pub const BUNDLED: [(&str, &str); 3] = [
    ("paper_fig3", include_str!("../configs/paper_fig3.toml")),
    ("paper_fig4a", include_str!("../configs/paper_fig4a.toml")),
    ("paper_experiment", include_str!("../configs/paper_experiment.toml")),
];

pub fn bundled(name: &str) -> Option<&'static str> {
    BUNDLED.iter().find(|(n, _)| *n == name).map(|(_, text)| *text)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub device: DeviceSection,
    pub materials: MaterialsSection,
    pub drive: DriveSection,
    pub particle: ParticleSection,
    pub solver: SolverSection,
    #[serde(default)]
    pub fluid: FluidSection,
    #[serde(default)]
    pub trace: TraceSection,
    #[serde(default)]
    pub sweep: SweepSection,
    #[serde(default)]
    pub metrics: MetricsSection,
    #[serde(default)]
    pub spectrum: SpectrumSection,
    #[serde(default)]
    pub output: OutputSection,
    #[serde(default, rename = "tip_pair")]
    pub tip_pairs: Vec<TipPairSection>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeviceSection {
    pub channel_length_um: f64,
    pub channel_width_um: f64,
    pub domain_height_um: f64,
    pub insulator_height_um: f64,
    pub resolution_um: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TipPairSection {
    pub center_x_um: f64,
    pub gap_um: f64,
    pub tip_angle_deg: f64,
    /// Omitted: the tip reaches the side wall.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base_depth_um: Option<f64>,
    #[serde(default)]
    pub truncation_um: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaterialsSection {
    pub medium_sigma_s_per_m: f64,
    pub medium_eps_r: f64,
    #[serde(default = "default_insulator_eps_r")]
    pub insulator_eps_r: f64,
    /// σ_insulator / σ_medium
    #[serde(default = "default_conductivity_ratio")]
    pub conductivity_ratio: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DriveSection {
    /// RMS field, V/m. Exactly one of this and `voltage_v`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub applied_field_v_per_m: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub voltage_v: Option<f64>,
    pub frequency_hz: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParticleSection {
    pub radius_um: f64,
    pub eps_r: f64,
    pub sigma_s_per_m: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSection {
    pub rel_tolerance: f64,
    pub max_iterations: usize,
    #[serde(default = "default_log_every")]
    pub log_every: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FluidSection {
    pub viscosity_pa_s: f64,
}

impl Default for FluidSection {
    fn default() -> Self {
        Self { viscosity_pa_s: 1e-3 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TraceSection {
    /// Release points `[x, y, z]` in µm.
    pub releases_um: Vec<[f64; 3]>,
    pub dt_max_s: f64,
    pub dt_min_s: f64,
    /// Per-step displacement limit in grid cells.
    pub displacement_cap_cells: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub capture_radius_um: Option<f64>,
    pub speed_floor_m_per_s: f64,
    pub t_max_s: f64,
    pub ambient_velocity_m_per_s: [f64; 3],
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ensemble: Option<EnsembleSection>,
}

impl Default for TraceSection {
    fn default() -> Self {
        let step = StepControl::<f64>::default();
        let stop = StopRules::<f64>::default();
        Self {
            releases_um: vec![],
            dt_max_s: step.dt_max,
            dt_min_s: step.dt_min,
            displacement_cap_cells: step.displacement_cap,
            capture_radius_um: None,
            speed_floor_m_per_s: stop.speed_floor,
            t_max_s: stop.t_max,
            ambient_velocity_m_per_s: [0.0; 3],
            ensemble: None,
        }
    }
}

/// Lattice of release points over a box, `counts` points per axis.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleSection {
    pub lo_um: [f64; 3],
    pub hi_um: [f64; 3],
    pub counts: [usize; 3],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSection {
    pub gaps_um: Vec<f64>,
    pub height_um: f64,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self { gaps_um: vec![40.0, 60.0, 80.0, 100.0], height_um: 0.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetricsSection {
    pub heights_um: Vec<f64>,
    pub uniformity_heights_um: Vec<f64>,
    pub centerline: CenterlineName,
}

impl Default for MetricsSection {
    fn default() -> Self {
        Self {
            heights_um: vec![0.0, 30.0, 60.0],
            uniformity_heights_um: vec![30.0, 160.0],
            centerline: CenterlineName::X,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CenterlineName {
    #[default]
    X,
    Y,
}

impl From<CenterlineName> for Centerline {
    fn from(c: CenterlineName) -> Self {
        match c {
            CenterlineName::X => Centerline::AlongChannel,
            CenterlineName::Y => Centerline::AcrossGap,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpectrumSection {
    pub f_min_hz: f64,
    pub f_max_hz: f64,
    pub points_per_decade: usize,
}

impl Default for SpectrumSection {
    fn default() -> Self {
        Self { f_min_hz: 1e3, f_max_hz: 1e9, points_per_decade: 20 }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FieldFormat {
    #[default]
    Csv,
    Vtk,
    Both,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub directory: String,
    pub format: FieldFormat,
    pub export_potential: bool,
    pub export_e_field: bool,
    pub export_e2: bool,
    pub export_grad_e2: bool,
    pub export_force: bool,
    pub export_labels: bool,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            directory: "out".into(),
            format: FieldFormat::Csv,
            export_potential: true,
            export_e_field: false,
            export_e2: true,
            export_grad_e2: true,
            export_force: false,
            export_labels: false,
        }
    }
}

fn default_insulator_eps_r() -> f64 {
    Materials::<f64>::default().eps_r_insulator
}

fn default_conductivity_ratio() -> f64 {
    SolveConfig::<f64>::default().conductivity_ratio
}

fn default_log_every() -> usize {
    SolveConfig::<f64>::default().log_every
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

/// Parses and validates a run config.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let table: toml::Table = toml::from_str(text).map_err(|e| Error::Parse {
        line: e.span().map_or(0, |s| line_of(text, s.start)),
        message: e.message().to_string(),
    })?;
    let missing: Vec<&str> = REQUIRED_SECTIONS.iter().copied().filter(|s| !table.contains_key(*s)).collect();
    if !missing.is_empty() {
        return Err(Error::Parse { line: 0, message: format!("missing required sections: {}", missing.join(", ")) });
    }
    let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Parse {
        line: e.span().map_or(0, |s| line_of(text, s.start)),
        message: e.message().to_string(),
    })?;
    cfg.validate()?;
    Ok(cfg)
}

impl fmt::Display for RunConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let text = toml::to_string(self).map_err(|_| fmt::Error)?;
        f.write_str(&text)
    }
}

fn positive(field: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::validation(field, "must be positive"))
    }
}

fn non_negative(field: &str, v: f64) -> Result<()> {
    if v.is_finite() && v >= 0.0 {
        Ok(())
    } else {
        Err(Error::validation(field, "must be non-negative"))
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        let d = &self.device;
        positive("device.channel_length_um", d.channel_length_um)?;
        positive("device.channel_width_um", d.channel_width_um)?;
        positive("device.domain_height_um", d.domain_height_um)?;
        positive("device.insulator_height_um", d.insulator_height_um)?;
        positive("device.resolution_um", d.resolution_um)?;
        for tp in &self.tip_pairs {
            non_negative("tip_pair.center_x_um", tp.center_x_um)?;
            positive("tip_pair.gap_um", tp.gap_um)?;
            positive("tip_pair.tip_angle_deg", tp.tip_angle_deg)?;
            if tp.tip_angle_deg >= 180.0 {
                return Err(Error::validation("tip_pair.tip_angle_deg", "must be below 180"));
            }
            if let Some(b) = tp.base_depth_um {
                positive("tip_pair.base_depth_um", b)?;
            }
            non_negative("tip_pair.truncation_um", tp.truncation_um)?;
        }
        let m = &self.materials;
        positive("materials.medium_sigma_s_per_m", m.medium_sigma_s_per_m)?;
        positive("materials.medium_eps_r", m.medium_eps_r)?;
        positive("materials.insulator_eps_r", m.insulator_eps_r)?;
        if !(m.conductivity_ratio.is_finite() && (0.0..1.0).contains(&m.conductivity_ratio)) {
            return Err(Error::validation("materials.conductivity_ratio", "must lie in [0, 1)"));
        }
        match (self.drive.applied_field_v_per_m, self.drive.voltage_v) {
            (Some(e), None) => non_negative("drive.applied_field_v_per_m", e)?,
            (None, Some(v)) => non_negative("drive.voltage_v", v)?,
            _ => return Err(Error::validation("drive", "give exactly one of applied_field_v_per_m and voltage_v")),
        }
        positive("drive.frequency_hz", self.drive.frequency_hz)?;
        positive("particle.radius_um", self.particle.radius_um)?;
        positive("particle.eps_r", self.particle.eps_r)?;
        non_negative("particle.sigma_s_per_m", self.particle.sigma_s_per_m)?;
        let s = &self.solver;
        if !(s.rel_tolerance.is_finite() && s.rel_tolerance > 0.0 && s.rel_tolerance < 1.0) {
            return Err(Error::validation("solver.rel_tolerance", "must lie in (0, 1)"));
        }
        if s.max_iterations == 0 {
            return Err(Error::validation("solver.max_iterations", "must be positive"));
        }
        positive("fluid.viscosity_pa_s", self.fluid.viscosity_pa_s)?;
        let t = &self.trace;
        positive("trace.dt_max_s", t.dt_max_s)?;
        positive("trace.dt_min_s", t.dt_min_s)?;
        if t.dt_min_s > t.dt_max_s {
            return Err(Error::validation("trace.dt_min_s", "must not exceed dt_max_s"));
        }
        positive("trace.displacement_cap_cells", t.displacement_cap_cells)?;
        if let Some(r) = t.capture_radius_um {
            non_negative("trace.capture_radius_um", r)?;
        }
        non_negative("trace.speed_floor_m_per_s", t.speed_floor_m_per_s)?;
        positive("trace.t_max_s", t.t_max_s)?;
        if t.ambient_velocity_m_per_s.iter().any(|v| !v.is_finite()) {
            return Err(Error::validation("trace.ambient_velocity_m_per_s", "must be finite"));
        }
        if t.releases_um.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::validation("trace.releases_um", "must be finite"));
        }
        if let Some(e) = &t.ensemble {
            if e.counts.contains(&0) {
                return Err(Error::validation("trace.ensemble.counts", "must be positive"));
            }
            if (0..3).any(|a| !(e.lo_um[a].is_finite() && e.hi_um[a].is_finite() && e.lo_um[a] <= e.hi_um[a])) {
                return Err(Error::validation("trace.ensemble", "need finite lo_um <= hi_um"));
            }
        }
        let g = &self.sweep.gaps_um;
        for &gap in g {
            positive("sweep.gaps_um", gap)?;
        }
        if g.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::validation("sweep.gaps_um", "must be strictly increasing"));
        }
        non_negative("sweep.height_um", self.sweep.height_um)?;
        for &h in self.metrics.heights_um.iter().chain(&self.metrics.uniformity_heights_um) {
            non_negative("metrics.heights_um", h)?;
        }
        let sp = &self.spectrum;
        positive("spectrum.f_min_hz", sp.f_min_hz)?;
        positive("spectrum.f_max_hz", sp.f_max_hz)?;
        if sp.f_max_hz <= sp.f_min_hz {
            return Err(Error::validation("spectrum.f_max_hz", "must exceed f_min_hz"));
        }
        if sp.points_per_decade == 0 {
            return Err(Error::validation("spectrum.points_per_decade", "must be positive"));
        }
        if self.output.directory.is_empty() {
            return Err(Error::validation("output.directory", "must not be empty"));
        }
        self.device_spec().validate()
    }

    /// Device in SI units.
    pub fn device_spec(&self) -> DeviceSpec<f64> {
        let d = &self.device;
        DeviceSpec {
            channel_length: d.channel_length_um * UM,
            channel_width: d.channel_width_um * UM,
            domain_height: d.domain_height_um * UM,
            insulator_height: d.insulator_height_um * UM,
            tip_pairs: self
                .tip_pairs
                .iter()
                .map(|tp| TipPairSpec {
                    center_x: tp.center_x_um * UM,
                    gap: tp.gap_um * UM,
                    tip_angle: tp.tip_angle_deg,
                    base_depth: tp.base_depth_um.map(|b| b * UM),
                    truncation: tp.truncation_um * UM,
                })
                .collect(),
            electrode_mode: match (self.drive.applied_field_v_per_m, self.drive.voltage_v) {
                (Some(e), _) => ElectrodeMode::AppliedField(e),
                (None, v) => ElectrodeMode::Voltage(v.unwrap_or(0.0)),
            },
        }
    }

    pub fn resolution(&self) -> f64 {
        self.device.resolution_um * UM
    }

    pub fn materials(&self) -> Materials<f64> {
        let m = &self.materials;
        Materials {
            sigma_medium: m.medium_sigma_s_per_m,
            eps_r_medium: m.medium_eps_r,
            sigma_insulator: m.medium_sigma_s_per_m * m.conductivity_ratio,
            eps_r_insulator: m.insulator_eps_r,
        }
    }

    pub fn medium(&self) -> DielectricProps<f64> {
        DielectricProps { eps_r: self.materials.medium_eps_r, sigma: self.materials.medium_sigma_s_per_m }
    }

    pub fn solve_config(&self) -> SolveConfig<f64> {
        SolveConfig {
            rel_tolerance: self.solver.rel_tolerance,
            max_iterations: self.solver.max_iterations,
            conductivity_ratio: self.materials.conductivity_ratio,
            log_every: self.solver.log_every,
        }
    }

    pub fn particle_model(&self) -> ParticleModel<f64> {
        let p = &self.particle;
        ParticleModel { radius: p.radius_um * UM, props: DielectricProps { eps_r: p.eps_r, sigma: p.sigma_s_per_m } }
    }

    pub fn fluid(&self) -> FluidProps<f64> {
        FluidProps { viscosity: self.fluid.viscosity_pa_s, props: self.medium() }
    }

    pub fn step_control(&self) -> StepControl<f64> {
        let t = &self.trace;
        StepControl { dt_max: t.dt_max_s, dt_min: t.dt_min_s, displacement_cap: t.displacement_cap_cells }
    }

    pub fn stop_rules(&self) -> StopRules<f64> {
        let t = &self.trace;
        StopRules {
            capture_radius: t.capture_radius_um.map(|r| r * UM),
            speed_floor: t.speed_floor_m_per_s,
            t_max: t.t_max_s,
        }
    }

    pub fn releases(&self) -> Vec<[f64; 3]> {
        self.trace.releases_um.iter().map(|p| p.map(|c| c * UM)).collect()
    }
}
