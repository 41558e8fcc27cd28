//! Config-driven runs: `solve`, `sweep`, `spectrum`, `trace` and `metrics`.
//!
//! Each run writes its outputs and then `manifest.json` into the output
//! directory. A failed run writes `error.json` instead and reports the stage
//! that failed.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use chrono::{SecondsFormat, Utc};
use log::info;

use crate::config::{FieldFormat, RunConfig};
use crate::dep::{angular_frequency, cm_factor, cm_spectrum, crossover_frequency, dep_force_field};
use crate::error::Error;
use crate::export;
use crate::field::{ScalarField3, ScalarQuantity, VectorField3};
use crate::geometry::{rasterize_with, DeviceSpec, MaterialGrid};
use crate::manifest::{config_hash, ErrorRecord, RunManifest, SolveRecord, TOOL_VERSION};
use crate::metrics::{centerline_peak, height_decay, uniformity, GapSweepReport};
use crate::particle::{ParticleState, Tracer};
use crate::solver::{solve_fields, FieldSolution};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    Solve,
    Sweep,
    Spectrum,
    Trace,
    Metrics,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Solve => "solve",
            Command::Sweep => "sweep",
            Command::Spectrum => "spectrum",
            Command::Trace => "trace",
            Command::Metrics => "metrics",
        }
    }
}

impl FromStr for Command {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        Ok(match s {
            "solve" => Command::Solve,
            "sweep" => Command::Sweep,
            "spectrum" => Command::Spectrum,
            "trace" => Command::Trace,
            "metrics" => Command::Metrics,
            _ => return Err(Error::invalid(format!("unknown command `{s}`"))),
        })
    }
}

/// Process exit status for an error: 2 for bad configuration or inputs, 3 for
/// solver/integrator failures, 4 for I/O.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Io(_) => 4,
        Error::NotConverged { .. } | Error::SingularSystem(_) | Error::StepUnderflow { .. } => 3,
        _ => 2,
    }
}

/// A module error tagged with the run stage it came from.
#[derive(Debug)]
pub struct RunFailure {
    pub stage: String,
    pub error: Error,
}

impl RunFailure {
    pub fn exit_code(&self) -> i32 {
        exit_code(&self.error)
    }

    pub fn record(&self, command: Command) -> ErrorRecord {
        let kind = format!("{:?}", self.error);
        ErrorRecord {
            command: command.name().into(),
            stage: self.stage.clone(),
            kind: kind.split(|c: char| !c.is_alphanumeric()).next().unwrap_or("").into(),
            message: self.error.to_string(),
            exit_code: self.exit_code(),
        }
    }
}

impl fmt::Display for RunFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} failed: {}", self.stage, self.error)
    }
}

impl std::error::Error for RunFailure {}

trait Stage<T> {
    fn stage(self, name: impl Into<String>) -> Result<T, RunFailure>;
}

impl<T> Stage<T> for Result<T, Error> {
    fn stage(self, name: impl Into<String>) -> Result<T, RunFailure> {
        self.map_err(|error| RunFailure { stage: name.into(), error })
    }
}

struct Run<'a> {
    cfg: &'a RunConfig,
    out: &'a Path,
    outputs: Vec<String>,
    solves: Vec<SolveRecord>,
    summary: BTreeMap<String, f64>,
    provenance: String,
}

impl<'a> Run<'a> {
    fn new(cfg: &'a RunConfig, out: &'a Path) -> Self {
        Self { cfg, out, outputs: vec![], solves: vec![], summary: BTreeMap::new(), provenance: provenance(cfg) }
    }

    fn write(&mut self, name: &str, text: &str) -> Result<(), RunFailure> {
        export::write_text(&self.out.join(name), text).stage(format!("write {name}"))?;
        self.outputs.push(name.to_string());
        Ok(())
    }

    fn solve(
        &mut self,
        spec: &DeviceSpec<f64>,
        label: &str,
    ) -> Result<(MaterialGrid<f64>, FieldSolution<f64>), RunFailure> {
        let res = self.cfg.resolution();
        let mg = rasterize_with(spec, res, self.cfg.materials()).stage(format!("rasterize {label}"))?;
        let g = mg.grid();
        info!("{label}: {} x {} x {} cells", g.nx, g.ny, g.nz);
        let sol = solve_fields(&mg, spec, &self.cfg.solve_config()).stage(format!("solve {label}"))?;
        self.solves.push(SolveRecord {
            label: label.into(),
            iterations: sol.potential.iterations,
            relative_residual: sol.potential.relative_residual,
        });
        Ok((mg, sol))
    }

    fn scalar(&mut self, stem: &str, f: &ScalarField3<f64>) -> Result<(), RunFailure> {
        let fmt = self.cfg.output.format;
        if fmt != FieldFormat::Vtk {
            self.write(&format!("{stem}.csv"), &export::scalar_csv(f))?;
        }
        if fmt != FieldFormat::Csv {
            self.write(&format!("{stem}.vtk"), &export::scalar_vtk(f))?;
        }
        Ok(())
    }

    fn vector(&mut self, stem: &str, f: &VectorField3<f64>) -> Result<(), RunFailure> {
        let fmt = self.cfg.output.format;
        if fmt != FieldFormat::Vtk {
            self.write(&format!("{stem}.csv"), &export::vector_csv(f))?;
        }
        if fmt != FieldFormat::Csv {
            self.write(&format!("{stem}.vtk"), &export::vector_vtk(f))?;
        }
        Ok(())
    }

    fn reports(&mut self, spec: &DeviceSpec<f64>, sol: &FieldSolution<f64>) -> Result<(), RunFailure> {
        let m = &self.cfg.metrics;
        if !m.heights_um.is_empty() {
            let heights: Vec<f64> = m.heights_um.iter().map(|h| h * 1e-6).collect();
            let r = height_decay(&sol.grad_e2_magnitude, spec, &heights, m.centerline.into()).stage("height_decay")?;
            for (h, red) in m.heights_um.iter().zip(&r.relative_reduction) {
                self.summary.insert(format!("relative_reduction_at_{h}_um"), *red);
            }
            let text = export::height_decay_csv(&r, &self.provenance);
            self.write("height_decay.csv", &text)?;
        }
        if !m.uniformity_heights_um.is_empty() {
            let rows = m
                .uniformity_heights_um
                .iter()
                .map(|h| uniformity(&sol.e2, h * 1e-6))
                .collect::<Result<Vec<_>, _>>()
                .stage("uniformity")?;
            let text = export::uniformity_csv(&rows, &self.provenance);
            self.write("uniformity.csv", &text)?;
        }
        Ok(())
    }

    fn finish(mut self, command: Command, started_at: String) -> Result<RunManifest, RunFailure> {
        self.outputs.push("manifest.json".into());
        let manifest = RunManifest {
            tool_version: TOOL_VERSION.into(),
            command: command.name().into(),
            config_sha256: config_hash(self.cfg),
            started_at,
            finished_at: now(),
            solves: self.solves,
            outputs: self.outputs,
            summary: self.summary,
            config: self.cfg.clone(),
        };
        let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        export::write_text(&self.out.join("manifest.json"), &json).stage("write manifest.json")?;
        Ok(manifest)
    }
}

fn now() -> String {
    Utc::now().to_rfc3339_opts(SecondsFormat::Millis, true)
}

/// Header comment for report CSVs: geometry and solver settings.
fn provenance(cfg: &RunConfig) -> String {
    let d = &cfg.device;
    let mut s = format!(
        "idep {TOOL_VERSION}; config sha256 {}\nchannel {} x {} x {} um; insulator {} um; resolution {} um\n",
        config_hash(cfg),
        d.channel_length_um,
        d.channel_width_um,
        d.domain_height_um,
        d.insulator_height_um,
        d.resolution_um
    );
    for tp in &cfg.tip_pairs {
        let depth = tp.base_depth_um.map_or("wall".to_string(), |b| format!("{b} um"));
        s.push_str(&format!(
            "tip pair at x = {} um: gap {} um, angle {} deg, depth {depth}, truncation {} um\n",
            tp.center_x_um, tp.gap_um, tp.tip_angle_deg, tp.truncation_um
        ));
    }
    let drive = match (cfg.drive.applied_field_v_per_m, cfg.drive.voltage_v) {
        (Some(e), _) => format!("{e} V/m"),
        (None, v) => format!("{} V", v.unwrap_or(0.0)),
    };
    s.push_str(&format!(
        "drive {drive} at {} Hz; rel_tolerance {}; conductivity_ratio {}",
        cfg.drive.frequency_hz, cfg.solver.rel_tolerance, cfg.materials.conductivity_ratio
    ));
    s
}

fn do_solve(run: &mut Run, command: Command) -> Result<(), RunFailure> {
    let spec = run.cfg.device_spec();
    let (mg, sol) = run.solve(&spec, "device")?;
    if command == Command::Solve {
        let o = run.cfg.output.clone();
        if o.export_potential {
            run.scalar("phi", sol.phi())?;
        }
        if o.export_e_field {
            run.vector("e_field", &sol.e)?;
        }
        if o.export_e2 {
            run.scalar("e2", &sol.e2)?;
        }
        if o.export_grad_e2 {
            run.vector("grad_e2", &sol.grad_e2)?;
        }
        if o.export_labels {
            let labels = ScalarField3 {
                grid: *mg.grid(),
                values: mg.labels().iter().map(|&l| l as u8 as f64).collect(),
                quantity: ScalarQuantity::MaterialLabel,
            };
            run.scalar("labels", &labels)?;
        }
        if o.export_force {
            let force = force_field(run.cfg, &sol).stage("force")?;
            run.vector("force", &force)?;
        }
    }
    run.reports(&spec, &sol)
}

fn force_field(cfg: &RunConfig, sol: &FieldSolution<f64>) -> Result<VectorField3<f64>, Error> {
    dep_force_field(&cfg.particle_model(), &cfg.medium(), angular_frequency(cfg.drive.frequency_hz), &sol.grad_e2)
}

fn do_sweep(run: &mut Run) -> Result<(), RunFailure> {
    let cfg = run.cfg;
    let gaps: Vec<f64> = cfg.sweep.gaps_um.iter().map(|g| g * 1e-6).collect();
    let height = cfg.sweep.height_um * 1e-6;
    let template = cfg.device_spec();
    let mut peaks = Vec::with_capacity(gaps.len());
    for &gap in &gaps {
        let spec = template.with_gap(gap);
        let label = format!("gap {:.1} um", gap * 1e6);
        let (_, sol) = run.solve(&spec, &label)?;
        let peak = centerline_peak(&sol.grad_e2_magnitude, &spec, height, cfg.metrics.centerline.into())
            .stage(format!("peak {label}"))?;
        peaks.push(peak);
    }
    let r = GapSweepReport { gaps, height, peak_grad_e2: peaks };
    let text = export::gap_sweep_csv(&r, &run.provenance);
    run.write("gap_sweep.csv", &text)
}

fn do_spectrum(run: &mut Run) -> Result<(), RunFailure> {
    let cfg = run.cfg;
    let s = &cfg.spectrum;
    let (p, m) = (cfg.particle_model().props, cfg.medium());
    let spectrum = cm_spectrum(&p, &m, s.f_min_hz, s.f_max_hz, s.points_per_decade).stage("spectrum")?;
    let k = cm_factor(&p, &m, angular_frequency(cfg.drive.frequency_hz)).stage("spectrum")?;
    run.summary.insert("re_k_at_drive_frequency".into(), k.re);
    if let Some(fc) = crossover_frequency(&p, &m) {
        run.summary.insert("crossover_frequency_hz".into(), fc);
    }
    run.write("spectrum.csv", &export::spectrum_csv(&spectrum))
}

fn do_trace(run: &mut Run) -> Result<(), RunFailure> {
    let cfg = run.cfg;
    let spec = cfg.device_spec();
    let (mg, sol) = run.solve(&spec, "device")?;
    let force = force_field(cfg, &sol).stage("force")?;
    if cfg.output.export_force {
        run.vector("force", &force)?;
    }
    let tracer = Tracer {
        force: &force,
        spec: &spec,
        walls: &mg,
        model: cfg.particle_model(),
        fluid: cfg.fluid(),
        step: cfg.step_control(),
        stop: cfg.stop_rules(),
        ambient: cfg.trace.ambient_velocity_m_per_s,
    };
    let mut trapped = 0usize;
    for (n, p) in cfg.releases().into_iter().enumerate() {
        let t = tracer.integrate(ParticleState { position: p, time: 0.0 }).stage(format!("trace release {n}"))?;
        info!("release {n}: {}", t.outcome.label());
        trapped += t.outcome.is_trapped() as usize;
        run.write(&format!("trajectory_{n:03}.csv"), &export::trajectory_csv(&t))?;
    }
    run.summary.insert("releases_trapped".into(), trapped as f64);
    if let Some(e) = &cfg.trace.ensemble {
        let um = |v: [f64; 3]| v.map(|c| c * 1e-6);
        let ens = tracer.release_grid(um(e.lo_um), um(e.hi_um), e.counts).stage("ensemble")?;
        run.summary.insert("ensemble_capture_fraction".into(), ens.capture_fraction());
        run.write("ensemble.csv", &export::ensemble_csv(&ens))?;
    }
    Ok(())
}

/// Runs `command` with outputs under `out`. On failure `error.json` is
/// written there (best effort) and the failing stage is returned.
pub fn run(command: Command, cfg: &RunConfig, out: &Path) -> Result<RunManifest, RunFailure> {
    let started_at = now();
    info!("{} -> {}", command.name(), out.display());
    let mut r = Run::new(cfg, out);
    let body = match command {
        Command::Solve | Command::Metrics => do_solve(&mut r, command),
        Command::Sweep => do_sweep(&mut r),
        Command::Spectrum => do_spectrum(&mut r),
        Command::Trace => do_trace(&mut r),
    };
    let result = body.and_then(|_| r.finish(command, started_at));
    if let Err(f) = &result {
        write_error_record(out, &f.record(command));
    }
    result
}

/// Writes `error.json`; failures to do so are only logged.
pub fn write_error_record(out: &Path, record: &ErrorRecord) {
    let json = serde_json::to_string_pretty(record).expect("error record serializes");
    if let Err(e) = export::write_text(&out.join("error.json"), &json) {
        log::error!("could not write error record: {e}");
    }
}

pub fn run_solve(cfg: &RunConfig, out: &Path) -> Result<RunManifest, RunFailure> {
    run(Command::Solve, cfg, out)
}

pub fn run_sweep(cfg: &RunConfig, out: &Path) -> Result<RunManifest, RunFailure> {
    run(Command::Sweep, cfg, out)
}

pub fn run_spectrum(cfg: &RunConfig, out: &Path) -> Result<RunManifest, RunFailure> {
    run(Command::Spectrum, cfg, out)
}

pub fn run_trace(cfg: &RunConfig, out: &Path) -> Result<RunManifest, RunFailure> {
    run(Command::Trace, cfg, out)
}

pub fn run_metrics(cfg: &RunConfig, out: &Path) -> Result<RunManifest, RunFailure> {
    run(Command::Metrics, cfg, out)
}
