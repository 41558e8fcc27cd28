//! Insulator-based dielectrophoresis (iDEP) trapping simulation.
//!
//! A parametric open-top chip with insulating tip pairs is rasterized onto a
//! cell-centred grid ([`geometry`]), the conduction problem ∇·(σ∇φ) = 0 is
//! solved with electrode faces at the channel ends ([`solver`]), and E, E² and
//! ∇(E²) feed the DEP force `2π r³ ε0 εm Re[K*] ∇(E²)` ([`dep`]). Particles
//! are then tracked under Stokes drag ([`particle`]), and the usual summary
//! metrics are computed from the solved fields ([`metrics`]). [`config`],
//! [`export`], [`manifest`] and [`runner`] drive all of it from a config file.
//!
//! The numerical core is generic over [`Real`] (`f32` or `f64`); the aliases
//! below fix it to `f64`, which is what the config-driven runner uses.
//!
//! ```no_run
//! use idep::{rasterize, solve_fields, height_decay, Centerline, DeviceSpecF64, SolveConfigF64};
//!
//! let spec = DeviceSpecF64::reference(60e-6);
//! let mg = rasterize(&spec, 2e-6)?;
//! let sol = solve_fields(&mg, &spec, &SolveConfigF64::default())?;
//! let r = height_decay(&sol.grad_e2_magnitude, &spec, &[0.0, 30e-6, 60e-6], Centerline::AlongChannel)?;
//! println!("{:?}", r.relative_reduction);
//! # Ok::<(), idep::Error>(())
//! ```

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod dep;
pub mod error;
pub mod export;
pub mod field;
pub mod geometry;
pub mod grid;
pub mod manifest;
pub mod metrics;
pub mod particle;
pub mod runner;
pub mod scalar;
pub mod solver;

pub use config::{parse_config, RunConfig};
pub use dep::{
    cm_factor, cm_spectrum, crossover_frequency, dep_force_field, CMSpectrum, DielectricProps, ParticleModel,
};
pub use error::{Error, Result};
pub use field::{AxisLine, ScalarField3, ScalarQuantity, VectorField3, VectorQuantity};
pub use geometry::{
    probe_material, rasterize, rasterize_with, DeviceSpec, ElectrodeMode, Label, MaterialGrid, Materials, TipPairSpec,
};
pub use grid::Grid3;
pub use manifest::RunManifest;
pub use metrics::{
    gap_sweep, height_decay, uniformity, Centerline, GapSweepReport, HeightDecayReport, UniformityReport,
};
pub use particle::{FluidProps, Outcome, ParticleState, StepControl, StopRules, Tracer, TrajectoryResult};
pub use scalar::Real;
pub use solver::{solve_fields, solve_potential, FieldSolution, SolveConfig};

pub type Grid3F64 = Grid3<f64>;
pub type DeviceSpecF64 = DeviceSpec<f64>;
pub type TipPairSpecF64 = TipPairSpec<f64>;
pub type MaterialGridF64 = MaterialGrid<f64>;
pub type SolveConfigF64 = SolveConfig<f64>;
pub type ScalarField3F64 = ScalarField3<f64>;
pub type VectorField3F64 = VectorField3<f64>;
pub type FieldSolutionF64 = FieldSolution<f64>;
pub type DielectricPropsF64 = DielectricProps<f64>;
pub type ParticleModelF64 = ParticleModel<f64>;
pub type CMSpectrumF64 = CMSpectrum<f64>;
pub type FluidPropsF64 = FluidProps<f64>;
pub type TrajectoryResultF64 = TrajectoryResult<f64>;
pub type HeightDecayReportF64 = HeightDecayReport<f64>;
pub type GapSweepReportF64 = GapSweepReport<f64>;
pub type UniformityReportF64 = UniformityReport<f64>;
