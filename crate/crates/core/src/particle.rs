//! Overdamped particle tracking in a DEP force field.
//!
//! Velocity is force over Stokes drag, `v = F / (6π η r)`, plus an optional
//! uniform ambient flow. Trajectories are integrated with an explicit midpoint
//! rule whose step is capped by a per-step displacement limit. The glass slide
//! (z = 0) and the insulator cells of the material grid are hard walls: a step
//! that would end inside an insulator cell slides along it instead, keeping
//! the particle in the same geometry the field was solved on. Any other domain
//! face ends the trajectory.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dep::{DielectricProps, ParticleModel};
use crate::error::{Error, Result};
use crate::field::VectorField3;
use crate::geometry::{DeviceSpec, Label, MaterialGrid};
use crate::scalar::{norm3, to_f64_3, Real, Vec3};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FluidProps<T> {
    /// Pa·s
    pub viscosity: T,
    pub props: DielectricProps<T>,
}

impl<T: Real> FluidProps<T> {
    pub fn water_like(props: DielectricProps<T>) -> Self {
        Self { viscosity: T::of(1.0e-3), props }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.viscosity > T::zero()) || !self.viscosity.is_finite() {
            return Err(Error::validation("viscosity", "must be positive"));
        }
        self.props.validate()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParticleState<T> {
    pub position: Vec3<T>,
    pub time: T,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Face {
    XMin,
    XMax,
    YMin,
    YMax,
    ZMax,
}

impl Face {
    pub fn name(self) -> &'static str {
        match self {
            Face::XMin => "x_min",
            Face::XMax => "x_max",
            Face::YMin => "y_min",
            Face::YMax => "y_max",
            Face::ZMax => "z_max",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Outcome {
    Trapped { tip_pair: usize },
    Exited { face: Face },
    Timeout,
}

impl Outcome {
    pub fn label(&self) -> String {
        match self {
            Outcome::Trapped { tip_pair } => format!("trapped:{tip_pair}"),
            Outcome::Exited { face } => format!("exited:{}", face.name()),
            Outcome::Timeout => "timeout".to_string(),
        }
    }

    pub fn is_trapped(&self) -> bool {
        matches!(self, Outcome::Trapped { .. })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryResult<T> {
    /// Start, end, and every step that moved at least a tenth of a cell or
    /// `dt_max` in time since the previous sample.
    pub samples: Vec<ParticleState<T>>,
    /// Effective speed over the step ending at each sample (0 for the first).
    pub speeds: Vec<T>,
    pub outcome: Outcome,
    pub final_speed: T,
}

impl<T: Real> TrajectoryResult<T> {
    pub fn final_state(&self) -> &ParticleState<T> {
        self.samples.last().expect("trajectory has at least the start sample")
    }

    pub fn path_length(&self) -> T {
        self.samples.windows(2).map(|w| norm3(sub(w[1].position, w[0].position))).fold(T::zero(), |a, b| a + b)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepControl<T> {
    /// s
    pub dt_max: T,
    /// Smallest step accepted before giving up with `StepUnderflow`.
    pub dt_min: T,
    /// Largest displacement per step, in units of the smallest grid spacing.
    pub displacement_cap: T,
}

impl<T: Real> Default for StepControl<T> {
    fn default() -> Self {
        Self { dt_max: T::of(0.05), dt_min: T::of(1e-12), displacement_cap: T::half() }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StopRules<T> {
    /// Distance to a tip apex edge counted as capture; `None` uses the
    /// particle radius.
    pub capture_radius: Option<T>,
    /// m/s
    pub speed_floor: T,
    /// s
    pub t_max: T,
}

impl<T: Real> Default for StopRules<T> {
    fn default() -> Self {
        Self { capture_radius: None, speed_floor: T::of(1e-7), t_max: T::of(300.0) }
    }
}

/// Everything the integrator needs besides the start point.
#[derive(Clone, Copy, Debug)]
pub struct Tracer<'a, T> {
    pub force: &'a VectorField3<T>,
    pub spec: &'a DeviceSpec<T>,
    /// Labels on the force field's grid; insulator cells are walls.
    pub walls: &'a MaterialGrid<T>,
    pub model: ParticleModel<T>,
    pub fluid: FluidProps<T>,
    pub step: StepControl<T>,
    pub stop: StopRules<T>,
    /// Uniform background flow velocity (m/s).
    pub ambient: Vec3<T>,
}

#[inline]
fn sub<T: Real>(a: Vec3<T>, b: Vec3<T>) -> Vec3<T> {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[inline]
fn axpy<T: Real>(x: Vec3<T>, s: T, v: Vec3<T>) -> Vec3<T> {
    [x[0] + s * v[0], x[1] + s * v[1], x[2] + s * v[2]]
}

/// Drag-limited velocity `F / (6π η r)` at `point`, F interpolated trilinearly.
pub fn velocity_at<T: Real>(
    force: &VectorField3<T>,
    model: &ParticleModel<T>,
    fluid: &FluidProps<T>,
    point: Vec3<T>,
) -> Result<Vec3<T>> {
    let f = force.sample(point)?;
    let drag = T::of(6.0) * T::PI() * fluid.viscosity * model.radius;
    Ok([f[0] / drag, f[1] / drag, f[2] / drag])
}

impl<T: Real> DeviceSpec<T> {
    /// Distance from `p` to the apex edge (vertical segment from the slide to
    /// the top of the insulator) of the nearest tip, with that tip's pair index.
    pub fn nearest_apex(&self, p: Vec3<T>) -> Option<(usize, T)> {
        let dz = (p[2] - self.insulator_height).max(T::zero()) + (-p[2]).max(T::zero());
        self.tip_pairs
            .iter()
            .enumerate()
            .flat_map(|(n, tp)| {
                tp.apexes(self.channel_width).map(|[ax, ay]| {
                    let d = ((p[0] - ax).powi(2) + (p[1] - ay).powi(2) + dz * dz).sqrt();
                    (n, d)
                })
            })
            .min_by(|a, b| a.1.partial_cmp(&b.1).unwrap_or(std::cmp::Ordering::Equal))
    }
}

impl<'a, T: Real> Tracer<'a, T> {
    pub fn validate(&self) -> Result<()> {
        if !self.walls.grid().matches(&self.force.grid) {
            return Err(Error::GridMismatch);
        }
        self.model.validate()?;
        self.fluid.validate()?;
        let s = &self.step;
        if !(s.dt_max > T::zero()) || !(s.dt_min > T::zero()) || s.dt_min > s.dt_max {
            return Err(Error::validation("step_control", "need 0 < dt_min <= dt_max"));
        }
        if !(s.displacement_cap > T::zero()) {
            return Err(Error::validation("displacement_cap", "must be positive"));
        }
        if !(self.stop.t_max > T::zero()) || !(self.stop.speed_floor >= T::zero()) {
            return Err(Error::validation("stop_rules", "need t_max > 0 and speed_floor >= 0"));
        }
        if let Some(r) = self.stop.capture_radius {
            if !(r >= T::zero()) {
                return Err(Error::validation("capture_radius", "must be non-negative"));
            }
        }
        Ok(())
    }

    fn velocity(&self, p: Vec3<T>) -> Result<Vec3<T>> {
        let v = velocity_at(self.force, &self.model, &self.fluid, p)?;
        Ok([v[0] + self.ambient[0], v[1] + self.ambient[1], v[2] + self.ambient[2]])
    }

    /// Whether `p` lies in an insulator cell; points past a domain face use
    /// the cell just inside it.
    fn blocked(&self, p: Vec3<T>) -> bool {
        let g = self.walls.grid();
        let (lo, hi) = (g.origin, g.upper());
        let mut q = p;
        for a in 0..3 {
            q[a] = q[a].max(lo[a]).min(hi[a]);
        }
        matches!(self.walls.probe(q), Ok(Label::Insulator))
    }

    /// Where the move `from → to` ends once insulator walls are respected:
    /// the full move if it is clear, otherwise the longest clear move with
    /// one, then two, components dropped. Dropped components are then
    /// advanced as far as the wall allows.
    fn slide(&self, from: Vec3<T>, to: Vec3<T>) -> Vec3<T> {
        if !self.blocked(to) {
            return to;
        }
        const KEEP: [[[bool; 3]; 3]; 2] = [
            [[true, true, false], [true, false, true], [false, true, true]],
            [[true, false, false], [false, true, false], [false, false, true]],
        ];
        for tier in KEEP {
            let mut best: Option<(T, Vec3<T>)> = None;
            for keep in tier {
                let mut q = from;
                for a in 0..3 {
                    if keep[a] {
                        q[a] = to[a];
                    }
                }
                let d = norm3(sub(q, from));
                if d > T::zero() && !self.blocked(q) && best.is_none_or(|(bd, _)| d > bd) {
                    best = Some((d, q));
                }
            }
            if let Some((_, mut q)) = best {
                for a in 0..3 {
                    if q[a] != to[a] {
                        q = self.advance_axis(q, a, to[a]);
                    }
                }
                return q;
            }
        }
        let mut q = from;
        for (a, &target) in to.iter().enumerate() {
            q = self.advance_axis(q, a, target);
        }
        q
    }

    /// Moves `p` along axis `a` toward `target` by bisection, stopping short
    /// of the first insulator cell.
    fn advance_axis(&self, p: Vec3<T>, a: usize, target: T) -> Vec3<T> {
        let (mut lo, mut hi) = (T::zero(), T::one());
        let at = |s: T| {
            let mut q = p;
            q[a] = p[a] + s * (target - p[a]);
            q
        };
        for _ in 0..40 {
            let mid = (lo + hi) * T::half();
            if self.blocked(at(mid)) {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        at(lo)
    }

    /// Face crossed by the straight move `from → to`, and where.
    fn exit_through(&self, from: Vec3<T>, to: Vec3<T>) -> Option<(Face, Vec3<T>)> {
        let g = &self.force.grid;
        let lo = g.origin;
        let hi = g.upper();
        let faces = [
            (0, lo[0], true, Face::XMin),
            (0, hi[0], false, Face::XMax),
            (1, lo[1], true, Face::YMin),
            (1, hi[1], false, Face::YMax),
            (2, hi[2], false, Face::ZMax),
        ];
        let mut first: Option<(T, Face)> = None;
        for (a, bound, is_lower, face) in faces {
            let outside = if is_lower { to[a] < bound } else { to[a] > bound };
            if outside {
                let span = to[a] - from[a];
                let t =
                    if span != T::zero() { ((bound - from[a]) / span).max(T::zero()).min(T::one()) } else { T::zero() };
                if first.is_none_or(|(tb, _)| t < tb) {
                    first = Some((t, face));
                }
            }
        }
        first.map(|(t, face)| {
            let mut q = axpy(from, t, sub(to, from));
            // Land exactly on the crossed face.
            match face {
                Face::XMin => q[0] = lo[0],
                Face::XMax => q[0] = hi[0],
                Face::YMin => q[1] = lo[1],
                Face::YMax => q[1] = hi[1],
                Face::ZMax => q[2] = hi[2],
            }
            (face, q)
        })
    }

    /// Integrates one trajectory from `start` until capture, exit or `t_max`.
    pub fn integrate(&self, start: ParticleState<T>) -> Result<TrajectoryResult<T>> {
        self.validate()?;
        let grid = &self.force.grid;
        if !grid.contains(start.position) {
            return Err(Error::OutOfDomain { point: to_f64_3(start.position) });
        }
        let capture = self.stop.capture_radius.unwrap_or(self.model.radius);
        let h = grid.dx.min(grid.dy).min(grid.dz);
        let cap = self.step.displacement_cap * h;
        let t_end = start.time + self.stop.t_max;

        if self.blocked(start.position) {
            return Err(Error::invalid("release point lies inside an insulator cell"));
        }
        let mut x = start.position;
        x[2] = x[2].max(T::zero());
        let mut t = start.time;
        let mut samples = vec![ParticleState { position: x, time: t }];
        let mut speeds = vec![T::zero()];
        let mut speed = T::zero();
        // Steps shorter than this in both space and time are not recorded.
        let spacing = h * T::of(0.1);

        let done = |mut samples: Vec<ParticleState<T>>, mut speeds: Vec<T>, x: Vec3<T>, t: T, speed: T, outcome| {
            if samples.last().map(|s| s.position) != Some(x) || samples.last().map(|s| s.time) != Some(t) {
                samples.push(ParticleState { position: x, time: t });
                speeds.push(speed);
            }
            Ok(TrajectoryResult { samples, speeds, outcome, final_speed: speed })
        };

        loop {
            if t >= t_end {
                return done(samples, speeds, x, t, speed, Outcome::Timeout);
            }
            let v1 = self.velocity(x)?;
            let s1 = norm3(v1);
            let mut dt = self.step.dt_max.min(t_end - t);
            if s1 > T::zero() {
                dt = dt.min(cap / s1);
            }
            if dt < self.step.dt_min && t + dt < t_end {
                return Err(Error::StepUnderflow { time: t.f64(), position: to_f64_3(x) });
            }
            let v2 = loop {
                let mid = axpy(x, dt * T::half(), v1);
                let v2 = if grid.contains(mid) { self.velocity(mid)? } else { v1 };
                if norm3(v2) * dt <= T::two() * cap {
                    break v2;
                }
                dt = dt * T::half();
                if dt < self.step.dt_min {
                    return Err(Error::StepUnderflow { time: t.f64(), position: to_f64_3(x) });
                }
            };
            let mut next = axpy(x, dt, v2);
            if next[2] < T::zero() {
                next[2] = T::zero();
            }
            next = self.slide(x, next);
            t = t + dt;
            if let Some((face, at)) = self.exit_through(x, next) {
                let speed = norm3(sub(at, x)) / dt;
                return done(samples, speeds, at, t, speed, Outcome::Exited { face });
            }
            speed = norm3(sub(next, x)) / dt;
            let stuck = next == x;
            x = next;
            if speed < self.stop.speed_floor {
                if let Some((pair, d)) = self.spec.nearest_apex(x) {
                    if d <= capture {
                        return done(samples, speeds, x, t, speed, Outcome::Trapped { tip_pair: pair });
                    }
                }
            }
            if stuck {
                // The step map has a fixed point here; nothing changes until t_max.
                return done(samples, speeds, x, t_end, speed, Outcome::Timeout);
            }
            let last = samples[samples.len() - 1];
            if norm3(sub(x, last.position)) >= spacing || t - last.time >= self.step.dt_max {
                samples.push(ParticleState { position: x, time: t });
                speeds.push(speed);
            }
        }
    }

    /// Trajectories from a lattice of `counts` release points placed at the
    /// centres of an even subdivision of the box `[lo, hi]`. Lattice points
    /// inside insulator cells are skipped.
    pub fn release_grid(&self, lo: Vec3<T>, hi: Vec3<T>, counts: [usize; 3]) -> Result<Ensemble<T>> {
        let mut releases = lattice(lo, hi, counts)?;
        for p in &releases {
            if !self.force.grid.contains(*p) {
                return Err(Error::OutOfDomain { point: to_f64_3(*p) });
            }
        }
        releases.retain(|&p| !self.blocked(p));
        let trajectories = releases
            .par_iter()
            .map(|&p| self.integrate(ParticleState { position: p, time: T::zero() }))
            .collect::<Result<Vec<_>>>()?;
        Ok(Ensemble { releases, trajectories })
    }
}

/// Cell-centred lattice over `[lo, hi]`, x fastest.
pub fn lattice<T: Real>(lo: Vec3<T>, hi: Vec3<T>, counts: [usize; 3]) -> Result<Vec<Vec3<T>>> {
    if counts.contains(&0) {
        return Err(Error::invalid("release counts must be positive"));
    }
    if (0..3).any(|a| hi[a] < lo[a]) {
        return Err(Error::invalid("release region has negative extent"));
    }
    let coord = |a: usize, n: usize| lo[a] + (hi[a] - lo[a]) * (T::of(n as f64) + T::half()) / T::of(counts[a] as f64);
    let mut out = Vec::with_capacity(counts.iter().product());
    for k in 0..counts[2] {
        for j in 0..counts[1] {
            for i in 0..counts[0] {
                out.push([coord(0, i), coord(1, j), coord(2, k)]);
            }
        }
    }
    Ok(out)
}

#[derive(Clone, Debug)]
pub struct Ensemble<T> {
    pub releases: Vec<Vec3<T>>,
    pub trajectories: Vec<TrajectoryResult<T>>,
}

impl<T: Real> Ensemble<T> {
    pub fn capture_fraction(&self) -> f64 {
        if self.trajectories.is_empty() {
            return 0.0;
        }
        let trapped = self.trajectories.iter().filter(|t| t.outcome.is_trapped()).count();
        trapped as f64 / self.trajectories.len() as f64
    }
}
