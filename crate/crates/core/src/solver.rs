//! Conduction solve `∇·(σ∇φ) = 0` on the material grid and the derived
//! field quantities E, E² and ∇(E²).
//!
//! Cell-centred finite volumes with a 7-point stencil. Face conductivities are
//! the harmonic mean of the two adjacent cells. The electrodes are Dirichlet
//! faces at x = 0 (φ = 0) and x = L (φ = V), half a cell from the first and last
//! centres; every other face is insulating. After eliminating the Dirichlet
//! values the system is symmetric positive definite and is solved matrix-free
//! with Jacobi-preconditioned conjugate gradients.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{gradient, AxisLine, ScalarField3, ScalarQuantity, VectorField3, VectorQuantity};
use crate::geometry::{DeviceSpec, Label, MaterialGrid};
use crate::grid::Grid3;
use crate::scalar::Real;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveConfig<T> {
    pub rel_tolerance: T,
    pub max_iterations: usize,
    /// σ_insulator / σ_medium used by the solve.
    pub conductivity_ratio: T,
    /// Progress is logged every this many iterations (0 disables).
    pub log_every: usize,
}

impl<T: Real> Default for SolveConfig<T> {
    fn default() -> Self {
        Self { rel_tolerance: T::of(1e-8), max_iterations: 20_000, conductivity_ratio: T::of(1e-6), log_every: 500 }
    }
}

impl<T: Real> SolveConfig<T> {
    pub fn validate(&self) -> Result<()> {
        if !(self.rel_tolerance > T::zero() && self.rel_tolerance < T::one()) {
            return Err(Error::validation("rel_tolerance", "must lie in (0, 1)"));
        }
        if !(self.conductivity_ratio >= T::zero() && self.conductivity_ratio < T::one()) {
            return Err(Error::validation("conductivity_ratio", "must lie in [0, 1)"));
        }
        if self.max_iterations == 0 {
            return Err(Error::validation("max_iterations", "must be at least 1"));
        }
        Ok(())
    }
}

/// Converged potential plus solver statistics.
#[derive(Clone, Debug)]
pub struct PotentialSolution<T> {
    pub phi: ScalarField3<T>,
    pub iterations: usize,
    /// ‖b − Aφ‖ / ‖b‖ recomputed from the returned φ.
    pub relative_residual: T,
    /// Voltage on the x = L electrode.
    pub voltage: T,
}

/// Matrix-free conduction operator. Face couplings are conductance per unit
/// volume looked up from the two cell labels, with conductivities normalised
/// to the medium.
struct Operator<'a, T> {
    grid: Grid3<T>,
    labels: &'a [Label],
    /// Coupling across x, y and z faces indexed by `[label_a][label_b]`.
    face: [[[T; 2]; 2]; 3],
    /// Coupling to an electrode face, by label.
    electrode: [T; 2],
    diag: Vec<T>,
    /// Per (j, k) row: true when every cell in the row is medium.
    pure_rows: Vec<bool>,
}

#[inline]
fn harmonic<T: Real>(a: T, b: T) -> T {
    let s = a + b;
    if s > T::zero() {
        T::two() * a * b / s
    } else {
        T::zero()
    }
}

impl<'a, T: Real> Operator<'a, T> {
    fn new(mg: &'a MaterialGrid<T>, ratio: T) -> Self {
        let g = *mg.grid();
        let sigma = [T::one(), ratio];
        let inv_h2 = [T::one() / (g.dx * g.dx), T::one() / (g.dy * g.dy), T::one() / (g.dz * g.dz)];
        let mut face = [[[T::zero(); 2]; 2]; 3];
        for (a, table) in face.iter_mut().enumerate() {
            for (la, row) in table.iter_mut().enumerate() {
                for (lb, w) in row.iter_mut().enumerate() {
                    *w = harmonic(sigma[la], sigma[lb]) * inv_h2[a];
                }
            }
        }
        let electrode = [T::two() * sigma[0] * inv_h2[0], T::two() * sigma[1] * inv_h2[0]];
        let labels = mg.labels();
        let (nx, ny, nz, slab) = (g.nx, g.ny, g.nz, g.slab());
        let mut diag = vec![T::zero(); g.len()];
        diag.par_chunks_mut(slab).enumerate().for_each(|(k, d)| {
            for j in 0..ny {
                for i in 0..nx {
                    let c = g.index(i, j, k);
                    let l = labels[c] as usize;
                    let mut acc = T::zero();
                    acc = acc + if i + 1 < nx { face[0][l][labels[c + 1] as usize] } else { electrode[l] };
                    acc = acc + if i > 0 { face[0][l][labels[c - 1] as usize] } else { electrode[l] };
                    if j + 1 < ny {
                        acc = acc + face[1][l][labels[c + nx] as usize];
                    }
                    if j > 0 {
                        acc = acc + face[1][l][labels[c - nx] as usize];
                    }
                    if k + 1 < nz {
                        acc = acc + face[2][l][labels[c + slab] as usize];
                    }
                    if k > 0 {
                        acc = acc + face[2][l][labels[c - slab] as usize];
                    }
                    d[i + nx * j] = acc;
                }
            }
        });
        let pure_rows = labels.chunks(nx).map(|row| row.iter().all(|&l| l == Label::Medium)).collect();
        Self { grid: g, labels, face, electrode, diag, pure_rows }
    }

    /// `out = A x`; returns `x·out` accumulated per slab in a fixed order.
    ///
    /// Rows (runs along x) made entirely of medium take a constant-coefficient
    /// path; rows touching insulator look couplings up per face.
    fn apply(&self, x: &[T], out: &mut [T]) -> T {
        let g = &self.grid;
        let (nx, ny, nz, slab) = (g.nx, g.ny, g.nz, g.slab());
        let labels = self.labels;
        let [fx, fy, fz] = self.face;
        let pure = &self.pure_rows;
        let partial: Vec<T> = out
            .par_chunks_mut(slab)
            .enumerate()
            .map(|(k, o)| {
                let mut dot = T::zero();
                for j in 0..ny {
                    let r = j + ny * k;
                    let row = k * slab + nx * j;
                    let xr = &x[row..row + nx];
                    let lr = &labels[row..row + nx];
                    let dr = &self.diag[row..row + nx];
                    let or = &mut o[nx * j..nx * (j + 1)];
                    if pure[r] {
                        let w = fx[0][0];
                        or[0] = dr[0] * xr[0] - w * xr[1];
                        for i in 1..nx - 1 {
                            or[i] = dr[i] * xr[i] - w * (xr[i - 1] + xr[i + 1]);
                        }
                        or[nx - 1] = dr[nx - 1] * xr[nx - 1] - w * xr[nx - 2];
                    } else {
                        for i in 0..nx {
                            or[i] = dr[i] * xr[i];
                        }
                        for i in 0..nx - 1 {
                            let w = fx[lr[i] as usize & 1][lr[i + 1] as usize & 1];
                            or[i] = or[i] - w * xr[i + 1];
                            or[i + 1] = or[i + 1] - w * xr[i];
                        }
                    }
                    let mut couple = |nb: usize, nb_row: usize, table: &[[T; 2]; 2]| {
                        let xn = &x[nb..nb + nx];
                        if pure[r] && pure[nb_row] {
                            let w = table[0][0];
                            for i in 0..nx {
                                or[i] = or[i] - w * xn[i];
                            }
                        } else {
                            let ln = &labels[nb..nb + nx];
                            for i in 0..nx {
                                or[i] = or[i] - table[lr[i] as usize & 1][ln[i] as usize & 1] * xn[i];
                            }
                        }
                    };
                    if j > 0 {
                        couple(row - nx, r - 1, &fy);
                    }
                    if j + 1 < ny {
                        couple(row + nx, r + 1, &fy);
                    }
                    if k > 0 {
                        couple(row - slab, r - ny, &fz);
                    }
                    if k + 1 < nz {
                        couple(row + slab, r + ny, &fz);
                    }
                    dot = dot + lane_dot(or, xr);
                }
                dot
            })
            .collect();
        sum_ordered(partial)
    }

    /// Largest mismatch between the current through an interior x cut and
    /// the current leaving the x = 0 electrode, relative to the latter.
    fn current_defect(&self, x: &[T], r: &[T]) -> T {
        let nx = self.grid.nx;
        let mut column = vec![T::zero(); nx];
        let mut inflow = T::zero();
        for (c, (&rc, &xc)) in r.iter().zip(x).enumerate() {
            column[c % nx] = column[c % nx] + rc;
            if c % nx == 0 {
                inflow = inflow + self.electrode[self.labels[c] as usize] * xc;
            }
        }
        if inflow == T::zero() {
            return T::zero();
        }
        let mut cut = T::zero();
        let mut worst = T::zero();
        for v in column {
            cut = cut + v;
            worst = worst.max(cut.abs());
        }
        worst / inflow.abs()
    }

    fn rhs(&self, voltage: T) -> Vec<T> {
        let nx = self.grid.nx;
        self.labels
            .iter()
            .enumerate()
            .map(|(c, &l)| if c % nx == nx - 1 { self.electrode[l as usize] * voltage } else { T::zero() })
            .collect()
    }
}

fn sum_ordered<T: Real>(partial: Vec<T>) -> T {
    partial.into_iter().fold(T::zero(), |s, v| s + v)
}

const LANES: usize = 8;

/// Dot product over independent accumulator lanes so the reduction is not a
/// single dependency chain; the order is still fixed.
#[inline]
fn lane_dot<T: Real>(a: &[T], b: &[T]) -> T {
    let mut acc = [T::zero(); LANES];
    for (ac, bc) in a.chunks(LANES).zip(b.chunks(LANES)) {
        for l in 0..ac.len() {
            acc[l] = acc[l] + ac[l] * bc[l];
        }
    }
    sum_ordered(acc.to_vec())
}

/// Dot product with a fixed reduction order: per-slab partial sums added
/// sequentially, independent of the worker count.
fn dot<T: Real>(a: &[T], b: &[T], chunk: usize) -> T {
    let partial: Vec<T> = a.par_chunks(chunk).zip(b.par_chunks(chunk)).map(|(x, y)| lane_dot(x, y)).collect();
    sum_ordered(partial)
}

fn residual<T: Real>(op: &Operator<'_, T>, x: &[T], b: &[T], scratch: &mut [T]) -> Vec<T> {
    op.apply(x, scratch);
    b.iter().zip(scratch.iter()).map(|(&bi, &ai)| bi - ai).collect()
}

/// Solves for the electric potential with the electrode drive from `spec`.
pub fn solve_potential<T: Real>(
    mg: &MaterialGrid<T>,
    spec: &DeviceSpec<T>,
    cfg: &SolveConfig<T>,
) -> Result<PotentialSolution<T>> {
    cfg.validate()?;
    let g = *mg.grid();
    if !mg.labels().contains(&Label::Medium) {
        return Err(Error::SingularSystem("domain contains no conducting medium".into()));
    }
    let voltage = spec.drive_voltage();
    if !voltage.is_finite() {
        return Err(Error::invalid("electrode voltage must be finite"));
    }
    let op = Operator::new(mg, cfg.conductivity_ratio);
    if op.diag.iter().any(|&d| !(d > T::zero())) {
        return Err(Error::SingularSystem(
            "cells without any conducting face (conductivity_ratio 0 leaves insulator cells floating)".into(),
        ));
    }
    let n = g.len();
    let chunk = g.slab();
    let b = op.rhs(voltage);
    let b_norm = dot(&b, &b, chunk).sqrt();
    if b_norm == T::zero() {
        let phi = ScalarField3::new(g, vec![T::zero(); n], ScalarQuantity::Potential)?;
        return Ok(PotentialSolution { phi, iterations: 0, relative_residual: T::zero(), voltage });
    }

    // Linear ramp between the electrodes as the starting guess.
    let length = g.extent()[0];
    let mut x: Vec<T> = (0..n).map(|idx| voltage * (g.center_coord(0, idx % g.nx) - g.origin[0]) / length).collect();
    let inv_diag: Vec<T> = op.diag.iter().map(|&d| T::one() / d).collect();
    let diag = &inv_diag;
    let mut ap = vec![T::zero(); n];
    let mut r = residual(&op, &x, &b, &mut ap);
    let mut p: Vec<T> = r.iter().zip(diag).map(|(&ri, &d)| ri * d).collect();
    let mut rz = dot(&r, &p, chunk);
    let mut rel = dot(&r, &r, chunk).sqrt() / b_norm;
    let mut iterations = 0;
    // First iterate that met the residual target while current conservation
    // was still being tightened; used if that tightening stalls.
    let mut fallback: Option<Vec<T>> = None;

    while iterations < cfg.max_iterations {
        let polishing = fallback.is_some();
        if rel <= cfg.rel_tolerance || polishing {
            // Confirm against the true residual; restart if recursion drifted.
            r = residual(&op, &x, &b, &mut ap);
            rel = dot(&r, &r, chunk).sqrt() / b_norm;
            if rel <= cfg.rel_tolerance {
                // Also require every x cut to carry the electrode current.
                if op.current_defect(&x, &r) <= cfg.rel_tolerance {
                    break;
                }
                if !polishing {
                    fallback = Some(x.clone());
                }
            } else if polishing {
                break;
            } else {
                for ((pm, &rm), &d) in p.iter_mut().zip(&r).zip(diag) {
                    *pm = rm * d;
                }
                rz = dot(&r, &p, chunk);
            }
        }
        let pap = op.apply(&p, &mut ap);
        if !(pap > T::zero()) {
            if polishing {
                break;
            }
            return Err(Error::SingularSystem("operator lost positive definiteness".into()));
        }
        let alpha = rz / pap;
        // x += αp, r −= αAp, accumulating r·M⁻¹r and r·r per slab.
        let partial: Vec<(T, T)> = x
            .par_chunks_mut(chunk)
            .zip(r.par_chunks_mut(chunk))
            .zip(p.par_chunks(chunk))
            .zip(ap.par_chunks(chunk))
            .zip(diag.par_chunks(chunk))
            .map(|((((xs, rs), ps), aps), ds)| {
                for (xm, &pm) in xs.iter_mut().zip(ps) {
                    *xm = *xm + alpha * pm;
                }
                for (rm, &am) in rs.iter_mut().zip(aps) {
                    *rm = *rm - alpha * am;
                }
                let mut rz_s = [T::zero(); LANES];
                let mut rr_s = [T::zero(); LANES];
                for (rc, dc) in rs.chunks(LANES).zip(ds.chunks(LANES)) {
                    for l in 0..rc.len() {
                        let rr = rc[l] * rc[l];
                        rz_s[l] = rz_s[l] + rr * dc[l];
                        rr_s[l] = rr_s[l] + rr;
                    }
                }
                (sum_ordered(rz_s.to_vec()), sum_ordered(rr_s.to_vec()))
            })
            .collect();
        let (rz_new, rr) = partial.into_iter().fold((T::zero(), T::zero()), |(a, b), (c, d)| (a + c, b + d));
        let beta = rz_new / rz;
        rz = rz_new;
        p.par_chunks_mut(chunk).zip(r.par_chunks(chunk)).zip(diag.par_chunks(chunk)).for_each(|((ps, rs), ds)| {
            for m in 0..ps.len() {
                ps[m] = rs[m] * ds[m] + beta * ps[m];
            }
        });
        iterations += 1;
        rel = rr.sqrt() / b_norm;
        if cfg.log_every > 0 && iterations % cfg.log_every == 0 {
            log::info!("cg iteration {iterations}: relative residual {rel:.3e}");
        }
    }
    let mut r_true = residual(&op, &x, &b, &mut ap);
    let mut rel_true = dot(&r_true, &r_true, chunk).sqrt() / b_norm;
    if let Some(saved) = fallback {
        if !(rel_true <= cfg.rel_tolerance) {
            log::warn!("current conservation stalled at round-off; keeping the last iterate within tolerance");
            x = saved;
            r_true = residual(&op, &x, &b, &mut ap);
            rel_true = dot(&r_true, &r_true, chunk).sqrt() / b_norm;
        }
    }
    if rel_true > cfg.rel_tolerance {
        return Err(Error::NotConverged { iterations, residual: rel_true.f64() });
    }
    log::info!("cg converged in {iterations} iterations: relative residual {rel_true:.3e}");
    let phi = ScalarField3::new(g, x, ScalarQuantity::Potential)?;
    Ok(PotentialSolution { phi, iterations, relative_residual: rel_true, voltage })
}

/// Net current (A) crossing each x = const face in the +x direction, from the
/// x = 0 electrode face (entry 0) to the x = L electrode face (entry nx).
pub fn x_face_currents<T: Real>(
    mg: &MaterialGrid<T>,
    cfg: &SolveConfig<T>,
    solution: &PotentialSolution<T>,
) -> Result<Vec<T>> {
    let g = *mg.grid();
    if !g.matches(&solution.phi.grid) {
        return Err(Error::GridMismatch);
    }
    let phi = &solution.phi.values;
    let sigma_m = mg.materials().sigma_medium;
    let sigma = |l: Label| match l {
        Label::Medium => sigma_m,
        Label::Insulator => sigma_m * cfg.conductivity_ratio,
    };
    let area = g.dy * g.dz;
    let mut out = vec![T::zero(); g.nx + 1];
    for k in 0..g.nz {
        for j in 0..g.ny {
            let c0 = g.index(0, j, k);
            let s0 = sigma(mg.labels()[c0]);
            out[0] = out[0] + T::two() * s0 * (T::zero() - phi[c0]) / g.dx * area;
            for i in 0..g.nx - 1 {
                let c = g.index(i, j, k);
                let sf = harmonic(sigma(mg.labels()[c]), sigma(mg.labels()[c + 1]));
                out[i + 1] = out[i + 1] + sf * (phi[c] - phi[c + 1]) / g.dx * area;
            }
            let cl = g.index(g.nx - 1, j, k);
            let sl = sigma(mg.labels()[cl]);
            out[g.nx] = out[g.nx] + T::two() * sl * (phi[cl] - solution.voltage) / g.dx * area;
        }
    }
    Ok(out)
}

/// E = −∇φ, read as the RMS amplitude of the AC field.
pub fn electric_field<T: Real>(phi: &ScalarField3<T>) -> VectorField3<T> {
    let mut e = gradient(phi, VectorQuantity::EField);
    e.values.par_iter_mut().for_each(|v| *v = [-v[0], -v[1], -v[2]]);
    e
}

pub fn e_squared<T: Real>(e: &VectorField3<T>) -> ScalarField3<T> {
    ScalarField3 {
        grid: e.grid,
        values: e.values.par_iter().map(|v| v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).collect(),
        quantity: ScalarQuantity::ESquared,
    }
}

pub fn grad_e_squared<T: Real>(e2: &ScalarField3<T>) -> VectorField3<T> {
    gradient(e2, VectorQuantity::GradE2)
}

/// Every field quantity derived from one potential solve.
#[derive(Clone, Debug)]
pub struct FieldSolution<T> {
    pub potential: PotentialSolution<T>,
    pub e: VectorField3<T>,
    pub e2: ScalarField3<T>,
    pub grad_e2: VectorField3<T>,
    pub grad_e2_magnitude: ScalarField3<T>,
}

impl<T: Real> FieldSolution<T> {
    pub fn from_potential(potential: PotentialSolution<T>) -> Self {
        let e = electric_field(&potential.phi);
        let e2 = e_squared(&e);
        let grad_e2 = grad_e_squared(&e2);
        let grad_e2_magnitude = grad_e2.magnitude(ScalarQuantity::GradE2Magnitude);
        Self { potential, e, e2, grad_e2, grad_e2_magnitude }
    }

    pub fn phi(&self) -> &ScalarField3<T> {
        &self.potential.phi
    }
}

/// Potential solve followed by E, E², ∇(E²) and |∇(E²)|.
pub fn solve_fields<T: Real>(
    mg: &MaterialGrid<T>,
    spec: &DeviceSpec<T>,
    cfg: &SolveConfig<T>,
) -> Result<FieldSolution<T>> {
    Ok(FieldSolution::from_potential(solve_potential(mg, spec, cfg)?))
}

/// Samples the field along `line`; returns `(arc length, value)` pairs.
pub fn line_profile<T: Real>(field: &ScalarField3<T>, line: &AxisLine<T>) -> Result<Vec<(T, T)>> {
    if line.samples == 0 {
        return Err(Error::invalid("line needs at least one sample"));
    }
    let total = line.length();
    let steps = T::of(line.samples.saturating_sub(1).max(1) as f64);
    (0..line.samples)
        .map(|n| {
            let s = total * T::of(n as f64) / steps;
            Ok((s, field.sample(line.point(n))?))
        })
        .collect()
}

/// Line parallel to x at `(y, z)` spanning the whole grid.
pub fn x_line<T: Real>(grid: &Grid3<T>, y: T, z: T, samples: usize) -> AxisLine<T> {
    let up = grid.upper();
    AxisLine { start: [grid.origin[0], y, z], end: [up[0], y, z], samples }
}
