//! Scalar and vector fields sampled at cell centres, with trilinear sampling
//! and second-order finite-difference gradients.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid3;
use crate::scalar::{norm3, Real, Vec3};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ScalarQuantity {
    /// V
    Potential,
    /// V²/m²
    ESquared,
    /// V²/m³
    GradE2Magnitude,
    /// 0 = medium, 1 = insulator
    MaterialLabel,
    Other,
}

impl ScalarQuantity {
    pub fn name(self) -> &'static str {
        match self {
            ScalarQuantity::Potential => "potential_v",
            ScalarQuantity::ESquared => "e_squared_v2_per_m2",
            ScalarQuantity::GradE2Magnitude => "grad_e2_magnitude_v2_per_m3",
            ScalarQuantity::MaterialLabel => "material_label",
            ScalarQuantity::Other => "value",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum VectorQuantity {
    /// V/m
    EField,
    /// V²/m³
    GradE2,
    /// N
    DepForce,
    Other,
}

impl VectorQuantity {
    pub fn name(self) -> &'static str {
        match self {
            VectorQuantity::EField => "e_field_v_per_m",
            VectorQuantity::GradE2 => "grad_e2_v2_per_m3",
            VectorQuantity::DepForce => "dep_force_n",
            VectorQuantity::Other => "value",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScalarField3<T> {
    pub grid: Grid3<T>,
    pub values: Vec<T>,
    pub quantity: ScalarQuantity,
}

#[derive(Clone, Debug, PartialEq)]
pub struct VectorField3<T> {
    pub grid: Grid3<T>,
    pub values: Vec<Vec3<T>>,
    pub quantity: VectorQuantity,
}

/// Straight sampling line with `samples` uniformly spaced points, both ends
/// included.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AxisLine<T> {
    pub start: Vec3<T>,
    pub end: Vec3<T>,
    pub samples: usize,
}

impl<T: Real> AxisLine<T> {
    pub fn length(&self) -> T {
        norm3([self.end[0] - self.start[0], self.end[1] - self.start[1], self.end[2] - self.start[2]])
    }

    pub fn point(&self, n: usize) -> Vec3<T> {
        let t = if self.samples > 1 { T::of(n as f64) / T::of((self.samples - 1) as f64) } else { T::zero() };
        std::array::from_fn(|a| self.start[a] + t * (self.end[a] - self.start[a]))
    }
}

impl<T: Real> ScalarField3<T> {
    pub fn new(grid: Grid3<T>, values: Vec<T>, quantity: ScalarQuantity) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::GridMismatch);
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("field contains non-finite values"));
        }
        Ok(Self { grid, values, quantity })
    }

    /// Field whose value at each centre is `f(centre)`.
    pub fn from_fn(grid: Grid3<T>, quantity: ScalarQuantity, f: impl Fn(Vec3<T>) -> T + Sync) -> Self {
        let values = (0..grid.len())
            .into_par_iter()
            .map(|idx| {
                let [i, j, k] = grid.ijk(idx);
                f(grid.center(i, j, k))
            })
            .collect();
        Self { grid, values, quantity }
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize, k: usize) -> T {
        self.values[self.grid.index(i, j, k)]
    }

    /// Trilinear interpolation between cell centres.
    pub fn sample(&self, p: Vec3<T>) -> Result<T> {
        let (b, w) = self.grid.stencil(p)?;
        let mut acc = T::zero();
        for (dk, wk) in [(0, T::one() - w[2]), (1, w[2])] {
            for (dj, wj) in [(0, T::one() - w[1]), (1, w[1])] {
                for (di, wi) in [(0, T::one() - w[0]), (1, w[0])] {
                    let wt = wi * wj * wk;
                    if wt != T::zero() {
                        acc = acc + wt * self.at(b[0] + di, b[1] + dj, b[2] + dk);
                    }
                }
            }
        }
        Ok(acc)
    }

    pub fn max(&self) -> T {
        self.values.iter().copied().fold(T::neg_infinity(), T::max)
    }

    pub fn min(&self) -> T {
        self.values.iter().copied().fold(T::infinity(), T::min)
    }

    pub fn scaled(&self, factor: T) -> Self {
        Self { grid: self.grid, values: self.values.iter().map(|&v| v * factor).collect(), quantity: self.quantity }
    }
}

impl<T: Real> VectorField3<T> {
    pub fn new(grid: Grid3<T>, values: Vec<Vec3<T>>, quantity: VectorQuantity) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::GridMismatch);
        }
        if values.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::invalid("field contains non-finite values"));
        }
        Ok(Self { grid, values, quantity })
    }

    pub fn from_fn(grid: Grid3<T>, quantity: VectorQuantity, f: impl Fn(Vec3<T>) -> Vec3<T> + Sync) -> Self {
        let values = (0..grid.len())
            .into_par_iter()
            .map(|idx| {
                let [i, j, k] = grid.ijk(idx);
                f(grid.center(i, j, k))
            })
            .collect();
        Self { grid, values, quantity }
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize, k: usize) -> Vec3<T> {
        self.values[self.grid.index(i, j, k)]
    }

    pub fn sample(&self, p: Vec3<T>) -> Result<Vec3<T>> {
        let (b, w) = self.grid.stencil(p)?;
        let mut acc = [T::zero(); 3];
        for (dk, wk) in [(0, T::one() - w[2]), (1, w[2])] {
            for (dj, wj) in [(0, T::one() - w[1]), (1, w[1])] {
                for (di, wi) in [(0, T::one() - w[0]), (1, w[0])] {
                    let wt = wi * wj * wk;
                    if wt != T::zero() {
                        let v = self.at(b[0] + di, b[1] + dj, b[2] + dk);
                        for a in 0..3 {
                            acc[a] = acc[a] + wt * v[a];
                        }
                    }
                }
            }
        }
        Ok(acc)
    }

    pub fn magnitude(&self, quantity: ScalarQuantity) -> ScalarField3<T> {
        ScalarField3 { grid: self.grid, values: self.values.par_iter().map(|&v| norm3(v)).collect(), quantity }
    }

    pub fn scaled(&self, factor: T) -> Self {
        Self {
            grid: self.grid,
            values: self.values.iter().map(|v| [v[0] * factor, v[1] * factor, v[2] * factor]).collect(),
            quantity: self.quantity,
        }
    }
}

/// Derivative of `values` along `axis` at cell `(i, j, k)`: central
/// differences inside, one-sided second-order stencils on the first and last
/// cells.
#[inline]
fn partial<T: Real>(g: &Grid3<T>, values: &[T], axis: usize, ijk: [usize; 3]) -> T {
    let n = g.dims()[axis];
    let h = g.spacing()[axis];
    let stride = match axis {
        0 => 1,
        1 => g.nx,
        _ => g.slab(),
    };
    let idx = g.index(ijk[0], ijk[1], ijk[2]);
    let m = ijk[axis];
    let two_h = T::two() * h;
    if m == 0 {
        let (f0, f1, f2) = (values[idx], values[idx + stride], values[idx + 2 * stride]);
        (T::of(-3.0) * f0 + T::of(4.0) * f1 - f2) / two_h
    } else if m == n - 1 {
        let (f0, f1, f2) = (values[idx], values[idx - stride], values[idx - 2 * stride]);
        (T::of(3.0) * f0 - T::of(4.0) * f1 + f2) / two_h
    } else {
        (values[idx + stride] - values[idx - stride]) / two_h
    }
}

/// Gradient of a scalar field on the same cell centres.
pub fn gradient<T: Real>(field: &ScalarField3<T>, quantity: VectorQuantity) -> VectorField3<T> {
    let g = field.grid;
    let values = (0..g.len())
        .into_par_iter()
        .map(|idx| {
            let ijk = g.ijk(idx);
            [partial(&g, &field.values, 0, ijk), partial(&g, &field.values, 1, ijk), partial(&g, &field.values, 2, ijk)]
        })
        .collect();
    VectorField3 { grid: g, values, quantity }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid() -> Grid3<f64> {
        Grid3::new([6, 5, 4], [1.0, 2.0, 0.5], [0.0, -1.0, 3.0]).unwrap()
    }

    #[test]
    fn trilinear_reproduces_affine_fields() {
        let g = grid();
        let f = ScalarField3::from_fn(g, ScalarQuantity::Other, |p| 2.0 * p[0] - 0.5 * p[1] + 3.0 * p[2] + 1.0);
        for p in [[0.7, 0.3, 3.4], [3.3, 6.1, 4.6], [5.4, 2.0, 3.9]] {
            let exact = 2.0 * p[0] - 0.5 * p[1] + 3.0 * p[2] + 1.0;
            assert!((f.sample(p).unwrap() - exact).abs() < 1e-12);
        }
    }

    #[test]
    fn gradient_of_quadratic_is_exact() {
        // Second-order stencils (including one-sided ones) differentiate
        // quadratics exactly.
        let g = grid();
        let f = ScalarField3::from_fn(g, ScalarQuantity::Other, |p| p[0] * p[0] - p[1] * p[2] + 4.0 * p[2]);
        let grad = gradient(&f, VectorQuantity::Other);
        for idx in 0..g.len() {
            let [i, j, k] = g.ijk(idx);
            let p = g.center(i, j, k);
            let exact = [2.0 * p[0], -p[2], -p[1] + 4.0];
            for (g, e) in grad.values[idx].iter().zip(exact) {
                assert!((g - e).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn sample_outside_is_rejected() {
        let f = ScalarField3::from_fn(grid(), ScalarQuantity::Other, |_| 1.0);
        assert!(matches!(f.sample([10.0, 0.0, 3.5]), Err(Error::OutOfDomain { .. })));
    }

    #[test]
    fn constructors_check_lengths_and_finiteness() {
        let g = grid();
        assert!(matches!(ScalarField3::new(g, vec![0.0; 3], ScalarQuantity::Other), Err(Error::GridMismatch)));
        let mut v = vec![0.0; g.len()];
        v[4] = f64::NAN;
        assert!(ScalarField3::new(g, v, ScalarQuantity::Other).is_err());
    }
}
