//! Cell-centred structured grid.
//!
//! Values live at cell centres `origin + (i + 1/2) * spacing`; `origin` is the
//! lower corner of the domain. Linear indices run x fastest, then y, then z.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{Real, Vec3};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid3<T> {
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
    pub dx: T,
    pub dy: T,
    pub dz: T,
    pub origin: Vec3<T>,
}

impl<T: Real> Grid3<T> {
    pub fn new(dims: [usize; 3], spacing: Vec3<T>, origin: Vec3<T>) -> Result<Self> {
        if dims.iter().any(|&n| n < 3) {
            return Err(Error::invalid(format!("grid needs at least 3 cells per axis, got {dims:?}")));
        }
        if spacing.iter().any(|&h| !(h > T::zero()) || !h.is_finite()) {
            return Err(Error::invalid("grid spacings must be positive and finite"));
        }
        if origin.iter().any(|o| !o.is_finite()) {
            return Err(Error::invalid("grid origin must be finite"));
        }
        Ok(Self { nx: dims[0], ny: dims[1], nz: dims[2], dx: spacing[0], dy: spacing[1], dz: spacing[2], origin })
    }

    /// Grid covering `[origin, origin + extent]` with cells as close to
    /// `resolution` as an integer count allows (never coarser than 3 per axis).
    pub fn covering(extent: Vec3<T>, resolution: T, origin: Vec3<T>) -> Result<Self> {
        let mut dims = [0usize; 3];
        let mut spacing = [T::zero(); 3];
        for a in 0..3 {
            let n = (extent[a] / resolution).round().to_usize().unwrap_or(0).max(3);
            dims[a] = n;
            spacing[a] = extent[a] / T::of(n as f64);
        }
        Self::new(dims, spacing, origin)
    }

    #[inline]
    pub fn dims(&self) -> [usize; 3] {
        [self.nx, self.ny, self.nz]
    }

    #[inline]
    pub fn spacing(&self) -> Vec3<T> {
        [self.dx, self.dy, self.dz]
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.nx * self.ny * self.nz
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Cells per z-slab.
    #[inline]
    pub fn slab(&self) -> usize {
        self.nx * self.ny
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.nx * (j + self.ny * k)
    }

    #[inline]
    pub fn ijk(&self, idx: usize) -> [usize; 3] {
        let i = idx % self.nx;
        let j = (idx / self.nx) % self.ny;
        let k = idx / self.slab();
        [i, j, k]
    }

    #[inline]
    pub fn center_coord(&self, axis: usize, n: usize) -> T {
        let h = self.spacing()[axis];
        self.origin[axis] + (T::of(n as f64) + T::half()) * h
    }

    #[inline]
    pub fn center(&self, i: usize, j: usize, k: usize) -> Vec3<T> {
        [self.center_coord(0, i), self.center_coord(1, j), self.center_coord(2, k)]
    }

    /// Physical size of the domain along each axis.
    pub fn extent(&self) -> Vec3<T> {
        [self.dx * T::of(self.nx as f64), self.dy * T::of(self.ny as f64), self.dz * T::of(self.nz as f64)]
    }

    pub fn upper(&self) -> Vec3<T> {
        let e = self.extent();
        [self.origin[0] + e[0], self.origin[1] + e[1], self.origin[2] + e[2]]
    }

    /// Whether the point lies in the closed domain box, with a relative slack of
    /// 1e-9 cell to absorb round-off on the faces.
    pub fn contains(&self, p: Vec3<T>) -> bool {
        let up = self.upper();
        let h = self.spacing();
        (0..3).all(|a| {
            let slack = h[a] * T::of(1e-9);
            p[a] >= self.origin[a] - slack && p[a] <= up[a] + slack
        })
    }

    /// Cell containing `p`; points on the upper faces belong to the last cell.
    pub fn cell_of(&self, p: Vec3<T>) -> Result<[usize; 3]> {
        if !self.contains(p) {
            return Err(Error::OutOfDomain { point: crate::scalar::to_f64_3(p) });
        }
        let dims = self.dims();
        let h = self.spacing();
        let mut out = [0usize; 3];
        for a in 0..3 {
            let s = ((p[a] - self.origin[a]) / h[a]).floor();
            let s = s.max(T::zero()).to_usize().unwrap_or(0);
            out[a] = s.min(dims[a] - 1);
        }
        Ok(out)
    }

    /// Trilinear stencil for `p`: base indices and weights along each axis.
    /// Points between the boundary face and the first/last centre are clamped
    /// to that centre (zero-gradient extrapolation).
    pub(crate) fn stencil(&self, p: Vec3<T>) -> Result<([usize; 3], Vec3<T>)> {
        if !self.contains(p) {
            return Err(Error::OutOfDomain { point: crate::scalar::to_f64_3(p) });
        }
        let dims = self.dims();
        let h = self.spacing();
        let mut base = [0usize; 3];
        let mut w = [T::zero(); 3];
        for a in 0..3 {
            let s = (p[a] - self.origin[a]) / h[a] - T::half();
            let last = T::of((dims[a] - 1) as f64);
            let s = s.max(T::zero()).min(last);
            let b = s.floor().to_usize().unwrap_or(0).min(dims[a] - 2);
            base[a] = b;
            w[a] = s - T::of(b as f64);
        }
        Ok((base, w))
    }

    /// Same dimensions, and spacings/origin equal to within 1e-9 relative.
    pub fn matches(&self, other: &Self) -> bool {
        if self.dims() != other.dims() {
            return false;
        }
        let tol = T::of(1e-9);
        let h = self.spacing();
        let ho = other.spacing();
        (0..3).all(|a| (h[a] - ho[a]).abs() <= tol * h[a] && (self.origin[a] - other.origin[a]).abs() <= tol * h[a])
    }
}
