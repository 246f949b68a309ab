//! The orientation-lifted domain and its Cartesian discretization.
//!
//! Nodes are stored x-fastest, then y, then θ. Physical positions are in
//! pixels (`hx` per index step); orientations are in radians with
//! `htheta = 2π / ntheta`.

use serde::{Deserialize, Serialize};
use std::f64::consts::{PI, TAU};

use crate::error::{Error, Result};

/// Reduce an angle to `[0, 2π)`.
pub fn reduce_angle(theta: f64) -> f64 {
    let r = theta.rem_euclid(TAU);
    if r >= TAU {
        0.0
    } else {
        r
    }
}

/// Signed representative of `a - b` in `(-π, π]`.
pub fn angular_difference(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(TAU);
    if d > PI {
        d - TAU
    } else {
        d
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LiftedPoint {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

impl LiftedPoint {
    pub fn new(x: f64, y: f64, theta: f64) -> Self {
        LiftedPoint { x, y, theta: reduce_angle(theta) }
    }

    pub fn xy(&self) -> [f64; 2] {
        [self.x, self.y]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TangentVector {
    pub dx: f64,
    pub dy: f64,
    pub dtheta: f64,
}

impl TangentVector {
    pub const ZERO: TangentVector = TangentVector { dx: 0.0, dy: 0.0, dtheta: 0.0 };

    pub fn new(dx: f64, dy: f64, dtheta: f64) -> Self {
        TangentVector { dx, dy, dtheta }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoVector {
    pub hx: f64,
    pub hy: f64,
    pub htheta: f64,
}

impl CoVector {
    pub fn new(hx: f64, hy: f64, htheta: f64) -> Self {
        CoVector { hx, hy, htheta }
    }
}

/// Cartesian discretization of Ω×S¹.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub nx: usize,
    pub ny: usize,
    pub ntheta: usize,
    pub hx: f64,
}

impl GridSpec {
    pub fn new(nx: usize, ny: usize, ntheta: usize, hx: f64) -> Result<Self> {
        if nx < 2 || ny < 2 {
            return Err(Error::Config(format!("grid must be at least 2x2, got {nx}x{ny}")));
        }
        if ntheta < 4 {
            return Err(Error::Config(format!("ntheta must be at least 4, got {ntheta}")));
        }
        if !(hx.is_finite() && hx > 0.0) {
            return Err(Error::Config(format!("hx must be positive, got {hx}")));
        }
        Ok(GridSpec { nx, ny, ntheta, hx })
    }

    pub fn htheta(&self) -> f64 {
        TAU / self.ntheta as f64
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny * self.ntheta
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn plane_len(&self) -> usize {
        self.nx * self.ny
    }

    #[inline]
    pub fn index(&self, ix: usize, iy: usize, it: usize) -> usize {
        ix + self.nx * (iy + self.ny * it)
    }

    #[inline]
    pub fn coords(&self, idx: usize) -> (usize, usize, usize) {
        let ix = idx % self.nx;
        let rest = idx / self.nx;
        (ix, rest % self.ny, rest / self.ny)
    }

    /// Neighbour `x - e` with θ wrap; `None` when it leaves the physical box.
    #[inline]
    pub fn offset_back(&self, idx: usize, e: [i32; 3]) -> Option<usize> {
        let (ix, iy, it) = self.coords(idx);
        let jx = ix as i64 - e[0] as i64;
        let jy = iy as i64 - e[1] as i64;
        if jx < 0 || jy < 0 || jx >= self.nx as i64 || jy >= self.ny as i64 {
            return None;
        }
        let jt = (it as i64 - e[2] as i64).rem_euclid(self.ntheta as i64);
        Some(self.index(jx as usize, jy as usize, jt as usize))
    }

    pub fn theta_of(&self, it: usize) -> f64 {
        it as f64 * self.htheta()
    }

    pub fn point_of(&self, idx: usize) -> LiftedPoint {
        let (ix, iy, it) = self.coords(idx);
        LiftedPoint { x: ix as f64 * self.hx, y: iy as f64 * self.hx, theta: self.theta_of(it) }
    }

    /// Largest physical coordinates covered by the grid.
    pub fn extent(&self) -> [f64; 2] {
        [(self.nx - 1) as f64 * self.hx, (self.ny - 1) as f64 * self.hx]
    }

    pub fn contains_xy(&self, x: f64, y: f64) -> bool {
        let [ex, ey] = self.extent();
        x >= 0.0 && y >= 0.0 && x <= ex && y <= ey
    }

    /// Continuous index coordinates of a lifted point.
    pub fn to_index_coords(&self, p: &LiftedPoint) -> [f64; 3] {
        [p.x / self.hx, p.y / self.hx, reduce_angle(p.theta) / self.htheta()]
    }

    pub fn from_index_coords(&self, c: [f64; 3]) -> LiftedPoint {
        LiftedPoint::new(c[0] * self.hx, c[1] * self.hx, c[2] * self.htheta())
    }

    /// Nearest grid node to a lifted point, clamped to the box.
    pub fn nearest_node(&self, p: &LiftedPoint) -> usize {
        let c = self.to_index_coords(p);
        let ix = (c[0].round().max(0.0) as usize).min(self.nx - 1);
        let iy = (c[1].round().max(0.0) as usize).min(self.ny - 1);
        let it = (c[2].round() as usize) % self.ntheta;
        self.index(ix, iy, it)
    }
}

pub fn index_to_point(idx: (usize, usize, usize), spec: &GridSpec) -> Result<LiftedPoint> {
    let (ix, iy, it) = idx;
    if ix >= spec.nx || iy >= spec.ny || it >= spec.ntheta {
        return Err(Error::Domain(format!(
            "index ({ix},{iy},{it}) outside grid {}x{}x{}",
            spec.nx, spec.ny, spec.ntheta
        )));
    }
    Ok(LiftedPoint { x: ix as f64 * spec.hx, y: iy as f64 * spec.hx, theta: spec.theta_of(it) })
}

/// The eight trilinear corners of `p` with their weights.
pub fn trilinear_corners(p: &LiftedPoint, spec: &GridSpec) -> Result<[(usize, f64); 8]> {
    if !spec.contains_xy(p.x, p.y) || !p.theta.is_finite() {
        return Err(Error::Domain(format!("point ({}, {}) outside the physical domain", p.x, p.y)));
    }
    let c = spec.to_index_coords(p);
    let fx = c[0].floor().min((spec.nx - 2) as f64);
    let fy = c[1].floor().min((spec.ny - 2) as f64);
    let ft = c[2].floor();
    let (tx, ty, tt) = (c[0] - fx, c[1] - fy, c[2] - ft);
    let (ix, iy) = (fx as usize, fy as usize);
    let it0 = (ft as usize) % spec.ntheta;
    let it1 = (it0 + 1) % spec.ntheta;
    let mut out = [(0usize, 0.0f64); 8];
    let mut k = 0;
    for (it, wt) in [(it0, 1.0 - tt), (it1, tt)] {
        for (jy, wy) in [(iy, 1.0 - ty), (iy + 1, ty)] {
            for (jx, wx) in [(ix, 1.0 - tx), (ix + 1, tx)] {
                out[k] = (spec.index(jx, jy, it), wx * wy * wt);
                k += 1;
            }
        }
    }
    Ok(out)
}

/// Trilinear interpolation of a scalar field with θ wrap.
///
/// A corner holding +∞ with positive weight makes the result +∞.
pub fn interpolate_field(field: &[f64], p: &LiftedPoint, spec: &GridSpec) -> Result<f64> {
    check_len(field.len(), spec)?;
    let mut acc = 0.0;
    for (idx, w) in trilinear_corners(p, spec)? {
        if w == 0.0 {
            continue;
        }
        let v = field[idx];
        if v.is_infinite() {
            return Ok(f64::INFINITY);
        }
        acc += w * v;
    }
    Ok(acc)
}

/// Componentwise trilinear interpolation of a 3-vector field.
pub fn interpolate_vector(field: &[[f64; 3]], p: &LiftedPoint, spec: &GridSpec) -> Result<[f64; 3]> {
    check_len(field.len(), spec)?;
    let mut acc = [0.0; 3];
    for (idx, w) in trilinear_corners(p, spec)? {
        if w == 0.0 {
            continue;
        }
        for (a, v) in acc.iter_mut().zip(field[idx]) {
            if v.is_infinite() {
                *a = f64::INFINITY;
            } else {
                *a += w * v;
            }
        }
    }
    Ok(acc)
}

fn check_len(n: usize, spec: &GridSpec) -> Result<()> {
    if n != spec.len() {
        return Err(Error::Domain(format!("field has {n} samples, grid has {}", spec.len())));
    }
    Ok(())
}
