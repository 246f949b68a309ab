//! Geodesic backtracking, closed-contour assembly and contour diagnostics.

use serde::{Deserialize, Serialize};
use std::f64::consts::{PI, TAU};

use crate::constraints::{edge_blocked, ObstacleSet};
use crate::eikonal::{CompiledStencils, DistanceField};
use crate::error::{Error, Result};
use crate::lifted_grid::{angular_difference, trilinear_corners, GridSpec, LiftedPoint, TangentVector};
use crate::raster::{point_in_polygon, Mask};

/// An orientation-lifted polyline in forward order, from `p0` to `p1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeodesicPath {
    pub lifted_points: Vec<LiftedPoint>,
    pub physical: Vec<[f64; 2]>,
    /// Unwrapped orientation samples.
    pub turning_angles: Vec<f64>,
    pub arc_lengths: Vec<f64>,
}

impl GeodesicPath {
    pub fn from_lifted(lifted_points: Vec<LiftedPoint>) -> Result<Self> {
        if lifted_points.is_empty() {
            return Err(Error::Domain("a path needs at least one point".into()));
        }
        let physical: Vec<[f64; 2]> = lifted_points.iter().map(|p| p.xy()).collect();
        let mut turning_angles = Vec::with_capacity(lifted_points.len());
        let mut eta = lifted_points[0].theta;
        turning_angles.push(eta);
        for w in lifted_points.windows(2) {
            eta += angular_difference(w[1].theta, w[0].theta);
            turning_angles.push(eta);
        }
        let mut arc_lengths = Vec::with_capacity(physical.len());
        let mut s = 0.0;
        arc_lengths.push(s);
        for w in physical.windows(2) {
            s += (w[1][0] - w[0][0]).hypot(w[1][1] - w[0][1]);
            arc_lengths.push(s);
        }
        Ok(GeodesicPath { lifted_points, physical, turning_angles, arc_lengths })
    }

    pub fn len(&self) -> usize {
        self.lifted_points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lifted_points.is_empty()
    }

    /// Net change of the unwrapped orientation.
    pub fn total_turn(&self) -> f64 {
        self.turning_angles.last().unwrap_or(&0.0) - self.turning_angles[0]
    }
}

/// Discrete flow at a grid node in index units, or `None` when `u` is infinite there.
///
/// Uses the group achieving the maximum in the scheme, restricted to
/// finite, unblocked neighbours.
pub fn node_flow(
    field: &DistanceField,
    stencils: &CompiledStencils,
    obstacles: Option<&ObstacleSet>,
    x: usize,
) -> Option<[f64; 3]> {
    let spec = &field.spec;
    let ux = field.values[x];
    if !ux.is_finite() {
        return None;
    }
    let level = spec.coords(x).2;
    let mut best = (0.0, [0.0; 3]);
    for g in stencils.groups(level) {
        let mut sum = 0.0;
        let mut v = [0.0; 3];
        for t in g {
            let Some(y) = spec.offset_back(x, t.offset) else { continue };
            let d = (ux - field.values[y]).max(0.0);
            if d == 0.0 || !d.is_finite() || obstacles.is_some_and(|o| o.blocks_offset(spec, x, t.offset)) {
                continue;
            }
            sum += t.weight * d * d;
            for (vi, ei) in v.iter_mut().zip(t.offset) {
                *vi += t.weight * d * ei as f64;
            }
        }
        if sum > best.0 {
            best = (sum, v);
        }
    }
    Some(best.1)
}

/// Flow at an arbitrary point, interpolated from the usable surrounding nodes.
///
/// Corners with infinite `u`, or separated from `p` by an obstacle, are
/// dropped and the remaining weights renormalized. Returns index units.
fn interpolated_flow(
    field: &DistanceField,
    stencils: &CompiledStencils,
    obstacles: Option<&ObstacleSet>,
    p: &LiftedPoint,
) -> Result<Option<[f64; 3]>> {
    let spec = &field.spec;
    let mut acc = [0.0; 3];
    let mut total = 0.0;
    for (idx, w) in trilinear_corners(p, spec)? {
        if w <= 0.0 {
            continue;
        }
        if let Some(o) = obstacles {
            if edge_blocked(p, &spec.point_of(idx), o) || o.node_blocked(spec, idx) {
                continue;
            }
        }
        let Some(v) = node_flow(field, stencils, obstacles, idx) else { continue };
        total += w;
        for (a, b) in acc.iter_mut().zip(v) {
            *a += w * b;
        }
    }
    if total == 0.0 {
        return Ok(None);
    }
    Ok(Some(acc.map(|a| a / total)))
}

/// Physical geodesic flow vector at `p`; zero where the flow is undefined.
pub fn geodesic_flow(
    p: &LiftedPoint,
    field: &DistanceField,
    stencils: &CompiledStencils,
    obstacles: Option<&ObstacleSet>,
) -> Result<TangentVector> {
    let spec = &field.spec;
    let v = interpolated_flow(field, stencils, obstacles, p)?.unwrap_or([0.0; 3]);
    Ok(TangentVector::new(v[0] * spec.hx, v[1] * spec.hx, v[2] * spec.htheta()))
}

fn index_distance(spec: &GridSpec, a: [f64; 3], b: [f64; 3]) -> f64 {
    let n = spec.ntheta as f64;
    let mut dt = (a[2] - b[2]).rem_euclid(n);
    if dt > n / 2.0 {
        dt -= n;
    }
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + dt * dt).sqrt()
}

fn u_at(field: &DistanceField, obstacles: Option<&ObstacleSet>, p: &LiftedPoint) -> f64 {
    u_stats(field, obstacles, p).0
}

/// Interpolated `u` over finite corners visible from `p`, and the spread of those corner values.
fn u_stats(field: &DistanceField, obstacles: Option<&ObstacleSet>, p: &LiftedPoint) -> (f64, f64) {
    let spec = &field.spec;
    let Ok(corners) = trilinear_corners(p, spec) else { return (f64::INFINITY, 0.0) };
    let (mut acc, mut total) = (0.0, 0.0);
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for (idx, w) in corners {
        let v = field.values[idx];
        if v.is_finite() && !step_blocked(obstacles, p, &spec.point_of(idx)) {
            lo = lo.min(v);
            hi = hi.max(v);
            if w > 0.0 {
                acc += w * v;
                total += w;
            }
        }
    }
    if total > 0.0 {
        (acc / total, hi - lo)
    } else {
        (f64::INFINITY, 0.0)
    }
}

/// Grid node coinciding with `p`, or `usize::MAX` when `p` is off-grid.
fn node_here(spec: &GridSpec, p: &LiftedPoint) -> usize {
    let node = spec.nearest_node(p);
    let q = spec.point_of(node);
    let exact = (q.x - p.x).abs() < 1e-9 && (q.y - p.y).abs() < 1e-9 && angular_difference(q.theta, p.theta).abs() < 1e-9;
    if exact {
        node
    } else {
        usize::MAX
    }
}

fn step_blocked(obstacles: Option<&ObstacleSet>, a: &LiftedPoint, b: &LiftedPoint) -> bool {
    obstacles.is_some_and(|o| edge_blocked(a, b, o))
}

/// Obstacle-respecting discrete descent from `p`, used when Euler steps are blocked.
///
/// Off-grid points move to the lowest reachable corner position at unchanged
/// orientation, grid nodes follow their dominant unblocked stencil edge, and
/// the lowest reachable corner is the last resort.
fn discrete_step(
    field: &DistanceField,
    stencils: &CompiledStencils,
    obstacles: Option<&ObstacleSet>,
    p: &LiftedPoint,
    u_cap: f64,
) -> Result<Option<LiftedPoint>> {
    let spec = &field.spec;
    let corners = trilinear_corners(p, spec)?;
    let node = spec.nearest_node(p);
    let q = spec.point_of(node);
    if (q.x - p.x).abs() > 1e-9 || (q.y - p.y).abs() > 1e-9 {
        let mut best: Option<(f64, LiftedPoint)> = None;
        for (idx, _) in corners {
            let c = spec.point_of(idx);
            let target = LiftedPoint { x: c.x, y: c.y, theta: p.theta };
            if step_blocked(obstacles, p, &target) {
                continue;
            }
            let v = u_at(field, obstacles, &target);
            if v <= u_cap && best.is_none_or(|(bv, _)| v < bv) {
                best = Some((v, target));
            }
        }
        if let Some((_, t)) = best {
            return Ok(Some(t));
        }
    } else if field.values[node].is_finite() && angular_difference(q.theta, p.theta).abs() < 1e-9 {
        let ux = field.values[node];
        let level = spec.coords(node).2;
        let mut best: Option<(f64, usize)> = None;
        for t in stencils.terms(level) {
            let Some(y) = spec.offset_back(node, t.offset) else { continue };
            let d = ux - field.values[y];
            if !(d > 0.0) || obstacles.is_some_and(|o| o.blocks_offset(spec, node, t.offset)) {
                continue;
            }
            let score = t.weight * d * d;
            if best.is_none_or(|(bs, _)| score > bs) {
                best = Some((score, y));
            }
        }
        if let Some((_, y)) = best {
            return Ok(Some(spec.point_of(y)));
        }
    }
    let mut best: Option<(f64, usize)> = None;
    for (idx, _) in corners {
        let v = field.values[idx];
        if v.is_finite() && v <= u_cap && idx != node_here(spec, p) && !step_blocked(obstacles, p, &spec.point_of(idx)) && best.is_none_or(|(bv, _)| v < bv) {
            best = Some((v, idx));
        }
    }
    Ok(best.map(|(_, idx)| spec.point_of(idx)))
}

/// Euler integration of the reversed geodesic flow from `start` down to the seed.
///
/// `step` is measured in index units. Steps crossing an obstacle are halved,
/// then replaced by a discrete descent move. The walk ends once it is within
/// two index units of the seed and `u` has dropped below half its starting value.
pub fn backtrack(
    field: &DistanceField,
    stencils: &CompiledStencils,
    obstacles: Option<&ObstacleSet>,
    start: usize,
    step: f64,
) -> Result<GeodesicPath> {
    let spec = &field.spec;
    if !(step > 0.0) {
        return Err(Error::Config(format!("backtracking step must be positive, got {step}")));
    }
    let u_start = field.values[start];
    if !u_start.is_finite() {
        return Err(Error::Unreachable("start node was never reached".into()));
    }
    let seed_point = spec.point_of(field.seed);
    if start == field.seed {
        return GeodesicPath::from_lifted(vec![seed_point]);
    }
    let seed_c = spec.to_index_coords(&seed_point);
    let max_steps = 50 * (spec.nx + spec.ny + spec.ntheta);
    let [ex, ey] = spec.extent();
    let mut p = spec.point_of(start);
    let mut pts = vec![p];
    for k in 0..max_steps {
        let c = spec.to_index_coords(&p);
        if index_distance(spec, c, seed_c) <= 2.0 && u_at(field, obstacles, &p) <= 0.5 * u_start {
            if !step_blocked(obstacles, &p, &seed_point) {
                pts.push(seed_point);
                pts.reverse();
                return GeodesicPath::from_lifted(pts);
            }
        }
        let (u_here, spread) = u_stats(field, obstacles, &p);
        let u_cap = u_here + 0.25 * spread + 1e-12 * (1.0 + u_here);
        let v = interpolated_flow(field, stencils, obstacles, &p)?;
        let norm = v.map_or(0.0, |v| (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt());
        let mut next = None;
        if let Some(v) = v.filter(|_| norm > 1e-12) {
            let mut s = step / norm;
            for _ in 0..3 {
                let nc = [
                    (c[0] - s * v[0]).clamp(0.0, ex / spec.hx),
                    (c[1] - s * v[1]).clamp(0.0, ey / spec.hx),
                    c[2] - s * v[2],
                ];
                let q = spec.from_index_coords(nc);
                if !step_blocked(obstacles, &p, &q) && u_at(field, obstacles, &q) <= u_cap {
                    next = Some(q);
                    break;
                }
                s *= 0.5;
            }
        }
        if next.is_none() {
            next = discrete_step(field, stencils, obstacles, &p, u_cap)?;
        }
        let Some(q) = next else {
            return Err(Error::BacktrackStall { step: k, value: u_at(field, obstacles, &p) });
        };
        p = q;
        pts.push(p);
    }
    Err(Error::BacktrackDivergence { max_steps })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContourDiagnostics {
    /// Sum of absolute exterior angles of the decimated polygon.
    pub total_curvature: f64,
    /// Signed sum of exterior angles.
    pub signed_turn: f64,
    /// Most negative exterior angle of the decimated polygon.
    pub min_turn: f64,
    pub is_simple: bool,
    pub is_convex: bool,
    pub encloses_z: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClosedContour {
    pub vertices: Vec<[f64; 2]>,
    pub diagnostics: ContourDiagnostics,
    /// `(arc length, unwrapped η)` along the backtracked path.
    #[serde(default)]
    pub turning_profile: Vec<[f64; 2]>,
}

impl ClosedContour {
    pub fn rasterize(&self, width: usize, height: usize, hx: f64) -> Mask {
        crate::raster::rasterize_polygon(&self.vertices, width, height, hx)
    }
}

/// Tolerance on negative exterior angles for the convexity flag.
pub const CONVEXITY_TOL: f64 = 1e-3;

/// Drop vertices closer than `min_gap` to the previously kept one.
pub fn decimate(poly: &[[f64; 2]], min_gap: f64) -> Vec<[f64; 2]> {
    let mut out: Vec<[f64; 2]> = Vec::new();
    for &v in poly {
        match out.last() {
            Some(l) if (v[0] - l[0]).hypot(v[1] - l[1]) < min_gap => {}
            _ => out.push(v),
        }
    }
    while out.len() > 3 {
        let (f, l) = (out[0], out[out.len() - 1]);
        if (f[0] - l[0]).hypot(f[1] - l[1]) < min_gap {
            out.pop();
        } else {
            break;
        }
    }
    out
}

/// Convex hull by monotone chain, counter-clockwise, collinear points dropped.
pub fn convex_hull(points: &[[f64; 2]]) -> Vec<[f64; 2]> {
    let mut pts = points.to_vec();
    pts.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let cross = |o: [f64; 2], a: [f64; 2], b: [f64; 2]| (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0]);
    let mut hull: Vec<[f64; 2]> = Vec::with_capacity(2 * pts.len());
    for pass in 0..2 {
        let start = hull.len();
        let iter: Box<dyn Iterator<Item = &[f64; 2]>> =
            if pass == 0 { Box::new(pts.iter()) } else { Box::new(pts.iter().rev()) };
        for &p in iter {
            while hull.len() >= start + 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0 {
                hull.pop();
            }
            hull.push(p);
        }
        hull.pop();
    }
    hull
}

/// Largest distance from a polygon vertex to the boundary of the convex hull.
pub fn hull_deviation(poly: &[[f64; 2]]) -> f64 {
    let hull = convex_hull(poly);
    let n = hull.len();
    if n < 3 {
        return 0.0;
    }
    poly.iter()
        .map(|&v| {
            (0..n)
                .map(|k| crate::raster::point_segment_distance(v, hull[k], hull[(k + 1) % n]))
                .fold(f64::INFINITY, f64::min)
        })
        .fold(0.0, f64::max)
}

/// Exterior angles of a closed polygon, in `(-π, π]`.
pub fn exterior_angles(poly: &[[f64; 2]]) -> Vec<f64> {
    let n = poly.len();
    (0..n)
        .map(|i| {
            let (a, b, c) = (poly[(i + n - 1) % n], poly[i], poly[(i + 1) % n]);
            let t1 = (b[1] - a[1]).atan2(b[0] - a[0]);
            let t2 = (c[1] - b[1]).atan2(c[0] - b[0]);
            angular_difference(t2, t1)
        })
        .collect()
}

fn segments_cross(a: [f64; 2], b: [f64; 2], c: [f64; 2], d: [f64; 2]) -> bool {
    let orient = |p: [f64; 2], q: [f64; 2], r: [f64; 2]| (q[0] - p[0]) * (r[1] - p[1]) - (q[1] - p[1]) * (r[0] - p[0]);
    let (o1, o2) = (orient(a, b, c), orient(a, b, d));
    let (o3, o4) = (orient(c, d, a), orient(c, d, b));
    if o1 * o2 < 0.0 && o3 * o4 < 0.0 {
        return true;
    }
    let on = |p: [f64; 2], q: [f64; 2], r: [f64; 2], o: f64| {
        o == 0.0 && r[0] >= p[0].min(q[0]) && r[0] <= p[0].max(q[0]) && r[1] >= p[1].min(q[1]) && r[1] <= p[1].max(q[1])
    };
    on(a, b, c, o1) || on(a, b, d, o2) || on(c, d, a, o3) || on(c, d, b, o4)
}

/// No two non-adjacent edges of the closed polygon meet.
pub fn is_simple(poly: &[[f64; 2]]) -> bool {
    let n = poly.len();
    if n < 3 {
        return false;
    }
    for i in 0..n {
        let (a, b) = (poly[i], poly[(i + 1) % n]);
        for j in i + 2..n {
            if i == 0 && j == n - 1 {
                continue;
            }
            if segments_cross(a, b, poly[j], poly[(j + 1) % n]) {
                return false;
            }
        }
    }
    true
}

/// Winding number of a closed polygon around `z`.
pub fn winding_number(poly: &[[f64; 2]], z: [f64; 2]) -> i32 {
    let n = poly.len();
    let mut total = 0.0;
    for i in 0..n {
        let (a, b) = (poly[i], poly[(i + 1) % n]);
        let ta = (a[1] - z[1]).atan2(a[0] - z[0]);
        let tb = (b[1] - z[1]).atan2(b[0] - z[0]);
        total += angular_difference(tb, ta);
    }
    (total / TAU).round() as i32
}

/// Diagnostics of a closed polygon; `min_gap` controls vertex decimation for the angle checks.
pub fn diagnose(poly: &[[f64; 2]], z: [f64; 2], min_gap: f64) -> ContourDiagnostics {
    let coarse = decimate(poly, min_gap);
    let ext = if coarse.len() >= 3 { exterior_angles(&coarse) } else { Vec::new() };
    let total_curvature = ext.iter().map(|a| a.abs()).sum();
    let signed_turn = ext.iter().sum();
    let min_turn = ext.iter().copied().fold(PI, f64::min);
    ContourDiagnostics {
        total_curvature,
        signed_turn,
        min_turn,
        is_simple: is_simple(poly),
        is_convex: !ext.is_empty() && min_turn >= -CONVEXITY_TOL,
        encloses_z: poly.len() >= 3 && winding_number(poly, z) == 1,
    }
}

/// Closure tolerance and smallest angle-check decimation, in grid cells.
pub const CLOSURE_GAP_CELLS: f64 = 3.0;
/// Angle checks use chords of at least `perimeter / ANGLE_CHORDS`.
pub const ANGLE_CHORDS: f64 = 48.0;

pub fn perimeter(poly: &[[f64; 2]]) -> f64 {
    let n = poly.len();
    (0..n).map(|k| (poly[k][0] - poly[(k + 1) % n][0]).hypot(poly[k][1] - poly[(k + 1) % n][1])).sum()
}

/// Decimation used for the angle checks of a closed contour.
pub fn angle_scale(poly: &[[f64; 2]], hx: f64) -> f64 {
    (CLOSURE_GAP_CELLS * hx).max(perimeter(poly) / ANGLE_CHORDS)
}

/// Close the backtracked path through the source `p` and diagnose it.
pub fn close_and_diagnose(path: &GeodesicPath, p: [f64; 2], z: [f64; 2], hx: f64) -> Result<ClosedContour> {
    let max_gap = CLOSURE_GAP_CELLS * hx;
    let (first, last) = (path.physical[0], *path.physical.last().expect("non-empty path"));
    for (name, q) in [("start", first), ("end", last)] {
        let gap = (q[0] - p[0]).hypot(q[1] - p[1]);
        if gap > max_gap {
            return Err(Error::Closure(format!("path {name} is {gap:.3} from the source (limit {max_gap})")));
        }
    }
    let mut vertices = vec![p];
    for &v in &path.physical {
        let l = vertices.last().expect("non-empty");
        if (v[0] - l[0]).hypot(v[1] - l[1]) > 1e-9 {
            vertices.push(v);
        }
    }
    while vertices.len() > 1 {
        let l = vertices[vertices.len() - 1];
        if (l[0] - p[0]).hypot(l[1] - p[1]) <= 1e-9 {
            vertices.pop();
        } else {
            break;
        }
    }
    if vertices.len() < 3 {
        return Err(Error::Closure("closed path has fewer than three vertices".into()));
    }
    let diagnostics = diagnose(&vertices, z, angle_scale(&vertices, hx));
    let turning_profile = path.arc_lengths.iter().zip(&path.turning_angles).map(|(s, e)| [*s, *e]).collect();
    Ok(ClosedContour { vertices, diagnostics, turning_profile })
}

/// `|A ∩ B| / |A ∪ B|`, and 0 when both are empty.
pub fn jaccard(a: &Mask, b: &Mask) -> Result<f64> {
    if a.width != b.width || a.height != b.height {
        return Err(Error::Domain(format!("mask sizes differ: {}x{} vs {}x{}", a.width, a.height, b.width, b.height)));
    }
    let (mut inter, mut union) = (0usize, 0usize);
    for (x, y) in a.data.iter().zip(&b.data) {
        inter += (*x && *y) as usize;
        union += (*x || *y) as usize;
    }
    Ok(if union == 0 { 0.0 } else { inter as f64 / union as f64 })
}

/// Whether `z` lies inside the polygon by the even-odd rule.
pub fn contains(poly: &[[f64; 2]], z: [f64; 2]) -> bool {
    point_in_polygon(z, poly)
}
