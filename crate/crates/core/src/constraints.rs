//! Search-space construction: walls, masks, endpoints and the edge test.
//!
//! The closed-curve problem is posed on Ω×S¹ with two walls: the ray line
//! from `z` through the source `p` to the domain boundary, and the angular
//! level `θ_p`. A path from `p0` to `p1` that never crosses either wall closes
//! through `p` into a curve winding once around `z`. Scribbles and landmarks
//! add further segments and a pixel mask.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, ValidationIssue};
use crate::lifted_grid::{angular_difference, reduce_angle, GridSpec, LiftedPoint};
use crate::raster::Mask;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub fn new(x: f64, y: f64) -> Self {
        Point2 { x, y }
    }

    pub fn arr(&self) -> [f64; 2] {
        [self.x, self.y]
    }
}

impl From<[f64; 2]> for Point2 {
    fn from(a: [f64; 2]) -> Self {
        Point2 { x: a[0], y: a[1] }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Source {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

impl Source {
    pub fn p(&self) -> [f64; 2] {
        [self.x, self.y]
    }

    pub fn normal(&self) -> [f64; 2] {
        [self.theta.cos(), self.theta.sin()]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Annotation {
    pub source: Source,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub z: Option<Point2>,
    #[serde(default)]
    pub fg_scribbles: Vec<Vec<Point2>>,
    #[serde(default)]
    pub bg_scribbles: Vec<Vec<Point2>>,
    #[serde(default)]
    pub landmarks: Vec<Point2>,
}

impl Annotation {
    pub fn new(x: f64, y: f64, theta: f64) -> Self {
        Annotation {
            source: Source { x, y, theta },
            z: None,
            fg_scribbles: Vec::new(),
            bg_scribbles: Vec::new(),
            landmarks: Vec::new(),
        }
    }

    pub fn with_z(mut self, z: [f64; 2]) -> Self {
        self.z = Some(z.into());
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SegmentKind {
    RayLine,
    Foreground,
    Background,
    Landmark,
}

/// Planar wall segment; an open endpoint does not belong to the wall.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObstacleSegment {
    pub a: [f64; 2],
    pub b: [f64; 2],
    pub open_a: bool,
    pub open_b: bool,
    pub kind: SegmentKind,
}

impl ObstacleSegment {
    fn closed(a: [f64; 2], b: [f64; 2], kind: SegmentKind) -> Self {
        ObstacleSegment { a, b, open_a: false, open_b: false, kind }
    }

    /// Whether the closed segment `[p, q]` meets this wall.
    pub fn intersects(&self, p: [f64; 2], q: [f64; 2]) -> bool {
        let lo = [p[0].min(q[0]), p[1].min(q[1])];
        let hi = [p[0].max(q[0]), p[1].max(q[1])];
        if hi[0] < self.a[0].min(self.b[0])
            || lo[0] > self.a[0].max(self.b[0])
            || hi[1] < self.a[1].min(self.b[1])
            || lo[1] > self.a[1].max(self.b[1])
        {
            return false;
        }
        let r = sub(q, p);
        let s = sub(self.b, self.a);
        let qp = sub(self.a, p);
        let denom = cross(r, s);
        let accept_u = |u: f64| {
            let lo_ok = if self.open_a { u > 0.0 } else { u >= 0.0 };
            let hi_ok = if self.open_b { u < 1.0 } else { u <= 1.0 };
            lo_ok && hi_ok
        };
        if denom != 0.0 {
            let t = cross(qp, s) / denom;
            let u = cross(qp, r) / denom;
            return (0.0..=1.0).contains(&t) && accept_u(u);
        }
        let ss = dot(s, s);
        if ss == 0.0 {
            return false;
        }
        if r == [0.0, 0.0] {
            return cross(sub(p, self.a), s) == 0.0 && accept_u(dot(sub(p, self.a), s) / ss);
        }
        if cross(qp, r) != 0.0 {
            return false;
        }
        // Collinear: overlap of the edge's projection with the wall.
        let u0 = dot(sub(p, self.a), s) / ss;
        let u1 = dot(sub(q, self.a), s) / ss;
        let (lo, hi) = (u0.min(u1), u0.max(u1));
        if hi < 0.0 || lo > 1.0 {
            return false;
        }
        if hi == 0.0 {
            return accept_u(0.0);
        }
        if lo == 1.0 {
            return accept_u(1.0);
        }
        true
    }
}

fn sub(a: [f64; 2], b: [f64; 2]) -> [f64; 2] {
    [a[0] - b[0], a[1] - b[1]]
}

fn cross(a: [f64; 2], b: [f64; 2]) -> f64 {
    a[0] * b[1] - a[1] * b[0]
}

fn dot(a: [f64; 2], b: [f64; 2]) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

fn norm(a: [f64; 2]) -> f64 {
    a[0].hypot(a[1])
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ObstacleSet {
    pub physical_segments: Vec<ObstacleSegment>,
    pub angular_wall: Option<f64>,
    pub blocked_mask: Option<Mask>,
    pub gap_radius: f64,
    /// Pixel spacing used to address `blocked_mask`.
    pub hx: f64,
}

impl ObstacleSet {
    pub fn empty(hx: f64) -> Self {
        ObstacleSet { gap_radius: 1.0, hx, ..Default::default() }
    }

    pub fn masked(&self, x: f64, y: f64) -> bool {
        self.blocked_mask.as_ref().is_some_and(|m| m.at_position(x, y, self.hx))
    }

    /// Add pixels to the mask, creating it if needed.
    pub fn merge_mask(&mut self, extra: &Mask) {
        match &mut self.blocked_mask {
            Some(m) => m.union_with(extra),
            None => self.blocked_mask = Some(extra.clone()),
        }
    }

    fn planar_blocked(&self, a: [f64; 2], b: [f64; 2]) -> bool {
        if self.blocked_mask.is_some() {
            // sample at half-pixel spacing so long offsets cannot hop over thin strokes
            let len = (b[0] - a[0]).hypot(b[1] - a[1]);
            let n = ((2.0 * len / self.hx).ceil() as usize).max(1);
            for k in 0..=n {
                let t = k as f64 / n as f64;
                if self.masked(a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])) {
                    return true;
                }
            }
        }
        self.physical_segments.iter().any(|s| s.intersects(a, b))
    }

    /// Solver-side edge test between node `x` and its neighbour `x - e`.
    ///
    /// The angular sweep follows the signed offset, so a long angular step
    /// is blocked whenever its closed sweep contains the wall.
    pub fn blocks_offset(&self, spec: &GridSpec, x: usize, e: [i32; 3]) -> bool {
        let (ix, iy, it) = spec.coords(x);
        if let Some(wall) = self.angular_wall {
            if sweep_contains_wall(spec, it as i64 - e[2] as i64, it as i64, wall) {
                return true;
            }
        }
        let a = [ix as f64 * spec.hx, iy as f64 * spec.hx];
        let b = [(ix as i64 - e[0] as i64) as f64 * spec.hx, (iy as i64 - e[1] as i64) as f64 * spec.hx];
        self.planar_blocked(a, b)
    }

    /// Whether a node itself lies on a wall or in the mask.
    pub fn node_blocked(&self, spec: &GridSpec, x: usize) -> bool {
        self.blocks_offset(spec, x, [0, 0, 0])
    }
}

/// Whether the closed index interval between `from` and `to` meets the wall level.
fn sweep_contains_wall(spec: &GridSpec, from: i64, to: i64, wall: f64) -> bool {
    let n = spec.ntheta as f64;
    let mut w = reduce_angle(wall) / spec.htheta();
    if (w - w.round()).abs() < 1e-9 {
        w = w.round();
    }
    let (lo, hi) = (from.min(to) as f64, from.max(to) as f64);
    let k = ((lo - w) / n).ceil();
    w + k * n <= hi
}

/// Public edge predicate between two lifted points, using the shortest sweep.
pub fn edge_blocked(a: &LiftedPoint, b: &LiftedPoint, obs: &ObstacleSet) -> bool {
    if let Some(wall) = obs.angular_wall {
        let sweep = angular_difference(b.theta, a.theta);
        let rel = angular_difference(wall, a.theta);
        let hit = if sweep >= 0.0 {
            (rel >= 0.0 && rel <= sweep) || (sweep == 0.0 && rel == 0.0)
        } else {
            rel <= 0.0 && rel >= sweep
        };
        if hit {
            return true;
        }
    }
    obs.planar_blocked(a.xy(), b.xy())
}

/// Grid indices of the two perturbed endpoints.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EndpointPair {
    pub p0: usize,
    pub p1: usize,
}

fn domain_strictly_contains(spec: &GridSpec, q: [f64; 2]) -> bool {
    let [ex, ey] = spec.extent();
    q[0] > 0.0 && q[1] > 0.0 && q[0] < ex && q[1] < ey
}

pub fn validate(ann: &Annotation, z: [f64; 2], spec: &GridSpec) -> std::result::Result<(), Vec<ValidationIssue>> {
    let mut issues = Vec::new();
    let p = ann.source.p();
    if !(p[0].is_finite() && p[1].is_finite() && ann.source.theta.is_finite()) {
        issues.push(ValidationIssue::new("source.invalid", "source coordinates must be finite", None));
        return Err(issues);
    }
    if !spec.contains_xy(p[0], p[1]) {
        issues.push(ValidationIssue::new("source.outside_domain", format!("source ({}, {}) lies outside the image", p[0], p[1]), None));
    }
    if !domain_strictly_contains(spec, z) {
        issues.push(ValidationIssue::new("z.outside_domain", format!("z ({}, {}) must lie strictly inside the image", z[0], z[1]), None));
    }
    let pz = sub(p, z);
    if norm(pz) == 0.0 {
        issues.push(ValidationIssue::new("z.equals_source", "z coincides with the source point", Some(0.0)));
    } else {
        let det = cross(pz, ann.source.normal());
        if det <= 0.0 {
            issues.push(ValidationIssue::new(
                "source.orientation.incompatible",
                "det(p - z, n(theta_p)) must be positive: the tangent must turn counter-clockwise around z",
                Some(det),
            ));
        }
    }
    for (k, l) in ann.landmarks.iter().enumerate() {
        if norm(sub(l.arr(), p)) == 0.0 {
            issues.push(ValidationIssue::new("landmark.equals_source", format!("landmark {k} coincides with the source"), Some(k as f64)));
        }
    }
    if issues.is_empty() {
        Ok(())
    } else {
        Err(issues)
    }
}

fn convex_hull(mut pts: Vec<[f64; 2]>) -> Vec<[f64; 2]> {
    pts.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let mut lower: Vec<[f64; 2]> = Vec::new();
    for &p in &pts {
        while lower.len() >= 2 && cross(sub(lower[lower.len() - 1], lower[lower.len() - 2]), sub(p, lower[lower.len() - 2])) <= 0.0 {
            lower.pop();
        }
        lower.push(p);
    }
    let mut upper: Vec<[f64; 2]> = Vec::new();
    for &p in pts.iter().rev() {
        while upper.len() >= 2 && cross(sub(upper[upper.len() - 1], upper[upper.len() - 2]), sub(p, upper[upper.len() - 2])) <= 0.0 {
            upper.pop();
        }
        upper.push(p);
    }
    lower.pop();
    upper.pop();
    lower.extend(upper);
    lower
}

/// Area centroid of the convex hull of the annotation points.
pub fn auto_z(ann: &Annotation) -> Result<[f64; 2]> {
    let mut pts = vec![ann.source.p()];
    if !ann.landmarks.is_empty() {
        pts.extend(ann.landmarks.iter().map(Point2::arr));
    } else {
        pts.extend(ann.fg_scribbles.iter().flatten().map(Point2::arr));
    }
    let hull = convex_hull(pts);
    let n = hull.len();
    let mut area2 = 0.0;
    let mut c = [0.0, 0.0];
    for i in 0..n {
        let (a, b) = (hull[i], hull[(i + 1) % n]);
        let w = cross(a, b);
        area2 += w;
        c[0] += (a[0] + b[0]) * w;
        c[1] += (a[1] + b[1]) * w;
    }
    let scale = hull.iter().map(|q| q[0].abs().max(q[1].abs())).fold(1.0, f64::max);
    if n < 3 || area2.abs() <= 1e-12 * scale * scale {
        return Err(Error::Validation(vec![ValidationIssue::new(
            "z.degenerate_hull",
            "annotation points are collinear; provide z explicitly",
            Some(area2 / 2.0),
        )]));
    }
    Ok([c[0] / (3.0 * area2), c[1] / (3.0 * area2)])
}

/// Point where the ray `from + t·dir`, `t > 0`, leaves the physical box.
fn ray_exit(spec: &GridSpec, from: [f64; 2], dir: [f64; 2]) -> [f64; 2] {
    let [ex, ey] = spec.extent();
    let mut t = f64::INFINITY;
    for (k, hi) in [(0usize, ex), (1usize, ey)] {
        if dir[k] > 0.0 {
            t = t.min((hi - from[k]) / dir[k]);
        } else if dir[k] < 0.0 {
            t = t.min(-from[k] / dir[k]);
        }
    }
    let t = t.max(0.0);
    [(from[0] + t * dir[0]).clamp(0.0, ex), (from[1] + t * dir[1]).clamp(0.0, ey)]
}

fn nearest_point(points: &[Point2], z: [f64; 2]) -> Option<[f64; 2]> {
    points
        .iter()
        .map(Point2::arr)
        .min_by(|a, b| norm(sub(*a, z)).total_cmp(&norm(sub(*b, z))))
}

fn draw_scribble(mask: &mut Mask, pts: &[Point2], hx: f64) {
    const DILATION: f64 = 1.0;
    match pts.len() {
        0 => {}
        1 => mask.draw_segment(pts[0].arr(), pts[0].arr(), DILATION, hx),
        _ => {
            for w in pts.windows(2) {
                mask.draw_segment(w[0].arr(), w[1].arr(), DILATION, hx);
            }
        }
    }
}

/// The effective `z`: explicit when given, otherwise the hull centroid.
pub fn resolve_z(ann: &Annotation) -> Result<[f64; 2]> {
    match ann.z {
        Some(z) => Ok(z.arr()),
        None => auto_z(ann),
    }
}

/// Walls, mask and snapped endpoints.
///
/// `eps_endpoint` is measured in cells: the endpoints are offset by
/// `eps_endpoint·hx` along the source normal and by `eps_endpoint·hθ` in
/// orientation. `angular_wall` is false for the classical models.
pub fn build_search_space(ann: &Annotation, spec: &GridSpec, eps_endpoint: f64, angular_wall: bool) -> Result<(ObstacleSet, EndpointPair)> {
    let z = resolve_z(ann)?;
    validate(ann, z, spec).map_err(Error::Validation)?;
    if !(eps_endpoint.is_finite() && eps_endpoint > 0.0) {
        return Err(Error::Config(format!("eps_endpoint must be positive, got {eps_endpoint}")));
    }
    let p = ann.source.p();
    let theta_p = reduce_angle(ann.source.theta);
    let mut obs = ObstacleSet::empty(spec.hx);
    obs.gap_radius = spec.hx;
    let delta = obs.gap_radius;

    let ray_dir = sub(p, z);
    obs.physical_segments.push(ObstacleSegment::closed(z, ray_exit(spec, p, ray_dir), SegmentKind::RayLine));
    if angular_wall {
        obs.angular_wall = Some(theta_p);
    }

    let mut mask = Mask::new(spec.nx, spec.ny);
    let mut any_mask = false;
    for scribble in &ann.fg_scribbles {
        if let Some(xf) = nearest_point(scribble, z) {
            obs.physical_segments.push(ObstacleSegment::closed(z, xf, SegmentKind::Foreground));
            draw_scribble(&mut mask, scribble, spec.hx);
            any_mask = true;
        }
    }
    for scribble in &ann.bg_scribbles {
        if let Some(xb) = nearest_point(scribble, z) {
            let dir = sub(xb, z);
            let q = if norm(dir) > 0.0 { ray_exit(spec, xb, dir) } else { xb };
            obs.physical_segments.push(ObstacleSegment::closed(xb, q, SegmentKind::Background));
            draw_scribble(&mut mask, scribble, spec.hx);
            any_mask = true;
        }
    }
    let ray_len = norm(ray_dir);
    for (k, l) in ann.landmarks.iter().enumerate() {
        let xk = l.arr();
        let d = sub(xk, z);
        let len = norm(d);
        if len == 0.0 {
            return Err(Error::Validation(vec![ValidationIssue::new("landmark.equals_z", format!("landmark {k} coincides with z"), Some(k as f64))]));
        }
        let along = dot(d, ray_dir) / ray_len;
        let off = cross(ray_dir, d).abs() / ray_len;
        if along > 0.0 && off <= delta {
            return Err(Error::Validation(vec![ValidationIssue::new(
                "landmark.on_source_ray",
                format!("landmark {k} lies on the ray from z through the source"),
                Some(off),
            )]));
        }
        let u = [d[0] / len, d[1] / len];
        if len > delta {
            let inner_end = [xk[0] - delta * u[0], xk[1] - delta * u[1]];
            obs.physical_segments.push(ObstacleSegment { a: z, b: inner_end, open_a: false, open_b: true, kind: SegmentKind::Landmark });
        }
        let outer_start = [xk[0] + delta * u[0], xk[1] + delta * u[1]];
        if spec.contains_xy(outer_start[0], outer_start[1]) {
            let q = ray_exit(spec, outer_start, u);
            if q != outer_start {
                obs.physical_segments.push(ObstacleSegment { a: outer_start, b: q, open_a: true, open_b: false, kind: SegmentKind::Landmark });
            }
        }
    }
    if any_mask {
        obs.blocked_mask = Some(mask);
    }

    let endpoints = snap_endpoints(ann, z, spec, &obs, eps_endpoint)?;
    if !seed_can_propagate(spec, &obs, endpoints.p0) {
        return Err(Error::Resolution("every edge leaving p0 is blocked".into()));
    }
    Ok((obs, endpoints))
}

fn seed_can_propagate(spec: &GridSpec, obs: &ObstacleSet, seed: usize) -> bool {
    let (ix, iy, it) = spec.coords(seed);
    for dt in -1i64..=1 {
        for dy in -1i64..=1 {
            for dx in -1i64..=1 {
                if dx == 0 && dy == 0 && dt == 0 {
                    continue;
                }
                let (jx, jy) = (ix as i64 + dx, iy as i64 + dy);
                if jx < 0 || jy < 0 || jx >= spec.nx as i64 || jy >= spec.ny as i64 {
                    continue;
                }
                let jt = (it as i64 + dt).rem_euclid(spec.ntheta as i64) as usize;
                let x = spec.index(jx as usize, jy as usize, jt);
                if !obs.blocks_offset(spec, x, [dx as i32, dy as i32, dt as i32]) {
                    return true;
                }
            }
        }
    }
    false
}

fn snap_endpoints(ann: &Annotation, z: [f64; 2], spec: &GridSpec, obs: &ObstacleSet, eps: f64) -> Result<EndpointPair> {
    let p = ann.source.p();
    let n = ann.source.normal();
    let theta_p = reduce_angle(ann.source.theta);
    let pz = sub(p, z);
    let scale = norm(pz);
    let ang = eps * spec.htheta();
    let lin = eps * spec.hx;
    let target0 = LiftedPoint::new(p[0] + lin * n[0], p[1] + lin * n[1], theta_p + ang);
    let target1 = LiftedPoint::new(p[0] - lin * n[0], p[1] - lin * n[1], theta_p - ang);
    let pick = |target: &LiftedPoint, side: f64| -> Option<usize> {
        let centre = spec.nearest_node(target);
        let (cx, cy, ct) = spec.coords(centre);
        let tc = spec.to_index_coords(target);
        let mut best: Option<(f64, usize)> = None;
        for dt in -1i64..=1 {
            for dy in -1i64..=1 {
                for dx in -1i64..=1 {
                    let (jx, jy) = (cx as i64 + dx, cy as i64 + dy);
                    if jx < 0 || jy < 0 || jx >= spec.nx as i64 || jy >= spec.ny as i64 {
                        continue;
                    }
                    let jt = (ct as i64 + dt).rem_euclid(spec.ntheta as i64) as usize;
                    let idx = spec.index(jx as usize, jy as usize, jt);
                    let q = spec.point_of(idx);
                    let det = cross(sub(q.xy(), z), pz);
                    if det * side <= 1e-9 * scale {
                        continue;
                    }
                    let turn = angular_difference(q.theta, theta_p);
                    if turn * side >= 0.0 || obs.node_blocked(spec, idx) {
                        continue;
                    }
                    // p0 needs turn > 0 (side < 0); p1 needs turn < 0.
                    let mut d_t = (jt as f64 - tc[2]).abs();
                    d_t = d_t.min(spec.ntheta as f64 - d_t);
                    let dist = (jx as f64 - tc[0]).powi(2) + (jy as f64 - tc[1]).powi(2) + d_t * d_t;
                    if best.is_none_or(|(bd, bi)| dist < bd || (dist == bd && idx < bi)) {
                        best = Some((dist, idx));
                    }
                }
            }
        }
        best.map(|b| b.1)
    };
    let p0 = pick(&target0, -1.0);
    let p1 = pick(&target1, 1.0);
    match (p0, p1) {
        (Some(p0), Some(p1)) if p0 != p1 => Ok(EndpointPair { p0, p1 }),
        _ => Err(Error::Resolution(
            "no admissible grid node near the perturbed endpoints; increase ntheta or the endpoint offset".into(),
        )),
    }
}
