//! Edge-only initialization and the tube-restricted region evolution.

use serde::{Deserialize, Serialize};
use std::time::Instant;

use crate::appearance::{fit_potentials, AppearanceKind, PotentialMaps};
use crate::constraints::{build_search_space, resolve_z, Annotation, EndpointPair, ObstacleSet};
use crate::eikonal::{solve, CompiledStencils, DistanceField, SolveOptions, SolveReport};
use crate::error::{Error, Result};
use crate::geodesic::{backtrack, close_and_diagnose, ClosedContour, GeodesicPath};
use crate::lifted_grid::GridSpec;
use crate::metrics::{build_stencil_cache, ModelFamily, ModelKind, ModelParams};
use crate::randers::{
    build_edge_velocity, build_velocity, edge_tensor, solve_curl, EdgeTensorField, VelocityField, DEFAULT_LAMBDA_EDGE,
    DEFAULT_SIGMA,
};
use crate::raster::{distance_to_polygon, point_segment_distance, Image, Mask};

/// Backtracking step, index units.
pub const BACKTRACK_STEP: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvolutionConfig {
    pub model: ModelKind,
    pub params: ModelParams,
    pub alpha: f64,
    pub mu: f64,
    pub ntheta: usize,
    pub tube_radius: f64,
    pub max_iters: usize,
    pub convergence_tol: f64,
    pub appearance: AppearanceKind,
    /// Fit appearance once (from scribbles when both kinds are present) and keep it.
    pub freeze_appearance: bool,
    /// Stop after the edge-only contour.
    pub edge_only: bool,
    pub sigma: f64,
    pub lambda_edge: f64,
    pub edge_exponent: f64,
    /// Endpoint perturbation, grid cells.
    pub eps_endpoint: f64,
}

impl Default for EvolutionConfig {
    fn default() -> Self {
        EvolutionConfig {
            model: ModelKind::new(ModelFamily::EulerMumford, true),
            params: ModelParams::default(),
            alpha: 3.0,
            mu: 0.1,
            ntheta: 60,
            tube_radius: 10.0,
            max_iters: 10,
            convergence_tol: 0.5,
            appearance: AppearanceKind::default(),
            freeze_appearance: false,
            edge_only: false,
            sigma: DEFAULT_SIGMA,
            lambda_edge: DEFAULT_LAMBDA_EDGE,
            edge_exponent: 1.0,
            eps_endpoint: 1.0,
        }
    }
}

impl EvolutionConfig {
    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        let positive = [
            ("alpha", self.alpha),
            ("tube_radius", self.tube_radius),
            ("convergence_tol", self.convergence_tol),
            ("sigma", self.sigma),
            ("edge_exponent", self.edge_exponent),
            ("eps_endpoint", self.eps_endpoint),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.mu.is_finite() && self.mu >= 0.0) {
            return Err(Error::Config(format!("mu must be non-negative, got {}", self.mu)));
        }
        if !(self.lambda_edge.is_finite() && self.lambda_edge >= 0.0) {
            return Err(Error::Config(format!("lambda_edge must be non-negative, got {}", self.lambda_edge)));
        }
        if let AppearanceKind::Gmm { components } = self.appearance {
            if components == 0 {
                return Err(Error::Config("gmm components must be at least 1".into()));
            }
        }
        if self.ntheta < 4 {
            return Err(Error::Config(format!("ntheta must be at least 4, got {}", self.ntheta)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub contour: ClosedContour,
    /// Arrival value `u(p1)`.
    pub energy: f64,
    /// Mean symmetric closest-point distance to the previous contour.
    pub displacement: Option<f64>,
    pub accepted_nodes: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EvolutionTrace {
    pub iterations: Vec<IterationRecord>,
    pub converged: bool,
    pub degraded: bool,
    pub degraded_reason: Option<String>,
}

/// Whether a contour passes the checks expected from its model.
pub fn contour_acceptable(c: &ClosedContour, model: ModelKind) -> bool {
    let d = &c.diagnostics;
    d.is_simple && d.encloses_z && (d.is_convex || !model.convexity_constrained)
}

/// Shared per-image state of one segmentation run.
pub struct Segmenter<'a> {
    pub image: &'a Image,
    pub ann: &'a Annotation,
    pub cfg: &'a EvolutionConfig,
    pub spec: GridSpec,
    pub z: [f64; 2],
    pub stencils: CompiledStencils,
    pub obstacles: ObstacleSet,
    pub endpoints: EndpointPair,
    pub tensor: EdgeTensorField,
    pub deadline: Option<Instant>,
}

/// One closed-path extraction.
pub struct ClosedPathResult {
    pub contour: ClosedContour,
    pub path: GeodesicPath,
    pub energy: f64,
    pub accepted_nodes: usize,
}

impl<'a> Segmenter<'a> {
    pub fn new(image: &'a Image, ann: &'a Annotation, cfg: &'a EvolutionConfig, deadline: Option<Instant>) -> Result<Self> {
        cfg.validate()?;
        let spec = GridSpec::new(image.width, image.height, cfg.ntheta, 1.0)?;
        dubins_feasible(cfg.model, &cfg.params, &spec)?;
        let z = resolve_z(ann)?;
        let (obstacles, endpoints) = build_search_space(ann, &spec, cfg.eps_endpoint, cfg.model.convexity_constrained)?;
        let schemes = build_stencil_cache(cfg.model, &cfg.params, &spec)?;
        let stencils = CompiledStencils::new(&schemes, &spec)?;
        let tensor = edge_tensor(image, cfg.sigma, cfg.lambda_edge)?;
        Ok(Segmenter { image, ann, cfg, spec, z, stencils, obstacles, endpoints, tensor, deadline })
    }

    /// Obstacles of this run with an optional extra blocked mask.
    pub fn obstacles_with(&self, extra_mask: Option<&Mask>) -> ObstacleSet {
        let mut obstacles = self.obstacles.clone();
        if let Some(m) = extra_mask {
            obstacles.merge_mask(m);
        }
        obstacles
    }

    /// Fast marching from `p0`, stopped once `p1` is accepted unless `full`.
    pub fn distance(&self, psi: &[f64], obstacles: &ObstacleSet, full: bool) -> Result<(DistanceField, SolveReport)> {
        let target = (!full).then_some(self.endpoints.p1);
        let opts = SolveOptions { target, deadline: self.deadline };
        solve(&self.spec, &self.stencils, psi, Some(obstacles), self.endpoints.p0, opts)
    }

    /// Backtrack from `p1` and close through the source.
    pub fn contour_from_field(&self, field: &DistanceField, obstacles: &ObstacleSet) -> Result<(ClosedContour, GeodesicPath)> {
        let energy = field.value(self.endpoints.p1);
        if !energy.is_finite() {
            return Err(Error::Unreachable("p1 was not reached by the front".into()));
        }
        let path = backtrack(field, &self.stencils, Some(obstacles), self.endpoints.p1, BACKTRACK_STEP)?;
        let contour = close_and_diagnose(&path, self.ann.source.p(), self.z, self.spec.hx)?;
        Ok((contour, path))
    }

    /// Solve from `p0` to `p1`, backtrack, close through the source.
    pub fn closed_path(&self, psi: &[f64], extra_mask: Option<&Mask>) -> Result<ClosedPathResult> {
        let obstacles = self.obstacles_with(extra_mask);
        let (field, report) = self.distance(psi, &obstacles, false)?;
        let (contour, path) = self.contour_from_field(&field, &obstacles)?;
        Ok(ClosedPathResult { contour, path, energy: field.value(self.endpoints.p1), accepted_nodes: report.accepted_count })
    }

    /// `ψ_edge` over the lifted grid.
    pub fn edge_velocity(&self) -> Result<VelocityField> {
        build_edge_velocity(&self.tensor, self.cfg.edge_exponent, &self.spec)
    }

    /// Edge-only contour over the full domain.
    pub fn initial(&self) -> Result<ClosedPathResult> {
        self.closed_path(&self.edge_velocity()?.values, None)
    }

    fn potentials(&self, inside: &Mask) -> Result<PotentialMaps> {
        fit_potentials(self.image, inside, &inside.complement(), self.cfg.appearance)
    }

    fn scribble_potentials(&self) -> Option<Result<PotentialMaps>> {
        if self.ann.fg_scribbles.is_empty() || self.ann.bg_scribbles.is_empty() {
            return None;
        }
        let (w, h) = (self.spec.nx, self.spec.ny);
        let draw = |lines: &Vec<Vec<crate::constraints::Point2>>| {
            let mut m = Mask::new(w, h);
            for line in lines {
                for (k, p) in line.iter().enumerate() {
                    let q = line.get(k + 1).unwrap_or(p);
                    m.draw_segment(p.arr(), q.arr(), 1.0, self.spec.hx);
                }
            }
            m
        };
        let (fg, bg) = (draw(&self.ann.fg_scribbles), draw(&self.ann.bg_scribbles));
        Some(fit_potentials(self.image, &fg, &bg, self.cfg.appearance))
    }

    /// One region-driven step inside the tube around `prev`.
    pub fn region_step(&self, prev: &ClosedContour, potentials: &PotentialMaps) -> Result<ClosedPathResult> {
        let tube = tube_mask(&prev.vertices, self.spec.nx, self.spec.ny, self.spec.hx, self.cfg.tube_radius);
        let rhs: Vec<f64> = potentials.difference();
        let vf = solve_curl(&rhs, &tube, self.spec.hx)?;
        let psi = build_velocity(&self.tensor, &vf, &tube, self.cfg.alpha, self.cfg.mu, &self.spec)?;
        self.closed_path(&psi.values, Some(&tube.complement()))
    }
}

/// A simple closed curve with curvature at most `1/β` encloses a disc of
/// radius `β`, so Dubins contours need `2β` to fit inside the image.
pub fn dubins_feasible(model: ModelKind, params: &ModelParams, spec: &GridSpec) -> Result<()> {
    let extent = (spec.nx.min(spec.ny) - 1) as f64 * spec.hx;
    if model.family == ModelFamily::Dubins && 2.0 * params.beta > extent {
        return Err(Error::Unreachable(format!(
            "a closed curve with turning radius {} needs a disc of diameter {} but the image spans {extent}",
            params.beta,
            2.0 * params.beta
        )));
    }
    Ok(())
}

/// Pixels within `radius` of the closed polygon.
pub fn tube_mask(poly: &[[f64; 2]], width: usize, height: usize, hx: f64, radius: f64) -> Mask {
    let dist = distance_to_polygon(poly, width, height, hx);
    let mut tube = Mask::new(width, height);
    for (t, d) in tube.data.iter_mut().zip(&dist) {
        *t = *d <= radius;
    }
    tube
}

/// Mean symmetric closest-point distance between two closed polygons.
pub fn contour_displacement(a: &[[f64; 2]], b: &[[f64; 2]]) -> f64 {
    let one_way = |from: &[[f64; 2]], to: &[[f64; 2]]| -> f64 {
        let n = to.len();
        from.iter()
            .map(|p| (0..n).map(|k| point_segment_distance(*p, to[k], to[(k + 1) % n])).fold(f64::INFINITY, f64::min))
            .sum::<f64>()
            / from.len() as f64
    };
    0.5 * (one_way(a, b) + one_way(b, a))
}

/// The edge-only contour.
pub fn initial_contour(image: &Image, ann: &Annotation, cfg: &EvolutionConfig) -> Result<ClosedContour> {
    Ok(Segmenter::new(image, ann, cfg, None)?.initial()?.contour)
}

pub fn evolve(image: &Image, ann: &Annotation, cfg: &EvolutionConfig) -> Result<(ClosedContour, EvolutionTrace)> {
    evolve_until(image, ann, cfg, None)
}

/// Evolution with an optional wall-clock deadline.
///
/// A failure of the initial contour is an error; a failure in a later
/// iteration keeps the last good contour and marks the trace degraded.
/// Deadline expiry is always an error.
pub fn evolve_until(
    image: &Image,
    ann: &Annotation,
    cfg: &EvolutionConfig,
    deadline: Option<Instant>,
) -> Result<(ClosedContour, EvolutionTrace)> {
    let mut trace = EvolutionTrace::default();
    let contour = evolve_into(image, ann, cfg, deadline, &mut trace)?;
    Ok((contour, trace))
}

/// Like [`evolve_until`], recording into `trace` so that iterations
/// completed before an error remain available to the caller.
pub fn evolve_into(
    image: &Image,
    ann: &Annotation,
    cfg: &EvolutionConfig,
    deadline: Option<Instant>,
    trace: &mut EvolutionTrace,
) -> Result<ClosedContour> {
    *trace = EvolutionTrace::default();
    let seg = Segmenter::new(image, ann, cfg, deadline)?;
    let first = seg.initial()?;
    let mut current = first.contour.clone();
    trace.iterations.push(IterationRecord {
        contour: first.contour,
        energy: first.energy,
        displacement: None,
        accepted_nodes: first.accepted_nodes,
    });
    if !contour_acceptable(&current, cfg.model) {
        trace.degraded = true;
        trace.degraded_reason = Some("initial contour failed its diagnostics".into());
        return Ok(current);
    }
    if cfg.edge_only {
        return Ok(current);
    }
    let mut frozen: Option<PotentialMaps> = None;
    for _ in 0..cfg.max_iters {
        let step = (|| {
            let potentials = match &frozen {
                Some(p) => p.clone(),
                None => {
                    let p = match cfg.freeze_appearance.then(|| seg.scribble_potentials()).flatten() {
                        Some(p) => p?,
                        None => seg.potentials(&current.rasterize(seg.spec.nx, seg.spec.ny, seg.spec.hx))?,
                    };
                    if cfg.freeze_appearance {
                        frozen = Some(p.clone());
                    }
                    p
                }
            };
            seg.region_step(&current, &potentials)
        })();
        let next = match step {
            Ok(r) if contour_acceptable(&r.contour, cfg.model) => r,
            Ok(r) => {
                trace.degraded = true;
                trace.degraded_reason = Some(format!("contour failed its diagnostics: {:?}", r.contour.diagnostics));
                break;
            }
            Err(Error::Deadline) => return Err(Error::Deadline),
            Err(e) => {
                trace.degraded = true;
                trace.degraded_reason = Some(format!("{}: {e}", e.code()));
                break;
            }
        };
        let displacement = contour_displacement(&current.vertices, &next.contour.vertices);
        current = next.contour.clone();
        trace.iterations.push(IterationRecord {
            contour: next.contour,
            energy: next.energy,
            displacement: Some(displacement),
            accepted_nodes: next.accepted_nodes,
        });
        if displacement < cfg.convergence_tol {
            trace.converged = true;
            break;
        }
    }
    Ok(current)
}
