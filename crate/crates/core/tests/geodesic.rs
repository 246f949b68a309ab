mod common;

use common::Lcg;
use geokonvex::constraints::{build_search_space, edge_blocked, Annotation, ObstacleSet};
use geokonvex::eikonal::{solve, CompiledStencils, DistanceField, SolveOptions};
use geokonvex::geodesic::{
    backtrack, close_and_diagnose, convex_hull, diagnose, geodesic_flow, jaccard, node_flow, winding_number,
};
use geokonvex::lifted_grid::{interpolate_field, CoVector, GridSpec, LiftedPoint};
use geokonvex::metrics::{build_stencil_cache, ModelFamily, ModelKind, ModelParams};
use geokonvex::raster::Mask;
use proptest::prelude::*;

fn linear_field(spec: &GridSpec, c: &CoVector, seed: usize) -> DistanceField {
    let values = (0..spec.len())
        .map(|i| {
            let (ix, iy, it) = spec.coords(i);
            c.hx * ix as f64 * spec.hx + c.hy * iy as f64 * spec.hx + c.htheta * it as f64 * spec.htheta()
        })
        .collect();
    DistanceField { spec: *spec, values, accepted_order: vec![0; spec.len()], seed }
}

/// For `u = ⟨c, x⟩` the discrete flow is the gradient of the stencil Hamiltonian at `c`.
#[test]
fn chain_flow_matches_hamiltonian_gradient() {
    let spec = GridSpec::new(48, 48, 60, 1.0).unwrap();
    let mut r = Lcg(41);
    for model in ModelKind::all() {
        let params = ModelParams { beta: 2.0, ..Default::default() };
        let schemes = build_stencil_cache(model, &params, &spec).unwrap();
        let compiled = CompiledStencils::new(&schemes, &spec).unwrap();
        for _ in 0..10 {
            let c = CoVector::new(r.range(-1.0, 1.0), r.range(-1.0, 1.0), r.range(-1.0, 1.0));
            let level = 20 + (r.next_f64() * 20.0) as usize;
            let x = spec.index(24, 24, level);
            let field = linear_field(&spec, &c, 0);
            let v = geodesic_flow(&spec.point_of(x), &field, &compiled, None).unwrap();
            let h = 1e-6;
            let grad = |k: usize| {
                let mut a = [c.hx, c.hy, c.htheta];
                let mut b = a;
                a[k] += h;
                b[k] -= h;
                let ha = schemes[level].hamiltonian(&spec, &CoVector::new(a[0], a[1], a[2]));
                let hb = schemes[level].hamiltonian(&spec, &CoVector::new(b[0], b[1], b[2]));
                (ha - hb) / (2.0 * h)
            };
            let want = [grad(0), grad(1), grad(2)];
            let got = [v.dx, v.dy, v.dtheta];
            let scale = want.iter().map(|w| w.abs()).fold(1.0, f64::max);
            for k in 0..3 {
                assert!((got[k] - want[k]).abs() <= 1e-6 * scale, "{model} level {level}: {got:?} vs {want:?}");
            }
        }
    }
}

#[test]
fn single_term_flow_is_proportional_to_offset() {
    let spec = GridSpec::new(8, 8, 8, 1.0).unwrap();
    let schemes: Vec<_> = (0..8)
        .map(|t| geokonvex::metrics::StencilScheme { groups: vec![vec![(2.0, [1, 0, 0])]], theta_index: t })
        .collect();
    let compiled = CompiledStencils::new(&schemes, &spec).unwrap();
    let field = linear_field(&spec, &CoVector::new(0.5, 0.3, 0.0), 0);
    let v = node_flow(&field, &compiled, None, spec.index(4, 4, 2)).unwrap();
    assert_eq!(v, [2.0 * 0.5, 0.0, 0.0]);
}

fn rsf(convex: bool) -> ModelKind {
    ModelKind { family: ModelFamily::ReedsSheppForward, convexity_constrained: convex }
}

#[test]
fn flow_vanishes_at_seed_and_trivial_backtrack() {
    let spec = GridSpec::new(20, 20, 16, 1.0).unwrap();
    let compiled = CompiledStencils::new(&build_stencil_cache(rsf(false), &ModelParams::default(), &spec).unwrap(), &spec).unwrap();
    let seed = spec.index(10, 10, 4);
    let (field, _) = solve(&spec, &compiled, &vec![1.0; spec.len()], None, seed, SolveOptions::default()).unwrap();
    assert_eq!(node_flow(&field, &compiled, None, seed), Some([0.0; 3]));
    let v = geodesic_flow(&spec.point_of(seed), &field, &compiled, None).unwrap();
    assert_eq!([v.dx, v.dy, v.dtheta], [0.0; 3]);
    let path = backtrack(&field, &compiled, None, seed, 0.5).unwrap();
    assert_eq!(path.len(), 1);
}

#[test]
fn unreachable_start_rejected() {
    let spec = GridSpec::new(8, 8, 8, 1.0).unwrap();
    let compiled = CompiledStencils::new(&build_stencil_cache(rsf(false), &ModelParams::default(), &spec).unwrap(), &spec).unwrap();
    let mut field = linear_field(&spec, &CoVector::new(1.0, 0.0, 0.0), 0);
    field.values[5] = f64::INFINITY;
    assert_eq!(backtrack(&field, &compiled, None, 5, 0.5).unwrap_err().code(), "unreachable_target");
}

#[test]
fn u_decreases_along_backtracked_path() {
    let spec = GridSpec::new(40, 40, 32, 1.0).unwrap();
    let mut r = Lcg(42);
    for model in ModelKind::all() {
        let compiled = CompiledStencils::new(&build_stencil_cache(model, &ModelParams::default(), &spec).unwrap(), &spec).unwrap();
        let psi: Vec<f64> = (0..spec.len()).map(|_| r.range(0.8, 1.2)).collect();
        let seed = spec.index(8, 20, 0);
        let mut wall = ObstacleSet::empty(spec.hx);
        wall.angular_wall = Some(-0.5 * spec.htheta());
        let (field, _) = solve(&spec, &compiled, &psi, Some(&wall), seed, SolveOptions::default()).unwrap();
        let start = spec.index(32, 22, 2);
        let path = backtrack(&field, &compiled, Some(&wall), start, 0.5).unwrap();
        assert_eq!(path.lifted_points[0], spec.point_of(seed));
        assert_eq!(*path.lifted_points.last().unwrap(), spec.point_of(start));
        let mut vmax: f64 = 0.0;
        for p in &path.lifted_points {
            let v = geodesic_flow(p, &field, &compiled, Some(&wall)).unwrap();
            vmax = vmax.max((v.dx.powi(2) + v.dy.powi(2) + (v.dtheta / spec.htheta()).powi(2)).sqrt());
        }
        let tol = 0.5 * vmax;
        let u: Vec<f64> = path.lifted_points.iter().map(|p| interpolate_field(&field.values, p, &spec).unwrap()).collect();
        for w in u.windows(2) {
            assert!(w[1] >= w[0] - tol, "{model}: {} after {}", w[1], w[0]);
        }
        assert!(path.arc_lengths.windows(2).all(|w| w[1] >= w[0]));
    }
}

#[test]
fn closed_path_respects_walls() {
    let spec = GridSpec::new(64, 64, 36, 1.0).unwrap();
    let params = ModelParams { beta: 3.0, ..Default::default() };
    for model in ModelKind::all().into_iter().filter(|m| m.convexity_constrained) {
        let compiled = CompiledStencils::new(&build_stencil_cache(model, &params, &spec).unwrap(), &spec).unwrap();
        let ann = Annotation::new(46.0, 30.0, 1.6).with_z([32.0, 32.0]);
        let (obs, ends) = build_search_space(&ann, &spec, 1.0, true).unwrap();
        let opts = SolveOptions { target: Some(ends.p1), ..Default::default() };
        let (field, _) = solve(&spec, &compiled, &vec![1.0; spec.len()], Some(&obs), ends.p0, opts).unwrap();
        let path = backtrack(&field, &compiled, Some(&obs), ends.p1, 0.5).unwrap();
        for w in path.lifted_points.windows(2) {
            assert!(!edge_blocked(&w[0], &w[1], &obs), "{model}: step crosses an obstacle");
        }
        for w in path.turning_angles.windows(2) {
            assert!(w[1] - w[0] >= -1e-3, "{model}: turning angle decreased");
        }
        let contour = close_and_diagnose(&path, ann.source.p(), [32.0, 32.0], spec.hx).unwrap();
        assert_eq!(contour.vertices[0], ann.source.p());
        assert_eq!(winding_number(&contour.vertices, [32.0, 32.0]), 1);
        let d = contour.diagnostics;
        assert!(d.is_simple && d.is_convex && d.encloses_z, "{model}: {d:?}");
        assert!((d.total_curvature - std::f64::consts::TAU).abs() <= 0.05, "{model}: {}", d.total_curvature);
    }
}

#[test]
fn closure_gap_enforced() {
    let pts = vec![LiftedPoint::new(10.0, 10.0, 0.0), LiftedPoint::new(20.0, 10.0, 1.0), LiftedPoint::new(20.0, 20.0, 2.0)];
    let path = geokonvex::geodesic::GeodesicPath::from_lifted(pts).unwrap();
    let err = close_and_diagnose(&path, [0.0, 0.0], [15.0, 12.0], 1.0).unwrap_err();
    assert_eq!(err.code(), "contour.closure");
}

#[test]
fn rasterized_contour_keeps_flags() {
    let poly: Vec<[f64; 2]> = (0..80)
        .map(|k| {
            let t = std::f64::consts::TAU * k as f64 / 80.0;
            [30.0 + 18.0 * t.cos(), 25.0 + 11.0 * t.sin()]
        })
        .collect();
    let z = [31.0, 24.0];
    let d = diagnose(&poly, z, 3.0);
    let mask = geokonvex::raster::rasterize_polygon(&poly, 64, 64, 1.0);
    let pixels: Vec<[f64; 2]> =
        (0..64 * 64).filter(|i| mask.data[*i]).map(|i| [(i % 64) as f64, (i / 64) as f64]).collect();
    let back = convex_hull(&pixels);
    let d2 = diagnose(&back, z, 3.0);
    assert_eq!((d.is_simple, d.is_convex, d.encloses_z), (d2.is_simple, d2.is_convex, d2.encloses_z));
}

fn mask_from(bits: &[bool], w: usize) -> Mask {
    let mut m = Mask::new(w, bits.len() / w);
    m.data.copy_from_slice(bits);
    m
}

proptest! {
    #[test]
    fn jaccard_symmetric_and_exact(a in prop::collection::vec(any::<bool>(), 36), b in prop::collection::vec(any::<bool>(), 36)) {
        let (ma, mb) = (mask_from(&a, 6), mask_from(&b, 6));
        let j1 = jaccard(&ma, &mb).unwrap();
        prop_assert_eq!(j1, jaccard(&mb, &ma).unwrap());
        prop_assert!((0.0..=1.0).contains(&j1));
        if a.iter().any(|x| *x) || b.iter().any(|x| *x) {
            prop_assert_eq!(j1 == 1.0, a == b);
        }
    }

    #[test]
    fn unwrapped_turning_steps_bounded(thetas in prop::collection::vec(0.0..6.28f64, 2..40)) {
        let pts: Vec<LiftedPoint> = thetas.iter().enumerate().map(|(i, t)| LiftedPoint::new(i as f64, 0.0, *t)).collect();
        let path = geokonvex::geodesic::GeodesicPath::from_lifted(pts).unwrap();
        for (k, w) in path.turning_angles.windows(2).enumerate() {
            prop_assert!((w[1] - w[0]).abs() <= std::f64::consts::PI + 1e-12);
            let raw = (path.turning_angles[k + 1] - thetas[k + 1]) / std::f64::consts::TAU;
            prop_assert!((raw - raw.round()).abs() < 1e-9);
        }
    }
}

#[test]
fn jaccard_size_mismatch() {
    assert_eq!(jaccard(&Mask::new(3, 3), &Mask::new(4, 3)).unwrap_err().code(), "domain");
}
