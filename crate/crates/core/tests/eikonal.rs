mod common;

use common::{gauss_seidel, Lcg};
use geokonvex::constraints::{ObstacleSegment, ObstacleSet, SegmentKind};
use geokonvex::eikonal::{residual, solve, CompiledStencils, SolveOptions, StopReason};
use geokonvex::lifted_grid::GridSpec;
use geokonvex::metrics::{build_stencil_cache, ModelFamily, ModelKind, ModelParams};
use geokonvex::raster::Mask;

fn rsf_convex() -> ModelKind {
    ModelKind { family: ModelFamily::ReedsSheppForward, convexity_constrained: true }
}

fn random_obstacles(spec: &GridSpec, r: &mut Lcg) -> ObstacleSet {
    let mut obs = ObstacleSet::empty(spec.hx);
    let [w, h] = spec.extent();
    for _ in 0..2 {
        let a = [r.range(0.0, w), r.range(0.0, h)];
        let b = [r.range(0.0, w), r.range(0.0, h)];
        obs.physical_segments.push(ObstacleSegment { a, b, open_a: false, open_b: false, kind: SegmentKind::Background });
    }
    let mut mask = Mask::new(spec.nx, spec.ny);
    for _ in 0..4 {
        mask.set((r.next_f64() * spec.nx as f64) as usize, (r.next_f64() * spec.ny as f64) as usize, true);
    }
    obs.blocked_mask = Some(mask);
    obs.angular_wall = Some(r.range(0.0, std::f64::consts::TAU));
    obs
}

#[test]
fn matches_gauss_seidel_constant_speed() {
    let spec = GridSpec::new(16, 16, 16, 1.0).unwrap();
    let params = ModelParams { beta: 2.0, ..Default::default() };
    let schemes = build_stencil_cache(rsf_convex(), &params, &spec).unwrap();
    let compiled = CompiledStencils::new(&schemes, &spec).unwrap();
    let psi = vec![1.0; spec.len()];
    let seed = spec.index(8, 8, 0);
    let (field, _) = solve(&spec, &compiled, &psi, None, seed, SolveOptions::default()).unwrap();
    let oracle = gauss_seidel(&spec, &schemes, &psi, None, seed, 1e-12);
    for (a, b) in field.values.iter().zip(&oracle) {
        assert!(a == b || (a - b).abs() <= 1e-8, "{a} vs {b}");
    }
}

#[test]
fn matches_gauss_seidel_random_instances() {
    let spec = GridSpec::new(16, 16, 16, 1.0).unwrap();
    let mut r = Lcg(31);
    for model in ModelKind::all() {
        let params = ModelParams { beta: r.range(1.0, 3.0), ..Default::default() };
        let schemes = build_stencil_cache(model, &params, &spec).unwrap();
        let compiled = CompiledStencils::new(&schemes, &spec).unwrap();
        let psi: Vec<f64> = (0..spec.len()).map(|_| r.range(0.5, 2.0)).collect();
        let obs = random_obstacles(&spec, &mut r);
        let seed = loop {
            let s = spec.index(4 + (r.next_f64() * 8.0) as usize, 4 + (r.next_f64() * 8.0) as usize, (r.next_f64() * 16.0) as usize);
            if !obs.node_blocked(&spec, s) {
                break s;
            }
        };
        let (field, _) = solve(&spec, &compiled, &psi, Some(&obs), seed, SolveOptions::default()).unwrap();
        let oracle = gauss_seidel(&spec, &schemes, &psi, Some(&obs), seed, 1e-12);
        let mut finite = 0;
        for (a, b) in field.values.iter().zip(&oracle) {
            assert!(a == b || (a - b).abs() <= 1e-8, "{model}: {a} vs {b}");
            finite += a.is_finite() as usize;
        }
        assert!(finite > 50, "{model}: only {finite} reached");
        for x in 0..spec.len() {
            if x != seed && field.is_accepted(x) {
                let res = residual(&spec, &compiled, &psi, Some(&obs), &field, x);
                assert!(res.abs() <= 1e-8 * (psi[x] * psi[x]).max(1.0), "{model}: residual {res}");
            }
        }
    }
}

#[test]
fn accepted_values_non_decreasing() {
    let spec = GridSpec::new(24, 24, 32, 1.0).unwrap();
    let schemes = build_stencil_cache(rsf_convex(), &ModelParams::default(), &spec).unwrap();
    let compiled = CompiledStencils::new(&schemes, &spec).unwrap();
    let psi = vec![1.0; spec.len()];
    let (field, report) = solve(&spec, &compiled, &psi, None, spec.index(12, 12, 3), SolveOptions::default()).unwrap();
    assert_eq!(report.stop_reason, StopReason::QueueExhausted);
    let mut by_order: Vec<(u32, f64)> =
        field.accepted_order.iter().zip(&field.values).filter(|(o, _)| **o != u32::MAX).map(|(o, v)| (*o, *v)).collect();
    by_order.sort_by_key(|p| p.0);
    assert_eq!(by_order.len(), report.accepted_count);
    for w in by_order.windows(2) {
        assert!(w[1].1 >= w[0].1);
    }
}

#[test]
fn larger_speed_never_decreases_distance() {
    let spec = GridSpec::new(12, 12, 16, 1.0).unwrap();
    let mut r = Lcg(32);
    let schemes = build_stencil_cache(rsf_convex(), &ModelParams::default(), &spec).unwrap();
    let compiled = CompiledStencils::new(&schemes, &spec).unwrap();
    let psi: Vec<f64> = (0..spec.len()).map(|_| r.range(0.5, 1.5)).collect();
    let psi2: Vec<f64> = psi.iter().map(|p| p * r.range(1.0, 1.5)).collect();
    let seed = spec.index(6, 6, 0);
    let (a, _) = solve(&spec, &compiled, &psi, None, seed, SolveOptions::default()).unwrap();
    let (b, _) = solve(&spec, &compiled, &psi2, None, seed, SolveOptions::default()).unwrap();
    for (u, v) in a.values.iter().zip(&b.values) {
        assert!(v >= u);
    }
}

#[test]
fn convexity_dominates_classical() {
    let spec = GridSpec::new(20, 20, 24, 1.0).unwrap();
    let params = ModelParams { beta: 3.0, ..Default::default() };
    let psi = vec![1.0; spec.len()];
    let seed = spec.index(10, 10, 5);
    let solve_model = |convex| {
        let m = ModelKind { family: ModelFamily::ReedsSheppForward, convexity_constrained: convex };
        let c = CompiledStencils::new(&build_stencil_cache(m, &params, &spec).unwrap(), &spec).unwrap();
        solve(&spec, &c, &psi, None, seed, SolveOptions::default()).unwrap().0
    };
    let (c, u) = (solve_model(true), solve_model(false));
    let violations = c.values.iter().zip(&u.values).filter(|(a, b)| a < b).count();
    assert_eq!(violations, 0);
}

#[test]
fn enclosed_node_unreachable_and_early_stop() {
    let spec = GridSpec::new(16, 16, 8, 1.0).unwrap();
    let schemes = build_stencil_cache(rsf_convex(), &ModelParams::default(), &spec).unwrap();
    let compiled = CompiledStencils::new(&schemes, &spec).unwrap();
    let psi = vec![1.0; spec.len()];
    let mut obs = ObstacleSet::empty(1.0);
    let sq = [[9.5, 9.5], [13.5, 9.5], [13.5, 13.5], [9.5, 13.5]];
    for k in 0..4 {
        obs.physical_segments.push(ObstacleSegment {
            a: sq[k],
            b: sq[(k + 1) % 4],
            open_a: false,
            open_b: false,
            kind: SegmentKind::Background,
        });
    }
    let seed = spec.index(3, 3, 0);
    let (field, _) = solve(&spec, &compiled, &psi, Some(&obs), seed, SolveOptions::default()).unwrap();
    assert_eq!(field.value(seed), 0.0);
    assert!(field.value(spec.index(11, 11, 2)).is_infinite());
    let target = spec.index(6, 3, 0);
    let (early, report) =
        solve(&spec, &compiled, &psi, Some(&obs), seed, SolveOptions { target: Some(target), ..Default::default() }).unwrap();
    assert_eq!(report.stop_reason, StopReason::TargetReached);
    assert_eq!(early.value(target), field.value(target));
    assert!(report.accepted_count < spec.len());
}

#[test]
fn blocked_seed_rejected() {
    let spec = GridSpec::new(8, 8, 8, 1.0).unwrap();
    let schemes = build_stencil_cache(rsf_convex(), &ModelParams::default(), &spec).unwrap();
    let compiled = CompiledStencils::new(&schemes, &spec).unwrap();
    let mut obs = ObstacleSet::empty(1.0);
    obs.blocked_mask = Some(Mask::full(8, 8));
    let err = solve(&spec, &compiled, &vec![1.0; spec.len()], Some(&obs), 0, SolveOptions::default()).unwrap_err();
    assert_eq!(err.code(), "config.invalid");
}

#[test]
fn bit_identical_repeats() {
    let spec = GridSpec::new(16, 16, 16, 1.0).unwrap();
    let mut r = Lcg(33);
    let schemes = build_stencil_cache(
        ModelKind { family: ModelFamily::EulerMumford, convexity_constrained: true },
        &ModelParams::default(),
        &spec,
    )
    .unwrap();
    let compiled = CompiledStencils::new(&schemes, &spec).unwrap();
    let psi: Vec<f64> = (0..spec.len()).map(|_| r.range(0.5, 2.0)).collect();
    let a = solve(&spec, &compiled, &psi, None, 7, SolveOptions::default()).unwrap().0;
    let b = solve(&spec, &compiled, &psi, None, 7, SolveOptions::default()).unwrap().0;
    assert!(a.values.iter().zip(&b.values).all(|(x, y)| x.to_bits() == y.to_bits()));
    assert_eq!(a.accepted_order, b.accepted_order);
}

proptest::proptest! {
    #[test]
    fn local_update_monotone_in_floating_point(
        vals in proptest::collection::vec(0.0..50.0f64, 1..6),
        ws in proptest::collection::vec(1e-3..5.0f64, 6),
        rhs in 0.01..9.0f64,
        k in 0usize..6,
        ulps in 1u64..1000,
    ) {
        use geokonvex::eikonal::local_update;
        let k = k % vals.len();
        let ws = &ws[..vals.len()];
        let base = local_update(&[vals.clone()], &[ws.to_vec()], rhs);
        let mut up = vals.clone();
        up[k] = f64::from_bits(up[k].to_bits() + ulps);
        let raised = local_update(&[up], &[ws.to_vec()], rhs);
        proptest::prop_assert!(raised >= base, "{raised} < {base}");
    }
}
