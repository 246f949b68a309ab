mod common;

use common::{relaxed2, relaxed3, Lcg};
use geokonvex::decomposition::{decompose2, decompose3};
use proptest::prelude::*;

fn unit3(r: &mut Lcg) -> [f64; 3] {
    loop {
        let v = [r.range(-1.0, 1.0), r.range(-1.0, 1.0), r.range(-1.0, 1.0)];
        let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        if n > 0.1 && n <= 1.0 {
            return [v[0] / n, v[1] / n, v[2] / n];
        }
    }
}

fn unit2(r: &mut Lcg) -> [f64; 2] {
    let t = r.range(0.0, std::f64::consts::TAU);
    [t.cos(), t.sin()]
}

#[test]
fn reconstruction_3d() {
    let mut r = Lcg(11);
    for _ in 0..1000 {
        let v = unit3(&mut r);
        let d = decompose3(v, 0.1).unwrap();
        let want = relaxed3(v, 0.1);
        let got = d.tensor();
        for i in 0..3 {
            for j in 0..3 {
                assert!((got[i][j] - want[i][j]).abs() <= 1e-10, "{v:?}");
            }
        }
    }
}

#[test]
fn reconstruction_2d() {
    let mut r = Lcg(12);
    for _ in 0..1000 {
        let v = unit2(&mut r);
        let got = decompose2(v, 0.1).unwrap().tensor();
        let want = relaxed2(v, 0.1);
        for i in 0..2 {
            for j in 0..2 {
                assert!((got[i][j] - want[i][j]).abs() <= 1e-10);
            }
        }
    }
}

#[test]
fn second_order_in_eps() {
    let mut r = Lcg(13);
    let (mut e1, mut e2) = (0.0, 0.0);
    for _ in 0..500 {
        let v = unit3(&mut r);
        let x = unit3(&mut r);
        let exact = (x[0] * v[0] + x[1] * v[1] + x[2] * v[2]).max(0.0).powi(2);
        e1 += (decompose3(v, 0.2).unwrap().half_form(x) - exact).abs();
        e2 += (decompose3(v, 0.1).unwrap().half_form(x) - exact).abs();
    }
    assert!(e1 / e2 >= 2.5, "ratio {}", e1 / e2);
}

#[test]
fn brute_force_diagonal_2d() {
    let d = decompose2([1.0, 1.0], 0.1).unwrap();
    let got = d.half_form([1.0, 1.0]);
    assert!((got - 4.0).abs() <= 0.01 * 2.0 * 2.0);
}

proptest! {
    #[test]
    fn weights_nonnegative_and_aligned(a in -5.0..5.0f64, b in -5.0..5.0f64, c in -5.0..5.0f64, eps in 0.01..0.9f64) {
        prop_assume!(a.abs() + b.abs() + c.abs() > 1e-3);
        let v = [a, b, c];
        let d = decompose3(v, eps).unwrap();
        prop_assert_eq!(d.terms.len(), 6);
        for (w, e) in &d.terms {
            prop_assert!(*w >= 0.0);
            if *w > 0.0 {
                let dot = e[0] as f64 * a + e[1] as f64 * b + e[2] as f64 * c;
                prop_assert!(dot >= 0.0);
            }
        }
    }

    #[test]
    fn homogeneous_in_v(a in -3.0..3.0f64, b in -3.0..3.0f64, c in -3.0..3.0f64, k in 0.1..10.0f64) {
        prop_assume!(a.abs() + b.abs() + c.abs() > 1e-3);
        let d1 = decompose3([a, b, c], 0.1).unwrap();
        let d2 = decompose3([k * a, k * b, k * c], 0.1).unwrap();
        for (t1, t2) in d1.terms.iter().zip(&d2.terms) {
            prop_assert_eq!(t1.1, t2.1);
            prop_assert!((t2.0 - k * k * t1.0).abs() <= 1e-9 * (1.0 + t2.0));
        }
    }

    #[test]
    fn planar_terms_aligned(a in -5.0..5.0f64, b in -5.0..5.0f64, eps in 0.01..0.9f64) {
        prop_assume!(a.abs() + b.abs() > 1e-3);
        let d = decompose2([a, b], eps).unwrap();
        prop_assert_eq!(d.terms.len(), 3);
        for (w, e) in &d.terms {
            prop_assert!(*w >= 0.0);
            if *w > 0.0 {
                prop_assert!(e[0] as f64 * a + e[1] as f64 * b >= 0.0);
            }
        }
    }
}
