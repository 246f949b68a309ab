//! Independent reference computations shared by the integration tests.
#![allow(dead_code)]

use geokonvex::constraints::ObstacleSet;
use geokonvex::lifted_grid::{CoVector, GridSpec};
use geokonvex::metrics::{hamiltonian_eval, metric_squared_reduced, ModelKind, ModelParams, StencilScheme};
use std::f64::consts::{FRAC_PI_2, PI};

/// `D = (1-ε²) v vᵀ + ε² |v|² Id`, written out directly.
pub fn relaxed3(v: [f64; 3], eps: f64) -> [[f64; 3]; 3] {
    let n2 = v[0] * v[0] + v[1] * v[1] + v[2] * v[2];
    let mut d = [[0.0; 3]; 3];
    for (i, row) in d.iter_mut().enumerate() {
        for (j, x) in row.iter_mut().enumerate() {
            *x = (1.0 - eps * eps) * v[i] * v[j] + if i == j { eps * eps * n2 } else { 0.0 };
        }
    }
    d
}

pub fn relaxed2(v: [f64; 2], eps: f64) -> [[f64; 2]; 2] {
    let n2 = v[0] * v[0] + v[1] * v[1];
    [
        [(1.0 - eps * eps) * v[0] * v[0] + eps * eps * n2, (1.0 - eps * eps) * v[0] * v[1]],
        [(1.0 - eps * eps) * v[1] * v[0], (1.0 - eps * eps) * v[1] * v[1] + eps * eps * n2],
    ]
}

/// Support function `max_{F(ẋ) ≤ 1} ⟨x̂, ẋ⟩` over forward motions, by dense
/// search over the unit circle of `(s, ν)` followed by golden-section polish.
pub fn support(model: ModelKind, a: f64, b: f64) -> f64 {
    let f = |t: f64| {
        let (s, nu) = (t.cos().max(0.0), t.sin());
        let m = metric_squared_reduced(model, s, nu).sqrt();
        if m.is_finite() && m > 0.0 {
            (a * s + b * nu) / m
        } else {
            f64::NEG_INFINITY
        }
    };
    const N: usize = 8000;
    let step = PI / N as f64;
    let mut best = (f64::NEG_INFINITY, 0usize);
    for k in 0..=N {
        let v = f(-FRAC_PI_2 + k as f64 * step);
        if v > best.0 {
            best = (v, k);
        }
    }
    let mut lo = -FRAC_PI_2 + (best.1 as f64 - 1.0) * step;
    let mut hi = -FRAC_PI_2 + (best.1 as f64 + 1.0) * step;
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut top = best.0;
    for _ in 0..80 {
        let c = hi - g * (hi - lo);
        let d = lo + g * (hi - lo);
        let (fc, fd) = (f(c), f(d));
        top = top.max(fc).max(fd);
        if fc >= fd {
            hi = d;
        } else {
            lo = c;
        }
    }
    top
}

/// `sup_ẋ ⟨x̂, ẋ⟩ - ½ F(ẋ)²`, from the metric alone.
pub fn numeric_hamiltonian(model: ModelKind, params: &ModelParams, theta: f64, xhat: &CoVector) -> f64 {
    let a = xhat.hx * theta.cos() + xhat.hy * theta.sin();
    let b = xhat.htheta / params.beta;
    0.5 * support(model, a, b).max(0.0).powi(2)
}

/// `F(s, ν) = sup_{H(x̂) ≤ ½} ⟨x̂, ẋ⟩`, from the Hamiltonian alone.
pub fn numeric_metric(model: ModelKind, params: &ModelParams, s: f64, nu: f64) -> f64 {
    let f = |phi: f64| {
        let h = hamiltonian_eval(model, params, 0.0, &CoVector::new(phi.cos(), 0.0, params.beta * phi.sin()));
        if h <= 0.0 {
            return if s * phi.cos() + nu * phi.sin() > 0.0 { f64::INFINITY } else { f64::NEG_INFINITY };
        }
        (s * phi.cos() + nu * phi.sin()) / (2.0 * h).sqrt()
    };
    const N: usize = 20000;
    let step = 2.0 * PI / N as f64;
    let mut best = (f64::NEG_INFINITY, 0usize);
    for k in 0..N {
        let v = f(-PI + k as f64 * step);
        if v > best.0 {
            best = (v, k);
        }
    }
    if best.0.is_infinite() {
        return best.0;
    }
    let mut lo = -PI + (best.1 as f64 - 1.0) * step;
    let mut hi = -PI + (best.1 as f64 + 1.0) * step;
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut top = best.0;
    for _ in 0..80 {
        let c = hi - g * (hi - lo);
        let d = lo + g * (hi - lo);
        let (fc, fd) = (f(c), f(d));
        top = top.max(fc).max(fd);
        if fc >= fd {
            hi = d;
        } else {
            lo = c;
        }
    }
    top
}

/// Adaptive Simpson quadrature.
pub fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    fn rec(f: &dyn Fn(f64) -> f64, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = (f(lm), f(rm));
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            return left + right + delta / 15.0;
        }
        rec(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1) + rec(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
    }
    let (fa, fb, fm) = (f(a), f(b), f(0.5 * (a + b)));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    rec(f, a, b, fa, fm, fb, whole, tol, 50)
}

/// `λ(φ) = (3/8) ∫₀^{π/2} (cos(φ - φ'))₊² cos φ' dφ'`.
pub fn lambda_quadrature(phi: f64) -> f64 {
    let f = |t: f64| (phi - t).cos().max(0.0).powi(2) * t.cos();
    // Split at the kink where the clipped cosine vanishes.
    let mut cuts = vec![0.0, FRAC_PI_2];
    for k in [-1.0, 1.0] {
        let c = phi + k * FRAC_PI_2;
        if c > 0.0 && c < FRAC_PI_2 {
            cuts.push(c);
        }
    }
    cuts.sort_by(f64::total_cmp);
    let total: f64 = cuts.windows(2).map(|w| adaptive_simpson(&f, w[0], w[1], 1e-14)).sum();
    0.375 * total
}

/// Bisection root of `max_k Σ ρ (U - u)₊² = rhs`.
fn bisect_update(groups: &[Vec<(f64, f64)>], rhs: f64) -> f64 {
    let lowest = groups.iter().flatten().map(|p| p.1).fold(f64::INFINITY, f64::min);
    if !lowest.is_finite() {
        return f64::INFINITY;
    }
    let eval = |u: f64| -> f64 {
        groups
            .iter()
            .map(|g| g.iter().map(|&(w, v)| w * (u - v).max(0.0).powi(2)).sum::<f64>())
            .fold(0.0, f64::max)
    };
    let mut lo = lowest;
    let mut hi = lowest + 1.0;
    while eval(hi) < rhs {
        hi = lowest + 2.0 * (hi - lowest);
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if eval(mid) < rhs {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    hi
}

/// Gauss–Seidel fixed point of the scheme, using all current neighbour values.
pub fn gauss_seidel(
    spec: &GridSpec,
    schemes: &[StencilScheme],
    psi: &[f64],
    obstacles: Option<&ObstacleSet>,
    seed: usize,
    tol: f64,
) -> Vec<f64> {
    let n = spec.len();
    let mut u = vec![f64::INFINITY; n];
    u[seed] = 0.0;
    for sweep in 0..100_000 {
        let mut change: f64 = 0.0;
        let order: Box<dyn Iterator<Item = usize>> = if sweep % 2 == 0 { Box::new(0..n) } else { Box::new((0..n).rev()) };
        for x in order {
            if x == seed || !psi[x].is_finite() {
                continue;
            }
            let it = spec.coords(x).2;
            let groups: Vec<Vec<(f64, f64)>> = schemes[it]
                .groups
                .iter()
                .map(|g| {
                    g.iter()
                        .filter(|(w, _)| *w > 0.0)
                        .filter_map(|&(w, e)| {
                            let y = spec.offset_back(x, e)?;
                            if !u[y].is_finite() || obstacles.is_some_and(|o| o.blocks_offset(spec, x, e)) {
                                return None;
                            }
                            Some((w, u[y]))
                        })
                        .collect()
                })
                .collect();
            let v = bisect_update(&groups, psi[x] * psi[x]);
            let old = u[x];
            if v < old {
                change = change.max(if old.is_finite() { old - v } else { f64::INFINITY });
                u[x] = v;
            }
        }
        if change <= tol {
            break;
        }
    }
    u
}

/// Small deterministic generator for test inputs.
pub struct Lcg(pub u64);

impl Lcg {
    pub fn next_f64(&mut self) -> f64 {
        self.0 = self.0.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        (self.0 >> 11) as f64 / (1u64 << 53) as f64
    }

    pub fn range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }
}
