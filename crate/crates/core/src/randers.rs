//! Edge tensors, the curl-constrained vector field and the lifted velocities.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lifted_grid::GridSpec;
use crate::raster::{gaussian_blur, gradient, Image, Mask};

pub const DEFAULT_SIGMA: f64 = 2.0;
pub const DEFAULT_LAMBDA_EDGE: f64 = 100.0;
/// Residual bound (∞-norm) of the Poisson solve.
pub const CURL_TOL: f64 = 1e-8;

/// Per-pixel symmetric tensors stored as `[m11, m12, m22]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeTensorField {
    pub width: usize,
    pub height: usize,
    pub tensors: Vec<[f64; 3]>,
}

impl EdgeTensorField {
    pub fn identity(width: usize, height: usize) -> Self {
        EdgeTensorField { width, height, tensors: vec![[1.0, 0.0, 1.0]; width * height] }
    }

    /// `‖n_θ‖_ℳ` at pixel `i`.
    pub fn norm(&self, i: usize, theta: f64) -> f64 {
        let [a, b, c] = self.tensors[i];
        let (s, co) = theta.sin_cos();
        (a * co * co + 2.0 * b * co * s + c * s * s).sqrt()
    }

    pub fn eigenvalues(&self, i: usize) -> [f64; 2] {
        sym_eigen(self.tensors[i]).0
    }

    /// `sup_{x,θ} ‖n_θ‖_ℳ(x)`.
    pub fn sup_norm(&self) -> f64 {
        self.tensors.iter().map(|t| sym_eigen(*t).0[1]).fold(0.0, f64::max).sqrt()
    }
}

/// Eigenvalues (ascending) and the unit eigenvector of the larger one.
fn sym_eigen([a, b, c]: [f64; 3]) -> ([f64; 2], [f64; 2]) {
    let mean = 0.5 * (a + c);
    let r = (0.25 * (a - c) * (a - c) + b * b).sqrt();
    let (lo, hi) = (mean - r, mean + r);
    let v = if b.abs() > 1e-300 {
        [hi - c, b]
    } else if a >= c {
        [1.0, 0.0]
    } else {
        [0.0, 1.0]
    };
    let n = v[0].hypot(v[1]);
    ([lo, hi], [v[0] / n, v[1] / n])
}

/// `ℳ(x) = (1+λ)Id − λ g(x) v⊥v⊥ᵀ`.
///
/// `v` is the principal direction of the structure tensor of the smoothed
/// channels and `g ∈ [0, 1]` the normalized gradient magnitude, so motion
/// along strong edges costs 1 and motion elsewhere up to `√(1+λ)`.
pub fn edge_tensor(image: &Image, sigma: f64, lambda_edge: f64) -> Result<EdgeTensorField> {
    if !(sigma > 0.0) || !(lambda_edge >= 0.0) {
        return Err(Error::Config(format!("need sigma > 0 and lambda_edge >= 0, got {sigma}, {lambda_edge}")));
    }
    let (w, h) = (image.width, image.height);
    let grads: Vec<(Vec<f64>, Vec<f64>)> = (0..image.channels)
        .into_par_iter()
        .map(|c| gradient(&gaussian_blur(&image.channel(c), w, h, sigma), w, h))
        .collect();
    let structure: Vec<([f64; 2], [f64; 2])> = (0..w * h)
        .map(|i| {
            let mut t = [0.0; 3];
            for (gx, gy) in &grads {
                t[0] += gx[i] * gx[i];
                t[1] += gx[i] * gy[i];
                t[2] += gy[i] * gy[i];
            }
            sym_eigen(t)
        })
        .collect();
    let gmax = structure.iter().map(|(e, _)| e[1]).fold(0.0, f64::max).sqrt();
    let tensors = structure
        .iter()
        .map(|(e, v)| {
            let g = if gmax > 0.0 { e[1].max(0.0).sqrt() / gmax } else { 0.0 };
            let t = [-v[1], v[0]];
            let k = lambda_edge * g;
            [1.0 + lambda_edge - k * t[0] * t[0], -k * t[0] * t[1], 1.0 + lambda_edge - k * t[1] * t[1]]
        })
        .collect();
    Ok(EdgeTensorField { width: w, height: h, tensors })
}

/// Solution of the curl problem on a staggered grid.
///
/// `phi` lives on pixels. `wx[j*w+i]` is `ϖ₁` on the link between pixels
/// `(i, j)` and `(i, j+1)`; `wy[j*w+i]` is `ϖ₂` between `(i, j)` and `(i+1, j)`.
/// Links that leave the grid hold zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandersVectorField {
    pub width: usize,
    pub height: usize,
    pub hx: f64,
    pub phi: Vec<f64>,
    pub wx: Vec<f64>,
    pub wy: Vec<f64>,
    pub support: Mask,
    pub iterations: usize,
}

impl RandersVectorField {
    pub fn zero(support: &Mask, hx: f64) -> Self {
        let n = support.width * support.height;
        RandersVectorField {
            width: support.width,
            height: support.height,
            hx,
            phi: vec![0.0; n],
            wx: vec![0.0; n],
            wy: vec![0.0; n],
            support: support.clone(),
            iterations: 0,
        }
    }

    /// Pixel-centred vectors (mean of adjacent links), zero outside the support.
    pub fn pixel_vectors(&self) -> Vec<[f64; 2]> {
        let w = self.width;
        (0..w * self.height)
            .map(|k| {
                if !self.support.data[k] {
                    return [0.0, 0.0];
                }
                let (i, j) = (k % w, k / w);
                let below = if j > 0 { self.wx[k - w] } else { 0.0 };
                let left = if i > 0 { self.wy[k - 1] } else { 0.0 };
                [0.5 * (self.wx[k] + below), 0.5 * (self.wy[k] + left)]
            })
            .collect()
    }

    /// `∂₁ϖ₂ − ∂₂ϖ₁` at every pixel.
    pub fn curl(&self) -> Vec<f64> {
        let (w, h) = (self.width, self.height);
        (0..w * h)
            .map(|k| {
                let (i, j) = (k % w, k / w);
                let wy_l = if i > 0 { self.wy[k - 1] } else { link_y(&self.phi, w, i as isize - 1, j, self.hx) };
                let wx_d = if j > 0 { self.wx[k - w] } else { link_x(&self.phi, w, h, i, j as isize - 1, self.hx) };
                (self.wy[k] - wy_l) / self.hx - (self.wx[k] - wx_d) / self.hx
            })
            .collect()
    }

    /// `∂₁ϖ₁ + ∂₂ϖ₂` at the cell corners `(i+½, j+½)`, row-major over `(w−1)×(h−1)`.
    pub fn divergence(&self) -> Vec<f64> {
        let (w, h) = (self.width, self.height);
        let mut out = Vec::with_capacity((w - 1) * (h - 1));
        for j in 0..h - 1 {
            for i in 0..w - 1 {
                let k = j * w + i;
                out.push((self.wx[k + 1] - self.wx[k]) / self.hx + (self.wy[k + w] - self.wy[k]) / self.hx);
            }
        }
        out
    }
}

/// `ϖ₂` on the link from `(i, j)` to `(i+1, j)`, with `φ = 0` off the grid.
fn link_y(phi: &[f64], w: usize, i: isize, j: usize, hx: f64) -> f64 {
    let at = |ii: isize| if ii >= 0 && (ii as usize) < w { phi[j * w + ii as usize] } else { 0.0 };
    (at(i + 1) - at(i)) / hx
}

/// `ϖ₁` on the link from `(i, j)` to `(i, j+1)`, with `φ = 0` off the grid.
fn link_x(phi: &[f64], w: usize, h: usize, i: usize, j: isize, hx: f64) -> f64 {
    let at = |jj: isize| if jj >= 0 && (jj as usize) < h { phi[jj as usize * w + i] } else { 0.0 };
    -(at(j + 1) - at(j)) / hx
}

/// `−Δφ` with `φ = 0` outside the support (5-point stencil).
fn neg_laplacian(x: &[f64], support: &Mask, hx: f64, out: &mut [f64]) {
    let (w, h) = (support.width, support.height);
    let inv = 1.0 / (hx * hx);
    out.par_chunks_mut(w).enumerate().for_each(|(j, row)| {
        for (i, o) in row.iter_mut().enumerate() {
            let k = j * w + i;
            if !support.data[k] {
                *o = 0.0;
                continue;
            }
            let mut nb = 0.0;
            if i > 0 {
                nb += x[k - 1];
            }
            if i + 1 < w {
                nb += x[k + 1];
            }
            if j > 0 {
                nb += x[k - w];
            }
            if j + 1 < h {
                nb += x[k + w];
            }
            *o = (4.0 * x[k] - nb) * inv;
        }
    });
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Solve `Δφ = rhs` on `support` with `φ = 0` on its boundary, then take
/// `ϖ = (−∂₂φ, ∂₁φ)` on the staggered links.
pub fn solve_curl(rhs: &[f64], support: &Mask, hx: f64) -> Result<RandersVectorField> {
    let (w, h) = (support.width, support.height);
    if rhs.len() != w * h {
        return Err(Error::Domain(format!("rhs has {} values, mask {}", rhs.len(), w * h)));
    }
    let count = support.count();
    if count == 0 {
        return Err(Error::Domain("curl support is empty".into()));
    }
    if rhs.iter().zip(&support.data).any(|(v, m)| *m && !v.is_finite()) {
        return Err(Error::Domain("curl rhs must be finite on the support".into()));
    }
    // conjugate gradients on −Δφ = −rhs
    let b: Vec<f64> = rhs.iter().zip(&support.data).map(|(v, m)| if *m { -v } else { 0.0 }).collect();
    let mut phi = vec![0.0; w * h];
    let mut r = b.clone();
    let mut p = r.clone();
    let mut ap = vec![0.0; w * h];
    let mut rr = dot(&r, &r);
    let inf = |v: &[f64]| v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let max_iters = 10 * count;
    let mut iterations = 0;
    while inf(&r) > CURL_TOL {
        if iterations >= max_iters {
            return Err(Error::NoConvergence(format!(
                "curl solve residual {:e} after {iterations} iterations",
                inf(&r)
            )));
        }
        neg_laplacian(&p, support, hx, &mut ap);
        let alpha = rr / dot(&p, &ap);
        for k in 0..phi.len() {
            phi[k] += alpha * p[k];
            r[k] -= alpha * ap[k];
        }
        iterations += 1;
        // refresh the recursive residual now and then
        if iterations % 50 == 0 {
            neg_laplacian(&phi, support, hx, &mut ap);
            for k in 0..r.len() {
                r[k] = b[k] - ap[k];
            }
        }
        let rr_new = dot(&r, &r);
        let beta = rr_new / rr;
        rr = rr_new;
        for k in 0..p.len() {
            p[k] = r[k] + beta * p[k];
        }
    }
    let mut wx = vec![0.0; w * h];
    let mut wy = vec![0.0; w * h];
    for j in 0..h {
        for i in 0..w {
            let k = j * w + i;
            wx[k] = link_x(&phi, w, h, i, j as isize, hx);
            wy[k] = link_y(&phi, w, i as isize, j, hx);
        }
    }
    Ok(RandersVectorField { width: w, height: h, hx, phi, wx, wy, support: support.clone(), iterations })
}

/// Velocity samples over the lifted grid; `+∞` marks excluded nodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VelocityField {
    pub spec: GridSpec,
    pub values: Vec<f64>,
}

fn check_shape(m: &EdgeTensorField, spec: &GridSpec) -> Result<()> {
    if m.width != spec.nx || m.height != spec.ny {
        return Err(Error::Domain(format!(
            "tensor field is {}x{}, grid {}x{}",
            m.width, m.height, spec.nx, spec.ny
        )));
    }
    Ok(())
}

/// `ψ = exp(α(‖n_θ‖_ℳ / sup‖·‖_ℳ + μ⟨ϖ, n_θ⟩ / sup‖ϖ‖))` on `U`, `+∞` elsewhere.
pub fn build_velocity(
    m: &EdgeTensorField,
    w: &RandersVectorField,
    support: &Mask,
    alpha: f64,
    mu: f64,
    spec: &GridSpec,
) -> Result<VelocityField> {
    check_shape(m, spec)?;
    if !(alpha > 0.0) || !mu.is_finite() {
        return Err(Error::Config(format!("need alpha > 0 and finite mu, got {alpha}, {mu}")));
    }
    if support.width != spec.nx || support.height != spec.ny || w.width != spec.nx || w.height != spec.ny {
        return Err(Error::Domain("support or vector field does not match the grid".into()));
    }
    let sup_m = m.sup_norm();
    let vecs = w.pixel_vectors();
    let sup_w = vecs.iter().map(|v| v[0].hypot(v[1])).fold(0.0, f64::max);
    let plane = spec.plane_len();
    let mut values = vec![f64::INFINITY; spec.len()];
    values.par_chunks_mut(plane).enumerate().for_each(|(it, level)| {
        let theta = spec.theta_of(it);
        let n = [theta.cos(), theta.sin()];
        for (i, v) in level.iter_mut().enumerate() {
            if !support.data[i] {
                continue;
            }
            let mut t = m.norm(i, theta) / sup_m;
            if sup_w > 0.0 {
                t += mu * (vecs[i][0] * n[0] + vecs[i][1] * n[1]) / sup_w;
            }
            *v = (alpha * t).exp();
        }
    });
    Ok(VelocityField { spec: *spec, values })
}

/// `ψ_edge = exp(κ ‖n_θ‖_ℳ / sup‖·‖_ℳ)` over the whole grid; `κ = 1` is the plain form.
pub fn build_edge_velocity(m: &EdgeTensorField, exponent: f64, spec: &GridSpec) -> Result<VelocityField> {
    check_shape(m, spec)?;
    if !(exponent > 0.0) {
        return Err(Error::Config(format!("edge exponent must be positive, got {exponent}")));
    }
    let sup_m = m.sup_norm();
    let plane = spec.plane_len();
    let mut values = vec![0.0; spec.len()];
    values.par_chunks_mut(plane).enumerate().for_each(|(it, level)| {
        let theta = spec.theta_of(it);
        for (i, v) in level.iter_mut().enumerate() {
            *v = (exponent * m.norm(i, theta) / sup_m).exp();
        }
    });
    Ok(VelocityField { spec: *spec, values })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eigen_of_diagonal_and_rotated() {
        let (e, v) = sym_eigen([3.0, 0.0, 1.0]);
        assert_eq!(e, [1.0, 3.0]);
        assert_eq!(v, [1.0, 0.0]);
        let (e, v) = sym_eigen([2.0, 1.0, 2.0]);
        assert!((e[0] - 1.0).abs() < 1e-12 && (e[1] - 3.0).abs() < 1e-12);
        assert!((v[0] - v[1]).abs() < 1e-12);
    }

    #[test]
    fn zero_rhs_gives_zero_field() {
        let mut u = Mask::new(12, 10);
        for j in 2..8 {
            for i in 3..9 {
                u.set(i, j, true);
            }
        }
        let f = solve_curl(&vec![0.0; 120], &u, 1.0).unwrap();
        assert!(f.wx.iter().chain(&f.wy).all(|v| *v == 0.0));
        assert_eq!(f.iterations, 0);
    }
}
