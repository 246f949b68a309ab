//! Selling decompositions of relaxed rank-one tensors.
//!
//! For a control vector `v` and relaxation `ε`, the tensor
//! `D = (1-ε²) v vᵀ + ε² |v|² Id` is split as `Σ ρ_j e_j e_jᵀ` with
//! `ρ_j ≥ 0` and integer offsets `e_j`, using an obtuse superbase. Offsets are
//! then oriented so that `⟨e_j, v⟩ ≥ 0`, which makes
//! `Σ ρ_j ⟨x̂, e_j⟩₊²` an `O(ε²)` approximation of `⟨x̂, v⟩₊²`.

use crate::error::{Error, Result};

const MAX_ITER: usize = 100;

#[derive(Debug, Clone, PartialEq)]
pub struct Decomposition3 {
    pub terms: Vec<(f64, [i32; 3])>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Decomposition2 {
    pub terms: Vec<(f64, [i32; 2])>,
}

impl Decomposition3 {
    /// `Σ ρ_j ⟨x̂, e_j⟩₊²`.
    pub fn half_form(&self, xhat: [f64; 3]) -> f64 {
        self.terms
            .iter()
            .map(|&(w, e)| {
                let s = xhat[0] * e[0] as f64 + xhat[1] * e[1] as f64 + xhat[2] * e[2] as f64;
                w * s.max(0.0).powi(2)
            })
            .sum()
    }

    pub fn tensor(&self) -> [[f64; 3]; 3] {
        let mut m = [[0.0; 3]; 3];
        for &(w, e) in &self.terms {
            for i in 0..3 {
                for j in 0..3 {
                    m[i][j] += w * e[i] as f64 * e[j] as f64;
                }
            }
        }
        m
    }
}

impl Decomposition2 {
    pub fn half_form(&self, xhat: [f64; 2]) -> f64 {
        self.terms
            .iter()
            .map(|&(w, e)| {
                let s = xhat[0] * e[0] as f64 + xhat[1] * e[1] as f64;
                w * s.max(0.0).powi(2)
            })
            .sum()
    }

    pub fn tensor(&self) -> [[f64; 2]; 2] {
        let mut m = [[0.0; 2]; 2];
        for &(w, e) in &self.terms {
            for i in 0..2 {
                for j in 0..2 {
                    m[i][j] += w * e[i] as f64 * e[j] as f64;
                }
            }
        }
        m
    }
}

fn check_eps(eps: f64) -> Result<()> {
    if !(eps > 0.0 && eps < 1.0) {
        return Err(Error::Domain(format!("relaxation parameter must lie in (0,1), got {eps}")));
    }
    Ok(())
}

/// The relaxed tensor `(1-ε²) v vᵀ + ε² |v|² Id` in dimension `N`.
pub fn relaxed_tensor<const N: usize>(v: [f64; N], eps: f64) -> [[f64; N]; N] {
    let n2: f64 = v.iter().map(|a| a * a).sum();
    let mut d = [[0.0; N]; N];
    for i in 0..N {
        for j in 0..N {
            d[i][j] = (1.0 - eps * eps) * v[i] * v[j];
        }
        d[i][i] += eps * eps * n2;
    }
    d
}

fn bilinear<const N: usize>(d: &[[f64; N]; N], a: [i64; N], b: [i64; N]) -> f64 {
    let mut s = 0.0;
    for i in 0..N {
        for j in 0..N {
            s += a[i] as f64 * d[i][j] * b[j] as f64;
        }
    }
    s
}

fn orient<const N: usize>(e: [i64; N], v: [f64; N]) -> [i32; N] {
    let dot: f64 = (0..N).map(|i| e[i] as f64 * v[i]).sum();
    let flip = if dot != 0.0 {
        dot < 0.0
    } else {
        e.iter().find(|&&c| c != 0).is_some_and(|&c| c < 0)
    };
    let mut out = [0i32; N];
    for i in 0..N {
        let c = if flip { -e[i] } else { e[i] };
        out[i] = i32::try_from(c).expect("offset component fits in i32");
    }
    out
}

fn check_vector(v: &[f64]) -> Result<()> {
    if v.iter().any(|a| !a.is_finite()) {
        return Err(Error::Domain("control vector must be finite".into()));
    }
    if v.iter().all(|&a| a == 0.0) {
        return Err(Error::Domain("control vector must be nonzero".into()));
    }
    Ok(())
}

pub fn decompose3(v: [f64; 3], eps: f64) -> Result<Decomposition3> {
    check_vector(&v)?;
    check_eps(eps)?;
    let d = relaxed_tensor(v, eps);
    let mut b: [[i64; 3]; 4] = [[1, 0, 0], [0, 1, 0], [0, 0, 1], [-1, -1, -1]];
    const PAIRS: [(usize, usize, usize, usize); 6] =
        [(0, 1, 2, 3), (0, 2, 1, 3), (0, 3, 1, 2), (1, 2, 0, 3), (1, 3, 0, 2), (2, 3, 0, 1)];
    let mut iter = 0;
    'reduce: loop {
        for &(i, j, k, l) in &PAIRS {
            if bilinear(&d, b[i], b[j]) > 0.0 {
                iter += 1;
                if iter > MAX_ITER {
                    return Err(Error::Internal("superbase reduction did not terminate".into()));
                }
                let bi = b[i];
                for c in 0..3 {
                    b[k][c] += bi[c];
                    b[l][c] += bi[c];
                    b[i][c] = -bi[c];
                }
                continue 'reduce;
            }
        }
        break;
    }
    let terms = PAIRS
        .iter()
        .map(|&(i, j, k, l)| {
            let w = (-bilinear(&d, b[i], b[j])).max(0.0);
            let (p, q) = (b[k], b[l]);
            let e = [p[1] * q[2] - p[2] * q[1], p[2] * q[0] - p[0] * q[2], p[0] * q[1] - p[1] * q[0]];
            (w, orient(e, v))
        })
        .collect();
    Ok(Decomposition3 { terms })
}

pub fn decompose2(v: [f64; 2], eps: f64) -> Result<Decomposition2> {
    check_vector(&v)?;
    check_eps(eps)?;
    let d = relaxed_tensor(v, eps);
    let mut b: [[i64; 2]; 3] = [[1, 0], [0, 1], [-1, -1]];
    const PAIRS: [(usize, usize, usize); 3] = [(0, 1, 2), (0, 2, 1), (1, 2, 0)];
    let mut iter = 0;
    'reduce: loop {
        for &(i, j, k) in &PAIRS {
            if bilinear(&d, b[i], b[j]) > 0.0 {
                iter += 1;
                if iter > MAX_ITER {
                    return Err(Error::Internal("superbase reduction did not terminate".into()));
                }
                let (bi, bj) = (b[i], b[j]);
                b[k] = [bi[0] - bj[0], bi[1] - bj[1]];
                b[i] = [-bi[0], -bi[1]];
                continue 'reduce;
            }
        }
        break;
    }
    let terms = PAIRS
        .iter()
        .map(|&(i, j, k)| {
            let w = (-bilinear(&d, b[i], b[j])).max(0.0);
            let e = [-b[k][1], b[k][0]];
            (w, orient(e, v))
        })
        .collect();
    Ok(Decomposition2 { terms })
}
