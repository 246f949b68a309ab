//! The six curvature-penalized models.
//!
//! Each model is described three ways: a closed-form Hamiltonian, a
//! closed-form metric with its curvature penalty, and a per-θ stencil scheme
//! `max_k Σ_i ρ_ik ⟨x̂, e_ik⟩₊²` that approximates twice the Hamiltonian.
//!
//! Notation: `a = ⟨x̂_x, n_θ⟩`, `b = θ̂ / β`, `s = |ẋ|`, `ν = β θ̇`.
//!
//! Stencil vectors are converted to grid coordinates before decomposition:
//! planar components are divided by `hx` and the angular one by `hθ`. The
//! scheme then reads `Σ ρ (u(x) - u(x - ė))₊² = ψ(x)²`.

use serde::{Deserialize, Serialize};
use std::f64::consts::{FRAC_PI_2, PI};
use std::fmt;
use std::str::FromStr;

use crate::decomposition::{decompose2, decompose3};
use crate::error::{Error, Result};
use crate::lifted_grid::{CoVector, GridSpec, TangentVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelFamily {
    ReedsSheppForward,
    Dubins,
    EulerMumford,
}

impl ModelFamily {
    pub fn short_name(self) -> &'static str {
        match self {
            ModelFamily::ReedsSheppForward => "rsf",
            ModelFamily::Dubins => "dubins",
            ModelFamily::EulerMumford => "em",
        }
    }
}

impl FromStr for ModelFamily {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "rsf" | "reeds_shepp_forward" | "reeds-shepp-forward" => Ok(ModelFamily::ReedsSheppForward),
            "dubins" => Ok(ModelFamily::Dubins),
            "em" | "elastica" | "euler_mumford" | "euler-mumford" => Ok(ModelFamily::EulerMumford),
            other => Err(Error::Config(format!("unknown model family '{other}'"))),
        }
    }
}

/// Serialized as its display name, e.g. `"em-convexity"`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub struct ModelKind {
    pub family: ModelFamily,
    pub convexity_constrained: bool,
}

impl ModelKind {
    pub const fn new(family: ModelFamily, convexity_constrained: bool) -> Self {
        ModelKind { family, convexity_constrained }
    }

    pub fn all() -> [ModelKind; 6] {
        use ModelFamily::*;
        [
            ModelKind::new(ReedsSheppForward, true),
            ModelKind::new(Dubins, true),
            ModelKind::new(EulerMumford, true),
            ModelKind::new(ReedsSheppForward, false),
            ModelKind::new(Dubins, false),
            ModelKind::new(EulerMumford, false),
        ]
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let suffix = if self.convexity_constrained { "-convexity" } else { "" };
        write!(f, "{}{}", self.family.short_name(), suffix)
    }
}

impl From<ModelKind> for String {
    fn from(m: ModelKind) -> String {
        m.to_string()
    }
}

impl TryFrom<String> for ModelKind {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl FromStr for ModelKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.strip_suffix("-convexity") {
            Some(base) => Ok(ModelKind::new(base.parse()?, true)),
            None => Ok(ModelKind::new(s.parse()?, false)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelParams {
    pub beta: f64,
    pub eps_relax: f64,
    pub quad_points: usize,
    /// Alternative elastica stencil: original quadrature weights, offsets
    /// with a negative angular component dropped.
    pub em_angular_mask: bool,
}

impl Default for ModelParams {
    fn default() -> Self {
        ModelParams { beta: 1.0, eps_relax: 0.1, quad_points: 5, em_angular_mask: false }
    }
}

impl ModelParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta.is_finite() && self.beta > 0.0) {
            return Err(Error::Config(format!("beta must be positive, got {}", self.beta)));
        }
        if !(self.eps_relax > 0.0 && self.eps_relax < 1.0) {
            return Err(Error::Config(format!("eps_relax must lie in (0,1), got {}", self.eps_relax)));
        }
        if self.quad_points == 0 {
            return Err(Error::Config("quad_points must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FejerRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
    pub convex_weights: Vec<f64>,
}

/// Fejér rule for `∫_{-π/2}^{π/2} f(φ) cos φ dφ`, plus the half-domain
/// weights used by the convexity-constrained elastica.
pub fn fejer_rule(l: usize) -> FejerRule {
    assert!(l >= 1, "Fejer rule needs at least one node");
    let lf = l as f64;
    let mut nodes = Vec::with_capacity(l);
    let mut weights = Vec::with_capacity(l);
    let mut convex_weights = Vec::with_capacity(l);
    for k in 1..=l {
        let t = (2 * k - 1) as f64 * PI / (2.0 * lf);
        let s: f64 = (1..=l / 2).map(|j| (2.0 * j as f64 * t).cos() / (4.0 * (j * j) as f64 - 1.0)).sum();
        let w = 2.0 / lf * (1.0 - 2.0 * s);
        let node = if 2 * k == l + 1 { 0.0 } else { (2 * k as i64 - l as i64 - 1) as f64 * PI / (2.0 * lf) };
        let cw = if 2 * k == l + 1 {
            w / 2.0
        } else if node > 0.0 {
            w
        } else {
            0.0
        };
        nodes.push(node);
        weights.push(w);
        convex_weights.push(cw);
    }
    FejerRule { nodes, weights, convex_weights }
}

/// `λ(φ)` with `8λ` piecewise on the four quarter intervals.
pub fn lambda_fn(phi: f64) -> Result<f64> {
    if !(-PI..=PI).contains(&phi) {
        return Err(Error::Domain(format!("phi = {phi} outside [-π, π]")));
    }
    let (c, s) = (phi.cos(), phi.sin());
    let eight = if phi <= -FRAC_PI_2 {
        0.0
    } else if phi <= 0.0 {
        2.0 * c + 2.0 * c * s
    } else if phi <= FRAC_PI_2 {
        1.0 + c * c + 2.0 * c * s
    } else {
        1.0 + c * c + 2.0 * c
    };
    Ok((eight / 8.0).max(0.0))
}

fn reduced_covector(params: &ModelParams, theta: f64, xhat: &CoVector) -> (f64, f64) {
    let a = xhat.hx * theta.cos() + xhat.hy * theta.sin();
    (a, xhat.htheta / params.beta)
}

fn pos(x: f64) -> f64 {
    x.max(0.0)
}

/// Closed-form Hamiltonian.
pub fn hamiltonian_eval(model: ModelKind, params: &ModelParams, theta: f64, xhat: &CoVector) -> f64 {
    let (a, b) = reduced_covector(params, theta, xhat);
    let twice = match (model.family, model.convexity_constrained) {
        (ModelFamily::ReedsSheppForward, false) => pos(a).powi(2) + b * b,
        (ModelFamily::ReedsSheppForward, true) => pos(a).powi(2) + pos(b).powi(2),
        (ModelFamily::Dubins, false) => pos(a + b).powi(2).max(pos(a - b).powi(2)),
        (ModelFamily::Dubins, true) => pos(a + b).powi(2).max(pos(a).powi(2)),
        (ModelFamily::EulerMumford, false) => 0.25 * (a + a.hypot(b)).powi(2),
        (ModelFamily::EulerMumford, true) => {
            let r2 = a * a + b * b;
            if r2 == 0.0 {
                0.0
            } else {
                2.0 * r2 * lambda_fn(b.atan2(a)).expect("atan2 lies in [-π, π]")
            }
        }
    };
    0.5 * twice
}

/// Squared metric as a function of `(s, ν)` for forward motions, `s ≥ 0`.
pub fn metric_squared_reduced(model: ModelKind, s: f64, nu: f64) -> f64 {
    let inf = f64::INFINITY;
    if model.convexity_constrained && nu < 0.0 {
        return inf;
    }
    match model.family {
        ModelFamily::ReedsSheppForward => s * s + nu * nu,
        ModelFamily::Dubins => {
            if nu.abs() <= s {
                s * s
            } else {
                inf
            }
        }
        ModelFamily::EulerMumford => {
            if s == 0.0 {
                return if nu == 0.0 { 0.0 } else { inf };
            }
            let classical = (s + nu * nu / s).powi(2);
            if !model.convexity_constrained || nu >= s {
                classical
            } else if nu == 0.0 {
                inf
            } else if nu <= s / 2.0 {
                let root = (s * s - 3.0 * nu * nu).max(0.0);
                8.0 / (27.0 * nu) * (9.0 * s * nu * nu + s.powi(3) + root.powf(1.5))
            } else {
                4.0 * (s * s - 2.0 * s * nu + 2.0 * nu * nu)
            }
        }
    }
}

const DIRECTION_TOL: f64 = 1e-9;

/// Closed-form metric; `+∞` for inadmissible motions.
pub fn metric_eval(model: ModelKind, params: &ModelParams, theta: f64, xdot: &TangentVector) -> f64 {
    let s = xdot.dx.hypot(xdot.dy);
    if s > 0.0 {
        let cross = theta.cos() * xdot.dy - theta.sin() * xdot.dx;
        let dot = theta.cos() * xdot.dx + theta.sin() * xdot.dy;
        if cross.atan2(dot).abs() > DIRECTION_TOL {
            return f64::INFINITY;
        }
    }
    let nu = params.beta * xdot.dtheta;
    metric_squared_reduced(model, s, nu).sqrt()
}

/// Curvature penalty as a function of `ν = βκ`.
pub fn curvature_penalty(model: ModelKind, nu: f64) -> f64 {
    metric_squared_reduced(model, 1.0, nu).sqrt()
}

/// Per-θ-level scheme: `K` groups of `(weight, offset)`.
#[derive(Debug, Clone, PartialEq)]
pub struct StencilScheme {
    pub groups: Vec<Vec<(f64, [i32; 3])>>,
    pub theta_index: usize,
}

impl StencilScheme {
    pub fn term_count(&self) -> usize {
        self.groups.iter().map(Vec::len).sum()
    }

    /// Half of `max_k Σ ρ ⟨x̂, S e⟩₊²` where `S` maps offsets to physical units.
    pub fn hamiltonian(&self, spec: &GridSpec, xhat: &CoVector) -> f64 {
        let g = [xhat.hx * spec.hx, xhat.hy * spec.hx, xhat.htheta * spec.htheta()];
        let best = self
            .groups
            .iter()
            .map(|grp| {
                grp.iter()
                    .map(|&(w, e)| {
                        let d = g[0] * e[0] as f64 + g[1] * e[1] as f64 + g[2] * e[2] as f64;
                        w * pos(d).powi(2)
                    })
                    .sum::<f64>()
            })
            .fold(0.0, f64::max);
        0.5 * best
    }
}

fn lift2(dec: crate::decomposition::Decomposition2) -> Vec<(f64, [i32; 3])> {
    dec.terms.into_iter().map(|(w, e)| (w, [e[0], e[1], 0])).collect()
}

pub fn build_stencil(model: ModelKind, params: &ModelParams, theta_index: usize, spec: &GridSpec) -> Result<StencilScheme> {
    params.validate()?;
    if theta_index >= spec.ntheta {
        return Err(Error::Domain(format!("theta level {theta_index} >= {}", spec.ntheta)));
    }
    let theta = spec.theta_of(theta_index);
    let (hx, ht, beta, eps) = (spec.hx, spec.htheta(), params.beta, params.eps_relax);
    let n = [theta.cos() / hx, theta.sin() / hx];
    let ang = 1.0 / (beta * ht);
    let planar = || decompose2(n, eps).map(lift2);
    let groups = match (model.family, model.convexity_constrained) {
        (ModelFamily::ReedsSheppForward, convex) => {
            let mut g = planar()?;
            g.push((ang * ang, [0, 0, 1]));
            if !convex {
                g.push((ang * ang, [0, 0, -1]));
            }
            vec![g]
        }
        (ModelFamily::Dubins, convex) => {
            let plus = decompose3([n[0], n[1], ang], eps)?.terms;
            let second = if convex { planar()? } else { decompose3([n[0], n[1], -ang], eps)?.terms };
            vec![plus, second]
        }
        (ModelFamily::EulerMumford, convex) => {
            let rule = fejer_rule(params.quad_points);
            let c = 3f64.sqrt() / 2.0;
            let mask = convex && params.em_angular_mask;
            let mut g = Vec::new();
            for (l, &phi) in rule.nodes.iter().enumerate() {
                let w = if convex && !mask { rule.convex_weights[l] } else { rule.weights[l] };
                if w <= 0.0 {
                    continue;
                }
                let q = [c * n[0] * phi.cos(), c * n[1] * phi.cos(), c * ang * phi.sin()];
                for (rho, e) in decompose3(q, eps)?.terms {
                    let rho = if mask && e[2] < 0 { 0.0 } else { rho };
                    g.push((w * rho, e));
                }
            }
            vec![g]
        }
    };
    Ok(StencilScheme { groups, theta_index })
}

/// One scheme per θ level.
pub fn build_stencil_cache(model: ModelKind, params: &ModelParams, spec: &GridSpec) -> Result<Vec<StencilScheme>> {
    (0..spec.ntheta).map(|it| build_stencil(model, params, it, spec)).collect()
}
