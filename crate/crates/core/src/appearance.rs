//! Region appearance models and the potentials `ξ₁`, `ξ₂` they induce.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::TAU;

use crate::error::{Error, Result};
use crate::raster::{Image, Mask};

/// Bound applied to every potential value.
pub const XI_CLAMP: f64 = 50.0;
pub const DEFAULT_COMPONENTS: usize = 5;
const MAX_EM_ITERS: usize = 100;
const EM_TOL: f64 = 1e-6;
const VARIANCE_FLOOR: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmmComponent {
    pub weight: f64,
    pub mean: Vec<f64>,
    /// Diagonal of the covariance.
    pub variance: Vec<f64>,
}

impl GmmComponent {
    /// Full covariance matrix, row-major.
    pub fn covariance(&self) -> Vec<Vec<f64>> {
        let d = self.variance.len();
        (0..d).map(|i| (0..d).map(|j| if i == j { self.variance[i] } else { 0.0 }).collect()).collect()
    }

    fn log_density(&self, x: &[f64]) -> f64 {
        let mut acc = 0.0;
        for ((xi, m), v) in x.iter().zip(&self.mean).zip(&self.variance) {
            acc -= 0.5 * ((xi - m) * (xi - m) / v + (TAU * v).ln());
        }
        acc
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmmModel {
    pub components: Vec<GmmComponent>,
    pub dim: usize,
}

impl GmmModel {
    /// `log Σ_k w_k N(x; μ_k, Σ_k)`.
    pub fn log_density(&self, x: &[f64]) -> f64 {
        let logs: Vec<f64> = self
            .components
            .iter()
            .filter(|c| c.weight > 0.0)
            .map(|c| c.weight.ln() + c.log_density(x))
            .collect();
        log_sum_exp(&logs)
    }
}

/// Per-iteration record of an EM run.
#[derive(Debug, Clone, PartialEq)]
pub struct GmmFit {
    pub model: GmmModel,
    /// Mean log-likelihood after initialization and after each iteration.
    pub log_likelihoods: Vec<f64>,
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// k-means++ seeding followed by Lloyd iterations.
fn kmeans(samples: &[&[f64]], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let mut centers: Vec<Vec<f64>> = vec![samples[rng.random_range(0..samples.len())].to_vec()];
    let mut d2: Vec<f64> = samples.iter().map(|s| sq_dist(s, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut t = rng.random::<f64>() * total;
            let mut idx = samples.len() - 1;
            for (i, w) in d2.iter().enumerate() {
                if t < *w {
                    idx = i;
                    break;
                }
                t -= w;
            }
            idx
        } else {
            rng.random_range(0..samples.len())
        };
        centers.push(samples[pick].to_vec());
        for (d, s) in d2.iter_mut().zip(samples) {
            *d = d.min(sq_dist(s, centers.last().expect("nonempty")));
        }
    }
    let dim = samples[0].len();
    let mut assign = vec![usize::MAX; samples.len()];
    for _ in 0..50 {
        let mut changed = false;
        for (a, s) in assign.iter_mut().zip(samples) {
            let best = (0..k)
                .min_by(|&i, &j| sq_dist(s, &centers[i]).total_cmp(&sq_dist(s, &centers[j])).then(i.cmp(&j)))
                .expect("k > 0");
            if *a != best {
                *a = best;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (a, s) in assign.iter().zip(samples) {
            counts[*a] += 1;
            for (acc, v) in sums[*a].iter_mut().zip(s.iter()) {
                *acc += v;
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                centers[c] = sums[c].iter().map(|v| v / counts[c] as f64).collect();
            }
        }
    }
    centers
}

/// EM fit of an `n`-component diagonal mixture, reporting the likelihood trace.
///
/// Samples are rows of length `dim`.
pub fn fit_gmm_traced(samples: &[&[f64]], n: usize, seed: u64) -> Result<GmmFit> {
    if n == 0 {
        return Err(Error::Config("a mixture needs at least one component".into()));
    }
    let dim = samples.first().map_or(0, |s| s.len());
    if dim == 0 || samples.iter().any(|s| s.len() != dim) {
        return Err(Error::Domain("samples must share a positive dimension".into()));
    }
    if samples.len() < n * (dim + 1) {
        return Err(Error::Domain(format!(
            "{} samples cannot fit {n} components in dimension {dim}",
            samples.len()
        )));
    }
    let count = samples.len() as f64;
    let mean: Vec<f64> = (0..dim).map(|c| samples.iter().map(|s| s[c]).sum::<f64>() / count).collect();
    let floor: Vec<f64> = (0..dim)
        .map(|c| {
            let var = samples.iter().map(|s| (s[c] - mean[c]).powi(2)).sum::<f64>() / count;
            VARIANCE_FLOOR * var.max(1e-8)
        })
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centers = kmeans(samples, n, &mut rng);
    let mut resp = vec![0.0; samples.len() * n];
    for (i, s) in samples.iter().enumerate() {
        let best = (0..n)
            .min_by(|&a, &b| sq_dist(s, &centers[a]).total_cmp(&sq_dist(s, &centers[b])).then(a.cmp(&b)))
            .expect("n > 0");
        resp[i * n + best] = 1.0;
    }
    let mut model = GmmModel {
        components: centers
            .into_iter()
            .map(|m| GmmComponent { weight: 1.0 / n as f64, mean: m, variance: floor.clone() })
            .collect(),
        dim,
    };
    m_step(samples, &resp, &mut model, &floor);

    let mut lls = vec![e_step(samples, &model, &mut resp)];
    for _ in 0..MAX_EM_ITERS {
        m_step(samples, &resp, &mut model, &floor);
        let ll = e_step(samples, &model, &mut resp);
        let prev = *lls.last().expect("nonempty");
        if ll < prev - 1e-9 * prev.abs().max(1.0) {
            return Err(Error::Internal(format!("EM log-likelihood decreased from {prev} to {ll}")));
        }
        lls.push(ll);
        if ll - prev < EM_TOL {
            break;
        }
    }
    Ok(GmmFit { model, log_likelihoods: lls })
}

/// EM fit with the default seed.
pub fn fit_gmm(samples: &[&[f64]], n: usize) -> Result<GmmModel> {
    fit_gmm_traced(samples, n, 0).map(|f| f.model)
}

/// Responsibilities in place; returns the mean log-likelihood.
fn e_step(samples: &[&[f64]], model: &GmmModel, resp: &mut [f64]) -> f64 {
    let n = model.components.len();
    let mut total = 0.0;
    let mut logs = vec![0.0; n];
    for (i, s) in samples.iter().enumerate() {
        for (l, c) in logs.iter_mut().zip(&model.components) {
            *l = if c.weight > 0.0 { c.weight.ln() + c.log_density(s) } else { f64::NEG_INFINITY };
        }
        let lse = log_sum_exp(&logs);
        total += lse;
        for (k, l) in logs.iter().enumerate() {
            resp[i * n + k] = (l - lse).exp();
        }
    }
    total / samples.len() as f64
}

fn m_step(samples: &[&[f64]], resp: &[f64], model: &mut GmmModel, floor: &[f64]) {
    let n = model.components.len();
    let dim = model.dim;
    let count = samples.len() as f64;
    for (k, comp) in model.components.iter_mut().enumerate() {
        let nk: f64 = (0..samples.len()).map(|i| resp[i * n + k]).sum();
        if nk < 1e-12 {
            comp.weight = 0.0;
            continue;
        }
        let mut mean = vec![0.0; dim];
        for (i, s) in samples.iter().enumerate() {
            for (m, v) in mean.iter_mut().zip(s.iter()) {
                *m += resp[i * n + k] * v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= nk);
        let mut var = vec![0.0; dim];
        for (i, s) in samples.iter().enumerate() {
            for c in 0..dim {
                var[c] += resp[i * n + k] * (s[c] - mean[c]).powi(2);
            }
        }
        for c in 0..dim {
            var[c] = (var[c] / nk).max(floor[c]);
        }
        comp.weight = nk / count;
        comp.mean = mean;
        comp.variance = var;
    }
}

/// `ξ(x) = −log P(f(x))`, clamped to `[−50, 50]`.
pub fn eval_xi(model: &GmmModel, image: &Image) -> Result<Vec<f64>> {
    if image.channels != model.dim {
        return Err(Error::Domain(format!("image has {} channels, model {}", image.channels, model.dim)));
    }
    Ok(image
        .data
        .par_chunks(image.channels)
        .map(|px| (-model.log_density(px)).clamp(-XI_CLAMP, XI_CLAMP))
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PotentialMaps {
    pub xi1: Vec<f64>,
    pub xi2: Vec<f64>,
}

impl PotentialMaps {
    /// `ξ₁ − ξ₂`, the source term of the curl problem.
    pub fn difference(&self) -> Vec<f64> {
        self.xi1.iter().zip(&self.xi2).map(|(a, b)| a - b).collect()
    }
}

fn region_means(image: &Image, mask: &Mask, want: bool) -> Result<Vec<f64>> {
    let c = image.channels;
    let mut sum = vec![0.0; c];
    let mut count = 0usize;
    for (i, px) in image.data.chunks(c).enumerate() {
        if mask.data[i] == want {
            count += 1;
            for (s, v) in sum.iter_mut().zip(px) {
                *s += v;
            }
        }
    }
    if count == 0 {
        let which = if want { "inside" } else { "outside" };
        return Err(Error::Domain(format!("{which} region is empty")));
    }
    Ok(sum.into_iter().map(|s| s / count as f64).collect())
}

/// `ξ_i(x) = ‖f(x) − c_i‖²` with `c_1`, `c_2` the mean colours inside and outside.
pub fn fit_piecewise_constant(image: &Image, inside: &Mask) -> Result<PotentialMaps> {
    if inside.width != image.width || inside.height != image.height {
        return Err(Error::Domain("mask and image sizes differ".into()));
    }
    let c1 = region_means(image, inside, true)?;
    let c2 = region_means(image, inside, false)?;
    let xi = |c: &[f64]| -> Vec<f64> { image.data.chunks(image.channels).map(|px| sq_dist(px, c)).collect() };
    Ok(PotentialMaps { xi1: xi(&c1), xi2: xi(&c2) })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AppearanceKind {
    Gmm { components: usize },
    PiecewiseConstant,
}

impl Default for AppearanceKind {
    fn default() -> Self {
        AppearanceKind::Gmm { components: DEFAULT_COMPONENTS }
    }
}

fn masked_samples<'a>(image: &'a Image, mask: &Mask, want: bool) -> Vec<&'a [f64]> {
    image.data.chunks(image.channels).zip(&mask.data).filter(|(_, m)| **m == want).map(|(p, _)| p).collect()
}

/// Potentials from samples in `inside` (region 1) and in `outside` (region 2).
///
/// For the piecewise-constant model pixels in neither mask are ignored
/// when computing the means.
pub fn fit_potentials(image: &Image, inside: &Mask, outside: &Mask, kind: AppearanceKind) -> Result<PotentialMaps> {
    match kind {
        AppearanceKind::Gmm { components } => {
            let s1 = masked_samples(image, inside, true);
            let s2 = masked_samples(image, outside, true);
            let (m1, m2) = rayon::join(|| fit_gmm(&s1, components), || fit_gmm(&s2, components));
            Ok(PotentialMaps { xi1: eval_xi(&m1?, image)?, xi2: eval_xi(&m2?, image)? })
        }
        AppearanceKind::PiecewiseConstant => {
            let c1 = region_means(image, inside, true)?;
            let c2 = region_means(image, outside, true)?;
            let xi = |c: &[f64]| -> Vec<f64> { image.data.chunks(image.channels).map(|px| sq_dist(px, c)).collect() };
            Ok(PotentialMaps { xi1: xi(&c1), xi2: xi(&c2) })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_pixels_single_component() {
        let data = vec![[0.4]; 20];
        let samples: Vec<&[f64]> = data.iter().map(|p| &p[..]).collect();
        let m = fit_gmm(&samples, 1).unwrap();
        assert!((m.components[0].mean[0] - 0.4).abs() < 1e-12);
        assert!(m.components[0].variance[0] <= 1e-11);
        assert!((m.components[0].weight - 1.0).abs() < 1e-12);
    }

    #[test]
    fn too_few_samples() {
        let data = vec![[0.1], [0.2], [0.3]];
        let samples: Vec<&[f64]> = data.iter().map(|p| &p[..]).collect();
        assert_eq!(fit_gmm(&samples, 2).unwrap_err().code(), "domain");
    }

    #[test]
    fn outlier_hits_clamp() {
        let data: Vec<[f64; 1]> = (0..50).map(|i| [0.5 + 0.001 * (i % 5) as f64]).collect();
        let samples: Vec<&[f64]> = data.iter().map(|p| &p[..]).collect();
        let m = fit_gmm(&samples, 1).unwrap();
        let img = Image::new(1, 1, 1, vec![100.0]).unwrap();
        assert_eq!(eval_xi(&m, &img).unwrap()[0], XI_CLAMP);
    }

    #[test]
    fn piecewise_constant_examples() {
        let mut mask = Mask::new(4, 1);
        mask.set(0, 0, true);
        mask.set(1, 0, true);
        let img = Image::new(4, 1, 1, vec![1.0, 1.0, 0.0, 0.0]).unwrap();
        let p = fit_piecewise_constant(&img, &mask).unwrap();
        assert_eq!(p.xi1, vec![0.0, 0.0, 1.0, 1.0]);
        assert_eq!(p.xi2, vec![1.0, 1.0, 0.0, 0.0]);
        let q = fit_piecewise_constant(&img, &mask.complement()).unwrap();
        assert_eq!((q.xi1, q.xi2), (p.xi2, p.xi1));
        let gray = Image::filled(4, 1, 1, 0.5);
        let g = fit_piecewise_constant(&gray, &mask).unwrap();
        assert!(g.xi1.iter().chain(&g.xi2).all(|v| *v == 0.0));
        assert!(fit_piecewise_constant(&gray, &Mask::full(4, 1)).is_err());
    }
}
