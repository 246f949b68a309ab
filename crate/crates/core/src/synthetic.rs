//! Synthetic two-tone ellipse scenes with boundary gaps and noise.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::constraints::{Annotation, Point2};
use crate::error::{Error, Result};
use crate::raster::{Image, Mask};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EllipseSceneConfig {
    pub width: usize,
    pub height: usize,
    pub center: [f64; 2],
    pub semi_axes: [f64; 2],
    pub inside: f64,
    pub outside: f64,
    /// Boundary angles (radians) at which the edge is erased.
    pub gap_angles: Vec<f64>,
    /// Length of each gap along the boundary, pixels.
    pub gap_length: f64,
    pub noise_sigma: f64,
    pub seed: u64,
    /// Boundary angle of the annotated source point.
    pub source_angle: f64,
    /// Foreground stroke drawn as the boundary scaled about the centre; `None` for no stroke.
    pub stroke_scale: Option<f64>,
}

impl Default for EllipseSceneConfig {
    fn default() -> Self {
        EllipseSceneConfig {
            width: 200,
            height: 200,
            center: [100.0, 100.0],
            semi_axes: [80.0, 60.0],
            inside: 0.7,
            outside: 0.3,
            gap_angles: vec![0.9, 2.6, 4.4],
            gap_length: 15.0,
            noise_sigma: 0.05,
            seed: 7,
            source_angle: 5.6,
            stroke_scale: Some(0.56),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EllipseScene {
    pub image: Image,
    pub truth: Mask,
    pub annotation: Annotation,
}

/// Render the scene. Inside a gap both sides take the mean grey level so the
/// edge vanishes over `gap_length` pixels.
pub fn ellipse_scene(cfg: &EllipseSceneConfig) -> Result<EllipseScene> {
    let [a, b] = cfg.semi_axes;
    let [cx, cy] = cfg.center;
    if !(a > 0.0 && b > 0.0) || cfg.width < 2 || cfg.height < 2 || !(cfg.noise_sigma >= 0.0) || !(cfg.gap_length >= 0.0) {
        return Err(Error::Config("invalid ellipse scene".into()));
    }
    let noise = Normal::new(0.0, cfg.noise_sigma).map_err(|e| Error::Config(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let gap_centers: Vec<[f64; 2]> = cfg.gap_angles.iter().map(|t| [cx + a * t.cos(), cy + b * t.sin()]).collect();
    let gap_radius = 0.5 * cfg.gap_length;
    let mid = 0.5 * (cfg.inside + cfg.outside);
    let mut truth = Mask::new(cfg.width, cfg.height);
    let mut data = Vec::with_capacity(cfg.width * cfg.height);
    for j in 0..cfg.height {
        for i in 0..cfg.width {
            let (x, y) = (i as f64, j as f64);
            let inside = ((x - cx) / a).powi(2) + ((y - cy) / b).powi(2) <= 1.0;
            truth.set(i, j, inside);
            let in_gap = gap_centers.iter().any(|g| (x - g[0]).hypot(y - g[1]) <= gap_radius);
            let base = if in_gap {
                mid
            } else if inside {
                cfg.inside
            } else {
                cfg.outside
            };
            data.push((base + noise.sample(&mut rng)).clamp(0.0, 1.0));
        }
    }
    let image = Image::new(cfg.width, cfg.height, 1, data)?;
    let t = cfg.source_angle;
    let theta = (b * t.cos()).atan2(-a * t.sin());
    let mut annotation = Annotation::new(cx + a * t.cos(), cy + b * t.sin(), theta).with_z(cfg.center);
    if let Some(k) = cfg.stroke_scale {
        let stroke = (0..=40)
            .map(|i| {
                let s = std::f64::consts::TAU * i as f64 / 40.0;
                Point2::new(cx + k * a * s.cos(), cy + k * b * s.sin())
            })
            .collect();
        annotation.fg_scribbles.push(stroke);
    }
    Ok(EllipseScene { image, truth, annotation })
}

/// Default scene, also used as the service fixture.
pub fn default_scene() -> EllipseScene {
    ellipse_scene(&EllipseSceneConfig::default()).expect("default scene is valid")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constraints::{resolve_z, validate};
    use crate::lifted_grid::GridSpec;

    #[test]
    fn default_scene_is_consistent() {
        let s = default_scene();
        let area = s.truth.count() as f64;
        assert!((area - std::f64::consts::PI * 80.0 * 60.0).abs() < 60.0);
        let spec = GridSpec::new(200, 200, 60, 1.0).unwrap();
        let z = resolve_z(&s.annotation).unwrap();
        assert!(validate(&s.annotation, z, &spec).is_ok());
        assert_eq!(s, default_scene());
    }
}
