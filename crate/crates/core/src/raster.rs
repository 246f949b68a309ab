//! Pixel containers and small raster utilities.
//!
//! Pixel `(i, j)` sits at the physical position `(i·hx, j·hx)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Multi-channel image with values in `[0, 1]`, row-major, channels interleaved.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<f64>,
}

impl Image {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 || channels == 0 {
            return Err(Error::Domain("image dimensions must be positive".into()));
        }
        if data.len() != width * height * channels {
            return Err(Error::Domain(format!(
                "image buffer has {} values, expected {}",
                data.len(),
                width * height * channels
            )));
        }
        Ok(Image { width, height, channels, data })
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: f64) -> Self {
        Image { width, height, channels, data: vec![value; width * height * channels] }
    }

    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> &[f64] {
        let o = (y * self.width + x) * self.channels;
        &self.data[o..o + self.channels]
    }

    #[inline]
    pub fn pixel_mut(&mut self, x: usize, y: usize) -> &mut [f64] {
        let o = (y * self.width + x) * self.channels;
        &mut self.data[o..o + self.channels]
    }

    pub fn len(&self) -> usize {
        self.width * self.height
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// One scalar plane per channel.
    pub fn channel(&self, c: usize) -> Vec<f64> {
        self.data.iter().skip(c).step_by(self.channels).copied().collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mask {
    pub width: usize,
    pub height: usize,
    pub data: Vec<bool>,
}

impl Mask {
    pub fn new(width: usize, height: usize) -> Self {
        Mask { width, height, data: vec![false; width * height] }
    }

    pub fn full(width: usize, height: usize) -> Self {
        Mask { width, height, data: vec![true; width * height] }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: bool) {
        self.data[y * self.width + x] = v;
    }

    /// Value at the pixel nearest to a physical position; outside is `false`.
    pub fn at_position(&self, x: f64, y: f64, hx: f64) -> bool {
        let i = (x / hx).round();
        let j = (y / hx).round();
        if i < 0.0 || j < 0.0 || i >= self.width as f64 || j >= self.height as f64 {
            return false;
        }
        self.get(i as usize, j as usize)
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn complement(&self) -> Mask {
        Mask { width: self.width, height: self.height, data: self.data.iter().map(|b| !b).collect() }
    }

    pub fn union_with(&mut self, other: &Mask) {
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a |= *b;
        }
    }

    /// Mark every pixel within `radius` of the segment `[a, b]`.
    pub fn draw_segment(&mut self, a: [f64; 2], b: [f64; 2], radius: f64, hx: f64) {
        let (lo_x, hi_x) = (a[0].min(b[0]) - radius, a[0].max(b[0]) + radius);
        let (lo_y, hi_y) = (a[1].min(b[1]) - radius, a[1].max(b[1]) + radius);
        let i0 = ((lo_x / hx).floor().max(0.0)) as usize;
        let j0 = ((lo_y / hx).floor().max(0.0)) as usize;
        let i1 = ((hi_x / hx).ceil().max(0.0) as usize).min(self.width.saturating_sub(1));
        let j1 = ((hi_y / hx).ceil().max(0.0) as usize).min(self.height.saturating_sub(1));
        for j in j0..=j1 {
            for i in i0..=i1 {
                let p = [i as f64 * hx, j as f64 * hx];
                if point_segment_distance(p, a, b) <= radius + 1e-12 {
                    self.set(i, j, true);
                }
            }
        }
    }
}

pub fn point_segment_distance(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    let d = [b[0] - a[0], b[1] - a[1]];
    let l2 = d[0] * d[0] + d[1] * d[1];
    let t = if l2 == 0.0 { 0.0 } else { (((p[0] - a[0]) * d[0] + (p[1] - a[1]) * d[1]) / l2).clamp(0.0, 1.0) };
    (p[0] - a[0] - t * d[0]).hypot(p[1] - a[1] - t * d[1])
}

/// Even-odd point-in-polygon test.
pub fn point_in_polygon(p: [f64; 2], poly: &[[f64; 2]]) -> bool {
    let n = poly.len();
    let mut inside = false;
    let mut j = n.wrapping_sub(1);
    for i in 0..n {
        let (a, b) = (poly[i], poly[j]);
        if (a[1] > p[1]) != (b[1] > p[1]) {
            let x = a[0] + (p[1] - a[1]) / (b[1] - a[1]) * (b[0] - a[0]);
            if p[0] < x {
                inside = !inside;
            }
        }
        j = i;
    }
    inside
}

/// Pixels whose position lies inside the polygon.
pub fn rasterize_polygon(poly: &[[f64; 2]], width: usize, height: usize, hx: f64) -> Mask {
    let mut m = Mask::new(width, height);
    if poly.len() < 3 {
        return m;
    }
    for j in 0..height {
        let y = j as f64 * hx;
        // Scanline crossings.
        let mut xs: Vec<f64> = Vec::new();
        let n = poly.len();
        for i in 0..n {
            let (a, b) = (poly[i], poly[(i + n - 1) % n]);
            if (a[1] > y) != (b[1] > y) {
                xs.push(a[0] + (y - a[1]) / (b[1] - a[1]) * (b[0] - a[0]));
            }
        }
        xs.sort_by(f64::total_cmp);
        for pair in xs.chunks(2) {
            if pair.len() < 2 {
                break;
            }
            let lo = (pair[0] / hx).ceil().max(0.0) as usize;
            let hi = (pair[1] / hx).floor();
            if hi < 0.0 {
                continue;
            }
            let hi = (hi as usize).min(width.saturating_sub(1));
            for i in lo..=hi {
                if (i as f64 * hx) > pair[0] && (i as f64 * hx) < pair[1] {
                    m.set(i, j, true);
                }
            }
        }
    }
    m
}

/// Distance from every pixel to a closed polygon outline.
pub fn distance_to_polygon(poly: &[[f64; 2]], width: usize, height: usize, hx: f64) -> Vec<f64> {
    let n = poly.len();
    let mut out = vec![f64::INFINITY; width * height];
    if n == 0 {
        return out;
    }
    for j in 0..height {
        for i in 0..width {
            let p = [i as f64 * hx, j as f64 * hx];
            let mut best = f64::INFINITY;
            for k in 0..n {
                let a = poly[k];
                let b = poly[(k + 1) % n];
                best = best.min(point_segment_distance(p, a, b));
            }
            out[j * width + i] = best;
        }
    }
    out
}

/// Separable Gaussian blur of one plane with clamped borders.
pub fn gaussian_blur(plane: &[f64], width: usize, height: usize, sigma: f64) -> Vec<f64> {
    if sigma <= 0.0 {
        return plane.to_vec();
    }
    let r = (3.0 * sigma).ceil() as isize;
    let kernel: Vec<f64> = (-r..=r).map(|k| (-(k * k) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let norm: f64 = kernel.iter().sum();
    let kernel: Vec<f64> = kernel.iter().map(|k| k / norm).collect();
    let clamp = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;
    let mut tmp = vec![0.0; plane.len()];
    for y in 0..height {
        for x in 0..width {
            let mut acc = 0.0;
            for (k, w) in kernel.iter().enumerate() {
                let xx = clamp(x as isize + k as isize - r, width);
                acc += w * plane[y * width + xx];
            }
            tmp[y * width + x] = acc;
        }
    }
    let mut out = vec![0.0; plane.len()];
    for y in 0..height {
        for x in 0..width {
            let mut acc = 0.0;
            for (k, w) in kernel.iter().enumerate() {
                let yy = clamp(y as isize + k as isize - r, height);
                acc += w * tmp[yy * width + x];
            }
            out[y * width + x] = acc;
        }
    }
    out
}

/// Central-difference gradient (one-sided at the border), per pixel step.
pub fn gradient(plane: &[f64], width: usize, height: usize) -> (Vec<f64>, Vec<f64>) {
    let mut gx = vec![0.0; plane.len()];
    let mut gy = vec![0.0; plane.len()];
    for y in 0..height {
        for x in 0..width {
            let (xl, xr) = (x.saturating_sub(1), (x + 1).min(width - 1));
            let (yl, yr) = (y.saturating_sub(1), (y + 1).min(height - 1));
            let i = y * width + x;
            if xr > xl {
                gx[i] = (plane[y * width + xr] - plane[y * width + xl]) / (xr - xl) as f64;
            }
            if yr > yl {
                gy[i] = (plane[yr * width + x] - plane[yl * width + x]) / (yr - yl) as f64;
            }
        }
    }
    (gx, gy)
}
