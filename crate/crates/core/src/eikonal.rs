//! Single-pass fast marching for the discretized eikonal system
//! `max_k Σ_i ρ_ik (u(x) - u(x - ė_ik))₊² = ψ(x)²`.
//!
//! A neighbour contributes only when it is inside the grid, already
//! accepted, and the edge towards it is not blocked by an obstacle.

use serde::{Deserialize, Serialize};
use std::time::{Duration, Instant};

use crate::constraints::ObstacleSet;
use crate::error::{Error, Result};
use crate::lifted_grid::GridSpec;
use crate::metrics::StencilScheme;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Term {
    pub weight: f64,
    pub offset: [i32; 3],
}

#[derive(Debug, Clone)]
struct Level {
    terms: Vec<Term>,
    /// End index (exclusive) of each group in `terms`.
    group_ends: Vec<usize>,
    /// Angular level of `x - ė` for each term.
    targets: Vec<usize>,
}

/// Stencils merged per group, zero weights removed, with reverse adjacency.
#[derive(Debug, Clone)]
pub struct CompiledStencils {
    levels: Vec<Level>,
    reverse: Vec<Vec<[i32; 3]>>,
    max_terms: usize,
}

impl CompiledStencils {
    pub fn new(schemes: &[StencilScheme], spec: &GridSpec) -> Result<Self> {
        if schemes.len() != spec.ntheta {
            return Err(Error::Config(format!("{} stencils for {} levels", schemes.len(), spec.ntheta)));
        }
        let mut levels = Vec::with_capacity(schemes.len());
        for (it, s) in schemes.iter().enumerate() {
            if s.theta_index != it {
                return Err(Error::Config(format!("stencil {it} reports level {}", s.theta_index)));
            }
            let mut terms = Vec::new();
            let mut group_ends = Vec::new();
            for g in &s.groups {
                let start = terms.len();
                for &(w, e) in g {
                    if !(w >= 0.0 && w.is_finite()) {
                        return Err(Error::Config(format!("invalid stencil weight {w}")));
                    }
                    if w == 0.0 || e == [0, 0, 0] {
                        continue;
                    }
                    match terms[start..].iter_mut().find(|t: &&mut Term| t.offset == e) {
                        Some(t) => t.weight += w,
                        None => terms.push(Term { weight: w, offset: e }),
                    }
                }
                group_ends.push(terms.len());
            }
            let n = spec.ntheta as i64;
            let targets = terms.iter().map(|t| (it as i64 - t.offset[2] as i64).rem_euclid(n) as usize).collect();
            levels.push(Level { terms, group_ends, targets });
        }
        let n = spec.ntheta as i64;
        let mut reverse: Vec<Vec<[i32; 3]>> = vec![Vec::new(); spec.ntheta];
        for (lx, level) in levels.iter().enumerate() {
            for t in &level.terms {
                let ly = (lx as i64 - t.offset[2] as i64).rem_euclid(n) as usize;
                if !reverse[ly].contains(&t.offset) {
                    reverse[ly].push(t.offset);
                }
            }
        }
        for r in &mut reverse {
            r.sort_unstable();
        }
        let max_terms = levels.iter().map(|l| l.terms.len()).max().unwrap_or(0);
        Ok(CompiledStencils { levels, reverse, max_terms })
    }

    pub fn groups(&self, level: usize) -> impl Iterator<Item = &[Term]> {
        let l = &self.levels[level];
        let mut start = 0;
        l.group_ends.iter().map(move |&end| {
            let g = &l.terms[start..end];
            start = end;
            g
        })
    }

    pub fn terms(&self, level: usize) -> &[Term] {
        &self.levels[level].terms
    }

    pub fn max_terms(&self) -> usize {
        self.max_terms
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DistanceField {
    pub spec: GridSpec,
    pub values: Vec<f64>,
    /// Acceptance rank per node; `u32::MAX` when never accepted.
    pub accepted_order: Vec<u32>,
    pub seed: usize,
}

impl DistanceField {
    pub fn value(&self, idx: usize) -> f64 {
        self.values[idx]
    }

    pub fn is_accepted(&self, idx: usize) -> bool {
        self.accepted_order[idx] != u32::MAX
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    TargetReached,
    QueueExhausted,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolveReport {
    pub accepted_count: usize,
    pub stop_reason: StopReason,
    pub wall_time: Duration,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct SolveOptions {
    pub target: Option<usize>,
    pub deadline: Option<Instant>,
}

/// Solve `Σ ρ_i (U - u_i)₊² = rhs` for one group; pairs are `(weight, value)`.
fn solve_group(pairs: &mut [(f64, f64)], rhs: f64) -> f64 {
    if pairs.is_empty() {
        return f64::INFINITY;
    }
    pairs.sort_unstable_by(|a, b| a.1.total_cmp(&b.1).then(a.0.total_cmp(&b.0)));
    // Quadratic in d = u - v0, which avoids cancellation in b² - ac.
    let v0 = pairs[0].1;
    let (mut a, mut b, mut c) = (0.0, 0.0, 0.0);
    for m in 0..pairs.len() {
        let (w, v) = pairs[m];
        let dv = v - v0;
        a += w;
        b += w * dv;
        c += w * dv * dv;
        let disc = (b * b - a * (c - rhs)).max(0.0);
        let u = v0 + ((b + disc.sqrt()) / a).max(dv);
        if m + 1 == pairs.len() || u <= pairs[m + 1].1 {
            return u;
        }
    }
    unreachable!("the last interval always returns")
}

/// Local solve of the max-over-groups scheme at one node.
///
/// Non-finite values or non-positive weights are ignored; with no usable
/// neighbour the result is `+∞`.
pub fn local_update(neighbor_values: &[Vec<f64>], weights: &[Vec<f64>], rhs: f64) -> f64 {
    let mut best = f64::INFINITY;
    for (vals, ws) in neighbor_values.iter().zip(weights) {
        let mut pairs: Vec<(f64, f64)> =
            vals.iter().zip(ws).filter(|(v, w)| v.is_finite() && **w > 0.0).map(|(&v, &w)| (w, v)).collect();
        best = best.min(solve_group(&mut pairs, rhs));
    }
    best
}

/// Binary min-heap of nodes keyed by `(value, index)`, with decrease-key.
struct IndexedHeap {
    items: Vec<(f64, u32)>,
    pos: Vec<u32>,
}

impl IndexedHeap {
    const ABSENT: u32 = u32::MAX;

    fn new(n: usize) -> Self {
        IndexedHeap { items: Vec::new(), pos: vec![Self::ABSENT; n] }
    }

    #[inline]
    fn less(a: (f64, u32), b: (f64, u32)) -> bool {
        a.0 < b.0 || (a.0 == b.0 && a.1 < b.1)
    }

    /// Insert `x` with `key`, or move it up after its key decreased.
    fn push_or_decrease(&mut self, x: usize, key: f64) {
        let item = (key, x as u32);
        let mut i = match self.pos[x] {
            Self::ABSENT => {
                self.items.push(item);
                self.items.len() - 1
            }
            p => p as usize,
        };
        while i > 0 {
            let parent = (i - 1) / 2;
            if !Self::less(item, self.items[parent]) {
                break;
            }
            self.items[i] = self.items[parent];
            self.pos[self.items[i].1 as usize] = i as u32;
            i = parent;
        }
        self.items[i] = item;
        self.pos[x] = i as u32;
    }

    fn pop(&mut self) -> Option<(f64, usize)> {
        let top = *self.items.first()?;
        let last = self.items.pop().expect("non-empty");
        self.pos[top.1 as usize] = Self::ABSENT;
        if !self.items.is_empty() {
            let n = self.items.len();
            let mut i = 0;
            loop {
                let l = 2 * i + 1;
                if l >= n {
                    break;
                }
                let c = if l + 1 < n && Self::less(self.items[l + 1], self.items[l]) { l + 1 } else { l };
                if !Self::less(self.items[c], last) {
                    break;
                }
                self.items[i] = self.items[c];
                self.pos[self.items[i].1 as usize] = i as u32;
                i = c;
            }
            self.items[i] = last;
            self.pos[last.1 as usize] = i as u32;
        }
        Some((top.0, top.1 as usize))
    }
}

/// Lazily computed per-node blocked flags, one bit per compiled term.
struct BlockCache<'a> {
    obs: Option<&'a ObstacleSet>,
    words: usize,
    ready: Vec<bool>,
    bits: Vec<u64>,
}

impl<'a> BlockCache<'a> {
    fn new(obs: Option<&'a ObstacleSet>, n: usize, max_terms: usize) -> Self {
        let words = max_terms.div_ceil(64).max(1);
        match obs {
            Some(_) => BlockCache { obs, words, ready: vec![false; n], bits: vec![0; n * words] },
            None => BlockCache { obs, words, ready: Vec::new(), bits: Vec::new() },
        }
    }

    #[inline]
    fn blocked(&mut self, spec: &GridSpec, stencils: &CompiledStencils, x: usize, level: usize, k: usize) -> bool {
        let Some(obs) = self.obs else { return false };
        if !self.ready[x] {
            for (j, t) in stencils.terms(level).iter().enumerate() {
                if obs.blocks_offset(spec, x, t.offset) {
                    self.bits[x * self.words + j / 64] |= 1 << (j % 64);
                }
            }
            self.ready[x] = true;
        }
        self.bits[x * self.words + k / 64] & (1 << (k % 64)) != 0
    }
}

fn check_psi(psi: &[f64], spec: &GridSpec) -> Result<()> {
    if psi.len() != spec.len() {
        return Err(Error::Config(format!("velocity has {} samples, grid has {}", psi.len(), spec.len())));
    }
    if let Some(v) = psi.iter().find(|v| !(**v > 0.0)) {
        return Err(Error::Config(format!("velocity must be positive, found {v}")));
    }
    Ok(())
}

/// Tentative value at `x = (ix, iy, it)` from its currently accepted neighbours.
///
/// `frozen` holds accepted values and `+∞` elsewhere.
#[allow(clippy::too_many_arguments)]
fn update_value(
    spec: &GridSpec,
    stencils: &CompiledStencils,
    blocks: &mut BlockCache,
    frozen: &[f64],
    (ix, iy, it): (usize, usize, usize),
    x: usize,
    rhs: f64,
    buf: &mut Vec<(f64, f64)>,
) -> f64 {
    let lv = &stencils.levels[it];
    let (nx, ny) = (spec.nx as i64, spec.ny as i64);
    let mut best = f64::INFINITY;
    let mut start = 0;
    for &end in &lv.group_ends {
        buf.clear();
        for j in start..end {
            let t = &lv.terms[j];
            let jx = ix as i64 - t.offset[0] as i64;
            let jy = iy as i64 - t.offset[1] as i64;
            if jx < 0 || jy < 0 || jx >= nx || jy >= ny {
                continue;
            }
            let y = (lv.targets[j] * spec.ny + jy as usize) * spec.nx + jx as usize;
            let v = frozen[y];
            if v == f64::INFINITY || blocks.blocked(spec, stencils, x, it, j) {
                continue;
            }
            buf.push((t.weight, v));
        }
        start = end;
        best = best.min(solve_group(buf, rhs));
    }
    best
}

/// Fast marching from `seed`; stops early once `opts.target` is accepted.
pub fn solve(
    spec: &GridSpec,
    stencils: &CompiledStencils,
    psi: &[f64],
    obstacles: Option<&ObstacleSet>,
    seed: usize,
    opts: SolveOptions,
) -> Result<(DistanceField, SolveReport)> {
    let start = Instant::now();
    check_psi(psi, spec)?;
    let n = spec.len();
    if seed >= n {
        return Err(Error::Config(format!("seed {seed} outside the grid")));
    }
    if !psi[seed].is_finite() || obstacles.is_some_and(|o| o.node_blocked(spec, seed)) {
        return Err(Error::Config("seed lies inside an obstacle".into()));
    }
    if n >= u32::MAX as usize {
        return Err(Error::Config("grid too large".into()));
    }
    let mut values = vec![f64::INFINITY; n];
    let mut order = vec![u32::MAX; n];
    let mut accepted = vec![false; n];
    let mut frozen = vec![f64::INFINITY; n];
    let mut blocks = BlockCache::new(obstacles, n, stencils.max_terms());
    let mut heap = IndexedHeap::new(n);
    let mut buf = Vec::with_capacity(stencils.max_terms());
    values[seed] = 0.0;
    heap.push_or_decrease(seed, 0.0);
    let mut count = 0u32;
    let mut last = 0.0f64;
    let mut stop = StopReason::QueueExhausted;
    while let Some((value, y)) = heap.pop() {
        if value < last - 1e-9 * last.max(1.0) {
            return Err(Error::Internal(format!("causality violated: accepted {value} after {last}")));
        }
        last = last.max(value);
        accepted[y] = true;
        frozen[y] = value;
        order[y] = count;
        count += 1;
        if opts.target == Some(y) {
            stop = StopReason::TargetReached;
            break;
        }
        if count % 4096 == 0 && opts.deadline.is_some_and(|d| Instant::now() >= d) {
            return Err(Error::Deadline);
        }
        let (yx, yy, yt) = spec.coords(y);
        for d in &stencils.reverse[yt] {
            let jx = yx as i64 + d[0] as i64;
            let jy = yy as i64 + d[1] as i64;
            if jx < 0 || jy < 0 || jx >= spec.nx as i64 || jy >= spec.ny as i64 {
                continue;
            }
            let jt = (yt as i64 + d[2] as i64).rem_euclid(spec.ntheta as i64) as usize;
            let x = spec.index(jx as usize, jy as usize, jt);
            if accepted[x] || !psi[x].is_finite() {
                continue;
            }
            let u = update_value(
                spec,
                stencils,
                &mut blocks,
                &frozen,
                (jx as usize, jy as usize, jt),
                x,
                psi[x] * psi[x],
                &mut buf,
            );
            if u < values[x] {
                values[x] = u;
                heap.push_or_decrease(x, u);
            }
        }
    }
    for (v, a) in values.iter_mut().zip(&accepted) {
        if !a {
            *v = f64::INFINITY;
        }
    }
    let field = DistanceField { spec: *spec, values, accepted_order: order, seed };
    let report = SolveReport { accepted_count: count as usize, stop_reason: stop, wall_time: start.elapsed() };
    Ok((field, report))
}

/// Scheme residual at an accepted node, using neighbours accepted before it.
pub fn residual(
    spec: &GridSpec,
    stencils: &CompiledStencils,
    psi: &[f64],
    obstacles: Option<&ObstacleSet>,
    field: &DistanceField,
    x: usize,
) -> f64 {
    let level = spec.coords(x).2;
    let ux = field.values[x];
    let mut lhs: f64 = 0.0;
    for g in stencils.groups(level) {
        let mut s = 0.0;
        for t in g {
            let Some(y) = spec.offset_back(x, t.offset) else { continue };
            if field.accepted_order[y] >= field.accepted_order[x] {
                continue;
            }
            if obstacles.is_some_and(|o| o.blocks_offset(spec, x, t.offset)) {
                continue;
            }
            s += t.weight * (ux - field.values[y]).max(0.0).powi(2);
        }
        lhs = lhs.max(s);
    }
    lhs - psi[x] * psi[x]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn local_update_examples() {
        assert!((local_update(&[vec![0.0]], &[vec![1.0]], 1.0) - 1.0).abs() < 1e-15);
        let u = local_update(&[vec![0.0, 0.0]], &[vec![1.0, 1.0]], 1.0);
        assert!((u - 0.5f64.sqrt()).abs() < 1e-15);
        let u = local_update(&[vec![0.0, 10.0]], &[vec![1.0, 1.0]], 1.0);
        assert!((u - 1.0).abs() < 1e-15);
        let u = local_update(&[vec![0.0], vec![-0.5]], &[vec![1.0], vec![1.0]], 1.0);
        assert!((u - 0.5).abs() < 1e-15);
        assert!(local_update(&[vec![f64::INFINITY]], &[vec![1.0]], 1.0).is_infinite());
        assert!(local_update(&[vec![0.0]], &[vec![0.0]], 1.0).is_infinite());
    }

    #[test]
    fn heap_orders_by_value_then_index() {
        let mut h = IndexedHeap::new(10);
        for (i, v) in [(5, 1.0), (9, 0.5), (2, 1.0), (7, 3.0)] {
            h.push_or_decrease(i, v);
        }
        h.push_or_decrease(7, 0.25);
        let order: Vec<usize> = std::iter::from_fn(|| h.pop().map(|p| p.1)).collect();
        assert_eq!(order, vec![7, 9, 2, 5]);
    }
}
