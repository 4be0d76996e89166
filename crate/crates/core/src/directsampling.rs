//! Continuous-variable Direct Sampling.
//!
//! Each realization visits the uninformed cells of the target grid along a
//! random path. At every node the nearest informed cells form a pattern,
//! which is compared against candidate locations of the (pooled) training
//! stack; the value at the first acceptable candidate is pasted.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::field::{FieldError, Grid, GridStack};
use crate::rng::{self, StreamRng};

#[derive(Debug, Error)]
pub enum DsError {
    #[error("invalid direct sampling parameters: {0}")]
    InvalidParams(String),
    #[error("training stack contains missing values")]
    MissingTraining,
    #[error("conditioning cell {0} lies outside the target grid")]
    ConditioningOffGrid(usize),
    #[error("conditioning value at cell {0} is not finite")]
    ConditioningNotFinite(usize),
    #[error("pattern offsets differ")]
    OffsetMismatch,
    #[error(transparent)]
    Field(#[from] FieldError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DsParams {
    pub n_neighbors: usize,
    pub dist_threshold: f64,
    pub scan_fraction: f64,
    pub coord_weight: f64,
    pub seed: u64,
}

impl Default for DsParams {
    fn default() -> Self {
        DsParams { n_neighbors: 20, dist_threshold: 0.05, scan_fraction: 0.5, coord_weight: 0.1, seed: 0 }
    }
}

impl DsParams {
    pub fn validate(&self, training_cells: usize) -> Result<(), DsError> {
        let bad = |msg: String| Err(DsError::InvalidParams(msg));
        if self.n_neighbors == 0 || self.n_neighbors > training_cells {
            return bad(format!("n_neighbors must lie in 1..={training_cells}, got {}", self.n_neighbors));
        }
        if !(0.0..=1.0).contains(&self.dist_threshold) {
            return bad(format!("dist_threshold must lie in [0, 1], got {}", self.dist_threshold));
        }
        if !(self.scan_fraction > 0.0 && self.scan_fraction <= 1.0) {
            return bad(format!("scan_fraction must lie in (0, 1], got {}", self.scan_fraction));
        }
        if !(0.0..=1.0).contains(&self.coord_weight) {
            return bad(format!("coord_weight must lie in [0, 1], got {}", self.coord_weight));
        }
        Ok(())
    }
}

/// Values at lags `(drow, dcol)` around an anchor cell.
#[derive(Debug, Clone, PartialEq)]
pub struct Pattern {
    pub offsets: Vec<(isize, isize)>,
    pub values: Vec<f64>,
    /// Normalized coordinates of the anchor in `[0, 1]^2`.
    pub anchor: (f64, f64),
}

/// Weighted distance in `[0, 1]`: mean absolute value difference scaled by
/// `value_range`, blended with the anchor distance scaled by the unit diagonal.
pub fn pattern_distance(a: &Pattern, b: &Pattern, coord_weight: f64, value_range: f64) -> Result<f64, DsError> {
    if a.offsets != b.offsets || a.values.len() != a.offsets.len() || b.values.len() != b.offsets.len() {
        return Err(DsError::OffsetMismatch);
    }
    let sum: f64 = a.values.iter().zip(&b.values).map(|(x, y)| (x - y).abs()).sum();
    let d_val = value_term(sum, a.values.len(), value_range);
    let d_coord = coord_term(a.anchor, b.anchor);
    Ok((1.0 - coord_weight) * d_val + coord_weight * d_coord)
}

#[inline]
fn value_term(abs_sum: f64, k: usize, range: f64) -> f64 {
    if k == 0 || range <= 0.0 {
        return 0.0;
    }
    (abs_sum / (k as f64 * range)).min(1.0)
}

#[inline]
fn coord_term(a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dx, dy) = (a.0 - b.0, a.1 - b.1);
    ((dx * dx + dy * dy).sqrt() * std::f64::consts::FRAC_1_SQRT_2).min(1.0)
}

/// Candidates looked ahead when prefetching training values.
const PREFETCH_DISTANCE: usize = 8;

/// Neighbors compared before the first early-abandonment check.
const HEAD: usize = 4;

#[inline(always)]
fn prefetch(values: &[f64], index: isize) {
    #[cfg(target_arch = "x86_64")]
    {
        use std::arch::x86_64::{_mm_prefetch, _MM_HINT_T0};
        let p = values.as_ptr().wrapping_offset(index) as *const i8;
        // SAFETY: prefetching is a hint and never faults, even for addresses outside `values`.
        unsafe { _mm_prefetch::<_MM_HINT_T0>(p) };
    }
    #[cfg(not(target_arch = "x86_64"))]
    let _ = (values, index);
}

/// Per-node record of one simulation step.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeTrace {
    pub cell: usize,
    pub pattern: Pattern,
    pub source_replicate: usize,
    pub source_cell: usize,
    pub distance: f64,
    pub value: f64,
    /// Valid candidates compared before the search stopped.
    pub scanned: usize,
}

/// Lags of the target grid ordered by distance, then angle, then lexicographically.
fn sorted_lags(grid: &Grid) -> Vec<(isize, isize)> {
    let (nx, ny) = (grid.nx as isize, grid.ny as isize);
    let mut lags: Vec<(isize, isize)> =
        (-(ny - 1)..ny).flat_map(|dr| (-(nx - 1)..nx).map(move |dc| (dr, dc))).filter(|&l| l != (0, 0)).collect();
    let angle = |(dr, dc): (isize, isize)| {
        let a = (dr as f64).atan2(dc as f64);
        if a < 0.0 { a + std::f64::consts::TAU } else { a }
    };
    lags.sort_by(|&a, &b| {
        let (da, db) = (a.0 * a.0 + a.1 * a.1, b.0 * b.0 + b.1 * b.1);
        da.cmp(&db).then_with(|| angle(a).total_cmp(&angle(b))).then_with(|| a.cmp(&b))
    });
    lags
}

struct Training<'a> {
    stack: &'a GridStack,
    nx: isize,
    ny: isize,
    range: f64,
    row_col: Vec<(isize, isize)>,
    anchors: Vec<(f64, f64)>,
}

struct Engine<'a> {
    training: Training<'a>,
    target: &'a Grid,
    params: DsParams,
    lags: Vec<(isize, isize)>,
    conditioning: &'a BTreeMap<usize, f64>,
}

impl Engine<'_> {
    fn realization(&self, index: usize, trace: bool) -> (Vec<f64>, Vec<NodeTrace>) {
        let mut rng = rng::stream(self.params.seed, index as u64);
        let n = self.target.len();
        let mut sim = vec![f64::NAN; n];
        let mut informed = vec![false; n];
        for (&cell, &v) in self.conditioning {
            sim[cell] = v;
            informed[cell] = true;
        }
        let mut path: Vec<usize> = (0..n).filter(|&c| !informed[c]).collect();
        path.shuffle(&mut rng);
        let mut traces = Vec::new();
        for &cell in &path {
            let pattern = self.neighbors(cell, &sim, &informed);
            let (rep, src, dist, scanned) = self.search(&pattern, &mut rng);
            let value = self.training.stack.replicate(rep)[src];
            sim[cell] = value;
            informed[cell] = true;
            if trace {
                traces.push(NodeTrace { cell, pattern, source_replicate: rep, source_cell: src, distance: dist, value, scanned });
            }
        }
        (sim, traces)
    }

    fn neighbors(&self, cell: usize, sim: &[f64], informed: &[bool]) -> Pattern {
        let (row, col) = self.target.row_col(cell);
        let (nx, ny) = (self.target.nx as isize, self.target.ny as isize);
        let mut offsets = Vec::with_capacity(self.params.n_neighbors);
        let mut values = Vec::with_capacity(self.params.n_neighbors);
        for &(dr, dc) in &self.lags {
            if offsets.len() == self.params.n_neighbors {
                break;
            }
            let (r, c) = (row as isize + dr, col as isize + dc);
            if r < 0 || r >= ny || c < 0 || c >= nx {
                continue;
            }
            let k = (r * nx + c) as usize;
            if informed[k] {
                offsets.push((dr, dc));
                values.push(sim[k]);
            }
        }
        Pattern { offsets, values, anchor: self.target.normalized_center(cell) }
    }

    /// Returns `(replicate, cell, distance, scanned)` of the pasted candidate.
    fn search(&self, pattern: &Pattern, rng: &mut StreamRng) -> (usize, usize, f64, usize) {
        let tr = &self.training;
        let cells = (tr.nx * tr.ny) as usize;
        let total = cells * tr.stack.m();
        if pattern.offsets.is_empty() {
            return self.seed_colocated(pattern.anchor, rng, 0);
        }
        let (mut rmin, mut rmax, mut cmin, mut cmax) = (0isize, 0isize, 0isize, 0isize);
        for &(dr, dc) in &pattern.offsets {
            rmin = rmin.min(dr);
            rmax = rmax.max(dr);
            cmin = cmin.min(dc);
            cmax = cmax.max(dc);
        }
        if rmax - rmin >= tr.ny || cmax - cmin >= tr.nx {
            // no training location can hold this pattern
            return self.seed_colocated(pattern.anchor, rng, 0);
        }
        let linear: Vec<isize> = pattern.offsets.iter().map(|&(dr, dc)| dr * tr.nx + dc).collect();
        let k = pattern.values.len();
        let w = self.params.coord_weight;
        let budget = ((self.params.scan_fraction * total as f64).ceil() as usize).clamp(1, total);
        let start = rng.random_range(0..total);
        let stride = coprime_stride(total, rng);

        // Candidate `rep * cells + cell` advances by `stride` modulo `total`;
        // stepping replicate and cell separately avoids a division per candidate.
        let m = tr.stack.m();
        let (rep_step, cell_step) = (stride / cells, stride % cells);
        let advance = |rep: &mut usize, cell: &mut usize| {
            *cell += cell_step;
            *rep += rep_step;
            if *cell >= cells {
                *cell -= cells;
                *rep += 1;
            }
            if *rep >= m {
                *rep -= m;
            }
        };
        let all = tr.stack.values();
        let (mut rep, mut cell) = (start / cells, start % cells);
        let (mut ahead_rep, mut ahead_cell) = (rep, cell);
        for _ in 0..PREFETCH_DISTANCE.min(total) {
            advance(&mut ahead_rep, &mut ahead_cell);
        }

        let mut best = (usize::MAX, f64::INFINITY);
        let mut scanned = 0usize;
        let mut visited = 0usize;
        // keep going past the budget only until one valid candidate is seen
        while visited < total && (scanned < budget || best.0 == usize::MAX) {
            let (cand_rep, cand_cell) = (rep, cell);
            advance(&mut rep, &mut cell);
            let ahead = (ahead_rep * cells + ahead_cell) as isize;
            for &off in linear.iter().take(HEAD) {
                prefetch(all, ahead + off);
            }
            advance(&mut ahead_rep, &mut ahead_cell);
            visited += 1;
            let (r, c) = tr.row_col[cand_cell];
            if r + rmin < 0 || r + rmax >= tr.ny || c + cmin < 0 || c + cmax >= tr.nx {
                continue;
            }
            scanned += 1;
            let coord = if w > 0.0 { w * coord_term(pattern.anchor, tr.anchors[cand_cell]) } else { 0.0 };
            if coord >= best.1 {
                continue;
            }
            let needed = (best.1 - coord) / (1.0 - w).max(f64::MIN_POSITIVE);
            let limit = if needed < 1.0 { needed * k as f64 * tr.range } else { f64::INFINITY };
            let base = (cand_rep * cells + cand_cell) as isize;
            // The nearest few neighbors are summed without branching before
            // the first abandonment check.
            let head = k.min(HEAD);
            let mut sum = 0.0;
            for j in 0..head {
                sum += (all[(base + linear[j]) as usize] - pattern.values[j]).abs();
            }
            if sum > limit && best.0 != usize::MAX {
                continue;
            }
            let mut abandoned = false;
            for j in head..k {
                sum += (all[(base + linear[j]) as usize] - pattern.values[j]).abs();
                if sum > limit && best.0 != usize::MAX {
                    abandoned = true;
                    break;
                }
            }
            if abandoned {
                continue;
            }
            let d = (1.0 - w) * value_term(sum, k, tr.range) + coord;
            if d < best.1 || best.0 == usize::MAX {
                best = (base as usize, d);
                if d <= self.params.dist_threshold {
                    break;
                }
            }
        }
        if best.0 == usize::MAX {
            return self.seed_colocated(pattern.anchor, rng, scanned);
        }
        (best.0 / cells, best.0 % cells, best.1, scanned)
    }

    /// Value of a random training replicate at the cell nearest to `anchor`.
    fn seed_colocated(&self, anchor: (f64, f64), rng: &mut StreamRng, scanned: usize) -> (usize, usize, f64, usize) {
        let tr = &self.training;
        let c = ((anchor.0 * tr.nx as f64).floor() as isize).clamp(0, tr.nx - 1);
        let r = ((anchor.1 * tr.ny as f64).floor() as isize).clamp(0, tr.ny - 1);
        let rep = rng.random_range(0..tr.stack.m());
        let d = self.params.coord_weight * coord_term(anchor, normalized(r, c, tr.nx, tr.ny));
        (rep, (r * tr.nx + c) as usize, d, scanned)
    }
}

#[inline]
fn normalized(r: isize, c: isize, nx: isize, ny: isize) -> (f64, f64) {
    ((c as f64 + 0.5) / nx as f64, (r as f64 + 0.5) / ny as f64)
}

fn gcd(mut a: usize, mut b: usize) -> usize {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

/// Random step coprime with `n`, so that `start + k * step (mod n)` visits every index once.
fn coprime_stride(n: usize, rng: &mut StreamRng) -> usize {
    if n <= 2 {
        return 1;
    }
    loop {
        let s = rng.random_range(1..n);
        if gcd(s, n) == 1 {
            return s;
        }
    }
}

fn prepare<'a>(
    training: &'a GridStack,
    target: &'a Grid,
    params: &DsParams,
    conditioning: &'a BTreeMap<usize, f64>,
) -> Result<Engine<'a>, DsError> {
    target.validate()?;
    params.validate(training.grid().len())?;
    if training.has_missing() {
        return Err(DsError::MissingTraining);
    }
    for (&cell, &v) in conditioning {
        if cell >= target.len() {
            return Err(DsError::ConditioningOffGrid(cell));
        }
        if !v.is_finite() {
            return Err(DsError::ConditioningNotFinite(cell));
        }
    }
    let (lo, hi) = training.values().iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
    let g = training.grid();
    Ok(Engine {
        training: Training {
            stack: training,
            nx: g.nx as isize,
            ny: g.ny as isize,
            range: hi - lo,
            row_col: (0..g.len()).map(|i| ((i / g.nx) as isize, (i % g.nx) as isize)).collect(),
            anchors: (0..g.len()).map(|i| normalized((i / g.nx) as isize, (i % g.nx) as isize, g.nx as isize, g.ny as isize)).collect(),
        },
        target,
        params: *params,
        lags: sorted_lags(target),
        conditioning,
    })
}

/// Simulate `count` realizations on `target` from the pooled training stack.
pub fn ds_simulate(
    training: &GridStack,
    target: &Grid,
    params: &DsParams,
    conditioning: &BTreeMap<usize, f64>,
    count: usize,
) -> Result<GridStack, DsError> {
    let engine = prepare(training, target, params, conditioning)?;
    let reals: Vec<Vec<f64>> = (0..count).into_par_iter().map(|i| engine.realization(i, false).0).collect();
    Ok(GridStack::new(*target, count, reals.concat())?)
}

/// Like [`ds_simulate`], also returning the per-node traces of every realization.
pub fn ds_simulate_traced(
    training: &GridStack,
    target: &Grid,
    params: &DsParams,
    conditioning: &BTreeMap<usize, f64>,
    count: usize,
) -> Result<(GridStack, Vec<Vec<NodeTrace>>), DsError> {
    let engine = prepare(training, target, params, conditioning)?;
    let (reals, traces): (Vec<Vec<f64>>, Vec<Vec<NodeTrace>>) =
        (0..count).into_par_iter().map(|i| engine.realization(i, true)).unzip();
    Ok((GridStack::new(*target, count, reals.concat())?, traces))
}
