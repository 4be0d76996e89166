//! Naive rank-preserving resampling and order-statistic diagnostics.

use std::collections::BTreeMap;
use std::io::Write;

use rand::Rng;
use rand_distr::Exp1;
use thiserror::Error;

use crate::directsampling::{ds_simulate, DsError, DsParams};
use crate::field::{FieldError, GridStack};
use crate::marginal::MarginalModel;

#[derive(Debug, Error)]
pub enum NaiveError {
    #[error("empty input")]
    Empty,
    #[error("input contains missing or non-finite values")]
    NonFinite,
    #[error("expected 1 or {cells} marginal models, got {found}")]
    ModelCount { cells: usize, found: usize },
    #[error("rank source produced {found} values, expected {expected}")]
    RankLength { expected: usize, found: usize },
    #[error(transparent)]
    Ds(#[from] DsError),
    #[error(transparent)]
    Field(#[from] FieldError),
}

/// Where the spatial rank pattern of a resample comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum RankSource {
    /// Reuse the training ranks.
    Copy,
    /// Ranks of a Direct Sampling realization of the training stack.
    DirectSampling(DsParams),
}

/// Ranks `1..=n`, ties broken by position.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RankPattern {
    pub ranks: Vec<usize>,
    /// Number of positions whose value equals that of an earlier position.
    pub ties: usize,
}

impl RankPattern {
    pub fn from_values(values: &[f64]) -> Result<Self, NaiveError> {
        if values.is_empty() {
            return Err(NaiveError::Empty);
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(NaiveError::NonFinite);
        }
        let order = sorted_positions(values);
        let mut ranks = vec![0; values.len()];
        let mut ties = 0;
        for (k, &pos) in order.iter().enumerate() {
            ranks[pos] = k + 1;
            if k > 0 && values[order[k - 1]] == values[pos] {
                ties += 1;
            }
        }
        Ok(RankPattern { ranks, ties })
    }

    pub fn len(&self) -> usize {
        self.ranks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ranks.is_empty()
    }

    pub fn is_permutation(&self) -> bool {
        let mut seen = vec![false; self.ranks.len()];
        self.ranks.iter().all(|&r| r >= 1 && r <= seen.len() && !std::mem::replace(&mut seen[r - 1], true))
    }
}

/// Positions sorted by value, equal values by position.
fn sorted_positions(values: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
    order
}

/// Place the `k`-th smallest draw at the position holding rank `k`.
pub fn assign_by_rank(ranks: &RankPattern, mut draws: Vec<f64>) -> Result<Vec<f64>, NaiveError> {
    if draws.len() != ranks.len() {
        return Err(NaiveError::RankLength { expected: ranks.len(), found: draws.len() });
    }
    draws.sort_by(f64::total_cmp);
    Ok(ranks.ranks.iter().map(|&r| draws[r - 1]).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct NaiveResample {
    pub stack: GridStack,
    pub ranks: RankPattern,
}

/// Draw `m * cells` i.i.d. values from `model` and arrange them by the pooled
/// rank pattern of `rank_source`.
pub fn naive_resample<R: Rng + ?Sized>(
    training: &GridStack,
    model: &MarginalModel,
    rank_source: &RankSource,
    rng: &mut R,
) -> Result<NaiveResample, NaiveError> {
    naive_resample_with(training, rank_source, |_| model.sample(rng))
}

/// [`naive_resample`] with an arbitrary i.i.d. sampler, e.g. an exactly known margin.
pub fn naive_resample_with(
    training: &GridStack,
    rank_source: &RankSource,
    mut draw: impl FnMut(usize) -> f64,
) -> Result<NaiveResample, NaiveError> {
    let ranks = match rank_source {
        RankSource::Copy => RankPattern::from_values(training.values())?,
        RankSource::DirectSampling(params) => {
            let ds = ds_simulate(training, training.grid(), params, &BTreeMap::new(), training.m())?;
            RankPattern::from_values(ds.values())?
        }
    };
    let draws: Vec<f64> = (0..ranks.len()).map(&mut draw).collect();
    let values = assign_by_rank(&ranks, draws)?;
    Ok(NaiveResample { stack: GridStack::new(*training.grid(), training.m(), values)?, ranks })
}

/// Order statistics of `n` standard exponentials built from normalized spacings.
pub fn renyi_order_statistics<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<f64> {
    let mut acc = 0.0;
    (0..n)
        .map(|l| {
            let z: f64 = rng.sample(Exp1);
            acc += z / (n - l) as f64;
            acc
        })
        .collect()
}

/// Map to standard exponential margins before extracting maxima.
#[derive(Debug, Clone, Copy)]
pub enum ExponentialMargins<'a> {
    /// Values already have standard exponential margins.
    Identity,
    /// One model for all cells, or one per cell.
    Fitted(&'a [MarginalModel]),
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SpacingDiagnostics {
    pub maxima: Vec<f64>,
    /// Second-largest minus largest value; never positive.
    pub top_spacings: Vec<f64>,
}

pub const SPACING_CSV_HEADER: &str = "sample,maximum,top_spacing";

impl SpacingDiagnostics {
    pub fn write_csv<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        writeln!(w, "{SPACING_CSV_HEADER}")?;
        for (i, (m, s)) in self.maxima.iter().zip(&self.top_spacings).enumerate() {
            writeln!(w, "{i},{m},{s}")?;
        }
        Ok(())
    }
}

/// Global maximum and top spacing of each stack, pooled over all cells and replicates.
pub fn spacing_diagnostics(stacks: &[GridStack], margins: ExponentialMargins<'_>) -> Result<SpacingDiagnostics, NaiveError> {
    if stacks.is_empty() {
        return Err(NaiveError::Empty);
    }
    let mut out = SpacingDiagnostics::default();
    for stack in stacks {
        let cells = stack.grid().len();
        let transform = |k: usize, x: f64| -> f64 {
            match margins {
                ExponentialMargins::Identity => x,
                ExponentialMargins::Fitted(models) => {
                    let model = if models.len() == 1 { &models[0] } else { &models[k % cells] };
                    model.to_pareto(x).ln()
                }
            }
        };
        if let ExponentialMargins::Fitted(models) = margins {
            if models.len() != 1 && models.len() != cells {
                return Err(NaiveError::ModelCount { cells, found: models.len() });
            }
        }
        let (mut first, mut second) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
        for (k, &x) in stack.values().iter().enumerate() {
            if !x.is_finite() {
                return Err(NaiveError::NonFinite);
            }
            let y = transform(k, x);
            if y > first {
                second = first;
                first = y;
            } else if y > second {
                second = y;
            }
        }
        if stack.values().len() < 2 {
            second = first;
        }
        out.maxima.push(first);
        out.top_spacings.push(second - first);
    }
    Ok(out)
}
