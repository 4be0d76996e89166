//! Extreme-event extraction and lifting on the uniform scale.
//!
//! An observed event `x_U` with summary `v` is rescaled to a new summary
//! level `v_new` by the factor `s = v_new / v`. Cells at or below the
//! marginal threshold `u_marg` are instead mapped affinely from
//! `[-1, u_marg]` onto `[-1, s u_marg]`, which keeps the composite map
//! continuous and strictly increasing on `[-1, 0]`.

use std::io::Write;

use rand::Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::field::{Field, FieldError, GridStack};
use crate::risk::{apply_risk, RiskError, RiskFunctional, SummarySeries};
use crate::rng;

#[derive(Debug, Error)]
pub enum LiftError {
    #[error("no summary value exceeds the threshold {0}")]
    NoExceedances(f64),
    #[error("threshold must be negative, got {0}")]
    NonNegativeThreshold(f64),
    #[error("invalid lift interval [{v1}, {v2}]: need v1 <= v2 <= 0 and v1 < 0 when v2 = 0")]
    InvalidInterval { v1: f64, v2: f64 },
    #[error("post-processing threshold {0} outside (-1, 0)")]
    InvalidMarginalThreshold(f64),
    #[error("event summary {0} must be negative")]
    InvalidEventSummary(f64),
    #[error("scaling factor {s} pushes the bulk below -1 (s * u_marg = {})", s * u_marg)]
    Downlift { s: f64, u_marg: f64 },
    #[error("fixed-level lifting lifts each of the {events} events once; {requested} outputs requested")]
    CountMismatch { events: usize, requested: usize },
    #[error("no events to lift")]
    NoEvents,
    #[error(transparent)]
    Risk(#[from] RiskError),
    #[error(transparent)]
    Field(#[from] FieldError),
}

/// An observed episode on the uniform scale together with its summary value.
#[derive(Debug, Clone, PartialEq)]
pub struct ExtremeEvent {
    pub replicate_index: usize,
    pub x_u: Field,
    pub v: f64,
}

impl ExtremeEvent {
    pub fn from_stack(stack: &GridStack, j: usize, r: &RiskFunctional) -> Result<Self, LiftError> {
        let x_u = stack.field(j);
        let v = apply_risk(r, &x_u.values)?;
        Ok(ExtremeEvent { replicate_index: j, x_u, v })
    }
}

/// Target interval `[v1, v2]` for the new summary level, and the
/// post-processing threshold.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LiftSpec {
    pub v1: f64,
    pub v2: f64,
    pub u_marg: f64,
    pub seed: u64,
}

impl LiftSpec {
    pub fn validate(&self) -> Result<(), LiftError> {
        let (v1, v2) = (self.v1, self.v2);
        if !(v1 <= v2 && v2 <= 0.0) || (v2 == 0.0 && !(v1 < 0.0)) || !v1.is_finite() {
            return Err(LiftError::InvalidInterval { v1, v2 });
        }
        if !(self.u_marg > -1.0 && self.u_marg < 0.0) {
            return Err(LiftError::InvalidMarginalThreshold(self.u_marg));
        }
        Ok(())
    }

    pub fn is_fixed_level(&self) -> bool {
        self.v1 == self.v2
    }
}

/// Named choices for the post-processing threshold.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MarginalThreshold {
    /// `F(u) - 1 = -p_u`, the standardized marginal threshold.
    Exceedance(f64),
    Median,
    UpperQuartile,
    Value(f64),
}

impl MarginalThreshold {
    pub fn value(&self) -> f64 {
        match *self {
            MarginalThreshold::Exceedance(p_u) => -p_u,
            MarginalThreshold::Median => -0.5,
            MarginalThreshold::UpperQuartile => -0.25,
            MarginalThreshold::Value(v) => v,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LiftedEvent {
    pub source_replicate: usize,
    pub v_source: f64,
    pub v_new: f64,
    /// `v_new / v_source`.
    pub s: f64,
    pub x_u: Field,
}

/// Greedy declustering: take the largest remaining summary above
/// `threshold`, drop every index within `min_separation` of it, repeat.
/// Ties in `v` go to the smaller index. Result is ordered by `v` descending.
pub fn extract_events(
    series: &SummarySeries,
    threshold: f64,
    min_separation: usize,
    max_events: Option<usize>,
) -> Result<Vec<usize>, LiftError> {
    if !(threshold < 0.0) {
        return Err(LiftError::NonNegativeThreshold(threshold));
    }
    let mut candidates: Vec<usize> = (0..series.len()).filter(|&j| series.v[j] > threshold).collect();
    if candidates.is_empty() {
        return Err(LiftError::NoExceedances(threshold));
    }
    candidates.sort_by(|&a, &b| series.v[b].total_cmp(&series.v[a]).then(a.cmp(&b)));
    let limit = max_events.unwrap_or(usize::MAX);
    let mut chosen: Vec<usize> = Vec::new();
    for j in candidates {
        if chosen.len() >= limit {
            break;
        }
        if chosen.iter().all(|&c| c.abs_diff(j) > min_separation) {
            chosen.push(j);
        }
    }
    Ok(chosen)
}

/// Top-`k` declustered events regardless of level.
pub fn extract_top_events(series: &SummarySeries, k: usize, min_separation: usize) -> Result<Vec<usize>, LiftError> {
    // every V lies in [-1, 0), so -1 admits all replicates
    extract_events(series, -1.0 - f64::EPSILON, min_separation, Some(k))
}

/// New summary level, uniform on `[v1, v2]`.
pub fn sample_scale<R: Rng + ?Sized>(spec: &LiftSpec, rng: &mut R) -> f64 {
    if spec.is_fixed_level() {
        return spec.v1;
    }
    spec.v1 + (spec.v2 - spec.v1) * rng.random::<f64>()
}

/// Plain rescaling `(v_new / v) x_U`, without post-processing.
pub fn lift_event(ev: &ExtremeEvent, v_new: f64) -> Field {
    let s = v_new / ev.v;
    Field { grid: ev.x_u.grid, values: ev.x_u.values.iter().map(|x| s * x).collect() }
}

/// The post-processed lifting map for a single value.
#[inline]
pub fn postprocess_map(x: f64, s: f64, u_marg: f64) -> f64 {
    if x > u_marg {
        s * x
    } else {
        -1.0 + (1.0 + s * u_marg) / (1.0 + u_marg) * (1.0 + x)
    }
}

pub fn lift_with_level(ev: &ExtremeEvent, v_new: f64, u_marg: f64) -> Result<LiftedEvent, LiftError> {
    if !(ev.v < 0.0) {
        return Err(LiftError::InvalidEventSummary(ev.v));
    }
    if !(u_marg > -1.0 && u_marg < 0.0) {
        return Err(LiftError::InvalidMarginalThreshold(u_marg));
    }
    let s = v_new / ev.v;
    if s * u_marg <= -1.0 {
        return Err(LiftError::Downlift { s, u_marg });
    }
    let values = ev.x_u.values.iter().map(|&x| postprocess_map(x, s, u_marg)).collect();
    Ok(LiftedEvent {
        source_replicate: ev.replicate_index,
        v_source: ev.v,
        v_new,
        s,
        x_u: Field { grid: ev.x_u.grid, values },
    })
}

pub fn lift_event_postprocessed<R: Rng + ?Sized>(
    ev: &ExtremeEvent,
    spec: &LiftSpec,
    rng: &mut R,
) -> Result<LiftedEvent, LiftError> {
    spec.validate()?;
    let v_new = sample_scale(spec, rng);
    lift_with_level(ev, v_new, spec.u_marg)
}

/// Produce `m_target` lifted events. At a fixed level each event is lifted
/// exactly once; on an interval, sources are cycled in `v`-descending order
/// and each output draws its level from stream `(spec.seed, output index)`.
pub fn lift_batch(events: &[ExtremeEvent], spec: &LiftSpec, m_target: usize) -> Result<Vec<LiftedEvent>, LiftError> {
    spec.validate()?;
    if events.is_empty() {
        return Err(LiftError::NoEvents);
    }
    if spec.is_fixed_level() && m_target != events.len() {
        return Err(LiftError::CountMismatch { events: events.len(), requested: m_target });
    }
    let mut order: Vec<usize> = (0..events.len()).collect();
    order.sort_by(|&a, &b| {
        events[b]
            .v
            .total_cmp(&events[a].v)
            .then(events[a].replicate_index.cmp(&events[b].replicate_index))
    });
    (0..m_target)
        .into_par_iter()
        .map(|k| {
            let ev = &events[order[k % order.len()]];
            let mut rng = rng::stream(spec.seed, k as u64);
            lift_event_postprocessed(ev, spec, &mut rng)
        })
        .collect()
}

pub fn lifted_stack(lifted: &[LiftedEvent]) -> Result<GridStack, LiftError> {
    let fields: Vec<Field> = lifted.iter().map(|l| l.x_u.clone()).collect();
    Ok(GridStack::from_fields(&fields)?)
}

pub const MANIFEST_HEADER: &str = "output_index,source_replicate,v_source,v_new,s";

pub fn write_manifest<W: Write>(lifted: &[LiftedEvent], w: &mut W) -> std::io::Result<()> {
    writeln!(w, "{MANIFEST_HEADER}")?;
    for (k, l) in lifted.iter().enumerate() {
        writeln!(w, "{k},{},{},{},{}", l.source_replicate, l.v_source, l.v_new, l.s)?;
    }
    Ok(())
}

/// Events from a uniform-scale stack at the given replicate indices.
pub fn events_from_stack(stack: &GridStack, indices: &[usize], r: &RiskFunctional) -> Result<Vec<ExtremeEvent>, LiftError> {
    indices.iter().map(|&j| ExtremeEvent::from_stack(stack, j, r)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::Grid;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn event(values: Vec<f64>, r: &RiskFunctional) -> ExtremeEvent {
        let n = values.len();
        let x_u = Field::new(Grid::unit_square(n, 1).unwrap(), values).unwrap();
        let v = apply_risk(r, &x_u.values).unwrap();
        ExtremeEvent { replicate_index: 0, x_u, v }
    }

    fn spec(v1: f64, v2: f64) -> LiftSpec {
        LiftSpec { v1, v2, u_marg: -0.2, seed: 11 }
    }

    #[test]
    fn greedy_declustering() {
        let s = SummarySeries { v: vec![-0.01, -0.011, -0.5, -0.02] };
        assert_eq!(extract_events(&s, -0.1, 2, None).unwrap(), vec![0, 3]);
        assert_eq!(extract_events(&s, -0.1, 0, None).unwrap(), vec![0, 1, 3]);
        assert_eq!(extract_events(&s, -0.1, 0, Some(2)).unwrap(), vec![0, 1]);
        assert!(matches!(extract_events(&s, -0.001, 0, None), Err(LiftError::NoExceedances(_))));
    }

    #[test]
    fn declustering_matches_brute_force() {
        // oracle: among all separated subsets of exceedances, greedy by value
        // equals the lexicographically largest sorted-value vector
        let mut r = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let n = 10;
            let v: Vec<f64> = (0..n).map(|_| -r.random::<f64>()).collect();
            let thr = -0.6;
            let sep = r.random_range(0..3);
            let series = SummarySeries { v: v.clone() };
            let Ok(got) = extract_events(&series, thr, sep, None) else { continue };
            let exceed: Vec<usize> = (0..n).filter(|&j| v[j] > thr).collect();
            let mut best: Option<Vec<f64>> = None;
            for mask in 0u32..(1 << exceed.len()) {
                let sub: Vec<usize> = exceed.iter().enumerate().filter(|(b, _)| mask >> b & 1 == 1).map(|(_, &j)| j).collect();
                let ok = sub.iter().all(|&a| sub.iter().all(|&b| a == b || a.abs_diff(b) > sep));
                if !ok {
                    continue;
                }
                let mut vals: Vec<f64> = sub.iter().map(|&j| v[j]).collect();
                vals.sort_by(|a, b| b.total_cmp(a));
                if best.as_ref().is_none_or(|b| vals.partial_cmp(b) == Some(std::cmp::Ordering::Greater)) {
                    best = Some(vals);
                }
            }
            let got_vals: Vec<f64> = got.iter().map(|&j| v[j]).collect();
            assert_eq!(Some(got_vals), best);
        }
    }

    #[test]
    fn scale_sampling() {
        let mut r = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(sample_scale(&spec(-0.01, -0.01), &mut r), -0.01);
        let sp = spec(-0.2, 0.0);
        let draws: Vec<f64> = (0..100_000).map(|_| sample_scale(&sp, &mut r)).collect();
        assert!(draws.iter().all(|&d| (-0.2..0.0).contains(&d)));
        let mean = draws.iter().sum::<f64>() / draws.len() as f64;
        assert!((mean + 0.1).abs() < 0.003, "{mean}");
    }

    #[test]
    fn plain_lifting() {
        let ev = event(vec![-0.3, -0.1, -0.05], &RiskFunctional::Max);
        assert_eq!(ev.v, -0.05);
        let half = lift_event(&ev, -0.025);
        assert_eq!(half.values, vec![-0.15, -0.05, -0.025]);
        assert_eq!(lift_event(&ev, ev.v).values, ev.x_u.values);
    }

    #[test]
    fn postprocess_examples() {
        assert_eq!(postprocess_map(-1.0, 0.5, -0.2), -1.0);
        assert!((postprocess_map(-0.2, 0.5, -0.2) + 0.1).abs() < 1e-15);
        assert!((postprocess_map(-0.6, 2.0, -0.2) + 0.7).abs() < 1e-15);
    }

    #[test]
    fn downlift_guard() {
        let ev = event(vec![-0.3, -0.1], &RiskFunctional::Max);
        // s = -0.6 / -0.1 = 6 and 6 * -0.2 = -1.2
        assert!(matches!(lift_with_level(&ev, -0.6, -0.2), Err(LiftError::Downlift { .. })));
        assert!(lift_with_level(&ev, -0.3, -0.2).is_ok());
    }

    #[test]
    fn spec_validation() {
        assert!(spec(-0.1, 0.0).validate().is_ok());
        assert!(spec(0.0, 0.0).validate().is_err());
        assert!(spec(-0.1, -0.2).validate().is_err());
        assert!(spec(-0.1, 0.1).validate().is_err());
        assert!(LiftSpec { u_marg: 0.0, ..spec(-0.1, 0.0) }.validate().is_err());
        assert_eq!(MarginalThreshold::Exceedance(0.05).value(), -0.05);
    }

    #[test]
    fn batch_counts() {
        let r = RiskFunctional::Max;
        let events: Vec<ExtremeEvent> = (0..6)
            .map(|k| {
                let mut e = event(vec![-0.5, -0.05 - 0.01 * k as f64], &r);
                e.replicate_index = k;
                e
            })
            .collect();
        let fixed = lift_batch(&events, &spec(-0.01, -0.01), 6).unwrap();
        assert_eq!(fixed.len(), 6);
        let mut sources: Vec<usize> = fixed.iter().map(|l| l.source_replicate).collect();
        sources.sort();
        assert_eq!(sources, (0..6).collect::<Vec<_>>());
        assert!(matches!(lift_batch(&events, &spec(-0.01, -0.01), 7), Err(LiftError::CountMismatch { .. })));

        let sp = spec(-0.04, 0.0);
        let many = lift_batch(&events, &sp, 20).unwrap();
        assert_eq!(many.len(), 20);
        for k in 0..6 {
            assert!(many.iter().filter(|l| l.source_replicate == k).count() >= 3);
        }
        for l in &many {
            let v = apply_risk(&r, &l.x_u.values).unwrap();
            assert!((v - l.v_new).abs() < 1e-10);
            assert!(v >= sp.v1 && v <= sp.v2);
        }
        // reproducible
        assert_eq!(lift_batch(&events, &sp, 20).unwrap(), many);
        assert!(lift_batch(&[], &sp, 1).is_err());
    }

    #[test]
    fn manifest_layout() {
        let ev = event(vec![-0.3, -0.1], &RiskFunctional::Max);
        let l = lift_with_level(&ev, -0.05, -0.2).unwrap();
        let mut out = Vec::new();
        write_manifest(&[l], &mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert_eq!(text.lines().next().unwrap(), MANIFEST_HEADER);
        assert_eq!(text.lines().nth(1).unwrap(), "0,0,-0.1,-0.05,0.5");
    }

    proptest! {
        #[test]
        fn postprocess_map_is_increasing_and_continuous(s in 0.05f64..3.0, u in -0.9f64..-0.05, a in -1.0f64..0.0, b in -1.0f64..0.0) {
            prop_assume!(s * u > -1.0);
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            prop_assume!(lo < hi);
            prop_assert!(postprocess_map(lo, s, u) < postprocess_map(hi, s, u));
            prop_assert!((postprocess_map(-1.0, s, u) + 1.0).abs() <= 1e-12);
            prop_assert!((postprocess_map(u, s, u) - s * u).abs() <= 1e-12);
            let y = postprocess_map(a, s, u);
            prop_assert!((-1.0..0.0).contains(&y));
        }

        #[test]
        fn lifted_profile_is_preserved(vals in prop::collection::vec(-1.0f64..-1e-6, 2..30), v_frac in 0.2f64..1.5) {
            let ev = event(vals, &RiskFunctional::Max);
            let u_marg = -0.3;
            let v_new = ev.v * v_frac;
            prop_assume!(v_new / ev.v * u_marg > -1.0);
            let l = lift_with_level(&ev, v_new, u_marg).unwrap();
            for (x, y) in ev.x_u.values.iter().zip(&l.x_u.values) {
                if *x > u_marg {
                    prop_assert!((y / x - l.s).abs() <= 1e-12 * l.s);
                }
            }
        }
    }
}
