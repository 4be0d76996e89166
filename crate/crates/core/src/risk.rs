//! Homogeneous summary functionals and the uniform-scale summary variable
//! `V = -1 / r(-1 / x_U)`.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rayon::prelude::*;
use thiserror::Error;

use crate::field::{quantile_sorted, GridStack};

/// Uniform-scale values are clamped into `[-1 + CLAMP, -CLAMP]` before
/// inversion to the Pareto scale.
pub const CLAMP: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum RiskError {
    #[error("field is empty")]
    Empty,
    #[error("value {value} at cell {cell} outside the uniform scale [-1, 0]")]
    OutOfDomain { cell: usize, value: f64 },
    #[error("site {site} outside field of {len} cells")]
    SiteOutOfRange { site: usize, len: usize },
    #[error("order statistic {k} outside 1..={len}")]
    RankOutOfRange { k: usize, len: usize },
    #[error("threshold must be negative, got {0}")]
    NonNegativeThreshold(f64),
    #[error("extremal coefficient must be positive, got {0}")]
    NonPositiveTheta(f64),
    #[error("return period must be at least 1, got {0}")]
    InvalidPeriod(f64),
    #[error("invalid risk functional '{0}'")]
    Parse(String),
}

/// Positively homogeneous summary `r(a x) = a r(x)`, `a > 0`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RiskFunctional {
    Max,
    Min,
    Mean,
    /// Midpoint of the two central values for even counts.
    Median,
    /// Value at a fixed row-major cell.
    Site(usize),
    /// `k`-th smallest value, 1-based.
    OrderStatistic(usize),
}

impl RiskFunctional {
    /// Evaluate on nonnegative (Pareto-scale) values.
    pub fn evaluate(&self, values: &[f64]) -> Result<f64, RiskError> {
        if values.is_empty() {
            return Err(RiskError::Empty);
        }
        let n = values.len();
        Ok(match *self {
            RiskFunctional::Max => values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            RiskFunctional::Min => values.iter().copied().fold(f64::INFINITY, f64::min),
            RiskFunctional::Mean => values.iter().sum::<f64>() / n as f64,
            RiskFunctional::Median => {
                let mut v = values.to_vec();
                let mid = n / 2;
                let (_, &mut upper, _) = v.select_nth_unstable_by(mid, f64::total_cmp);
                if n % 2 == 1 {
                    upper
                } else {
                    let lower = v[..mid].iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    0.5 * (lower + upper)
                }
            }
            RiskFunctional::Site(i) => *values.get(i).ok_or(RiskError::SiteOutOfRange { site: i, len: n })?,
            RiskFunctional::OrderStatistic(k) => {
                if k == 0 || k > n {
                    return Err(RiskError::RankOutOfRange { k, len: n });
                }
                let mut v = values.to_vec();
                *v.select_nth_unstable_by(k - 1, f64::total_cmp).1
            }
        })
    }

    /// Whether `r` commutes with increasing maps of the cell values.
    pub fn is_order_statistic(&self, n: usize) -> bool {
        match self {
            RiskFunctional::Mean => false,
            RiskFunctional::Median => n % 2 == 1,
            _ => true,
        }
    }
}

impl fmt::Display for RiskFunctional {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RiskFunctional::Max => write!(f, "max"),
            RiskFunctional::Min => write!(f, "min"),
            RiskFunctional::Mean => write!(f, "mean"),
            RiskFunctional::Median => write!(f, "median"),
            RiskFunctional::Site(i) => write!(f, "site:{i}"),
            RiskFunctional::OrderStatistic(k) => write!(f, "order:{k}"),
        }
    }
}

impl FromStr for RiskFunctional {
    type Err = RiskError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parse_idx = |v: &str| v.parse::<usize>().map_err(|_| RiskError::Parse(s.to_string()));
        match s.split_once(':') {
            None => match s {
                "max" => Ok(Self::Max),
                "min" => Ok(Self::Min),
                "mean" => Ok(Self::Mean),
                "median" => Ok(Self::Median),
                _ => Err(RiskError::Parse(s.to_string())),
            },
            Some(("site", v)) => Ok(Self::Site(parse_idx(v)?)),
            Some(("order", v)) => Ok(Self::OrderStatistic(parse_idx(v)?)),
            Some(_) => Err(RiskError::Parse(s.to_string())),
        }
    }
}

#[inline]
pub fn clamp_uniform(x: f64) -> f64 {
    x.clamp(-1.0 + CLAMP, -CLAMP)
}

/// Summary value `V = -1 / r(-1 / x_U)` of a uniform-scale field.
pub fn apply_risk(r: &RiskFunctional, x_u: &[f64]) -> Result<f64, RiskError> {
    if x_u.is_empty() {
        return Err(RiskError::Empty);
    }
    let pareto = x_u
        .iter()
        .enumerate()
        .map(|(cell, &x)| {
            if !(-1.0..=0.0).contains(&x) {
                return Err(RiskError::OutOfDomain { cell, value: x });
            }
            Ok(-1.0 / clamp_uniform(x))
        })
        .collect::<Result<Vec<f64>, _>>()?;
    Ok(-1.0 / r.evaluate(&pareto)?)
}

/// One summary value per replicate, in replicate order.
#[derive(Debug, Clone, PartialEq)]
pub struct SummarySeries {
    pub v: Vec<f64>,
}

impl SummarySeries {
    pub fn len(&self) -> usize {
        self.v.len()
    }

    pub fn is_empty(&self) -> bool {
        self.v.is_empty()
    }

    /// Type-7 empirical quantile of the series.
    pub fn quantile(&self, p: f64) -> f64 {
        let mut s = self.v.clone();
        s.sort_by(f64::total_cmp);
        quantile_sorted(&s, p)
    }

    pub fn write_csv<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        writeln!(w, "replicate,v")?;
        for (j, v) in self.v.iter().enumerate() {
            writeln!(w, "{j},{v}")?;
        }
        Ok(())
    }
}

pub fn summary_series(r: &RiskFunctional, stack: &GridStack) -> Result<SummarySeries, RiskError> {
    let n = stack.grid().len();
    let v = (0..stack.m())
        .into_par_iter()
        .map(|j| apply_risk(r, &stack.values()[j * n..(j + 1) * n]))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(SummarySeries { v })
}

/// Empirical r-extremal coefficient `theta = -count / (u m)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThetaEstimate {
    pub theta: f64,
    pub u: f64,
    pub count: usize,
    pub m: usize,
}

pub fn estimate_theta(series: &SummarySeries, u: f64) -> Result<ThetaEstimate, RiskError> {
    if !(u < 0.0) {
        return Err(RiskError::NonNegativeThreshold(u));
    }
    let m = series.len();
    if m == 0 {
        return Err(RiskError::Empty);
    }
    let count = series.v.iter().filter(|&&v| v > u).count();
    Ok(ThetaEstimate { theta: -(count as f64) / (u * m as f64), u, count, m })
}

/// Default threshold for estimating theta: the 95% quantile of the series.
pub const THETA_QUANTILE: f64 = 0.95;

pub fn estimate_theta_default(series: &SummarySeries) -> Result<ThetaEstimate, RiskError> {
    estimate_theta(series, series.quantile(THETA_QUANTILE))
}

/// How a return period maps to a level on the uniform summary scale.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ReturnLevelConvention {
    /// `u = -1 / (theta T)`, so that `P(V > u) = -theta u = 1 / T`.
    #[default]
    ExtremalCoefficient,
    /// `u = -theta / T`; agrees with the above only when `theta = 1`.
    ThetaOverPeriod,
}

impl FromStr for ReturnLevelConvention {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "extremal-coefficient" => Ok(Self::ExtremalCoefficient),
            "theta-over-period" => Ok(Self::ThetaOverPeriod),
            other => Err(format!("unknown return-level convention '{other}'")),
        }
    }
}

impl fmt::Display for ReturnLevelConvention {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::ExtremalCoefficient => "extremal-coefficient",
            Self::ThetaOverPeriod => "theta-over-period",
        })
    }
}

pub fn return_level(theta: f64, period_steps: f64) -> Result<f64, RiskError> {
    return_level_with(theta, period_steps, ReturnLevelConvention::ExtremalCoefficient)
}

pub fn return_level_with(theta: f64, period_steps: f64, convention: ReturnLevelConvention) -> Result<f64, RiskError> {
    if !(theta > 0.0 && theta.is_finite()) {
        return Err(RiskError::NonPositiveTheta(theta));
    }
    if !(period_steps >= 1.0) {
        return Err(RiskError::InvalidPeriod(period_steps));
    }
    Ok(match convention {
        ReturnLevelConvention::ExtremalCoefficient => -1.0 / (theta * period_steps),
        ReturnLevelConvention::ThetaOverPeriod => -theta / period_steps,
    })
}

/// Inverse of [`return_level`]: period `T = 1 / (-theta u)`.
pub fn return_period(theta: f64, level: f64) -> f64 {
    1.0 / (-theta * level)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::Grid;
    use proptest::prelude::*;

    const X: [f64; 3] = [-0.5, -0.2, -0.1];

    #[test]
    fn median_and_mean_examples() {
        assert!((apply_risk(&RiskFunctional::Median, &X).unwrap() + 0.2).abs() < 1e-15);
        assert!((apply_risk(&RiskFunctional::Mean, &X).unwrap() + 3.0 / 17.0).abs() < 1e-15);
        assert_eq!(apply_risk(&RiskFunctional::Max, &X).unwrap(), -0.1);
        assert_eq!(apply_risk(&RiskFunctional::Min, &X).unwrap(), -0.5);
        assert_eq!(apply_risk(&RiskFunctional::Site(1), &X).unwrap(), -0.2);
        assert_eq!(apply_risk(&RiskFunctional::OrderStatistic(2), &X).unwrap(), -0.2);
    }

    #[test]
    fn even_median_uses_midpoint_on_pareto_scale() {
        // Pareto values {2, 4, 5, 10}: midpoint 4.5
        let v = apply_risk(&RiskFunctional::Median, &[-0.5, -0.25, -0.2, -0.1]).unwrap();
        assert!((v + 1.0 / 4.5).abs() < 1e-15);
    }

    #[test]
    fn errors() {
        assert!(matches!(apply_risk(&RiskFunctional::Max, &[]), Err(RiskError::Empty)));
        assert!(matches!(apply_risk(&RiskFunctional::Site(3), &X), Err(RiskError::SiteOutOfRange { .. })));
        assert!(matches!(apply_risk(&RiskFunctional::OrderStatistic(0), &X), Err(RiskError::RankOutOfRange { .. })));
        assert!(matches!(apply_risk(&RiskFunctional::Max, &[0.2]), Err(RiskError::OutOfDomain { .. })));
        // exact zero is clamped, not rejected
        assert_eq!(apply_risk(&RiskFunctional::Max, &[0.0, -0.5]).unwrap(), -CLAMP);
    }

    #[test]
    fn parse_roundtrip() {
        for r in [
            RiskFunctional::Max,
            RiskFunctional::Min,
            RiskFunctional::Mean,
            RiskFunctional::Median,
            RiskFunctional::Site(7),
            RiskFunctional::OrderStatistic(3),
        ] {
            assert_eq!(r.to_string().parse::<RiskFunctional>().unwrap(), r);
        }
        assert!("sum".parse::<RiskFunctional>().is_err());
    }

    #[test]
    fn series_matches_per_replicate() {
        let g = Grid::unit_square(2, 2).unwrap();
        let reps = [[-0.9, -0.1, -0.5, -0.3], [-0.05, -0.06, -0.07, -0.08], [-0.4; 4]];
        let stack = GridStack::new(g, 3, reps.concat()).unwrap();
        for r in [RiskFunctional::Mean, RiskFunctional::Median, RiskFunctional::Max] {
            let s = summary_series(&r, &stack).unwrap();
            for (j, rep) in reps.iter().enumerate() {
                let pareto: Vec<f64> = rep.iter().map(|x| -1.0 / x).collect();
                let oracle = -1.0 / r.evaluate(&pareto).unwrap();
                assert_eq!(s.v[j], oracle);
            }
            // constant replicate maps to its value
            assert!((s.v[2] + 0.4).abs() < 1e-15);
        }
        let one = summary_series(&RiskFunctional::Mean, &stack.select(&[1]).unwrap()).unwrap();
        assert_eq!(one.v, vec![apply_risk(&RiskFunctional::Mean, &reps[1]).unwrap()]);
    }

    #[test]
    fn theta_examples() {
        let mut v = vec![-0.5; 100];
        v[..5].iter_mut().for_each(|x| *x = -0.01);
        let t = estimate_theta(&SummarySeries { v: v.clone() }, -0.05).unwrap();
        assert!((t.theta - 1.0).abs() < 1e-12);
        assert_eq!(t.count, 5);
        let t = estimate_theta(&SummarySeries { v: vec![-0.5; 10] }, -0.05).unwrap();
        assert_eq!(t.theta, 0.0);
        assert!(estimate_theta(&SummarySeries { v }, 0.0).is_err());
    }

    #[test]
    fn return_levels() {
        assert!((return_level(1.0, 1220.0).unwrap() + 1.0 / 1220.0).abs() < 1e-18);
        assert!((return_level(2.0, 100.0).unwrap() + 0.005).abs() < 1e-18);
        let u = return_level(1.7, 333.0).unwrap();
        assert!((return_period(1.7, u) - 333.0).abs() < 1e-12 * 333.0);
        assert!((return_level_with(2.0, 100.0, ReturnLevelConvention::ThetaOverPeriod).unwrap() + 0.02).abs() < 1e-18);
        assert!(return_level(0.0, 10.0).is_err());
        assert!(return_level(1.0, 0.5).is_err());
    }

    proptest! {
        #[test]
        fn homogeneity(values in prop::collection::vec(1.0f64..1e4, 1..40), a in 1e-3f64..1e3, kind in 0usize..6) {
            let n = values.len();
            let r = [RiskFunctional::Max, RiskFunctional::Min, RiskFunctional::Mean, RiskFunctional::Median,
                     RiskFunctional::Site(n - 1), RiskFunctional::OrderStatistic(1 + n / 3)][kind];
            let base = r.evaluate(&values).unwrap();
            let scaled: Vec<f64> = values.iter().map(|x| a * x).collect();
            prop_assert!((r.evaluate(&scaled).unwrap() - a * base).abs() <= 1e-12 * (a * base).abs());
        }

        #[test]
        fn theta_is_permutation_invariant(mut v in prop::collection::vec(-1.0f64..0.0, 1..80), u in -0.9f64..-0.01) {
            let a = estimate_theta(&SummarySeries { v: v.clone() }, u).unwrap();
            v.reverse();
            let b = estimate_theta(&SummarySeries { v }, u).unwrap();
            prop_assert_eq!(a.theta, b.theta);
            let scaled = a.theta * (-u * a.m as f64);
            prop_assert!((scaled - scaled.round()).abs() < 1e-9);
        }
    }
}
