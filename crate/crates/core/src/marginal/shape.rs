//! Tail-index estimators for threshold excesses.

use std::str::FromStr;

use super::gpd::gpd_log_density;
use super::MarginalError;

pub const MIN_EXCEEDANCES: usize = 10;

const XI_MIN: f64 = -0.99;
const XI_MAX: f64 = 3.0;
const GOLDEN: f64 = 0.618_033_988_749_894_9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShapeEstimator {
    /// Dekkers–Einmahl–de Haan moment estimator.
    Moment,
    /// Hill estimator; heavy tails only.
    Hill,
    /// Unconstrained GPD maximum likelihood.
    Ml,
    /// GPD maximum likelihood restricted to `xi <= 0`.
    MlNonPositive,
}

impl ShapeEstimator {
    pub fn as_str(&self) -> &'static str {
        match self {
            ShapeEstimator::Moment => "moment",
            ShapeEstimator::Hill => "hill",
            ShapeEstimator::Ml => "ml",
            ShapeEstimator::MlNonPositive => "ml-nonpositive",
        }
    }
}

impl FromStr for ShapeEstimator {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "moment" => Ok(Self::Moment),
            "hill" => Ok(Self::Hill),
            "ml" => Ok(Self::Ml),
            "ml-nonpositive" => Ok(Self::MlNonPositive),
            other => Err(format!("unknown shape estimator '{other}'")),
        }
    }
}

/// Estimate the GPD shape from excesses `y = x - threshold > 0`.
///
/// The moment and Hill estimators work on log-excess ratios
/// `log(x / threshold)` and therefore need a positive threshold.
pub fn estimate_shape(threshold: f64, excesses: &[f64], method: ShapeEstimator) -> Result<f64, MarginalError> {
    if excesses.len() < MIN_EXCEEDANCES {
        return Err(MarginalError::TooFewExceedances { found: excesses.len(), required: MIN_EXCEEDANCES });
    }
    if excesses.iter().any(|y| !(y.is_finite() && *y > 0.0)) {
        return Err(MarginalError::InvalidExcess);
    }
    let first = excesses[0];
    if excesses.iter().all(|&y| y == first) {
        return Err(MarginalError::DegenerateExceedances);
    }
    match method {
        ShapeEstimator::Moment | ShapeEstimator::Hill => {
            if !(threshold > 0.0) {
                return Err(MarginalError::NonPositiveThreshold(threshold));
            }
            let (m1, m2) = log_moments(threshold, excesses);
            if method == ShapeEstimator::Hill {
                return Ok(m1);
            }
            let denom = 1.0 - m1 * m1 / m2;
            if !(denom > 0.0) {
                return Err(MarginalError::DegenerateExceedances);
            }
            Ok(m1 + 1.0 - 0.5 / denom)
        }
        ShapeEstimator::Ml => ml_shape(excesses, XI_MAX),
        ShapeEstimator::MlNonPositive => ml_shape(excesses, 0.0),
    }
}

fn log_moments(threshold: f64, excesses: &[f64]) -> (f64, f64) {
    let k = excesses.len() as f64;
    let (s1, s2) = excesses.iter().fold((0.0, 0.0), |(a, b), &y| {
        let l = (y / threshold).ln_1p();
        (a + l, b + l * l)
    });
    (s1 / k, s2 / k)
}

fn log_likelihood(excesses: &[f64], sigma: f64, xi: f64) -> f64 {
    let mut ll = 0.0;
    for &y in excesses {
        ll += gpd_log_density(y, sigma, xi);
        if ll == f64::NEG_INFINITY {
            break;
        }
    }
    ll
}

/// Golden-section maximization of a unimodal function on `[a, b]`.
fn golden_max(mut a: f64, mut b: f64, f: impl Fn(f64) -> f64, iters: usize) -> (f64, f64) {
    let mut c = b - GOLDEN * (b - a);
    let mut d = a + GOLDEN * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..iters {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - GOLDEN * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + GOLDEN * (b - a);
            fd = f(d);
        }
    }
    if fc >= fd { (c, fc) } else { (d, fd) }
}

/// Profile log-likelihood: maximize over sigma for fixed xi.
fn profile(excesses: &[f64], xi: f64, ymax: f64, mean: f64) -> (f64, f64) {
    // support requires sigma > -xi * ymax when xi < 0
    let lower = if xi < 0.0 { (-xi * ymax).max(mean * 1e-6) * (1.0 + 1e-9) } else { mean * 1e-6 };
    let upper = (mean * 1e3).max(lower * 10.0);
    let (log_sigma, ll) = golden_max(lower.ln(), upper.ln(), |ls| log_likelihood(excesses, ls.exp(), xi), 90);
    (log_sigma.exp(), ll)
}

fn ml_shape(excesses: &[f64], xi_max: f64) -> Result<f64, MarginalError> {
    let ymax = excesses.iter().copied().fold(0.0, f64::max);
    let mean = excesses.iter().sum::<f64>() / excesses.len() as f64;
    let prof = |xi: f64| profile(excesses, xi, ymax, mean).1;

    // coarse grid guards against local optima, golden section refines
    let steps = 64;
    let grid_step = (xi_max - XI_MIN) / steps as f64;
    let (best_i, best_ll) = (0..=steps)
        .map(|i| (i, prof(XI_MIN + i as f64 * grid_step)))
        .fold((0, f64::NEG_INFINITY), |acc, (i, ll)| if ll > acc.1 { (i, ll) } else { acc });
    if !best_ll.is_finite() {
        return Err(MarginalError::NotConverged);
    }
    let a = (XI_MIN + (best_i as f64 - 1.0) * grid_step).max(XI_MIN);
    let b = (XI_MIN + (best_i as f64 + 1.0) * grid_step).min(xi_max);
    let (xi, ll) = golden_max(a, b, prof, 60);
    if !ll.is_finite() {
        return Err(MarginalError::NotConverged);
    }
    // Snap to an active upper bound so the constrained estimate is exactly 0.
    if xi_max == 0.0 && (prof(0.0) >= ll || prof(0.0) >= prof(-1e-4)) {
        return Ok(0.0);
    }
    Ok(xi)
}
