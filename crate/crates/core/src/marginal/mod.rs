//! Spliced univariate model: Gaussian-kernel bulk below a threshold `u`,
//! generalized Pareto tail above it, with the GPD scale chosen so that the
//! density is continuous at `u`.
//!
//! Three scales are used throughout the crate: the original data scale, the
//! uniform scale `x_U = F(x) - 1` on `[-1, 0]`, and the standard Pareto
//! scale `x_P = 1 / (1 - F(x)) = -1 / x_U`.

mod gpd;
mod kde;
mod shape;

use std::io::Write;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use thiserror::Error;

pub use gpd::{
    gpd_cdf, gpd_density, gpd_inverse_survival, gpd_log_density, gpd_quantile, gpd_survival, gpd_upper_endpoint, XI_ZERO,
};
pub use kde::{silverman_bandwidth, KernelDensity};
pub use shape::{estimate_shape, ShapeEstimator, MIN_EXCEEDANCES};

use crate::field::{quantile_sorted, Grid, GridStack};

#[derive(Debug, Error)]
pub enum MarginalError {
    #[error("probability {0} outside (0, 1)")]
    InvalidProbability(f64),
    #[error("sample has zero spread; kernel bandwidth would be zero")]
    ConstantSample,
    #[error("empty sample")]
    EmptySample,
    #[error("sample contains non-finite values")]
    NonFiniteSample,
    #[error("invalid bandwidth {0}")]
    InvalidBandwidth(f64),
    #[error("{found} exceedances, at least {required} required")]
    TooFewExceedances { found: usize, required: usize },
    #[error("all exceedances are equal")]
    DegenerateExceedances,
    #[error("excesses must be positive and finite")]
    InvalidExcess,
    #[error("log-based estimator needs a positive threshold, got {0}")]
    NonPositiveThreshold(f64),
    #[error("likelihood maximization did not converge")]
    NotConverged,
    #[error("bulk density vanishes at threshold {0}")]
    ZeroDensity(f64),
    #[error("uniform-scale value {0} outside (-1, 0)")]
    OutOfDomain(f64),
    #[error("expected {expected} per-cell models, got {found}")]
    ModelCount { expected: usize, found: usize },
    #[error("cell {cell}: {source}")]
    Cell { cell: usize, source: Box<MarginalError> },
}

/// GPD tail above threshold `u` carrying exceedance probability `p_u`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GpdTail {
    pub u: f64,
    pub sigma: f64,
    pub xi: f64,
    pub p_u: f64,
}

impl GpdTail {
    /// Upper endpoint of the data distribution, if finite.
    pub fn upper_endpoint(&self) -> Option<f64> {
        gpd_upper_endpoint(self.sigma, self.xi).map(|e| self.u + e)
    }
}

/// `sigma_u = p_u / f(u)`, the scale that makes the spliced density continuous.
pub fn sigma_from_continuity(kd: &KernelDensity, u: f64, p_u: f64) -> Result<f64, MarginalError> {
    sigma_from_density(kd.density(u), u, p_u)
}

fn sigma_from_density(density_at_u: f64, u: f64, p_u: f64) -> Result<f64, MarginalError> {
    if !(density_at_u > 0.0) {
        return Err(MarginalError::ZeroDensity(u));
    }
    Ok(p_u / density_at_u)
}

/// Threshold `u` with kernel mass `p_u` above it.
pub fn threshold_from_pu(kd: &KernelDensity, p_u: f64) -> Result<f64, MarginalError> {
    kd.threshold_for_exceedance(p_u)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MarginalModel {
    bulk: KernelDensity,
    tail: GpdTail,
    /// Kernel cdf and survival at `u`, cached for bulk inversion.
    bulk_at_u: (f64, f64),
}

impl MarginalModel {
    /// Assemble a model from parts. The caller is responsible for `u`,
    /// `sigma` and `p_u` being mutually consistent with `bulk`.
    pub fn from_parts(bulk: KernelDensity, tail: GpdTail) -> Result<Self, MarginalError> {
        if !(tail.p_u > 0.0 && tail.p_u < 1.0) {
            return Err(MarginalError::InvalidProbability(tail.p_u));
        }
        if !(tail.sigma > 0.0) || !tail.xi.is_finite() || !tail.u.is_finite() {
            return Err(MarginalError::NotConverged);
        }
        let bulk_at_u = (bulk.cdf(tail.u), bulk.survival(tail.u));
        Ok(MarginalModel { bulk, tail, bulk_at_u })
    }

    pub fn bulk(&self) -> &KernelDensity {
        &self.bulk
    }

    pub fn tail(&self) -> &GpdTail {
        &self.tail
    }

    pub fn density(&self, x: f64) -> f64 {
        let t = &self.tail;
        if x <= t.u {
            self.bulk.density(x)
        } else {
            t.p_u * gpd_density(x - t.u, t.sigma, t.xi)
        }
    }

    pub fn cdf(&self, x: f64) -> f64 {
        let t = &self.tail;
        if x <= t.u {
            self.bulk.cdf(x)
        } else {
            1.0 - t.p_u * gpd_survival(x - t.u, t.sigma, t.xi)
        }
    }

    /// `1 - cdf(x)` without cancellation in the upper tail.
    pub fn survival(&self, x: f64) -> f64 {
        let t = &self.tail;
        if x <= t.u {
            self.bulk.survival(x)
        } else {
            t.p_u * gpd_survival(x - t.u, t.sigma, t.xi)
        }
    }

    pub fn quantile(&self, p: f64) -> Result<f64, MarginalError> {
        if !(p > 0.0 && p < 1.0) {
            return Err(MarginalError::InvalidProbability(p));
        }
        let q = 1.0 - p;
        if q <= self.tail.p_u {
            return Ok(self.tail_inverse(q));
        }
        Ok(if p <= 0.5 { self.invert_bulk(p, false) } else { self.invert_bulk(q, true) })
    }

    /// Value `x` with `survival(x) = q`.
    pub fn inverse_survival(&self, q: f64) -> Result<f64, MarginalError> {
        if !(q > 0.0 && q < 1.0) {
            return Err(MarginalError::InvalidProbability(q));
        }
        if q <= self.tail.p_u {
            return Ok(self.tail_inverse(q));
        }
        // invert whichever of cdf/survival is the smaller, better resolved, quantity
        Ok(if q >= 0.5 { self.invert_bulk(1.0 - q, false) } else { self.invert_bulk(q, true) })
    }

    fn tail_inverse(&self, q: f64) -> f64 {
        let t = &self.tail;
        t.u + gpd_inverse_survival(q / t.p_u, t.sigma, t.xi)
    }

    /// Safeguarded Newton iteration on the monotone kernel CDF (or survival)
    /// inside a bisection bracket ending at `u`.
    fn invert_bulk(&self, target: f64, upper: bool) -> f64 {
        let u = self.tail.u;
        let eval = |x: f64| {
            let (mass, dens) = self.bulk.mass_and_density(x, upper);
            (mass - target, dens)
        };
        // g is increasing in x for the cdf form, decreasing for the survival form
        let sign = if upper { -1.0 } else { 1.0 };
        let at_u = if upper { self.bulk_at_u.1 } else { self.bulk_at_u.0 };
        if sign * (at_u - target) <= 0.0 {
            return u;
        }
        let mut lo = self.bulk.lower_bracket();
        let width = (u - lo).max(self.bulk.bandwidth());
        let mut expand = 0;
        while sign * eval(lo).0 > 0.0 && expand < 64 {
            lo -= width * f64::powi(2.0, expand);
            expand += 1;
        }
        let mut hi = u;
        // the empirical quantile is usually a close starting point
        let guess = quantile_sorted(self.bulk.sample(), if upper { 1.0 - target } else { target });
        let mut x = if guess > lo && guess < hi { guess } else { 0.5 * (lo + hi) };
        for _ in 0..200 {
            let (g, dens) = eval(x);
            if g == 0.0 {
                return x;
            }
            if sign * g < 0.0 {
                lo = x;
            } else {
                hi = x;
            }
            let d = sign * dens;
            let newton = if d != 0.0 { x - g / d } else { f64::NAN };
            let next = if newton > lo && newton < hi { newton } else { 0.5 * (lo + hi) };
            if (next - x).abs() <= 1e-14 * (1.0 + x.abs()) || hi - lo <= 1e-14 * (1.0 + x.abs()) {
                return next;
            }
            x = next;
        }
        x
    }

    /// `F(x) - 1` on `[-1, 0]`.
    pub fn to_uniform(&self, x: f64) -> f64 {
        -self.survival(x)
    }

    /// `1 / (1 - F(x))`.
    pub fn to_pareto(&self, x: f64) -> f64 {
        1.0 / self.survival(x)
    }

    /// Inverse of [`to_uniform`](Self::to_uniform) for `x_u` in `(-1, 0)`.
    pub fn from_uniform(&self, x_u: f64) -> Result<f64, MarginalError> {
        if !(x_u > -1.0 && x_u < 0.0) {
            return Err(MarginalError::OutOfDomain(x_u));
        }
        self.inverse_survival(-x_u)
    }

    /// Draw from the spliced distribution: GPD with probability `p_u`,
    /// otherwise the kernel mixture conditioned on `x <= u` by rejection.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let t = &self.tail;
        if rng.random::<f64>() < t.p_u {
            let q = 1.0 - rng.random::<f64>();
            return t.u + gpd_inverse_survival(q, t.sigma, t.xi);
        }
        let s = self.bulk.sample();
        loop {
            let z: f64 = rng.sample(StandardNormal);
            let x = s[rng.random_range(0..s.len())] + self.bulk.bandwidth() * z;
            if x <= t.u {
                return x;
            }
        }
    }
}

/// Fit the spliced model: kernel density, threshold at exceedance
/// probability `p_u`, continuity scale, then the tail index from the
/// observed excesses over `u`.
pub fn fit_marginal(sample: &[f64], p_u: f64, method: ShapeEstimator) -> Result<MarginalModel, MarginalError> {
    if !(p_u > 0.0 && p_u < 1.0) {
        return Err(MarginalError::InvalidProbability(p_u));
    }
    let bulk = KernelDensity::fit(sample)?;
    let u = bulk.threshold_for_exceedance(p_u)?;
    let sigma = sigma_from_continuity(&bulk, u, p_u)?;
    let excesses: Vec<f64> = bulk.sample().iter().filter(|&&x| x > u).map(|&x| x - u).collect();
    let xi = estimate_shape(u, &excesses, method)?;
    MarginalModel::from_parts(bulk, GpdTail { u, sigma, xi, p_u })
}

/// Independent fit per grid cell from that cell's series across replicates.
pub fn fit_per_cell(stack: &GridStack, p_u: f64, method: ShapeEstimator) -> Result<Vec<MarginalModel>, MarginalError> {
    (0..stack.grid().len())
        .into_par_iter()
        .map(|cell| {
            fit_marginal(&stack.cell_series(cell), p_u, method)
                .map_err(|e| MarginalError::Cell { cell, source: Box::new(e) })
        })
        .collect()
}

pub const PARAMS_CSV_HEADER: &str = "cell,row,col,u,sigma,xi,p_u,bandwidth";

pub fn write_params_csv<W: Write>(grid: &Grid, models: &[MarginalModel], w: &mut W) -> std::io::Result<()> {
    writeln!(w, "{PARAMS_CSV_HEADER}")?;
    for (cell, m) in models.iter().enumerate() {
        let (row, col) = grid.row_col(cell);
        let t = m.tail();
        writeln!(w, "{cell},{row},{col},{},{},{},{},{}", t.u, t.sigma, t.xi, t.p_u, m.bulk().bandwidth())?;
    }
    Ok(())
}
