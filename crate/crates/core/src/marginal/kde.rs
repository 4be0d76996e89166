use statrs::function::erf::erfc;

use super::MarginalError;
use crate::field::quantile_sorted;

/// Kernel contributions beyond this many bandwidths are treated as 0 or 1.
const TRUNCATION: f64 = 10.0;
const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Standard normal CDF, accurate in both tails.
#[inline]
pub(crate) fn normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z * std::f64::consts::FRAC_1_SQRT_2)
}

#[inline]
pub(crate) fn normal_pdf(z: f64) -> f64 {
    INV_SQRT_2PI * (-0.5 * z * z).exp()
}

/// Gaussian kernel density estimate over a sorted sample.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelDensity {
    sample: Vec<f64>,
    bandwidth: f64,
}

impl KernelDensity {
    /// Gaussian kernel with Silverman's rule-of-thumb bandwidth.
    pub fn fit(sample: &[f64]) -> Result<Self, MarginalError> {
        let sorted = sorted_finite(sample)?;
        if sorted.len() < 2 || sorted[0] == sorted[sorted.len() - 1] {
            return Err(MarginalError::ConstantSample);
        }
        let bandwidth = silverman_bandwidth(&sorted);
        if !(bandwidth > 0.0) {
            return Err(MarginalError::ConstantSample);
        }
        Ok(KernelDensity { sample: sorted, bandwidth })
    }

    pub fn with_bandwidth(sample: &[f64], bandwidth: f64) -> Result<Self, MarginalError> {
        if !(bandwidth > 0.0 && bandwidth.is_finite()) {
            return Err(MarginalError::InvalidBandwidth(bandwidth));
        }
        let sample = sorted_finite(sample)?;
        if sample.is_empty() {
            return Err(MarginalError::EmptySample);
        }
        Ok(KernelDensity { sample, bandwidth })
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    /// Sorted observations.
    pub fn sample(&self) -> &[f64] {
        &self.sample
    }

    fn window(&self, x: f64) -> (usize, usize) {
        let reach = TRUNCATION * self.bandwidth;
        let lo = self.sample.partition_point(|&s| s < x - reach);
        let hi = self.sample.partition_point(|&s| s <= x + reach);
        (lo, hi)
    }

    pub fn density(&self, x: f64) -> f64 {
        let (lo, hi) = self.window(x);
        let h = self.bandwidth;
        let sum: f64 = self.sample[lo..hi].iter().map(|&s| normal_pdf((x - s) / h)).sum();
        sum / (self.sample.len() as f64 * h)
    }

    pub fn cdf(&self, x: f64) -> f64 {
        let (lo, hi) = self.window(x);
        let h = self.bandwidth;
        let sum: f64 = self.sample[lo..hi].iter().map(|&s| normal_cdf((x - s) / h)).sum();
        (lo as f64 + sum) / self.sample.len() as f64
    }

    /// `1 - cdf(x)`, summed directly so that small tail masses keep precision.
    pub fn survival(&self, x: f64) -> f64 {
        let (lo, hi) = self.window(x);
        let h = self.bandwidth;
        let sum: f64 = self.sample[lo..hi].iter().map(|&s| normal_cdf((s - x) / h)).sum();
        ((self.sample.len() - hi) as f64 + sum) / self.sample.len() as f64
    }

    /// `cdf(x)`, or `survival(x)` when `upper`, together with `density(x)`,
    /// from a single pass over the kernel window.
    pub(crate) fn mass_and_density(&self, x: f64, upper: bool) -> (f64, f64) {
        let (lo, hi) = self.window(x);
        let h = self.bandwidth;
        let (mut mass, mut dens) = (0.0, 0.0);
        for &s in &self.sample[lo..hi] {
            let z = (x - s) / h;
            mass += normal_cdf(if upper { -z } else { z });
            dens += normal_pdf(z);
        }
        let n = self.sample.len();
        let outside = if upper { n - hi } else { lo };
        ((outside as f64 + mass) / n as f64, dens / (n as f64 * h))
    }

    /// Lower end of the default inversion bracket.
    pub fn lower_bracket(&self) -> f64 {
        self.sample[0] - TRUNCATION * self.bandwidth
    }

    pub fn upper_bracket(&self) -> f64 {
        self.sample[self.sample.len() - 1] + TRUNCATION * self.bandwidth
    }

    /// Threshold `u` with kernel mass `p_u` above it.
    pub fn threshold_for_exceedance(&self, p_u: f64) -> Result<f64, MarginalError> {
        if !(p_u > 0.0 && p_u < 1.0) {
            return Err(MarginalError::InvalidProbability(p_u));
        }
        // survival is decreasing: > p_u at lo, < p_u at hi.
        let (mut lo, mut hi) = (self.lower_bracket(), self.upper_bracket());
        for _ in 0..2000 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if self.survival(mid) > p_u {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let (slo, shi) = (self.survival(lo), self.survival(hi));
        Ok(if (slo - p_u).abs() <= (shi - p_u).abs() { lo } else { hi })
    }
}

pub fn silverman_bandwidth(sorted: &[f64]) -> f64 {
    let n = sorted.len() as f64;
    let mean = sorted.iter().sum::<f64>() / n;
    let sd = (sorted.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    let iqr = quantile_sorted(sorted, 0.75) - quantile_sorted(sorted, 0.25);
    let spread = if iqr > 0.0 { sd.min(iqr / 1.34) } else { sd };
    0.9 * spread * n.powf(-0.2)
}

fn sorted_finite(sample: &[f64]) -> Result<Vec<f64>, MarginalError> {
    if sample.iter().any(|v| !v.is_finite()) {
        return Err(MarginalError::NonFiniteSample);
    }
    let mut sorted = sample.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(sorted)
}
