#![allow(dead_code)]

use std::time::{Duration, Instant};

use statrs::distribution::{Binomial, ContinuousCDF, Discrete, StudentsT};

/// Survival function of the Kolmogorov distribution.
pub fn kolmogorov_survival(lambda: f64) -> f64 {
    if lambda < 0.2 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=100 {
        let term = (-2.0 * (k * k) as f64 * lambda * lambda).exp();
        sum += if k % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// One-sample KS statistic and asymptotic p-value.
pub fn ks_one_sample(sample: &[f64], cdf: impl Fn(f64) -> f64) -> (f64, f64) {
    let mut s = sample.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len() as f64;
    let d = s
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).max((i + 1) as f64 / n - f)
        })
        .fold(0.0, f64::max);
    let en = n.sqrt();
    (d, kolmogorov_survival((en + 0.12 + 0.11 / en) * d))
}

/// Two-sample KS statistic and asymptotic p-value.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> (f64, f64) {
    let d = ks_distance(a, b);
    let (n, m) = (a.len() as f64, b.len() as f64);
    let en = (n * m / (n + m)).sqrt();
    (d, kolmogorov_survival((en + 0.12 + 0.11 / en) * d))
}

pub fn ks_distance(a: &[f64], b: &[f64]) -> f64 {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (n, m) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j, mut d) = (0usize, 0usize, 0.0f64);
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / n - j as f64 / m).abs());
    }
    d
}

/// Anderson–Darling p-value for a fully specified continuous distribution,
/// given `ln F(x_i)` and `ln (1 - F(x_i))` for each observation.
pub fn anderson_darling_p(mut log_cdf_sf: Vec<(f64, f64)>) -> f64 {
    log_cdf_sf.sort_by(|a, b| a.0.total_cmp(&b.0));
    let n = log_cdf_sf.len();
    let mut s = 0.0;
    for i in 0..n {
        s += (2 * i + 1) as f64 * (log_cdf_sf[i].0 + log_cdf_sf[n - 1 - i].1);
    }
    let a2 = -(n as f64) - s / n as f64;
    1.0 - ad_inf(a2)
}

/// Limiting distribution of the Anderson–Darling statistic (Marsaglia & Marsaglia).
fn ad_inf(z: f64) -> f64 {
    if z <= 0.0 {
        return 0.0;
    }
    if z < 2.0 {
        (-1.2337141 / z).exp() / z.sqrt()
            * (2.00012 + (0.247105 - (0.0649821 - (0.0347962 - (0.011672 - 0.00168691 * z) * z) * z) * z) * z)
    } else {
        (-(1.0776 - (2.30695 - (0.43424 - (0.082433 - (0.008056 - 0.0003146 * z) * z) * z) * z) * z).exp()).exp()
    }
}

/// One-sided paired t-test of `mean(d) > 0`; returns `(mean, p)`.
pub fn paired_t_greater(d: &[f64]) -> (f64, f64) {
    let n = d.len() as f64;
    let mean = d.iter().sum::<f64>() / n;
    let var = d.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let t = mean / (var / n).sqrt();
    let dist = StudentsT::new(0.0, 1.0, n - 1.0).unwrap();
    (mean, 1.0 - dist.cdf(t))
}

/// Central `level` band `[lo, hi]` of Binomial(n, p) counts.
pub fn binomial_band(n: u64, p: f64, level: f64) -> (u64, u64) {
    let dist = Binomial::new(p, n).unwrap();
    let tail = (1.0 - level) / 2.0;
    let (mut acc, mut lo, mut hi) = (0.0, None, n);
    for k in 0..=n {
        acc += dist.pmf(k);
        if lo.is_none() && acc >= tail {
            lo = Some(k);
        }
        if acc >= 1.0 - tail {
            hi = k;
            break;
        }
    }
    (lo.unwrap_or(0), hi)
}

pub fn harmonic(n: usize) -> f64 {
    (1..=n).rev().map(|k| 1.0 / k as f64).sum()
}

pub fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Runs `f`, prints a one-line verdict and fails the test when the check
/// or the time budget is missed.
pub fn criterion(number: u32, name: &str, budget: Duration, f: impl FnOnce() -> (bool, String)) {
    let start = Instant::now();
    let (ok, detail) = f();
    let elapsed = start.elapsed();
    let in_time = elapsed <= budget;
    let verdict = if ok && in_time { "PASS" } else { "FAIL" };
    println!(
        "criterion {number} {name}: {verdict} ({detail}; {:.1}s of {}s budget)",
        elapsed.as_secs_f64(),
        budget.as_secs()
    );
    assert!(ok, "criterion {number} check failed: {detail}");
    assert!(in_time, "criterion {number} over time budget: {elapsed:?} > {budget:?}");
}
