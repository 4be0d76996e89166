//! Generalized Pareto distribution of threshold excesses.

/// Shapes with `|xi|` below this use the exponential limit.
pub const XI_ZERO: f64 = 1e-8;

/// `P(Y > y) = (1 + xi*y/sigma)_+^(-1/xi)`, or `exp(-y/sigma)` when `xi == 0`.
pub fn gpd_survival(y: f64, sigma: f64, xi: f64) -> f64 {
    if y <= 0.0 {
        return 1.0;
    }
    if xi.abs() < XI_ZERO {
        return (-y / sigma).exp();
    }
    let t = xi * y / sigma;
    if t <= -1.0 {
        return 0.0;
    }
    (-t.ln_1p() / xi).exp()
}

/// `1 - P(Y > y)`, computed without cancellation for small `y`.
pub fn gpd_cdf(y: f64, sigma: f64, xi: f64) -> f64 {
    if y <= 0.0 {
        return 0.0;
    }
    if xi.abs() < XI_ZERO {
        return -(-y / sigma).exp_m1();
    }
    let t = xi * y / sigma;
    if t <= -1.0 {
        return 1.0;
    }
    -(-t.ln_1p() / xi).exp_m1()
}

pub fn gpd_density(y: f64, sigma: f64, xi: f64) -> f64 {
    if y < 0.0 {
        return 0.0;
    }
    if xi.abs() < XI_ZERO {
        return (-y / sigma).exp() / sigma;
    }
    let t = xi * y / sigma;
    if t <= -1.0 {
        return 0.0;
    }
    (-(1.0 / xi + 1.0) * t.ln_1p()).exp() / sigma
}

pub fn gpd_log_density(y: f64, sigma: f64, xi: f64) -> f64 {
    if y < 0.0 || sigma <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if xi.abs() < XI_ZERO {
        return -sigma.ln() - y / sigma;
    }
    let t = xi * y / sigma;
    if t <= -1.0 {
        return f64::NEG_INFINITY;
    }
    -sigma.ln() - (1.0 / xi + 1.0) * t.ln_1p()
}

/// Excess `y` with `P(Y > y) = q`, for `q` in `(0, 1]`.
pub fn gpd_inverse_survival(q: f64, sigma: f64, xi: f64) -> f64 {
    if xi.abs() < XI_ZERO {
        -sigma * q.ln()
    } else {
        sigma / xi * ((-xi * q.ln()).exp_m1())
    }
}

/// Excess `y` with `P(Y <= y) = p`, for `p` in `[0, 1)`.
pub fn gpd_quantile(p: f64, sigma: f64, xi: f64) -> f64 {
    let log_q = (-p).ln_1p();
    if xi.abs() < XI_ZERO {
        -sigma * log_q
    } else {
        sigma / xi * (-xi * log_q).exp_m1()
    }
}

/// Finite upper endpoint of the excess distribution when `xi < 0`.
pub fn gpd_upper_endpoint(sigma: f64, xi: f64) -> Option<f64> {
    (xi <= -XI_ZERO).then(|| -sigma / xi)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cdf_and_quantile() {
        for &(sigma, xi) in &[(1.0, 0.0), (2.0, 0.4), (0.5, -0.3)] {
            for &y in &[1e-9, 0.1, 0.7, 1.5] {
                assert!((gpd_cdf(y, sigma, xi) + gpd_survival(y, sigma, xi) - 1.0).abs() < 1e-15);
                let p = gpd_cdf(y, sigma, xi);
                assert!((gpd_quantile(p, sigma, xi) - y).abs() < 1e-12 * (1.0 + y));
            }
        }
        assert_eq!(gpd_cdf(-1.0, 1.0, 0.2), 0.0);
        assert_eq!(gpd_cdf(10.0, 1.0, -0.5), 1.0);
        assert_eq!(gpd_quantile(0.0, 1.0, 0.2), 0.0);
    }

    #[test]
    fn survival_reference_values() {
        assert_eq!(gpd_survival(0.0, 1.0, 0.5), 1.0);
        assert!((gpd_survival(1.0, 1.0, 0.0) - (-1.0f64).exp()).abs() < 1e-15);
        assert!((gpd_survival(1.0, 1.0, 1.0) - 0.5).abs() < 1e-15);
        assert_eq!(gpd_survival(3.0, 1.0, -0.5), 0.0);
    }

    #[test]
    fn density_zero_beyond_endpoint() {
        assert_eq!(gpd_density(2.0 + 1.0, 1.0, -0.5), 0.0);
        assert_eq!(gpd_upper_endpoint(1.0, -0.5), Some(2.0));
        assert_eq!(gpd_upper_endpoint(1.0, 0.1), None);
    }

    #[test]
    fn inverse_matches_survival() {
        for &xi in &[-0.4, -1e-9, 0.0, 0.2, 1.5] {
            for &q in &[0.9, 0.5, 1e-3, 1e-9] {
                let y = gpd_inverse_survival(q, 2.0, xi);
                assert!((gpd_survival(y, 2.0, xi) / q - 1.0).abs() < 1e-10, "xi={xi} q={q}");
            }
        }
    }

    #[test]
    fn density_is_derivative_of_cdf() {
        let (sigma, xi) = (1.3, 0.25);
        for &y in &[0.1, 1.0, 4.0] {
            let h = 1e-6;
            let fd = (gpd_survival(y - h, sigma, xi) - gpd_survival(y + h, sigma, xi)) / (2.0 * h);
            assert!((fd - gpd_density(y, sigma, xi)).abs() < 1e-8);
        }
    }
}
