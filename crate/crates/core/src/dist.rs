//! Reference distributions used by the tests and diagnostics.

use statrs::distribution::{ChiSquared, ContinuousCDF};

fn chi2(df: usize) -> ChiSquared {
    ChiSquared::new(df as f64).expect("positive degrees of freedom")
}

/// Upper-tail probability of chi-square with `df` degrees of freedom.
pub fn chi2_sf(df: usize, x: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    if df == 2 {
        return (-x / 2.0).exp();
    }
    chi2(df).sf(x).clamp(0.0, 1.0)
}

pub fn chi2_cdf(df: usize, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if df == 2 {
        return -(-x / 2.0).exp_m1();
    }
    chi2(df).cdf(x).clamp(0.0, 1.0)
}

/// `p`-quantile of chi-square with `df` degrees of freedom.
pub fn chi2_quantile(df: usize, p: f64) -> f64 {
    if df == 2 {
        return -2.0 * (-p).ln_1p();
    }
    chi2(df).inverse_cdf(p)
}

/// Bias correction for the truncated isotropic-set iteration:
/// `(1/r) * int_0^q t^{r/2} e^{-t/2} / (2^{r/2} Gamma(r/2)) dt` with
/// `q` the `1 - alpha` quantile of chi-square(r).
///
/// The integrand is `r` times the chi-square(r + 2) density, so the value
/// is that distribution's CDF at `q`.
pub fn correction_constant(alpha: f64, r: usize) -> f64 {
    assert!(alpha > 0.0 && alpha < 1.0, "alpha must lie in (0, 1)");
    let q = chi2_quantile(r, 1.0 - alpha);
    chi2_cdf(r + 2, q)
}

/// `P(Binomial(m, t) >= k)`: the CDF at `t` of the `k`-th smallest of `m`
/// independent uniforms. For `m = 7, k = 4` this is the Beta(4, 4) CDF.
pub fn order_statistic_cdf(m: usize, k: usize, t: f64) -> f64 {
    if t <= 0.0 {
        return 0.0;
    }
    if t >= 1.0 {
        return 1.0;
    }
    let mut binom = 1.0f64;
    let mut total = 0.0;
    for j in 0..=m {
        if j > 0 {
            binom = binom * (m - j + 1) as f64 / j as f64;
        }
        if j >= k {
            total += binom * t.powi(j as i32) * (1.0 - t).powi((m - j) as i32);
        }
    }
    total.clamp(0.0, 1.0)
}
