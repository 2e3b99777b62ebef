use std::f64::consts::PI;

/// Residuals beyond this many standard deviations underflow anyway.
const CUTOFF_SIGMAS: f64 = 38.0;

/// Gaussian range likelihood `N(z; expected, sigma^2)`.
#[inline]
pub fn range_likelihood(z: f64, expected: f64, sigma: f64) -> f64 {
    let r = (z - expected) / sigma;
    if r.abs() > CUTOFF_SIGMAS {
        return 0.0;
    }
    (-0.5 * r * r).exp() / (sigma * (2.0 * PI).sqrt())
}
