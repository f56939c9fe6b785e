//! Standard normal helpers and inverse-CDF sampling of truncated normals.

use rand::{Rng, RngCore};
use libm::erfc;
use statrs::function::erf::erfc_inv;

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

pub fn pdf(z: f64) -> f64 {
    INV_SQRT_2PI * (-0.5 * z * z).exp()
}

pub fn cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

pub fn quantile(u: f64) -> f64 {
    -std::f64::consts::SQRT_2 * erfc_inv(2.0 * u)
}

/// `Phi(b) - Phi(a)` for `a <= b`, evaluated in whichever tail keeps precision.
pub fn interval_mass(a: f64, b: f64) -> f64 {
    if a > 0.0 {
        cdf(-a) - cdf(-b)
    } else {
        cdf(b) - cdf(a)
    }
}

/// Draws a standard normal conditioned on `[a, b]`.
pub fn sample_truncated(a: f64, b: f64, rng: &mut dyn RngCore) -> f64 {
    let u: f64 = rng.random();
    let z = if a > 0.0 {
        let lo = cdf(-b);
        let hi = cdf(-a);
        -quantile(lo + u * (hi - lo))
    } else {
        let lo = cdf(a);
        let hi = cdf(b);
        quantile(lo + u * (hi - lo))
    };
    z.clamp(a, b)
}
