//! Standard normal density, distribution and quantile functions.
//!
//! `cdf` is built on `erfc` so both tails keep full relative precision.

use libm::erfc;
use statrs::function::erf::erfc_inv;
use std::f64::consts::{FRAC_1_SQRT_2, PI, SQRT_2};

/// 1/sqrt(2*pi).
pub const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Standard normal density.
#[inline]
pub fn pdf(x: f64) -> f64 {
    INV_SQRT_2PI * (-0.5 * x * x).exp()
}

/// Standard normal distribution function.
#[inline]
pub fn cdf(x: f64) -> f64 {
    if x.is_nan() {
        return f64::NAN;
    }
    0.5 * erfc(-x * FRAC_1_SQRT_2)
}

/// Upper tail `1 - cdf(x)` without cancellation.
#[inline]
pub fn sf(x: f64) -> f64 {
    cdf(-x)
}

/// Standard normal quantile. Returns `-inf`/`inf` at 0 and 1.
pub fn quantile(p: f64) -> f64 {
    if !(0.0..=1.0).contains(&p) || p.is_nan() {
        return f64::NAN;
    }
    if p == 0.0 {
        return f64::NEG_INFINITY;
    }
    if p == 1.0 {
        return f64::INFINITY;
    }
    let x = -SQRT_2 * erfc_inv(2.0 * p);
    // One Halley step against the accurate cdf.
    let (lo_tail, target) = if p < 0.5 { (cdf(x), p) } else { (sf(x), 1.0 - p) };
    let e = if p < 0.5 { lo_tail - target } else { target - lo_tail };
    let d = pdf(x);
    if d <= 0.0 || !e.is_finite() {
        return x;
    }
    let u = e / d;
    x - u / (1.0 + 0.5 * x * u)
}

/// `ln cdf(x)`, finite for every finite `x`.
///
/// Below -30 the Mills-ratio series is used; `cdf` itself underflows near -38.
pub fn ln_cdf(x: f64) -> f64 {
    if x > -30.0 {
        return cdf(x).ln();
    }
    let z = 1.0 / (x * x);
    let series = 1.0 - z * (1.0 - z * (3.0 - z * (15.0 - 105.0 * z)));
    -0.5 * x * x - 0.5 * (2.0 * PI).ln() - (-x).ln() + series.ln()
}

/// Inverse Mills ratio `pdf(x) / sf(x)`, stable for large positive `x`.
pub fn hazard(x: f64) -> f64 {
    if x < 30.0 {
        return pdf(x) / sf(x);
    }
    let z = 1.0 / (x * x);
    x / (1.0 - z * (1.0 - z * (3.0 - z * (15.0 - 105.0 * z))))
}

/// Binary entropy in nats; `ent(0) = ent(1) = 0`.
pub fn entropy(p: f64) -> f64 {
    let term = |x: f64| if x <= 0.0 { 0.0 } else { -x * x.ln() };
    term(p) + term(1.0 - p)
}
