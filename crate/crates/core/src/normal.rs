//! Standard normal helpers.

use statrs::function::erf::erfc;

const FRAC_1_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

pub fn pdf(z: f64) -> f64 {
    FRAC_1_SQRT_2PI * (-0.5 * z * z).exp()
}

pub fn cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

/// Upper tail `1 - cdf(z)` without cancellation for large `z`.
pub fn sf(z: f64) -> f64 {
    0.5 * erfc(z / std::f64::consts::SQRT_2)
}

/// CDF of `N(loc, scale²)` truncated to `[lower, upper]`.
pub fn truncated_cdf(x: f64, loc: f64, scale: f64, lower: f64, upper: f64) -> f64 {
    if x <= lower {
        return 0.0;
    }
    if x >= upper {
        return 1.0;
    }
    let a = cdf((lower - loc) / scale);
    let b = cdf((upper - loc) / scale);
    ((cdf((x - loc) / scale) - a) / (b - a)).clamp(0.0, 1.0)
}
