//! Scalar special functions used across the crate, all in log space where it matters.

use std::f64::consts::LN_2;

/// `ln(sqrt(2π))`.
pub const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

const FRAC_1_SQRT_PI: f64 = 0.564_189_583_547_756_3;

/// Stable `ln Σ exp(xᵢ)`; returns `-∞` for an empty or all `-∞` input.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    let s: f64 = xs.iter().map(|&x| (x - max).exp()).sum();
    max + s.ln()
}

/// `ln(e^a + e^b)`.
pub fn log_add_exp(a: f64, b: f64) -> f64 {
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    if hi == f64::NEG_INFINITY {
        return hi;
    }
    hi + (lo - hi).exp().ln_1p()
}

pub fn log_normal_pdf(x: f64, mean: f64, var: f64) -> f64 {
    let d = x - mean;
    -0.5 * d * d / var - 0.5 * var.ln() - LN_SQRT_2PI
}

pub fn log_laplace_pdf(x: f64, location: f64, diversity: f64) -> f64 {
    -(x - location).abs() / diversity - (2.0 * diversity).ln()
}

pub fn erfc(x: f64) -> f64 {
    libm::erfc(x)
}

pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

/// Scaled complementary error function `exp(x²)·erfc(x)` for `x ≥ 0`.
pub fn erfcx(x: f64) -> f64 {
    debug_assert!(x >= 0.0);
    if x < 25.0 {
        return (x * x).exp() * libm::erfc(x);
    }
    // asymptotic series; terms shrink by ~1/(2x²) ≤ 8e-4
    let t = 1.0 / (2.0 * x * x);
    let mut term = 1.0;
    let mut sum = 1.0;
    for n in 1..8 {
        term *= -((2 * n - 1) as f64) * t;
        sum += term;
    }
    FRAC_1_SQRT_PI / x * sum
}

/// `ln erfc(x)` for any real `x`, accurate in the far right tail.
pub fn ln_erfc(x: f64) -> f64 {
    if x < 0.5 {
        libm::erfc(x).ln()
    } else {
        erfcx(x).ln() - x * x
    }
}

/// `ln cosh(x)` without overflow.
pub fn ln_cosh(x: f64) -> f64 {
    let a = x.abs();
    a + (-2.0 * a).exp().ln_1p() - LN_2
}
