//! Scalar helpers over `libm` plus the dense-vector arithmetic used everywhere.
//!
//! `exprel` and its two derivatives are the function `f(x) = (e^x - 1)/x`
//! that carries every removable singularity in the variance formulas.

use alloc::vec::Vec;

#[inline]
pub fn exp(x: f64) -> f64 {
    libm::exp(x)
}

#[inline]
pub fn expm1(x: f64) -> f64 {
    libm::expm1(x)
}

#[inline]
pub fn ln(x: f64) -> f64 {
    libm::log(x)
}

#[inline]
pub fn ln_1p(x: f64) -> f64 {
    libm::log1p(x)
}

#[inline]
pub fn sqrt(x: f64) -> f64 {
    libm::sqrt(x)
}

pub const PI: f64 = core::f64::consts::PI;
pub const E: f64 = core::f64::consts::E;

/// Half-width of the band around a removable singularity in which the
/// second-order series replaces the closed form.
pub const SINGULAR_BAND: f64 = 1e-8;

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm_sq(a: &[f64]) -> f64 {
    dot(a, a)
}

pub fn norm(a: &[f64]) -> f64 {
    sqrt(norm_sq(a))
}

pub fn scaled(a: &[f64], k: f64) -> Vec<f64> {
    a.iter().map(|x| x * k).collect()
}

/// Relative distance of `a` from `b`, used to decide whether a difference
/// `a - b` sits inside the singular band.
pub fn in_singular_band(a: f64, b: f64) -> bool {
    let scale = if b.abs() > 1.0 { b.abs() } else { 1.0 };
    (a - b).abs() < SINGULAR_BAND * scale
}

const SERIES_CUTOFF: f64 = 0.5;
const SERIES_TERMS: u32 = 24;

// sum_{n >= order} n!/(n-order)! x^(n-order) / (n+1)!
fn exprel_series(x: f64, order: u32) -> f64 {
    let mut sum = 0.0;
    let mut pow = 1.0;
    for n in order..order + SERIES_TERMS {
        let mut coef = 1.0;
        for j in 0..order {
            coef *= (n - j) as f64;
        }
        let mut fact = 1.0;
        for j in 2..=n + 1 {
            fact *= j as f64;
        }
        sum += coef * pow / fact;
        pow *= x;
    }
    sum
}

/// `(e^x - 1)/x`, equal to 1 at 0.
pub fn exprel(x: f64) -> f64 {
    if x.abs() < SINGULAR_BAND {
        1.0 + x / 2.0 + x * x / 6.0
    } else {
        expm1(x) / x
    }
}

/// First derivative of [`exprel`]; 1/2 at 0.
pub fn exprel_d1(x: f64) -> f64 {
    if x.abs() < SERIES_CUTOFF {
        exprel_series(x, 1)
    } else {
        ((x - 1.0) * exp(x) + 1.0) / (x * x)
    }
}

/// Second derivative of [`exprel`]; 1/3 at 0.
pub fn exprel_d2(x: f64) -> f64 {
    if x.abs() < SERIES_CUTOFF {
        exprel_series(x, 2)
    } else {
        ((x * x - 2.0 * x + 2.0) * exp(x) - 2.0) / (x * x * x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn central(f: fn(f64) -> f64, x: f64, h: f64) -> f64 {
        (f(x + h) - f(x - h)) / (2.0 * h)
    }

    #[test]
    fn exprel_values_at_zero() {
        assert_eq!(exprel(0.0), 1.0);
        assert!((exprel_d1(0.0) - 0.5).abs() < 1e-15);
        assert!((exprel_d2(0.0) - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn exprel_derivatives_match_finite_differences() {
        for &x in &[-7.0, -1.2, -0.49, -0.1, 0.05, 0.3, 0.51, 2.0, 9.0] {
            let d1 = central(exprel, x, 1e-5);
            assert!((exprel_d1(x) - d1).abs() < 1e-8 * (1.0 + d1.abs()), "x={x}");
            let d2 = central(exprel_d1, x, 1e-5);
            assert!((exprel_d2(x) - d2).abs() < 1e-8 * (1.0 + d2.abs()), "x={x}");
        }
    }

    #[test]
    fn series_and_closed_form_agree_at_cutoff() {
        for &x in &[SERIES_CUTOFF, -SERIES_CUTOFF] {
            let closed1 = ((x - 1.0) * exp(x) + 1.0) / (x * x);
            assert!((exprel_series(x, 1) - closed1).abs() < 1e-14);
            let closed2 = ((x * x - 2.0 * x + 2.0) * exp(x) - 2.0) / (x * x * x);
            assert!((exprel_series(x, 2) - closed2).abs() < 1e-13);
        }
    }
}
