//! Terminal variance of the exploratory policy under a misspecified premium,
//! its gradient, the optimal shrinkage factor `k*` and variance surfaces.

use alloc::vec::Vec;

use crate::closed_form::{check_len, lagrange_multiplier};
use crate::error::{Error, Result};
use crate::math::{self, exprel, exprel_d1};
use crate::model::check_intensity;

#[derive(Debug, Clone, PartialEq)]
pub struct VarianceReport {
    pub variance: f64,
    pub exploration_term: f64,
    pub classical_term: f64,
    pub omega: f64,
    pub rho: Vec<f64>,
    pub rho_hat: Vec<f64>,
    pub x0: f64,
    pub l: f64,
    pub c: f64,
    pub horizon: f64,
    /// `rho'rho` fell inside the singular band around `rho'rho_hat`.
    pub singular: bool,
}

fn check_inputs(rho: &[f64], rho_hat: &[f64], horizon: f64) -> Result<(f64, f64)> {
    if rho_hat.is_empty() {
        return Err(Error::invalid("rho_hat", "empty vector"));
    }
    check_len(rho, rho_hat.len())?;
    if !(horizon > 0.0) || !horizon.is_finite() {
        return Err(Error::invalid("T", "horizon must be positive"));
    }
    let p = math::dot(rho, rho_hat);
    if !(p > 0.0) {
        return Err(Error::DegenerateScenario(alloc::format!(
            "rho'rho_hat = {p} is not positive"
        )));
    }
    Ok((math::norm_sq(rho), p))
}

fn exploration_factor(q: f64, p: f64, horizon: f64) -> f64 {
    let x = 2.0 * (q - p) * horizon;
    if math::in_singular_band(q, p) {
        1.0 + x / 2.0 + x * x / 6.0
    } else {
        exprel(x)
    }
}

fn classical(q: f64, p: f64, dx2: f64, horizon: f64) -> f64 {
    let denom = math::expm1(p * horizon);
    dx2 * math::expm1(q * horizon) / (denom * denom)
}

/// `(x0 - l)^2 (e^{rho'rho T} - 1) / (e^{rho'rho_hat T} - 1)^2`.
pub fn variance_no_exploration(
    rho: &[f64],
    rho_hat: &[f64],
    x0: f64,
    l: f64,
    horizon: f64,
) -> Result<f64> {
    let (q, p) = check_inputs(rho, rho_hat, horizon)?;
    Ok(classical(q, p, (x0 - l) * (x0 - l), horizon))
}

pub fn variance_with_exploration(
    rho: &[f64],
    rho_hat: &[f64],
    x0: f64,
    l: f64,
    c: f64,
    horizon: f64,
) -> Result<VarianceReport> {
    check_intensity(c)?;
    let (q, p) = check_inputs(rho, rho_hat, horizon)?;
    let d = rho.len() as f64;
    let exploration_term = c * d * horizon / 2.0 * exploration_factor(q, p, horizon);
    let classical_term = classical(q, p, (x0 - l) * (x0 - l), horizon);
    Ok(VarianceReport {
        variance: exploration_term + classical_term,
        exploration_term,
        classical_term,
        omega: lagrange_multiplier(rho, rho_hat, x0, l, horizon)?,
        rho: rho.to_vec(),
        rho_hat: rho_hat.to_vec(),
        x0,
        l,
        c,
        horizon,
        singular: math::in_singular_band(q, p),
    })
}

/// The scalar weights `(a, b, s)` with `grad = a (2 rho - rho_hat) + b rho - s rho_hat`.
fn gradient_weights(q: f64, p: f64, d: f64, dx2: f64, c: f64, horizon: f64) -> (f64, f64, f64) {
    let t = horizon;
    let a = c * d * t * t * exprel_d1(2.0 * (q - p) * t);
    let em = math::expm1(p * t);
    let b = dx2 * 2.0 * t * math::exp(q * t) / (em * em);
    let s = dx2 * 2.0 * t * math::exp(p * t) * math::expm1(q * t) / (em * em * em);
    (a, b, s)
}

/// Gradient of [`variance_with_exploration`] with respect to `rho`.
pub fn variance_gradient(
    rho: &[f64],
    rho_hat: &[f64],
    x0: f64,
    l: f64,
    c: f64,
    horizon: f64,
) -> Result<Vec<f64>> {
    check_intensity(c)?;
    let (q, p) = check_inputs(rho, rho_hat, horizon)?;
    let (a, b, s) = gradient_weights(q, p, rho.len() as f64, (x0 - l) * (x0 - l), c, horizon);
    Ok(rho
        .iter()
        .zip(rho_hat)
        .map(|(&r, &h)| a * (2.0 * r - h) + b * r - s * h)
        .collect())
}

/// Derivative of `k -> Var(k rho_hat)`.
pub fn line_derivative(k: f64, rho_hat: &[f64], x0: f64, l: f64, c: f64, horizon: f64) -> f64 {
    let n = math::norm_sq(rho_hat);
    let (q, p) = (k * k * n, k * n);
    let (a, b, s) = gradient_weights(q, p, rho_hat.len() as f64, (x0 - l) * (x0 - l), c, horizon);
    n * (a * (2.0 * k - 1.0) + b * k - s)
}

/// Right-hand side of the stationarity condition written as a fixed point
/// `rho = ratio * rho_hat`, evaluated at `rho = k rho_hat`. Diagnostic only.
pub fn stationary_ratio(k: f64, rho_hat: &[f64], x0: f64, l: f64, c: f64, horizon: f64) -> f64 {
    let n = math::norm_sq(rho_hat);
    let (a, b, s) = gradient_weights(
        k * k * n,
        k * n,
        rho_hat.len() as f64,
        (x0 - l) * (x0 - l),
        c,
        horizon,
    );
    (a + s) / (2.0 * a + b)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KStarResult {
    pub k_star: f64,
    /// Line derivative at `k_star`.
    pub residual: f64,
    pub iterations: usize,
    pub bracket: (f64, f64),
}

pub const KSTAR_DEFAULT_TOL: f64 = 1e-10;
pub const KSTAR_MAX_ITER: usize = 200;

/// Minimizer of the variance along the ray `k rho_hat`, found by bisection on
/// the line derivative over `[1/2, 1]`.
pub fn solve_kstar(
    rho_hat: &[f64],
    x0: f64,
    l: f64,
    c: f64,
    horizon: f64,
    tol: f64,
) -> Result<KStarResult> {
    solve_kstar_with(rho_hat, x0, l, c, horizon, tol, KSTAR_MAX_ITER)
}

pub fn solve_kstar_with(
    rho_hat: &[f64],
    x0: f64,
    l: f64,
    c: f64,
    horizon: f64,
    tol: f64,
    max_iter: usize,
) -> Result<KStarResult> {
    if rho_hat.is_empty() || rho_hat.iter().any(|&x| !(x > 0.0) || !x.is_finite()) {
        return Err(Error::invalid("rho_hat", "components must be positive"));
    }
    if !(c > 0.0) || !c.is_finite() {
        return Err(Error::invalid("c", "k* needs c > 0"));
    }
    if x0 == l {
        return Err(Error::invalid("l", "k* needs x0 != l"));
    }
    if !(horizon > 0.0) || !horizon.is_finite() {
        return Err(Error::invalid("T", "horizon must be positive"));
    }
    if !(tol > 0.0) {
        return Err(Error::invalid("tol", "must be positive"));
    }
    let deriv = |k: f64| line_derivative(k, rho_hat, x0, l, c, horizon);
    let (mut lo, mut hi) = (0.5, 1.0);
    let (d_lo, d_hi) = (deriv(lo), deriv(hi));
    if !(d_lo < 0.0 && d_hi > 0.0) {
        return Err(Error::NoBracket { lo, hi });
    }
    let mut iterations = 0;
    while hi - lo > tol {
        if iterations == max_iter {
            return Err(Error::NonConvergence { iterations });
        }
        iterations += 1;
        let mid = lo + (hi - lo) / 2.0;
        if mid <= lo || mid >= hi {
            break;
        }
        let dm = deriv(mid);
        if dm == 0.0 {
            lo = mid;
            hi = mid;
            break;
        }
        if dm < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let k_star = lo + (hi - lo) / 2.0;
    Ok(KStarResult {
        k_star,
        residual: deriv(k_star),
        iterations,
        bracket: (lo, hi),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AxisSpec {
    pub min: f64,
    pub max: f64,
    pub steps: usize,
}

impl AxisSpec {
    pub fn new(min: f64, max: f64, steps: usize) -> Result<Self> {
        if steps == 0 {
            return Err(Error::invalid("axis", "steps must be at least 1"));
        }
        if !min.is_finite() || !max.is_finite() || max < min {
            return Err(Error::invalid(
                "axis",
                alloc::format!("range [{min}, {max}] is invalid"),
            ));
        }
        Ok(AxisSpec { min, max, steps })
    }

    pub fn value(&self, i: usize) -> f64 {
        if self.steps == 1 {
            self.min
        } else if i + 1 == self.steps {
            self.max
        } else {
            self.min + (self.max - self.min) * i as f64 / (self.steps - 1) as f64
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SurfaceMode {
    /// Full variance including the exploration term.
    #[default]
    Exploration,
    /// Variance of the classical (non-exploratory) policy.
    Classical,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SurfaceMarkers {
    pub rho_hat: Vec<f64>,
    pub half_rho_hat: Vec<f64>,
    pub k_star: Option<f64>,
    pub k_star_rho_hat: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SurfaceGrid {
    pub axes: Vec<AxisSpec>,
    /// Row-major: the first axis indexes rows.
    pub values: Vec<f64>,
    /// Flat indices of cells on the singular manifold or where the variance
    /// is undefined (stored as NaN).
    pub singular: Vec<usize>,
    pub markers: SurfaceMarkers,
    pub mode: SurfaceMode,
    pub c: f64,
    pub horizon: f64,
    pub x0_minus_l: f64,
}

impl SurfaceGrid {
    pub fn shape(&self) -> (usize, usize) {
        match self.axes.as_slice() {
            [a] => (a.steps, 1),
            [a, b] => (a.steps, b.steps),
            _ => (0, 0),
        }
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.shape().1 + j]
    }

    /// Flat index and value of the smallest finite cell.
    pub fn argmin(&self) -> Option<(usize, f64)> {
        self.values
            .iter()
            .copied()
            .enumerate()
            .filter(|(_, v)| v.is_finite())
            .fold(None, |best, (i, v)| match best {
                Some((_, b)) if b <= v => best,
                _ => Some((i, v)),
            })
    }
}

pub const DEFAULT_CELL_CAP: usize = 1_000_000;

#[allow(clippy::too_many_arguments)]
pub fn variance_surface(
    axes: &[AxisSpec],
    rho_hat: &[f64],
    x0: f64,
    l: f64,
    c: f64,
    horizon: f64,
    mode: SurfaceMode,
    cell_cap: usize,
) -> Result<SurfaceGrid> {
    if axes.is_empty() || axes.len() > 2 {
        return Err(Error::invalid(
            "axis",
            alloc::format!("need 1 or 2 axes, got {}", axes.len()),
        ));
    }
    if axes.len() != rho_hat.len() {
        return Err(Error::invalid(
            "axis",
            alloc::format!("{} axes for a {}-asset premium", axes.len(), rho_hat.len()),
        ));
    }
    check_intensity(c)?;
    let cells = axes
        .iter()
        .try_fold(1usize, |acc, a| acc.checked_mul(a.steps))
        .unwrap_or(usize::MAX);
    if cells > cell_cap {
        return Err(Error::GridTooLarge {
            cells,
            cap: cell_cap,
        });
    }
    let k_star = if c > 0.0 && x0 != l {
        solve_kstar(rho_hat, x0, l, c, horizon, KSTAR_DEFAULT_TOL)
            .ok()
            .map(|r| r.k_star)
    } else {
        None
    };
    let markers = SurfaceMarkers {
        rho_hat: rho_hat.to_vec(),
        half_rho_hat: math::scaled(rho_hat, 0.5),
        k_star,
        k_star_rho_hat: k_star.map(|k| math::scaled(rho_hat, k)),
    };
    let cols = if axes.len() == 2 { axes[1].steps } else { 1 };
    let mut values = Vec::with_capacity(cells);
    let mut singular = Vec::new();
    let mut rho = alloc::vec![0.0; axes.len()];
    for idx in 0..cells {
        rho[0] = axes[0].value(idx / cols);
        if axes.len() == 2 {
            rho[1] = axes[1].value(idx % cols);
        }
        let v = match mode {
            SurfaceMode::Exploration => variance_with_exploration(&rho, rho_hat, x0, l, c, horizon)
                .map(|r| {
                    if r.singular {
                        singular.push(idx);
                    }
                    r.variance
                }),
            SurfaceMode::Classical => variance_no_exploration(&rho, rho_hat, x0, l, horizon),
        };
        values.push(v.unwrap_or_else(|_| {
            singular.push(idx);
            f64::NAN
        }));
    }
    Ok(SurfaceGrid {
        axes: axes.to_vec(),
        values,
        singular,
        markers,
        mode,
        c,
        horizon,
        x0_minus_l: x0 - l,
    })
}
