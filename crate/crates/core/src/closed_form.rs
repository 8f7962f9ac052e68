//! Closed-form quantities of the exploratory mean-variance problem: the
//! Lagrange multiplier, value function, optimal Gaussian policy, the terminal
//! second moment and the objective values behind the saddle-point argument.

use alloc::format;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::math::{self, exprel};
use crate::model::{check_intensity, integral_rho_sq, PiecewiseSchedule, Volatility};

/// Gaussian exploratory control at one state.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianPolicy {
    pub mean: Vec<f64>,
    pub covariance: DMatrix<f64>,
    pub time: f64,
}

/// The investor's premium, the one driving the market and an optional robust
/// replacement.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioPair {
    pub rho_invest: Vec<f64>,
    pub rho_market: Vec<f64>,
    pub rho_robust: Option<Vec<f64>>,
}

impl ScenarioPair {
    /// Investor and market premia must be positive. The robust premium may
    /// have zero components (cubes touching the boundary of the orthant) but
    /// must keep a positive inner product with the market premium.
    pub fn new(
        rho_invest: Vec<f64>,
        rho_market: Vec<f64>,
        rho_robust: Option<Vec<f64>>,
    ) -> Result<Self> {
        let d = rho_market.len();
        if d == 0 {
            return Err(Error::invalid("rho_market", "empty vector"));
        }
        check_len(&rho_invest, d)?;
        check_positive("rho_invest", &rho_invest)?;
        check_positive("rho_market", &rho_market)?;
        if let Some(r) = &rho_robust {
            check_len(r, d)?;
            if r.iter().any(|&x| !(x >= 0.0) || !x.is_finite()) {
                return Err(Error::invalid("rho_robust", "components must be >= 0"));
            }
            if !(math::dot(r, &rho_market) > 0.0) {
                return Err(Error::DegenerateScenario(
                    "rho_robust is orthogonal to rho_market".into(),
                ));
            }
        }
        Ok(ScenarioPair {
            rho_invest,
            rho_market,
            rho_robust,
        })
    }

    pub fn dim(&self) -> usize {
        self.rho_market.len()
    }
}

pub(crate) fn check_len(v: &[f64], d: usize) -> Result<()> {
    if v.len() == d {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            expected: d,
            got: v.len(),
        })
    }
}

fn check_positive(name: &'static str, v: &[f64]) -> Result<()> {
    if v.iter().all(|&x| x > 0.0 && x.is_finite()) {
        Ok(())
    } else {
        Err(Error::invalid(name, "components must be positive"))
    }
}

fn check_horizon(t: f64, horizon: f64) -> Result<()> {
    if !(horizon > 0.0) || !horizon.is_finite() {
        return Err(Error::invalid("T", "horizon must be positive"));
    }
    if t >= 0.0 && t <= horizon {
        Ok(())
    } else {
        Err(Error::OutOfRange { t, horizon })
    }
}

/// Multiplier from the accumulated exponent `a = int_0^T rho' rho_hat dt`.
pub fn lagrange_multiplier_from_exponent(a: f64, x0: f64, l: f64) -> Result<f64> {
    if !(a > 0.0) {
        return Err(Error::DegenerateScenario(format!(
            "int rho'rho_hat = {a} is not positive"
        )));
    }
    Ok(l + (l - x0) / math::expm1(a))
}

/// `omega = (l e^{rho'rho_hat T} - x0) / (e^{rho'rho_hat T} - 1)`.
pub fn lagrange_multiplier(
    rho_invest: &[f64],
    rho_market: &[f64],
    x0: f64,
    l: f64,
    horizon: f64,
) -> Result<f64> {
    check_len(rho_invest, rho_market.len())?;
    check_horizon(0.0, horizon)?;
    lagrange_multiplier_from_exponent(math::dot(rho_invest, rho_market) * horizon, x0, l)
}

// Entropy part of the value at time t: -(cd/2) J + (c/2)(T-t) ln det - (cd/2) ln(pi c)(T-t).
fn entropy_part(c: f64, d: usize, double_integral: f64, remaining: f64, ln_det: f64) -> f64 {
    if c == 0.0 {
        return 0.0;
    }
    let cd = c * d as f64;
    -cd / 2.0 * double_integral + c / 2.0 * remaining * ln_det
        - cd / 2.0 * math::ln(math::PI * c) * remaining
}

#[allow(clippy::too_many_arguments)]
pub fn value_function(
    t: f64,
    x: f64,
    schedule: &PiecewiseSchedule,
    vol: &Volatility,
    c: f64,
    omega: f64,
    l: f64,
    horizon: f64,
) -> Result<f64> {
    check_intensity(c)?;
    check_len(&alloc::vec![0.0; schedule.dim()], vol.dim())?;
    let integral = integral_rho_sq(schedule, t, horizon)?;
    let double = schedule.tail_double_integral_sq(t)?;
    let dx = x - omega;
    Ok(dx * dx * math::exp(-integral)
        + entropy_part(c, vol.dim(), double, horizon - t, vol.ln_det_gram())
        - (omega - l) * (omega - l))
}

/// Optimal exploratory policy `N(-sigma^{-1} rho (x - omega), (c/2)(sigma'sigma)^{-1} e^{int_t^T rho'rho})`.
pub fn optimal_policy(
    t: f64,
    x: f64,
    schedule: &PiecewiseSchedule,
    vol: &Volatility,
    c: f64,
    omega: f64,
) -> Result<GaussianPolicy> {
    check_intensity(c)?;
    let d = vol.dim();
    if schedule.dim() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: schedule.dim(),
        });
    }
    let rho = DVector::from_column_slice(schedule.value_at(t)?);
    let mean = vol.sigma_inv() * rho * (omega - x);
    let covariance = if c == 0.0 {
        DMatrix::zeros(d, d)
    } else {
        vol.gram_inv() * (c / 2.0 * math::exp(schedule.integral_sq(t)?))
    };
    Ok(GaussianPolicy {
        mean: mean.iter().copied().collect(),
        covariance,
        time: t,
    })
}

/// Which pair of premia drives the second moment `N_t = E[(X_t - omega)^2]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MomentMode<'a> {
    /// Investor uses `rho`, the market moves with `rho_market`.
    InvestVsMarket {
        rho: &'a [f64],
        rho_market: &'a [f64],
    },
    /// The market moves with `rho`, the investor follows the robust `rho_star`.
    MarketVsRobust { rho: &'a [f64], rho_star: &'a [f64] },
}

/// `exprel(2 (a - b) s)`, switching to the series inside the singular band.
fn exprel_banded(a: f64, b: f64, s: f64) -> f64 {
    let x = 2.0 * (a - b) * s;
    if math::in_singular_band(a, b) {
        1.0 + x / 2.0 + x * x / 6.0
    } else {
        exprel(x)
    }
}

#[allow(clippy::too_many_arguments)]
pub fn second_moment(
    t: f64,
    mode: MomentMode<'_>,
    x0: f64,
    omega: f64,
    c: f64,
    horizon: f64,
) -> Result<f64> {
    check_horizon(t, horizon)?;
    check_intensity(c)?;
    let n0 = (x0 - omega) * (x0 - omega);
    match mode {
        MomentMode::InvestVsMarket { rho, rho_market } => {
            check_len(rho, rho_market.len())?;
            let cd = c * rho.len() as f64;
            let q = math::norm_sq(rho);
            let p = math::dot(rho, rho_market);
            let explore =
                cd / 4.0 * math::exp(q * (horizon - t)) * 2.0 * t * exprel_banded(q, p, t);
            Ok(explore + n0 * math::exp((q - 2.0 * p) * t))
        }
        MomentMode::MarketVsRobust { rho, rho_star } => {
            check_len(rho, rho_star.len())?;
            let cd = c * rho.len() as f64;
            let ups = math::norm_sq(rho_star);
            let a = -2.0 * math::dot(rho, rho_star) + ups;
            // dN/dt = a N + (cd/2) e^{ups (T - t)}
            let x = -(a + ups) * t;
            let series = if math::in_singular_band(-a, ups) {
                1.0 + x / 2.0 + x * x / 6.0
            } else {
                exprel(x)
            };
            Ok(n0 * math::exp(a * t) + cd / 2.0 * math::exp(ups * horizon + a * t) * t * series)
        }
    }
}

/// Objective value of the optimal policy when the model premium is exact.
pub fn m_optimal(
    schedule: &PiecewiseSchedule,
    vol: &Volatility,
    x0: f64,
    l: f64,
    c: f64,
) -> Result<f64> {
    check_intensity(c)?;
    if schedule.dim() != vol.dim() {
        return Err(Error::DimensionMismatch {
            expected: vol.dim(),
            got: schedule.dim(),
        });
    }
    let horizon = schedule.horizon();
    let integral = schedule.integral_sq(0.0)?;
    if !(integral > 0.0) {
        return Err(Error::DegenerateScenario(
            "int rho'rho over [0,T] is zero".into(),
        ));
    }
    let double = schedule.tail_double_integral_sq(0.0)?;
    Ok((x0 - l) * (x0 - l) / math::expm1(integral)
        + entropy_part(c, vol.dim(), double, horizon, vol.ln_det_gram()))
}

/// Objective value when the market moves with `rho` and the investor follows
/// the optimal policy built from `rho_star`.
#[allow(clippy::too_many_arguments)]
pub fn m_cross(
    rho: &[f64],
    rho_star: &[f64],
    vol: &Volatility,
    x0: f64,
    l: f64,
    c: f64,
    horizon: f64,
) -> Result<f64> {
    check_intensity(c)?;
    check_horizon(0.0, horizon)?;
    let d = vol.dim();
    check_len(rho, d)?;
    check_len(rho_star, d)?;
    let ups = math::norm_sq(rho_star);
    let p = math::dot(rho, rho_star);
    if !(p > 0.0) || !(ups > 0.0) {
        return Err(Error::DegenerateScenario(format!(
            "rho'rho_star = {p}, |rho_star|^2 = {ups}"
        )));
    }
    let denom = math::expm1(p * horizon);
    let terminal = (x0 - l) * (x0 - l) * math::expm1(ups * horizon) / (denom * denom);
    if c == 0.0 {
        return Ok(terminal);
    }
    let cd = c * d as f64;
    let t = horizon;
    // (cd/2) e^{-2 delta T} int_0^T e^{2 delta s} ds with delta = p - ups
    let cross = cd / 2.0 * t * exprel_banded(ups, p, t);
    Ok(terminal - cd * t / 2.0 * math::ln(math::PI * math::E * c)
        + c * t / 2.0 * vol.ln_det_gram()
        + cross
        - cd / 2.0 * ups * t * t / 2.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_volatility, DEFAULT_EPS};
    use alloc::vec;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn baseline_vol() -> Volatility {
        let corr = DMatrix::from_row_slice(
            4,
            4,
            &[
                1.0, -0.85, 0.45, 0.78, -0.85, 1.0, -0.41, -0.62, 0.45, -0.41, 1.0, 0.64, 0.78,
                -0.62, 0.64, 1.0,
            ],
        );
        Volatility::new(
            build_volatility(&[0.15, 0.2, 0.4, 0.3], &corr).unwrap(),
            DEFAULT_EPS,
        )
        .unwrap()
    }

    fn unit_vol(d: usize) -> Volatility {
        Volatility::new(DMatrix::identity(d, d), DEFAULT_EPS).unwrap()
    }

    #[test]
    fn multiplier_examples() {
        let r = [0.4; 4];
        let w = lagrange_multiplier(&r, &r, 1.0, 1.2, 1.0).unwrap();
        let e = 0.64f64.exp();
        assert_relative_eq!(w, (1.2 * e - 1.0) / (e - 1.0), max_relative = 1e-14);
        assert_eq!(
            lagrange_multiplier(&[0.3, 0.7], &[0.1, 0.2], 1.0, 1.0, 1.0).unwrap(),
            1.0
        );
        let far = lagrange_multiplier(&[30.0], &[30.0], 1.0, 1.2, 5.0).unwrap();
        assert_relative_eq!(far, 1.2, max_relative = 1e-12);
        assert!(matches!(
            lagrange_multiplier_from_exponent(0.0, 1.0, 1.2),
            Err(Error::DegenerateScenario(_))
        ));
    }

    #[test]
    fn value_function_terminal_and_classical() {
        let vol = baseline_vol();
        let s = PiecewiseSchedule::constant(vec![0.4; 4], 1.0).unwrap();
        let (w, l) = (2.3, 1.2);
        let v = value_function(1.0, w, &s, &vol, 1.5, w, l, 1.0).unwrap();
        assert_relative_eq!(v, -(w - l) * (w - l), max_relative = 1e-14);
        let x = 0.7;
        let v0 = value_function(0.3, x, &s, &vol, 0.0, w, l, 1.0).unwrap();
        let want = (x - w) * (x - w) * (-0.64f64 * 0.7).exp() - (w - l) * (w - l);
        assert_relative_eq!(v0, want, max_relative = 1e-14);
        assert!(matches!(
            value_function(0.3, x, &s, &vol, -1.0, w, l, 1.0),
            Err(Error::InvalidIntensity { .. })
        ));
    }

    #[test]
    fn value_function_scalar_substitution() {
        let s = PiecewiseSchedule::constant(vec![1.0], 1.0).unwrap();
        let (w, l) = (1.5, 1.2);
        let v = value_function(0.0, w, &s, &unit_vol(1), 1.0, w, l, 1.0).unwrap();
        let want = -0.5 * 0.5 - 0.5 * core::f64::consts::PI.ln() - (w - l) * (w - l);
        assert_relative_eq!(v, want, max_relative = 1e-14);
    }

    // At x = omega only the entropy terms move with t.
    #[test]
    fn value_function_time_derivative_at_target() {
        let vol = baseline_vol();
        let s = PiecewiseSchedule::constant(vec![0.4; 4], 1.0).unwrap();
        let (c, w, l) = (1.5, 2.0, 1.2);
        let t = 0.4;
        let h = 1e-5;
        let dv = (value_function(t + h, w, &s, &vol, c, w, l, 1.0).unwrap()
            - value_function(t - h, w, &s, &vol, c, w, l, 1.0).unwrap())
            / (2.0 * h);
        // At x = omega: dV/dt = (cd/2)(T-t) q - (c/2) ln det + (cd/2) ln(pi c).
        let q = 0.64;
        let want = c * 4.0 / 2.0 * (1.0 - t) * q - c / 2.0 * vol.ln_det_gram()
            + c * 2.0 * (core::f64::consts::PI * c).ln();
        assert_relative_eq!(dv, want, max_relative = 1e-7);
    }

    #[test]
    fn policy_examples() {
        let s = PiecewiseSchedule::constant(vec![0.5], 1.0).unwrap();
        let vol = Volatility::new(DMatrix::from_element(1, 1, 0.2), DEFAULT_EPS).unwrap();
        let p = optimal_policy(0.0, 0.0, &s, &vol, 1.5, 1.0).unwrap();
        assert_relative_eq!(p.mean[0], 2.5, max_relative = 1e-14);
        assert_relative_eq!(
            p.covariance[(0, 0)],
            0.75 / 0.04 * 0.25f64.exp(),
            max_relative = 1e-12
        );
        let at_target = optimal_policy(0.3, 1.0, &s, &vol, 1.5, 1.0).unwrap();
        assert_eq!(at_target.mean, vec![0.0]);
        let s2 = PiecewiseSchedule::constant(vec![0.3, 0.2], 1.0).unwrap();
        let end = optimal_policy(1.0, 0.0, &s2, &unit_vol(2), 1.0, 0.0).unwrap();
        assert!((end.covariance - DMatrix::identity(2, 2) * 0.5).norm() < 1e-15);
        let classical = optimal_policy(0.0, 0.0, &s2, &unit_vol(2), 0.0, 1.0).unwrap();
        assert_eq!(classical.covariance, DMatrix::zeros(2, 2));
        assert_eq!(classical.mean, vec![0.3, 0.2]);
    }

    #[test]
    fn second_moment_initial_condition() {
        let r = [0.5, 0.3];
        let rh = [0.4, 0.4];
        for mode in [
            MomentMode::InvestVsMarket {
                rho: &r,
                rho_market: &rh,
            },
            MomentMode::MarketVsRobust {
                rho: &r,
                rho_star: &rh,
            },
        ] {
            assert_relative_eq!(
                second_moment(0.0, mode, 1.0, 2.5, 1.5, 1.0).unwrap(),
                2.25,
                max_relative = 1e-15
            );
        }
    }

    // Oracle: RK4 integration of the moment ODEs.
    fn rk4(a: f64, b: impl Fn(f64) -> f64, n0: f64, t: f64) -> f64 {
        let steps = 20_000;
        let h = t / steps as f64;
        let mut n = n0;
        for i in 0..steps {
            let s = i as f64 * h;
            let f = |s: f64, n: f64| a * n + b(s);
            let k1 = f(s, n);
            let k2 = f(s + h / 2.0, n + h / 2.0 * k1);
            let k3 = f(s + h / 2.0, n + h / 2.0 * k2);
            let k4 = f(s + h, n + h * k3);
            n += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        }
        n
    }

    #[test]
    fn second_moment_matches_ode() {
        let (x0, w, c, horizon) = (1.0, 2.2, 1.5, 1.0);
        let rho = [0.5, 0.3, 0.6];
        let rh = [0.4, 0.2, 0.1];
        let q = math::norm_sq(&rho);
        let p = math::dot(&rho, &rh);
        let cd = c * 3.0;
        // Investor rho under market rho_hat: dN = (q - 2p) N + (cd/2) e^{q (T - t)}.
        let t = 0.7;
        let ode = rk4(
            q - 2.0 * p,
            |s| cd / 2.0 * (q * (horizon - s)).exp(),
            (x0 - w) * (x0 - w),
            t,
        );
        let got = second_moment(
            t,
            MomentMode::InvestVsMarket {
                rho: &rho,
                rho_market: &rh,
            },
            x0,
            w,
            c,
            horizon,
        )
        .unwrap();
        assert_relative_eq!(got, ode, max_relative = 1e-10);
        let star = [0.2, 0.1, 0.3];
        let ups = math::norm_sq(&star);
        let a = -2.0 * math::dot(&rh, &star) + ups;
        let ode = rk4(
            a,
            |s| cd / 2.0 * (ups * (horizon - s)).exp(),
            (x0 - w) * (x0 - w),
            t,
        );
        let got = second_moment(
            t,
            MomentMode::MarketVsRobust {
                rho: &rh,
                rho_star: &star,
            },
            x0,
            w,
            c,
            horizon,
        )
        .unwrap();
        assert_relative_eq!(got, ode, max_relative = 1e-10);
    }

    #[test]
    fn cross_mode_reduces_at_diagonal() {
        let star = [0.3, 0.4];
        let a = second_moment(
            0.6,
            MomentMode::MarketVsRobust {
                rho: &star,
                rho_star: &star,
            },
            1.0,
            1.8,
            1.0,
            1.0,
        )
        .unwrap();
        let b = second_moment(
            0.6,
            MomentMode::InvestVsMarket {
                rho: &star,
                rho_market: &star,
            },
            1.0,
            1.8,
            1.0,
            1.0,
        )
        .unwrap();
        assert_relative_eq!(a, b, max_relative = 1e-14);
    }

    #[test]
    fn terminal_moment_matches_variance_identity() {
        // rho = rho_hat at t = T: N_T - (l - omega)^2 is the terminal variance.
        let r = [0.4; 4];
        let (x0, l, c) = (1.0, 1.2, 1.5);
        let w = lagrange_multiplier(&r, &r, x0, l, 1.0).unwrap();
        let n = second_moment(
            1.0,
            MomentMode::InvestVsMarket {
                rho: &r,
                rho_market: &r,
            },
            x0,
            w,
            c,
            1.0,
        )
        .unwrap();
        let var = n - (l - w) * (l - w);
        let want = (x0 - l) * (x0 - l) / (0.64f64.exp() - 1.0) + c * 4.0 / 2.0;
        assert_relative_eq!(var, want, max_relative = 1e-12);
    }

    #[test]
    fn singular_band_continuity() {
        // rho chosen so that rho'rho sits at rho'rho_hat and just off it.
        let rh = [0.4, 0.4];
        for eps in [0.0, 1e-6, -1e-6] {
            let p_target = 0.32;
            let q_target = p_target + eps;
            // rho = (a, b) with a + b = 0.8 (so rho'rho_hat = 0.32) and a^2 + b^2 = q.
            let disc = (2.0 * q_target - 0.64f64).max(0.0).sqrt();
            let a = (0.8 + disc) / 2.0;
            let b = 0.8 - a;
            let rho = [a, b];
            let at = second_moment(
                0.8,
                MomentMode::InvestVsMarket {
                    rho: &rho,
                    rho_market: &rh,
                },
                1.0,
                2.0,
                1.0,
                1.0,
            )
            .unwrap();
            let limit = {
                let q = math::norm_sq(&rho);
                0.5 * (q * 0.2f64).exp() * 2.0 * 0.8
                    + (2.0 - 1.0f64).powi(2) * ((q - 0.64) * 0.8).exp()
            };
            assert!(((at - limit) / limit).abs() <= 1e-6, "eps={eps}");
        }
    }

    #[test]
    fn m_optimal_examples() {
        let vol = baseline_vol();
        let s = PiecewiseSchedule::constant(vec![0.4; 4], 1.0).unwrap();
        assert_relative_eq!(
            m_optimal(&s, &vol, 1.0, 1.2, 0.0).unwrap(),
            0.04 / (0.64f64.exp() - 1.0),
            max_relative = 1e-14
        );
        assert_eq!(m_optimal(&s, &vol, 1.0, 1.0, 0.0).unwrap(), 0.0);
        // Quadrature oracle for the double integral and ln det integral.
        let c = 1.5;
        let n = 2000;
        let h = 1.0 / n as f64;
        let mut dbl = 0.0;
        for i in 0..n {
            let t = (i as f64 + 0.5) * h;
            for j in 0..n {
                let s = (j as f64 + 0.5) * h;
                if s > t {
                    dbl += 0.64 * h * h;
                }
            }
        }
        let want = 0.04 / (0.64f64.exp() - 1.0) - c * 2.0 * dbl + c / 2.0 * vol.ln_det_gram()
            - c * 2.0 * (core::f64::consts::PI * c).ln();
        let got = m_optimal(&s, &vol, 1.0, 1.2, c).unwrap();
        assert!((got - want).abs() < 1e-3 * want.abs());
        let zero = PiecewiseSchedule::constant(vec![0.0; 4], 1.0).unwrap();
        assert!(matches!(
            m_optimal(&zero, &vol, 1.0, 1.2, c),
            Err(Error::DegenerateScenario(_))
        ));
    }

    #[test]
    fn m_cross_on_diagonal_equals_m_optimal() {
        let vol = baseline_vol();
        for c in [0.0, 0.3, 1.5] {
            let star = vec![0.25, 0.3, 0.1, 0.4];
            let s = PiecewiseSchedule::constant(star.clone(), 1.3).unwrap();
            let a = m_cross(&star, &star, &vol, 1.0, 1.2, c, 1.3).unwrap();
            let b = m_optimal(&s, &vol, 1.0, 1.2, c).unwrap();
            assert_relative_eq!(a, b, max_relative = 1e-12, epsilon = 1e-14);
        }
    }

    #[test]
    fn m_cross_matches_displayed_quadrature() {
        // Direct transcription of the objective with the inner integral by quadrature.
        let vol = unit_vol(1);
        let (rho, star, c, horizon, x0, l) = (0.5, 0.2, 1.0, 1.0, 1.0, 1.2);
        let ups: f64 = star * star;
        let p: f64 = rho * star;
        let terminal =
            (x0 - l) * (x0 - l) * (ups * horizon).exp_m1() / (p * horizon).exp_m1().powi(2);
        let n = 100_000;
        let h = horizon / n as f64;
        let inner: f64 = (0..n)
            .map(|i| (2.0 * (p - ups) * (i as f64 + 0.5) * h).exp() * h)
            .sum();
        let want = terminal
            - c * horizon / 2.0 * (core::f64::consts::PI * core::f64::consts::E * c).ln()
            + c / 2.0 * (-2.0 * (p - ups) * horizon).exp() * inner
            - c / 2.0 * ups * horizon * horizon / 2.0;
        let got = m_cross(&[rho], &[star], &vol, x0, l, c, horizon).unwrap();
        assert_relative_eq!(got, want, max_relative = 1e-9);
    }

    proptest! {
        #[test]
        fn saddle_inequality_on_cubes(
            lower in proptest::collection::vec(0.02f64..0.6, 1..5),
            width in 0.0f64..0.5,
            c in 0.0f64..2.0,
            u in proptest::collection::vec(0.0f64..1.0, 5),
        ) {
            let d = lower.len();
            let vol = unit_vol(d);
            let rho: Vec<f64> = lower.iter().zip(&u).map(|(lo, t)| lo + t * width).collect();
            let top = m_cross(&lower, &lower, &vol, 1.0, 1.2, c, 1.0).unwrap();
            let other = m_cross(&rho, &lower, &vol, 1.0, 1.2, c, 1.0).unwrap();
            prop_assert!(top >= other - 1e-12 * top.abs().max(1.0));
        }

        #[test]
        fn policy_mean_linear_in_wealth(x in -5.0f64..5.0, y in -5.0f64..5.0, t in 0.0f64..1.0) {
            let vol = baseline_vol();
            let s = PiecewiseSchedule::constant(vec![0.5, 0.4, 0.3, 0.2], 1.0).unwrap();
            let w = 1.7;
            let px = optimal_policy(t, x, &s, &vol, 1.0, w).unwrap();
            let py = optimal_policy(t, y, &s, &vol, 1.0, w).unwrap();
            let pm = optimal_policy(t, (x + y) / 2.0, &s, &vol, 1.0, w).unwrap();
            for i in 0..4 {
                prop_assert!((pm.mean[i] - (px.mean[i] + py.mean[i]) / 2.0).abs() < 1e-10);
            }
            prop_assert!((px.covariance - py.covariance).norm() == 0.0);
        }
    }
}
