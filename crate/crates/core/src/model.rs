//! Validated market and problem parameters, time grids and piecewise-constant
//! risk-premium schedules.

use alloc::format;
use alloc::vec::Vec;

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};
use crate::math;

/// Default lower bound on the eigenvalues of `sigma * sigma'`.
pub const DEFAULT_EPS: f64 = 1e-8;

/// Raw market description: volatility, true risk premium, horizon and rate.
#[derive(Debug, Clone, PartialEq)]
pub struct MarketParams {
    pub sigma: DMatrix<f64>,
    pub rho_hat: Vec<f64>,
    pub horizon: f64,
    pub rate: f64,
}

impl MarketParams {
    pub fn new(sigma: DMatrix<f64>, rho_hat: Vec<f64>, horizon: f64) -> Self {
        MarketParams {
            sigma,
            rho_hat,
            horizon,
            rate: 0.0,
        }
    }

    pub fn dim(&self) -> usize {
        self.rho_hat.len()
    }
}

/// A volatility matrix together with the factorizations the formulas need.
#[derive(Debug, Clone, PartialEq)]
pub struct Volatility {
    sigma: DMatrix<f64>,
    sigma_inv: DMatrix<f64>,
    gram_inv: DMatrix<f64>,
    ln_det_gram: f64,
    min_eigenvalue: f64,
}

impl Volatility {
    pub fn new(sigma: DMatrix<f64>, eps: f64) -> Result<Self> {
        let d = sigma.nrows();
        if d == 0 {
            return Err(Error::invalid("sigma", "matrix is empty"));
        }
        if sigma.ncols() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: sigma.ncols(),
            });
        }
        if sigma.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("sigma", "entries must be finite"));
        }
        // sigma'sigma and sigma*sigma' share their spectrum.
        let gram = sigma.transpose() * &sigma;
        let eig = SymmetricEigen::new(gram.clone());
        let min_eigenvalue = eig
            .eigenvalues
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min);
        if !(min_eigenvalue > eps) {
            return Err(Error::SingularVolatility { min_eigenvalue });
        }
        let ln_det_gram = eig.eigenvalues.iter().map(|&l| math::ln(l)).sum();
        let inv_diag = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| 1.0 / l));
        let mut gram_inv = &eig.eigenvectors * inv_diag * eig.eigenvectors.transpose();
        symmetrize(&mut gram_inv);
        let sigma_inv = &gram_inv * sigma.transpose();
        Ok(Volatility {
            sigma,
            sigma_inv,
            gram_inv,
            ln_det_gram,
            min_eigenvalue,
        })
    }

    pub fn dim(&self) -> usize {
        self.sigma.nrows()
    }

    pub fn sigma(&self) -> &DMatrix<f64> {
        &self.sigma
    }

    pub fn sigma_inv(&self) -> &DMatrix<f64> {
        &self.sigma_inv
    }

    /// `(sigma' sigma)^{-1}`.
    pub fn gram_inv(&self) -> &DMatrix<f64> {
        &self.gram_inv
    }

    /// `ln det(sigma' sigma)`.
    pub fn ln_det_gram(&self) -> f64 {
        self.ln_det_gram
    }

    /// Smallest eigenvalue of `sigma * sigma'`.
    pub fn min_eigenvalue(&self) -> f64 {
        self.min_eigenvalue
    }
}

fn symmetrize(m: &mut DMatrix<f64>) {
    let t = m.transpose();
    *m += t;
    *m *= 0.5;
}

/// Market parameters whose invariants have been checked.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidatedMarket {
    params: MarketParams,
    vol: Volatility,
    eps: f64,
}

impl ValidatedMarket {
    pub fn params(&self) -> &MarketParams {
        &self.params
    }

    pub fn volatility(&self) -> &Volatility {
        &self.vol
    }

    pub fn rho_hat(&self) -> &[f64] {
        &self.params.rho_hat
    }

    pub fn horizon(&self) -> f64 {
        self.params.horizon
    }

    pub fn dim(&self) -> usize {
        self.params.dim()
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.vol.min_eigenvalue
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }
}

pub fn validate_market(raw: &MarketParams, eps: f64) -> Result<ValidatedMarket> {
    let d = raw.dim();
    if d == 0 {
        return Err(Error::invalid("rho_hat", "need at least one asset"));
    }
    if raw.sigma.nrows() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: raw.sigma.nrows(),
        });
    }
    if !(raw.horizon > 0.0) || !raw.horizon.is_finite() {
        return Err(Error::invalid(
            "T",
            format!("horizon must be positive, got {}", raw.horizon),
        ));
    }
    if !(raw.rate >= 0.0) || !raw.rate.is_finite() {
        return Err(Error::invalid(
            "r",
            format!("rate must be >= 0, got {}", raw.rate),
        ));
    }
    if !(eps > 0.0) {
        return Err(Error::invalid("eps", "must be positive"));
    }
    let vol = Volatility::new(raw.sigma.clone(), eps)?;
    for (index, &value) in raw.rho_hat.iter().enumerate() {
        if !(value > 0.0) || !value.is_finite() {
            return Err(Error::NonPositivePremium { index, value });
        }
    }
    Ok(ValidatedMarket {
        params: raw.clone(),
        vol,
        eps,
    })
}

/// Symmetric square root of `rho' diag(vols)^2 rho` for a correlation `rho`.
pub fn build_volatility(diag_vols: &[f64], correlation: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let d = diag_vols.len();
    if correlation.nrows() != d || correlation.ncols() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: correlation.nrows(),
        });
    }
    for i in 0..d {
        if (correlation[(i, i)] - 1.0).abs() > 1e-12 {
            return Err(Error::invalid(
                "correlation",
                format!("diagonal entry {i} is not 1"),
            ));
        }
        for j in 0..i {
            if (correlation[(i, j)] - correlation[(j, i)]).abs() > 1e-12 {
                return Err(Error::invalid("correlation", "matrix is not symmetric"));
            }
        }
    }
    if diag_vols.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("diag_vols", "entries must be finite"));
    }
    let s0 = DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(
        d,
        diag_vols.iter().map(|v| v * v),
    ));
    let mut product = correlation.transpose() * s0 * correlation;
    symmetrize(&mut product);
    let eig = SymmetricEigen::new(product);
    if let Some(&bad) = eig.eigenvalues.iter().find(|&&l| !(l > 0.0)) {
        return Err(Error::NotPositiveDefinite { eigenvalue: bad });
    }
    let root = DMatrix::from_diagonal(&eig.eigenvalues.map(math::sqrt));
    let mut sigma = &eig.eigenvectors * root * eig.eigenvectors.transpose();
    symmetrize(&mut sigma);
    Ok(sigma)
}

/// Exploration intensity, initial wealth, target and (optionally) a fixed
/// Lagrange multiplier.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProblemParams {
    pub x0: f64,
    pub l: f64,
    pub c: f64,
    pub omega: Option<f64>,
}

impl ProblemParams {
    pub fn new(x0: f64, l: f64, c: f64) -> Result<Self> {
        let p = ProblemParams {
            x0,
            l,
            c,
            omega: None,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        check_intensity(self.c)?;
        if !self.x0.is_finite() || !self.l.is_finite() {
            return Err(Error::invalid("x0/l", "must be finite"));
        }
        if let Some(w) = self.omega {
            if !w.is_finite() {
                return Err(Error::invalid("omega", "must be finite"));
            }
        }
        Ok(())
    }
}

pub(crate) fn check_intensity(c: f64) -> Result<()> {
    if c >= 0.0 && c.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidIntensity { c })
    }
}

/// Risk premium that is constant on each of the segments
/// `[knots[i], knots[i+1])`, with `knots[0] = 0` and the last knot the horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct PiecewiseSchedule {
    knots: Vec<f64>,
    values: Vec<Vec<f64>>,
}

impl PiecewiseSchedule {
    pub fn constant(value: Vec<f64>, horizon: f64) -> Result<Self> {
        Self::new(alloc::vec![0.0, horizon], alloc::vec![value])
    }

    pub fn new(knots: Vec<f64>, values: Vec<Vec<f64>>) -> Result<Self> {
        if values.is_empty() || knots.len() != values.len() + 1 {
            return Err(Error::invalid(
                "schedule",
                "need exactly one more knot than segments",
            ));
        }
        if knots[0] != 0.0 {
            return Err(Error::invalid("schedule", "first knot must be 0"));
        }
        if knots.windows(2).any(|w| !(w[1] > w[0])) || !knots[knots.len() - 1].is_finite() {
            return Err(Error::invalid(
                "schedule",
                "knots must be strictly increasing",
            ));
        }
        let d = values[0].len();
        if d == 0 {
            return Err(Error::invalid(
                "schedule",
                "values must be non-empty vectors",
            ));
        }
        for v in &values {
            if v.len() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    got: v.len(),
                });
            }
        }
        Ok(PiecewiseSchedule { knots, values })
    }

    pub fn horizon(&self) -> f64 {
        self.knots[self.knots.len() - 1]
    }

    pub fn dim(&self) -> usize {
        self.values[0].len()
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn values(&self) -> &[Vec<f64>] {
        &self.values
    }

    fn check_time(&self, t: f64) -> Result<()> {
        let horizon = self.horizon();
        if t >= 0.0 && t <= horizon {
            Ok(())
        } else {
            Err(Error::OutOfRange { t, horizon })
        }
    }

    /// Value of the segment containing `t`; the horizon belongs to the last one.
    pub fn value_at(&self, t: f64) -> Result<&[f64]> {
        self.check_time(t)?;
        let idx = self.knots[1..self.knots.len() - 1].partition_point(|&k| k <= t);
        Ok(&self.values[idx])
    }

    /// `int_t^T rho_s' rho_s ds`.
    pub fn integral_sq(&self, t: f64) -> Result<f64> {
        self.check_time(t)?;
        Ok(self
            .segments_from(t)
            .map(|(a, b, v)| math::norm_sq(v) * (b - a))
            .sum())
    }

    /// `int_t^T int_s^T rho_u' rho_u du ds = int_t^T (s - t) rho_s' rho_s ds`.
    pub fn tail_double_integral_sq(&self, t: f64) -> Result<f64> {
        self.check_time(t)?;
        Ok(self
            .segments_from(t)
            .map(|(a, b, v)| math::norm_sq(v) * ((b - t) * (b - t) - (a - t) * (a - t)) / 2.0)
            .sum())
    }

    /// `int_t^T rho_s' other ds` for a fixed vector `other`.
    pub fn integral_dot(&self, t: f64, other: &[f64]) -> Result<f64> {
        self.check_time(t)?;
        if other.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: other.len(),
            });
        }
        Ok(self
            .segments_from(t)
            .map(|(a, b, v)| math::dot(v, other) * (b - a))
            .sum())
    }

    fn segments_from(&self, t: f64) -> impl Iterator<Item = (f64, f64, &[f64])> + '_ {
        self.knots
            .windows(2)
            .zip(&self.values)
            .filter(move |(w, _)| w[1] > t)
            .map(move |(w, v)| (w[0].max(t), w[1], v.as_slice()))
    }
}

/// `int_t^T rho_s' rho_s ds`, with `horizon` checked against the schedule.
pub fn integral_rho_sq(schedule: &PiecewiseSchedule, t: f64, horizon: f64) -> Result<f64> {
    if (schedule.horizon() - horizon).abs() > 1e-12 * horizon.abs().max(1.0) {
        return Err(Error::invalid(
            "T",
            format!("schedule ends at {}, not {horizon}", schedule.horizon()),
        ));
    }
    schedule.integral_sq(t)
}

/// Uniform mesh `t_i = i T / n`, `i = 0..=n`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    steps: usize,
    horizon: f64,
}

impl TimeGrid {
    pub fn new(steps: usize, horizon: f64) -> Result<Self> {
        if steps == 0 {
            return Err(Error::invalid("steps", "must be at least 1"));
        }
        if !(horizon > 0.0) || !horizon.is_finite() {
            return Err(Error::invalid("T", "horizon must be positive"));
        }
        Ok(TimeGrid { steps, horizon })
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.steps as f64
    }

    pub fn node(&self, i: usize) -> f64 {
        if i == self.steps {
            self.horizon
        } else {
            self.horizon * i as f64 / self.steps as f64
        }
    }

    pub fn nodes(&self) -> impl Iterator<Item = f64> + '_ {
        (0..=self.steps).map(|i| self.node(i))
    }
}
