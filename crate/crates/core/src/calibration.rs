//! Calibration of the risk premium on price data: historical volatility,
//! window pools, stochastic-gradient training with Adam and the robust
//! backtest over scaled premia.

use alloc::string::String;
use alloc::vec::Vec;
use core::ops::Range;

use chrono::{Datelike, Months, NaiveDate, Weekday};
use rand::Rng;

use crate::adam::Adam;
use crate::error::{Error, Result};
use crate::exec::Executor;
use crate::math;
use crate::rng::{self, Purpose};

pub const DEFAULT_RATE: f64 = 0.02;
pub const DEFAULT_TRADING_DAYS: usize = 252;

#[derive(Debug, Clone, PartialEq)]
pub struct PriceSeries {
    symbol: String,
    dates: Vec<NaiveDate>,
    prices: Vec<f64>,
    trading_days_per_year: usize,
}

impl PriceSeries {
    pub fn new(
        symbol: impl Into<String>,
        dates: Vec<NaiveDate>,
        prices: Vec<f64>,
        trading_days_per_year: usize,
    ) -> Result<Self> {
        if dates.len() != prices.len() {
            return Err(Error::DimensionMismatch {
                expected: dates.len(),
                got: prices.len(),
            });
        }
        if trading_days_per_year < 2 {
            return Err(Error::invalid(
                "trading_days_per_year",
                "must be at least 2",
            ));
        }
        if let Some(index) = prices.iter().position(|&p| !(p > 0.0) || !p.is_finite()) {
            return Err(Error::NonPositivePrice {
                index,
                price: prices[index],
            });
        }
        if let Some(i) = dates.windows(2).position(|w| w[1] <= w[0]) {
            return Err(Error::UnsortedDates { index: i + 1 });
        }
        Ok(PriceSeries {
            symbol: symbol.into(),
            dates,
            prices,
            trading_days_per_year,
        })
    }

    pub fn symbol(&self) -> &str {
        &self.symbol
    }

    pub fn dates(&self) -> &[NaiveDate] {
        &self.dates
    }

    pub fn prices(&self) -> &[f64] {
        &self.prices
    }

    pub fn trading_days_per_year(&self) -> usize {
        self.trading_days_per_year
    }

    pub fn len(&self) -> usize {
        self.prices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prices.is_empty()
    }
}

/// Prices multiplied by `e^{-r t}`, `t` the ACT/365 year fraction from the
/// first date.
pub fn discount(series: &PriceSeries, rate: f64) -> PriceSeries {
    let mut out = series.clone();
    if let Some(&first) = series.dates.first() {
        for (p, d) in out.prices.iter_mut().zip(&series.dates) {
            let t = (*d - first).num_days() as f64 / 365.0;
            *p *= math::exp(-rate * t);
        }
    }
    out
}

pub fn log_returns(prices: &[f64]) -> Vec<f64> {
    prices.windows(2).map(|w| math::ln(w[1] / w[0])).collect()
}

fn window_vol(log_ret: &[f64]) -> f64 {
    let n = log_ret.len() as f64;
    let mean = log_ret.iter().sum::<f64>() / n;
    let ss: f64 = log_ret.iter().map(|r| (r - mean) * (r - mean)).sum();
    math::sqrt(n) * math::sqrt(ss / (n - 1.0))
}

/// `sqrt(n) * Std(ln(P_{i+1}/P_i))` over every window of `window` returns,
/// averaged across windows (stride one day).
pub fn historical_vol(prices: &[f64], window: usize) -> Result<f64> {
    let available = prices.len().saturating_sub(1);
    if window < 2 || window > available {
        return Err(Error::WindowTooLarge { window, available });
    }
    let lr = log_returns(prices);
    let count = lr.len() - window + 1;
    let total: f64 = (0..count).map(|s| window_vol(&lr[s..s + window])).sum();
    Ok(total / count as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SplitSpec {
    pub train_years: u32,
    pub valid_years: u32,
    pub test_years: u32,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            train_years: 7,
            valid_years: 3,
            test_years: 3,
        }
    }
}

/// Overlapping windows of `window` returns (`window + 1` prices), stride 1.
#[derive(Debug, Clone, PartialEq)]
pub struct DataPool {
    pub split: Split,
    pub windows: Vec<Vec<f64>>,
    /// Index into the full series of each window's first price.
    pub start_index: Vec<usize>,
}

impl DataPool {
    pub fn len(&self) -> usize {
        self.windows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.windows.is_empty()
    }
}

pub fn clip_windows(prices: &[f64], window: usize) -> Result<Vec<Vec<f64>>> {
    if window == 0 || prices.len() < window + 1 {
        return Err(Error::InsufficientData(alloc::format!(
            "{} prices cannot hold a window of {window} returns",
            prices.len()
        )));
    }
    Ok(prices.windows(window + 1).map(|w| w.to_vec()).collect())
}

/// Index ranges of the three consecutive splits, measured in calendar years
/// from the first date.
pub fn split_ranges(series: &PriceSeries, spec: SplitSpec) -> Result<[Range<usize>; 3]> {
    let first = *series
        .dates
        .first()
        .ok_or_else(|| Error::InsufficientData("empty series".into()))?;
    let boundary = |years: u32| {
        first
            .checked_add_months(Months::new(12 * years))
            .ok_or_else(|| Error::invalid("split", "date overflow"))
    };
    let b1 = boundary(spec.train_years)?;
    let b2 = boundary(spec.train_years + spec.valid_years)?;
    let b3 = boundary(spec.train_years + spec.valid_years + spec.test_years)?;
    let idx = |b: NaiveDate| series.dates.partition_point(|d| *d < b);
    let (i1, i2, i3) = (idx(b1), idx(b2), idx(b3));
    Ok([0..i1, i1..i2, i2..i3])
}

#[derive(Debug, Clone, PartialEq)]
pub struct Pools {
    pub train: DataPool,
    pub valid: DataPool,
    pub test: DataPool,
    pub ranges: [Range<usize>; 3],
}

pub fn build_pool(series: &PriceSeries, spec: SplitSpec, window: usize) -> Result<Pools> {
    let ranges = split_ranges(series, spec)?;
    let make = |split: Split, r: &Range<usize>| -> Result<DataPool> {
        let windows = clip_windows(&series.prices[r.clone()], window).map_err(|_| {
            Error::InsufficientData(alloc::format!(
                "{} split has {} prices, a window needs {}",
                split.name(),
                r.len(),
                window + 1
            ))
        })?;
        let start_index = (r.start..r.start + windows.len()).collect();
        Ok(DataPool {
            split,
            windows,
            start_index,
        })
    };
    Ok(Pools {
        train: make(Split::Train, &ranges[0])?,
        valid: make(Split::Valid, &ranges[1])?,
        test: make(Split::Test, &ranges[2])?,
        ranges,
    })
}

/// Negative differential entropy of the sampled controls summed over the
/// window: `-(c/2) sum_i ln(2 pi e Var(v_i))` with
/// `Var(v_i) = (c/2) e^{rho^2 (T - t_i)} / sigma^2`, i.e.
/// `-(c/2) sum_i ln(pi e c / (sigma^2 e^{-rho^2 (T - t_i)}))`.
pub fn explore_loss(sigma_hat: f64, rho: f64, c: f64, n: usize, horizon: f64) -> Result<f64> {
    if !(c > 0.0) || !c.is_finite() {
        return Err(Error::InvalidIntensity { c });
    }
    if !(sigma_hat > 0.0) || !sigma_hat.is_finite() {
        return Err(Error::invalid("sigma_hat", "must be positive"));
    }
    let base = math::ln(math::PI * math::E * c / (sigma_hat * sigma_hat));
    Ok(-c / 2.0 * (n as f64 * base + rho * rho * remaining_time_sum(n, horizon)))
}

/// `sum_{i<n} (T - t_i)` with `t_i = i T / n`.
fn remaining_time_sum(n: usize, horizon: f64) -> f64 {
    horizon * (n as f64 + 1.0) / 2.0
}

fn explore_loss_grad(rho: f64, c: f64, n: usize, horizon: f64) -> f64 {
    -c * rho * remaining_time_sum(n, horizon)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GradientMode {
    /// Differentiate the rollout with the control noise held fixed.
    Pathwise,
    /// Central differences of the batch loss with shared noise.
    FiniteDifference { step: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Hyperparams {
    pub batch: usize,
    pub steps: usize,
    pub x0: f64,
    pub l: f64,
    pub c: f64,
    /// Horizon of one window in years.
    pub horizon: f64,
    pub lr_a: f64,
    pub lr_b: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub scalings: Vec<f64>,
    pub rho_init: f64,
    pub omega_init: Option<f64>,
    pub rho_max: f64,
    pub loss_guard: f64,
    pub gradient: GradientMode,
    /// Control draws per test window in the backtest.
    pub draws_per_window: usize,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Hyperparams {
            batch: 512,
            steps: 10_000,
            x0: 1.0,
            l: 1.2,
            c: 0.001,
            horizon: 1.0,
            lr_a: 0.01,
            lr_b: 0.0002,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            scalings: alloc::vec![0.4, 0.6, 0.8, 1.0],
            rho_init: 0.5,
            omega_init: None,
            rho_max: 10.0,
            loss_guard: 1e6,
            gradient: GradientMode::Pathwise,
            draws_per_window: 16,
        }
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Result<()> {
        let positive = |name: &'static str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::invalid(
                    name,
                    alloc::format!("must be positive, got {v}"),
                ))
            }
        };
        if self.batch == 0 {
            return Err(Error::invalid("batch", "must be at least 1"));
        }
        if self.draws_per_window == 0 {
            return Err(Error::invalid("draws_per_window", "must be at least 1"));
        }
        if self.c <= 0.0 || !self.c.is_finite() {
            return Err(Error::InvalidIntensity { c: self.c });
        }
        positive("horizon", self.horizon)?;
        positive("lr_a", self.lr_a)?;
        if !(self.lr_b >= 0.0) {
            return Err(Error::invalid("lr_b", "must be >= 0"));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::invalid("beta", "decay rates must lie in [0, 1)"));
        }
        positive("adam_eps", self.adam_eps)?;
        positive("rho_init", self.rho_init)?;
        positive("rho_max", self.rho_max)?;
        positive("loss_guard", self.loss_guard)?;
        if self.rho_init > self.rho_max {
            return Err(Error::invalid("rho_init", "exceeds rho_max"));
        }
        if self.scalings.iter().any(|&r| !(r > 0.0) || !r.is_finite()) {
            return Err(Error::invalid("scalings", "must be positive"));
        }
        if let GradientMode::FiniteDifference { step } = self.gradient {
            positive("gradient step", step)?;
        }
        if !self.x0.is_finite() || !self.l.is_finite() {
            return Err(Error::invalid("x0/l", "must be finite"));
        }
        Ok(())
    }

    /// `lr_k = a e^{-b k}`.
    pub fn learning_rate(&self, k: usize) -> f64 {
        self.lr_a * math::exp(-self.lr_b * k as f64)
    }

    /// `omega_init` if set, else `l + |l - x0| / 2`.
    pub fn initial_omega(&self) -> f64 {
        self.omega_init
            .unwrap_or(self.l + 0.5 * (self.l - self.x0).abs())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationResult {
    pub rho: f64,
    pub omega: f64,
    pub sigma_train: f64,
    pub sigma_valid: f64,
    pub loss_history: Vec<f64>,
    pub seed: u64,
}

/// Terminal wealth of one window and its derivative in `rho`.
fn rollout(
    returns: &[f64],
    z: &[f64],
    rho: f64,
    omega: f64,
    sigma_hat: f64,
    c: f64,
    x0: f64,
    horizon: f64,
) -> (f64, f64) {
    let n = returns.len();
    let dt = horizon / n as f64;
    let (mut x, mut dx) = (x0, 0.0);
    for (i, (&r, &zi)) in returns.iter().zip(z).enumerate() {
        let tau = horizon - i as f64 * dt;
        let s = math::sqrt(c / 2.0 * math::exp(rho * rho * tau)) / sigma_hat;
        let v = rho / sigma_hat * (omega - x) + s * zi;
        let dv = (omega - x) / sigma_hat - rho / sigma_hat * dx + s * rho * tau * zi;
        x += v * r;
        dx += dv * r;
    }
    (x, dx)
}

fn simple_returns(prices: &[f64]) -> Vec<f64> {
    prices.windows(2).map(|w| w[1] / w[0] - 1.0).collect()
}

fn pool_returns(pool: &DataPool) -> Result<(Vec<Vec<f64>>, usize)> {
    if pool.is_empty() {
        return Err(Error::InsufficientData(alloc::format!(
            "{} pool is empty",
            pool.split.name()
        )));
    }
    let returns: Vec<Vec<f64>> = pool.windows.iter().map(|w| simple_returns(w)).collect();
    let n = returns[0].len();
    if n == 0 || returns.iter().any(|r| r.len() != n) {
        return Err(Error::InsufficientData(
            "windows must share one positive length".into(),
        ));
    }
    Ok((returns, n))
}

/// Trains `rho` with Adam on the batch loss
/// `mean((X_n - omega)^2) - (omega - l)^2 + explore_loss`, treating `omega` as
/// fixed within a step, then moves `omega` by `-lr (mean(X_n) - l)`.
pub fn calibrate<E: Executor>(
    train: &DataPool,
    sigma_train: f64,
    sigma_valid: f64,
    hp: &Hyperparams,
    seed: u64,
    exec: &E,
) -> Result<CalibrationResult> {
    hp.validate()?;
    if !(sigma_train > 0.0) || !(sigma_valid > 0.0) {
        return Err(Error::invalid(
            "sigma_hat",
            "estimated volatilities must be positive",
        ));
    }
    let (returns, n) = pool_returns(train)?;
    let mut rho = hp.rho_init;
    let mut omega = hp.initial_omega();
    let mut adam = Adam::new(hp.beta1, hp.beta2, hp.adam_eps);
    let mut loss_history = Vec::with_capacity(hp.steps);
    let (c, x0, horizon) = (hp.c, hp.x0, hp.horizon);
    for k in 0..hp.steps {
        let lr = hp.learning_rate(k);
        let draws = exec.map_range(hp.batch, |j| {
            let mut r = rng::stream(
                seed,
                Purpose::BatchSampling,
                rng::pair_index(k as u64, j as u64),
            );
            let w = r.random_range(0..returns.len());
            let mut z = alloc::vec![0.0; n];
            rng::fill_normals(&mut r, &mut z);
            let ret = &returns[w];
            let (x, dx) = rollout(ret, &z, rho, omega, sigma_train, c, x0, horizon);
            let fd = match hp.gradient {
                GradientMode::Pathwise => (0.0, 0.0),
                GradientMode::FiniteDifference { step } => (
                    rollout(ret, &z, rho + step, omega, sigma_train, c, x0, horizon).0,
                    rollout(ret, &z, rho - step, omega, sigma_train, c, x0, horizon).0,
                ),
            };
            (x, dx, fd)
        });
        let m = hp.batch as f64;
        let mean_x = draws.iter().map(|d| d.0).sum::<f64>() / m;
        let sq = |x: f64| (x - omega) * (x - omega);
        let terminal_loss =
            draws.iter().map(|d| sq(d.0)).sum::<f64>() / m - (omega - hp.l) * (omega - hp.l);
        let loss = terminal_loss + explore_loss(sigma_train, rho, c, n, horizon)?;
        let grad = match hp.gradient {
            GradientMode::Pathwise => {
                draws.iter().map(|d| 2.0 * (d.0 - omega) * d.1).sum::<f64>() / m
                    + explore_loss_grad(rho, c, n, horizon)
            }
            GradientMode::FiniteDifference { step } => {
                let up = draws.iter().map(|d| sq(d.2 .0)).sum::<f64>() / m
                    + explore_loss(sigma_train, rho + step, c, n, horizon)?;
                let dn = draws.iter().map(|d| sq(d.2 .1)).sum::<f64>() / m
                    + explore_loss(sigma_train, rho - step, c, n, horizon)?;
                (up - dn) / (2.0 * step)
            }
        };
        if !grad.is_finite() || !mean_x.is_finite() {
            return Err(Error::NonFinite { step: k });
        }
        if !(loss.abs() <= hp.loss_guard) {
            return Err(Error::Divergence {
                step: k,
                reason: alloc::format!("loss {loss} exceeds guard"),
            });
        }
        loss_history.push(loss);
        rho = adam.step(rho, grad, lr);
        omega -= lr * (mean_x - hp.l);
        if !(rho > 0.0 && rho <= hp.rho_max) {
            return Err(Error::Divergence {
                step: k,
                reason: alloc::format!("rho = {rho} left (0, {}]", hp.rho_max),
            });
        }
    }
    Ok(CalibrationResult {
        rho,
        omega,
        sigma_train,
        sigma_valid,
        loss_history,
        seed,
    })
}

/// Pathwise gradient and its finite-difference counterpart for one batch,
/// exposed for verification.
pub fn batch_gradients(
    returns: &[Vec<f64>],
    noise: &[Vec<f64>],
    rho: f64,
    omega: f64,
    sigma_hat: f64,
    hp: &Hyperparams,
    step: f64,
) -> Result<(f64, f64)> {
    if returns.is_empty() || returns.len() != noise.len() {
        return Err(Error::DimensionMismatch {
            expected: returns.len(),
            got: noise.len(),
        });
    }
    let n = returns[0].len();
    let m = returns.len() as f64;
    let (c, x0, t) = (hp.c, hp.x0, hp.horizon);
    let loss = |r: f64| -> Result<f64> {
        let s: f64 = returns
            .iter()
            .zip(noise)
            .map(|(ret, z)| {
                let x = rollout(ret, z, r, omega, sigma_hat, c, x0, t).0;
                (x - omega) * (x - omega)
            })
            .sum();
        Ok(s / m + explore_loss(sigma_hat, r, c, n, t)?)
    };
    let pathwise = returns
        .iter()
        .zip(noise)
        .map(|(ret, z)| {
            let (x, dx) = rollout(ret, z, rho, omega, sigma_hat, c, x0, t);
            2.0 * (x - omega) * dx
        })
        .sum::<f64>()
        / m
        + explore_loss_grad(rho, c, n, t);
    let fd = (loss(rho + step)? - loss(rho - step)?) / (2.0 * step);
    Ok((pathwise, fd))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PerformanceRow {
    pub scaling: f64,
    pub rho_star: f64,
    pub test_loss: f64,
    pub test_mean: f64,
    pub test_variance: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PerformanceReport {
    pub rows: Vec<PerformanceRow>,
    pub windows: usize,
    pub draws_per_window: usize,
    pub sigma_valid: f64,
    pub omega: f64,
}

/// Replays the policy with `rho* = R rho` for every scaling `R` on every test
/// window. Control draws depend on (window, draw) only, so all scalings share
/// them.
pub fn backtest<E: Executor>(
    result: &CalibrationResult,
    test: &DataPool,
    sigma_valid: f64,
    hp: &Hyperparams,
    seed: u64,
    exec: &E,
) -> Result<PerformanceReport> {
    hp.validate()?;
    if !result.rho.is_finite() || !result.omega.is_finite() {
        return Err(Error::invalid(
            "calibration",
            "rho and omega must be finite",
        ));
    }
    if !(sigma_valid > 0.0) {
        return Err(Error::invalid("sigma_valid", "must be positive"));
    }
    let (returns, n) = pool_returns(test)?;
    let draws = hp.draws_per_window;
    let noise: Vec<Vec<f64>> = exec.map_range(returns.len() * draws, |i| {
        let mut r = rng::stream(seed, Purpose::Backtest, i as u64);
        let mut z = alloc::vec![0.0; n];
        rng::fill_normals(&mut r, &mut z);
        z
    });
    let omega = result.omega;
    let mut rows = Vec::with_capacity(hp.scalings.len());
    for &scaling in &hp.scalings {
        let rho_star = scaling * result.rho;
        let xs = exec.map_range(noise.len(), |i| {
            rollout(
                &returns[i / draws],
                &noise[i],
                rho_star,
                omega,
                sigma_valid,
                hp.c,
                hp.x0,
                hp.horizon,
            )
            .0
        });
        let m = crate::simulator::moments_of(&xs).or_else(|_| {
            Ok::<_, Error>(crate::simulator::Moments {
                count: 1,
                mean: xs[0],
                variance: 0.0,
                se_mean: 0.0,
                se_variance: 0.0,
            })
        })?;
        let terminal = xs.iter().map(|x| (x - omega) * (x - omega)).sum::<f64>() / xs.len() as f64
            - (omega - hp.l) * (omega - hp.l);
        rows.push(PerformanceRow {
            scaling,
            rho_star,
            test_loss: terminal + explore_loss(sigma_valid, rho_star, hp.c, n, hp.horizon)?,
            test_mean: m.mean,
            test_variance: m.variance,
        });
    }
    Ok(PerformanceReport {
        rows,
        windows: returns.len(),
        draws_per_window: draws,
        sigma_valid,
        omega,
    })
}

/// Synthetic geometric Brownian motion price series for testing the
/// calibration pipeline.
pub mod synthetic {
    use super::*;

    #[derive(Debug, Clone, Copy, PartialEq)]
    pub struct GbmSegment {
        pub years: u32,
        /// Sharpe ratio of the excess log-drift.
        pub rho: f64,
        pub sigma: f64,
    }

    #[derive(Debug, Clone, PartialEq)]
    pub struct GbmSpec {
        pub start_year: i32,
        pub segments: Vec<GbmSegment>,
        /// Risk-free rate added to the drift; discounting at the same rate
        /// recovers excess returns.
        pub rate: f64,
        pub days_per_year: usize,
        pub initial_price: f64,
        /// Standardize each year's normals to exact zero mean and unit variance.
        pub moment_matched: bool,
    }

    impl GbmSpec {
        pub fn new(start_year: i32, segments: Vec<GbmSegment>) -> Self {
            GbmSpec {
                start_year,
                segments,
                rate: DEFAULT_RATE,
                days_per_year: DEFAULT_TRADING_DAYS,
                initial_price: 100.0,
                moment_matched: true,
            }
        }
    }

    /// `days` weekdays of `year`, evenly thinned from all of its weekdays.
    fn trading_dates(year: i32, days: usize) -> Result<Vec<NaiveDate>> {
        let mut all = Vec::with_capacity(262);
        let mut d = NaiveDate::from_ymd_opt(year, 1, 1)
            .ok_or_else(|| Error::invalid("start_year", "out of range"))?;
        while d.year() == year {
            if !matches!(d.weekday(), Weekday::Sat | Weekday::Sun) {
                all.push(d);
            }
            d = d
                .succ_opt()
                .ok_or_else(|| Error::invalid("start_year", "out of range"))?;
        }
        if days > all.len() {
            return Err(Error::invalid(
                "days_per_year",
                "more trading days than weekdays",
            ));
        }
        Ok((0..days).map(|i| all[i * all.len() / days]).collect())
    }

    /// One price on Dec 31 of the year before `start_year`, then
    /// `days_per_year` prices in each following year. Year `k` draws from its
    /// own stream, so specs sharing leading segments share those years.
    pub fn gbm_series(spec: &GbmSpec, seed: u64) -> Result<PriceSeries> {
        if spec.segments.is_empty() || spec.days_per_year < 2 || !(spec.initial_price > 0.0) {
            return Err(Error::invalid(
                "gbm",
                "need segments, >= 2 days per year and a positive price",
            ));
        }
        let mut dates = alloc::vec![NaiveDate::from_ymd_opt(spec.start_year - 1, 12, 31)
            .ok_or_else(|| Error::invalid("start_year", "out of range"))?];
        let mut prices = alloc::vec![spec.initial_price];
        let dt = 1.0 / spec.days_per_year as f64;
        let mut year_index = 0u64;
        for seg in &spec.segments {
            if !(seg.sigma > 0.0) || !seg.rho.is_finite() {
                return Err(Error::invalid(
                    "gbm",
                    "segment needs sigma > 0 and finite rho",
                ));
            }
            let mu = spec.rate + seg.sigma * seg.rho;
            for _ in 0..seg.years {
                let year = spec.start_year + year_index as i32;
                let mut r = rng::stream(seed, Purpose::Synthetic, year_index);
                let mut z = alloc::vec![0.0; spec.days_per_year];
                rng::fill_normals(&mut r, &mut z);
                if spec.moment_matched {
                    let n = z.len() as f64;
                    let mean = z.iter().sum::<f64>() / n;
                    let sd = math::sqrt(z.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n);
                    for v in &mut z {
                        *v = (*v - mean) / sd;
                    }
                }
                for (date, zi) in trading_dates(year, spec.days_per_year)?.into_iter().zip(&z) {
                    let last = prices[prices.len() - 1];
                    prices.push(
                        last * math::exp(
                            (mu - seg.sigma * seg.sigma / 2.0) * dt
                                + seg.sigma * math::sqrt(dt) * zi,
                        ),
                    );
                    dates.push(date);
                }
                year_index += 1;
            }
        }
        PriceSeries::new("SYNTH", dates, prices, spec.days_per_year)
    }
}

#[cfg(test)]
mod tests {
    use super::synthetic::*;
    use super::*;
    use crate::exec::Sequential;
    use alloc::vec;
    use approx::assert_relative_eq;

    fn date(y: i32, m: u32, d: u32) -> NaiveDate {
        NaiveDate::from_ymd_opt(y, m, d).unwrap()
    }

    #[test]
    fn series_validation() {
        let ok = PriceSeries::new(
            "X",
            vec![date(2020, 1, 1), date(2020, 1, 2), date(2020, 1, 3)],
            vec![1.0, 2.0, 3.0],
            252,
        );
        assert_eq!(ok.unwrap().len(), 3);
        assert_eq!(
            PriceSeries::new(
                "X",
                vec![date(2020, 1, 1), date(2020, 1, 2)],
                vec![1.0, 0.0],
                252
            ),
            Err(Error::NonPositivePrice {
                index: 1,
                price: 0.0
            })
        );
        assert_eq!(
            PriceSeries::new(
                "X",
                vec![date(2020, 1, 2), date(2020, 1, 1)],
                vec![1.0, 1.0],
                252
            ),
            Err(Error::UnsortedDates { index: 1 })
        );
    }

    #[test]
    fn discount_over_one_year() {
        let s = PriceSeries::new(
            "X",
            vec![date(2021, 1, 1), date(2021, 7, 1), date(2022, 1, 1)],
            vec![100.0; 3],
            252,
        )
        .unwrap();
        let d = discount(&s, 0.02);
        assert_eq!(d.prices()[0], 100.0);
        assert_relative_eq!(
            d.prices()[2],
            100.0 * (-0.02f64).exp(),
            max_relative = 1e-14
        );
    }

    #[test]
    fn historical_vol_examples() {
        assert_eq!(historical_vol(&[5.0; 10], 4).unwrap(), 0.0);
        let mut p = vec![1.0];
        for i in 0..4 {
            let r: f64 = if i % 2 == 0 { 0.01 } else { -0.01 };
            p.push(p[i] * r.exp());
        }
        let want = 2.0 * (4.0 * 0.0001 / 3.0f64).sqrt();
        assert_relative_eq!(historical_vol(&p, 4).unwrap(), want, max_relative = 1e-10);
        assert_eq!(
            historical_vol(&p, 5),
            Err(Error::WindowTooLarge {
                window: 5,
                available: 4
            })
        );
    }

    #[test]
    fn historical_vol_recovers_gbm_sigma() {
        let mut spec = GbmSpec::new(
            2000,
            vec![GbmSegment {
                years: 20,
                rho: 0.3,
                sigma: 0.3,
            }],
        );
        spec.moment_matched = false;
        let s = gbm_series(&spec, 5).unwrap();
        let v = historical_vol(s.prices(), 252).unwrap();
        assert!((0.285..=0.315).contains(&v), "{v}");
    }

    #[test]
    fn window_counts_and_errors() {
        let prices: Vec<f64> = (0..505).map(|i| 100.0 + i as f64).collect();
        assert_eq!(clip_windows(&prices, 252).unwrap().len(), 253);
        assert!(matches!(
            clip_windows(&prices[..100], 252),
            Err(Error::InsufficientData(_))
        ));
    }

    #[test]
    fn splits_respect_boundaries() {
        let spec = GbmSpec::new(
            2001,
            vec![GbmSegment {
                years: 13,
                rho: 0.4,
                sigma: 0.2,
            }],
        );
        let s = gbm_series(&spec, 1).unwrap();
        let pools = build_pool(&s, SplitSpec::default(), 252).unwrap();
        assert_eq!(pools.ranges[0], 0..7 * 252 + 1);
        assert_eq!(pools.train.len(), 7 * 252 + 1 - 252);
        assert_eq!(pools.valid.len(), 3 * 252 - 252);
        for (pool, r) in [
            (&pools.train, &pools.ranges[0]),
            (&pools.valid, &pools.ranges[1]),
            (&pools.test, &pools.ranges[2]),
        ] {
            for (&start, w) in pool.start_index.iter().zip(&pool.windows) {
                assert!(start >= r.start && start + w.len() <= r.end);
                assert_eq!(w.len(), 253);
            }
        }
        let short = gbm_series(
            &GbmSpec::new(
                2001,
                vec![GbmSegment {
                    years: 8,
                    rho: 0.4,
                    sigma: 0.2,
                }],
            ),
            1,
        )
        .unwrap();
        assert!(matches!(
            build_pool(&short, SplitSpec::default(), 252),
            Err(Error::InsufficientData(_))
        ));
    }

    #[test]
    fn explore_loss_examples() {
        let c = 0.3;
        let zero = explore_loss(
            (core::f64::consts::PI * core::f64::consts::E * c).sqrt(),
            0.0,
            c,
            50,
            1.0,
        )
        .unwrap();
        assert!(zero.abs() < 1e-12);
        // Direct summation oracle.
        let (rho, c, s, n) = (0.1, 0.001, 0.2, 252);
        let mut want = 0.0;
        for i in 0..n {
            let t = i as f64 / n as f64;
            let var = c / 2.0 * (rho * rho * (1.0 - t)).exp() / (s * s);
            want += -(c / 2.0) * (2.0 * core::f64::consts::PI * core::f64::consts::E * var).ln();
        }
        assert_relative_eq!(
            explore_loss(s, rho, c, n, 1.0).unwrap(),
            want,
            max_relative = 1e-12
        );
        assert!(matches!(
            explore_loss(0.2, 0.1, 0.0, 10, 1.0),
            Err(Error::InvalidIntensity { .. })
        ));
    }

    #[test]
    fn explore_loss_monotonicity() {
        let mut prev = f64::NEG_INFINITY;
        for i in 1..50 {
            let v = explore_loss(0.02 * i as f64, 0.4, 0.001, 252, 1.0).unwrap();
            assert!(v > prev);
            prev = v;
        }
        let mut prev = f64::INFINITY;
        for i in 0..50 {
            let v = explore_loss(0.2, 0.05 * i as f64, 0.001, 252, 1.0).unwrap();
            assert!(v < prev);
            prev = v;
        }
    }

    #[test]
    fn learning_rate_schedule() {
        let hp = Hyperparams::default();
        assert_eq!(hp.learning_rate(0), 0.01);
        for k in 1..100 {
            assert_relative_eq!(
                hp.learning_rate(k) / hp.learning_rate(k - 1),
                (-0.0002f64).exp(),
                max_relative = 1e-14
            );
        }
        assert_relative_eq!(hp.initial_omega(), 1.3);
    }

    fn small_pool() -> Pools {
        let spec = GbmSpec::new(
            2001,
            vec![GbmSegment {
                years: 13,
                rho: 0.4,
                sigma: 0.2,
            }],
        );
        let s = discount(&gbm_series(&spec, 1).unwrap(), DEFAULT_RATE);
        build_pool(&s, SplitSpec::default(), 252).unwrap()
    }

    #[test]
    fn zero_steps_return_initialization() {
        let pools = small_pool();
        let hp = Hyperparams {
            steps: 0,
            ..Default::default()
        };
        let r = calibrate(&pools.train, 0.2, 0.2, &hp, 1, &Sequential).unwrap();
        assert_eq!(r.rho, 0.5);
        assert_eq!(r.omega, hp.initial_omega());
        assert!(r.loss_history.is_empty());
    }

    #[test]
    fn calibration_is_deterministic() {
        let pools = small_pool();
        let hp = Hyperparams {
            steps: 5,
            batch: 16,
            ..Default::default()
        };
        let a = calibrate(&pools.train, 0.2, 0.2, &hp, 9, &Sequential).unwrap();
        let b = calibrate(&pools.train, 0.2, 0.2, &hp, 9, &Sequential).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.loss_history.len(), 5);
    }

    #[test]
    fn pathwise_gradient_matches_finite_difference() {
        let pools = small_pool();
        let hp = Hyperparams::default();
        let returns: Vec<Vec<f64>> = pools.train.windows[..32]
            .iter()
            .map(|w| simple_returns(w))
            .collect();
        let mut r = rng::stream(4, Purpose::BatchSampling, 0);
        let noise: Vec<Vec<f64>> = (0..32)
            .map(|_| (0..252).map(|_| rng::normal(&mut r)).collect())
            .collect();
        let (pw, fd) = batch_gradients(&returns, &noise, 0.45, 1.35, 0.2, &hp, 1e-5).unwrap();
        assert!((pw - fd).abs() < 1e-6 * pw.abs().max(1.0), "{pw} vs {fd}");
    }

    #[test]
    fn omega_fixed_point() {
        // A pool of flat prices keeps X_n = x0 = l, so omega never moves.
        let dates: Vec<NaiveDate> = (0..400)
            .map(|i| date(2000, 1, 1) + chrono::Days::new(i))
            .collect();
        let s = PriceSeries::new("F", dates, vec![10.0; 400], 252).unwrap();
        let pool = DataPool {
            split: Split::Train,
            windows: clip_windows(s.prices(), 252).unwrap(),
            start_index: vec![],
        };
        let hp = Hyperparams {
            steps: 3,
            batch: 8,
            x0: 1.2,
            l: 1.2,
            omega_init: Some(1.7),
            ..Default::default()
        };
        let r = calibrate(&pool, 0.2, 0.2, &hp, 2, &Sequential).unwrap();
        assert_eq!(r.omega, 1.7);
    }

    #[test]
    fn backtest_constant_prices() {
        let prices = vec![10.0; 300];
        let pool = DataPool {
            split: Split::Test,
            windows: clip_windows(&prices, 252).unwrap(),
            start_index: vec![],
        };
        let res = CalibrationResult {
            rho: 0.4,
            omega: 1.3,
            sigma_train: 0.2,
            sigma_valid: 0.2,
            loss_history: vec![],
            seed: 0,
        };
        let hp = Hyperparams {
            draws_per_window: 2,
            ..Default::default()
        };
        let rep = backtest(&res, &pool, 0.2, &hp, 1, &Sequential).unwrap();
        assert_eq!(rep.rows.len(), 4);
        for w in rep.rows.windows(2) {
            assert!(w[0].rho_star < w[1].rho_star);
        }
        for row in &rep.rows {
            assert_eq!(row.test_mean, 1.0);
            assert_eq!(row.test_variance, 0.0);
        }
        assert_eq!(rep.rows[3].rho_star, 0.4);
    }

    #[test]
    fn training_makes_progress() {
        let pools = small_pool();
        let hp = Hyperparams {
            steps: 1500,
            batch: 32,
            ..Default::default()
        };
        let r = calibrate(&pools.train, 0.2, 0.2, &hp, 12, &Sequential).unwrap();
        let k = r.loss_history.len() / 10;
        let head: f64 = r.loss_history[..k].iter().sum::<f64>() / k as f64;
        let tail: f64 = r.loss_history[r.loss_history.len() - k..]
            .iter()
            .sum::<f64>()
            / k as f64;
        assert!(tail < head, "{tail} vs {head}");
    }
}
