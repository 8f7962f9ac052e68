//! Monte Carlo simulation of the exploratory wealth process under sampled
//! Gaussian controls (explicit Euler scheme), with paired misspecified and
//! robust runs on common noise.

use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::closed_form::{lagrange_multiplier, GaussianPolicy, ScenarioPair};
use crate::error::{Error, Result};
use crate::exec::Executor;
use crate::math;
use crate::model::{ProblemParams, TimeGrid, ValidatedMarket};
use crate::rng::{self, Purpose};

pub const DEFAULT_OVERFLOW_GUARD: f64 = 1e12;

/// Draws `mean + L z` with `L` the Cholesky factor of the covariance. A zero
/// covariance (classical policy) returns the mean without consuming draws.
pub fn sample_policy<R: Rng + ?Sized>(policy: &GaussianPolicy, rng: &mut R) -> Result<Vec<f64>> {
    let d = policy.mean.len();
    if policy.covariance.nrows() != d || policy.covariance.ncols() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: policy.covariance.nrows(),
        });
    }
    if policy.covariance.iter().all(|&v| v == 0.0) {
        return Ok(policy.mean.clone());
    }
    let chol =
        nalgebra::Cholesky::new(policy.covariance.clone()).ok_or(Error::FactorizationFailure)?;
    let z = DVector::from_iterator(d, (0..d).map(|_| rng::normal(rng)));
    let v = chol.l() * z;
    Ok(policy
        .mean
        .iter()
        .zip(v.iter())
        .map(|(m, e)| m + e)
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Which {
    Misspecified,
    Robust,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NoiseCoupling {
    /// Both ensembles see the same Brownian increments.
    #[default]
    Common,
    Independent,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub paths: usize,
    pub steps: usize,
    pub seed: u64,
    pub record_paths: bool,
    /// `rho_market` drives the simulated market.
    pub scenario: ScenarioPair,
    pub market: ValidatedMarket,
    pub problem: ProblemParams,
    pub overflow_guard: f64,
    pub noise: NoiseCoupling,
    /// Diagnostic: let the robust ensemble reuse the misspecified control draws.
    pub shared_control_streams: bool,
}

impl SimConfig {
    pub fn new(
        market: ValidatedMarket,
        problem: ProblemParams,
        scenario: ScenarioPair,
        paths: usize,
        steps: usize,
        seed: u64,
    ) -> Result<Self> {
        let cfg = SimConfig {
            paths,
            steps,
            seed,
            record_paths: false,
            scenario,
            market,
            problem,
            overflow_guard: DEFAULT_OVERFLOW_GUARD,
            noise: NoiseCoupling::Common,
            shared_control_streams: false,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.paths == 0 {
            return Err(Error::invalid("paths", "must be at least 1"));
        }
        TimeGrid::new(self.steps, self.market.horizon())?;
        self.problem.validate()?;
        if self.scenario.dim() != self.market.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.market.dim(),
                got: self.scenario.dim(),
            });
        }
        if !(self.overflow_guard > 0.0) {
            return Err(Error::invalid("overflow_guard", "must be positive"));
        }
        Ok(())
    }

    fn rho_used(&self, which: Which) -> Result<&[f64]> {
        match which {
            Which::Misspecified => Ok(&self.scenario.rho_invest),
            Which::Robust => self
                .scenario
                .rho_robust
                .as_deref()
                .ok_or_else(|| Error::invalid("rho_robust", "robust scenario is not set")),
        }
    }

    fn streams(&self, which: Which) -> (Purpose, Purpose) {
        match which {
            Which::Misspecified => (Purpose::Noise, Purpose::ControlMisspecified),
            Which::Robust => {
                let noise = match self.noise {
                    NoiseCoupling::Common => Purpose::Noise,
                    NoiseCoupling::Independent => Purpose::NoiseIndependent,
                };
                let control = if self.shared_control_streams {
                    Purpose::ControlMisspecified
                } else {
                    Purpose::ControlRobust
                };
                (noise, control)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WealthEnsemble {
    pub which: Which,
    pub terminal: Vec<f64>,
    /// Per-path wealth at every node when recording was requested.
    pub paths: Option<Vec<Vec<f64>>>,
    /// Paths stopped by the overflow guard; their last finite value is kept.
    pub overflowed: Vec<usize>,
    pub seed: u64,
    pub noise_stream: Purpose,
    pub control_stream: Purpose,
    pub omega: f64,
    pub rho_used: Vec<f64>,
    pub steps: usize,
}

impl WealthEnsemble {
    /// Terminal values of the paths that stayed inside the guard.
    pub fn finite_terminal(&self) -> Vec<f64> {
        let mut skip = self.overflowed.iter().peekable();
        self.terminal
            .iter()
            .enumerate()
            .filter_map(|(i, &x)| {
                if skip.peek() == Some(&&i) {
                    skip.next();
                    None
                } else {
                    Some(x)
                }
            })
            .collect()
    }
}

struct Plan<'a> {
    rho_used: &'a [f64],
    drift: Vec<f64>,
    sqrt_dt: f64,
    /// `sigma * chol((c/2)(sigma'sigma)^{-1})` scaled by `e^{q (T - t_i)/2}`.
    factors: Vec<DMatrix<f64>>,
    omega: f64,
    x0: f64,
    guard: f64,
}

struct PathResult {
    terminal: f64,
    path: Option<Vec<f64>>,
    overflowed: bool,
}

fn run_path(
    plan: &Plan<'_>,
    cfg: &SimConfig,
    noise: Purpose,
    control: Purpose,
    index: usize,
) -> PathResult {
    let d = plan.rho_used.len();
    let mut noise_rng = rng::stream(cfg.seed, noise, index as u64);
    let mut ctrl_rng = rng::stream(cfg.seed, control, index as u64);
    let mut z = alloc::vec![0.0; d];
    let mut dw = alloc::vec![0.0; d];
    let mut x = plan.x0;
    let mut path = cfg.record_paths.then(|| {
        let mut p = Vec::with_capacity(cfg.steps + 1);
        p.push(x);
        p
    });
    for factor in plan.factors.iter().take(cfg.steps) {
        rng::fill_normals(&mut noise_rng, &mut dw);
        // sigma v = rho_used (omega - x) + F z, and the increment is
        // (sigma v)'(rho_hat dt + dW).
        let gap = plan.omega - x;
        let mut inc = 0.0;
        if factor.nrows() > 0 {
            rng::fill_normals(&mut ctrl_rng, &mut z);
        }
        for j in 0..d {
            let mut sv = plan.rho_used[j] * gap;
            if factor.nrows() > 0 {
                for (k, zk) in z.iter().enumerate() {
                    sv += factor[(j, k)] * zk;
                }
            }
            inc += sv * (plan.drift[j] + plan.sqrt_dt * dw[j]);
        }
        let next = x + inc;
        if !(next.abs() <= plan.guard) {
            return PathResult {
                terminal: x,
                path,
                overflowed: true,
            };
        }
        x = next;
        if let Some(p) = path.as_mut() {
            p.push(x);
        }
    }
    PathResult {
        terminal: x,
        path,
        overflowed: false,
    }
}

pub fn simulate<E: Executor>(cfg: &SimConfig, which: Which, exec: &E) -> Result<WealthEnsemble> {
    cfg.validate()?;
    let rho_used = cfg.rho_used(which)?;
    let rho_hat = &cfg.scenario.rho_market;
    let horizon = cfg.market.horizon();
    let omega = match cfg.problem.omega {
        Some(w) => w,
        None => lagrange_multiplier(rho_used, rho_hat, cfg.problem.x0, cfg.problem.l, horizon)?,
    };
    let grid = TimeGrid::new(cfg.steps, horizon)?;
    let dt = grid.dt();
    let vol = cfg.market.volatility();
    let c = cfg.problem.c;
    let q = math::norm_sq(rho_used);
    let factors = if c == 0.0 {
        alloc::vec![DMatrix::zeros(0, 0); cfg.steps]
    } else {
        let chol = nalgebra::Cholesky::new(vol.gram_inv() * (c / 2.0))
            .ok_or(Error::FactorizationFailure)?;
        let base = vol.sigma() * chol.l();
        (0..cfg.steps)
            .map(|i| &base * math::exp(q * (horizon - grid.node(i)) / 2.0))
            .collect()
    };
    let plan = Plan {
        rho_used,
        drift: rho_hat.iter().map(|r| r * dt).collect(),
        sqrt_dt: math::sqrt(dt),
        factors,
        omega,
        x0: cfg.problem.x0,
        guard: cfg.overflow_guard,
    };
    let (noise, control) = cfg.streams(which);
    let results = exec.map_range(cfg.paths, |i| run_path(&plan, cfg, noise, control, i));
    let mut terminal = Vec::with_capacity(cfg.paths);
    let mut overflowed = Vec::new();
    let mut paths = cfg.record_paths.then(|| Vec::with_capacity(cfg.paths));
    for (i, r) in results.into_iter().enumerate() {
        terminal.push(r.terminal);
        if r.overflowed {
            overflowed.push(i);
        }
        if let (Some(all), Some(p)) = (paths.as_mut(), r.path) {
            all.push(p);
        }
    }
    Ok(WealthEnsemble {
        which,
        terminal,
        paths,
        overflowed,
        seed: cfg.seed,
        noise_stream: noise,
        control_stream: control,
        omega,
        rho_used: rho_used.to_vec(),
        steps: cfg.steps,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Moments {
    pub count: usize,
    pub mean: f64,
    pub variance: f64,
    pub se_mean: f64,
    pub se_variance: f64,
}

/// Sample mean, unbiased variance and their standard errors; the variance
/// error uses the fourth central moment.
pub fn moments_of(values: &[f64]) -> Result<Moments> {
    let m = values.len();
    if m < 2 {
        return Err(Error::TooFewPaths { paths: m });
    }
    let n = m as f64;
    let mean = values.iter().sum::<f64>() / n;
    let (mut s2, mut s4) = (0.0, 0.0);
    for &x in values {
        let d = x - mean;
        s2 += d * d;
        s4 += d * d * d * d;
    }
    let variance = s2 / (n - 1.0);
    let mu2 = s2 / n;
    let mu4 = s4 / n;
    let var_of_var = ((mu4 - mu2 * mu2 * (n - 3.0) / (n - 1.0)) / n).max(0.0);
    Ok(Moments {
        count: m,
        mean,
        variance,
        se_mean: math::sqrt(variance / n),
        se_variance: math::sqrt(var_of_var),
    })
}

pub fn moments(ensemble: &WealthEnsemble) -> Result<Moments> {
    moments_of(&ensemble.finite_terminal())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonReport {
    pub misspecified: Moments,
    pub robust: Moments,
    /// Robust variance over misspecified variance.
    pub variance_ratio: f64,
    /// Sample variance of the pathwise difference (misspecified - robust),
    /// over paths finite in both ensembles.
    pub difference_variance: f64,
    pub overflowed_misspecified: usize,
    pub overflowed_robust: usize,
}

pub fn compare(misspecified: &WealthEnsemble, robust: &WealthEnsemble) -> Result<ComparisonReport> {
    if misspecified.terminal.len() != robust.terminal.len() {
        return Err(Error::DimensionMismatch {
            expected: misspecified.terminal.len(),
            got: robust.terminal.len(),
        });
    }
    let mis = moments(misspecified)?;
    let rob = moments(robust)?;
    let diffs: Vec<f64> = (0..misspecified.terminal.len())
        .filter(|i| {
            misspecified.overflowed.binary_search(i).is_err()
                && robust.overflowed.binary_search(i).is_err()
        })
        .map(|i| misspecified.terminal[i] - robust.terminal[i])
        .collect();
    let difference_variance = moments_of(&diffs).map(|m| m.variance).unwrap_or(f64::NAN);
    Ok(ComparisonReport {
        misspecified: mis,
        robust: rob,
        variance_ratio: rob.variance / mis.variance,
        difference_variance,
        overflowed_misspecified: misspecified.overflowed.len(),
        overflowed_robust: robust.overflowed.len(),
    })
}

/// Both ensembles of a scenario pair, on common noise unless configured otherwise.
pub fn paired_simulate<E: Executor>(
    cfg: &SimConfig,
    exec: &E,
) -> Result<(WealthEnsemble, WealthEnsemble)> {
    if cfg.scenario.rho_robust.is_none() {
        return Err(Error::invalid(
            "rho_robust",
            "paired runs need a robust scenario",
        ));
    }
    Ok((
        simulate(cfg, Which::Misspecified, exec)?,
        simulate(cfg, Which::Robust, exec)?,
    ))
}

pub fn paired_compare<E: Executor>(cfg: &SimConfig, exec: &E) -> Result<ComparisonReport> {
    let (mis, rob) = paired_simulate(cfg, exec)?;
    compare(&mis, &rob)
}
