//! The subcommands as pure functions from a resolved [`Config`] to a report
//! and a set of named text artifacts.

use std::path::Path;

use robustmv_core::calibration::{
    backtest, build_pool, calibrate, discount, historical_vol, synthetic::gbm_series,
    CalibrationResult, PerformanceReport, Pools, PriceSeries,
};
use robustmv_core::closed_form::{
    lagrange_multiplier, m_cross, m_optimal, optimal_policy, value_function,
};
use robustmv_core::exec::Executor;
use robustmv_core::model::PiecewiseSchedule;
use robustmv_core::simulator::{moments_of, paired_simulate, Moments, SimConfig, WealthEnsemble};
use robustmv_core::variance::{
    solve_kstar_with, stationary_ratio, variance_no_exploration, variance_surface,
    variance_with_exploration, AxisSpec,
};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::config::Config;
use crate::error::{CliError, Result};
use crate::io;
use crate::verify::run_verify;

#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub summary: Value,
    /// `(file name, contents)` relative to the output directory.
    pub files: Vec<(String, String)>,
    pub property_failure: Option<String>,
}

impl Outcome {
    fn new(summary: Value, files: Vec<(String, String)>) -> Self {
        Outcome {
            summary,
            files,
            property_failure: None,
        }
    }
}

fn report_file(name: &str, summary: &Value) -> Result<(String, String)> {
    Ok((name.to_string(), io::to_json(summary)?))
}

pub fn closed_form(cfg: &Config) -> Result<Outcome> {
    let market = cfg.market()?;
    let vol = market.volatility();
    let p = &cfg.problem;
    cfg.problem()?;
    let t = market.horizon();
    let rho_hat = market.rho_hat();
    let schedule = PiecewiseSchedule::constant(rho_hat.to_vec(), t)?;
    let omega = lagrange_multiplier(rho_hat, rho_hat, p.x0, p.l, t)?;
    let policy = optimal_policy(0.0, p.x0, &schedule, vol, p.c, omega)?;
    let rho_star = cfg.rho_star()?;
    let variance = |rho: &[f64]| -> Result<Value> {
        let r = variance_with_exploration(rho, rho_hat, p.x0, p.l, p.c, t)?;
        Ok(json!({
            "rho": rho,
            "omega": r.omega,
            "variance": r.variance,
            "exploration_term": r.exploration_term,
            "classical_term": r.classical_term,
            "variance_no_exploration": variance_no_exploration(rho, rho_hat, p.x0, p.l, t)?,
        }))
    };
    let covariance: Vec<Vec<f64>> = (0..policy.covariance.nrows())
        .map(|i| policy.covariance.row(i).iter().copied().collect())
        .collect();
    let summary = json!({
        "omega": omega,
        "value_at_0": value_function(0.0, p.x0, &schedule, vol, p.c, omega, p.l, t)?,
        "policy_at_0": { "mean": policy.mean, "covariance": covariance },
        "m_optimal": m_optimal(&schedule, vol, p.x0, p.l, p.c)?,
        "rho_star": rho_star,
        "omega_robust": lagrange_multiplier(&rho_star, rho_hat, p.x0, p.l, t)?,
        "m_cross_market": m_cross(rho_hat, &rho_star, vol, p.x0, p.l, p.c, t)?,
        "m_saddle": m_cross(&rho_star, &rho_star, vol, p.x0, p.l, p.c, t)?,
        "min_eigenvalue": market.min_eigenvalue(),
        "misspecified": variance(&p.rho)?,
        "robust": variance(&rho_star)?,
    });
    Ok(Outcome::new(
        summary.clone(),
        vec![report_file("closed_form.json", &summary)?],
    ))
}

pub fn kstar(cfg: &Config) -> Result<Outcome> {
    let k = &cfg.kstar;
    let summary = if k.x0 == k.l {
        // Only the exploration term remains; it is minimized at the midpoint.
        json!({ "k_star": 0.5, "residual": 0.0, "iterations": 0, "bracket": [0.5, 0.5], "limit": true,
                "k_star_rho_hat": k.rho_hat.iter().map(|x| x / 2.0).collect::<Vec<_>>() })
    } else {
        let r = solve_kstar_with(&k.rho_hat, k.x0, k.l, k.c, k.horizon, k.tol, k.max_iter)?;
        let at = |s: f64| -> Result<f64> {
            let rho: Vec<f64> = k.rho_hat.iter().map(|x| s * x).collect();
            Ok(variance_with_exploration(&rho, &k.rho_hat, k.x0, k.l, k.c, k.horizon)?.variance)
        };
        json!({
            "k_star": r.k_star,
            "residual": r.residual,
            "iterations": r.iterations,
            "bracket": [r.bracket.0, r.bracket.1],
            "limit": false,
            "k_star_rho_hat": k.rho_hat.iter().map(|x| r.k_star * x).collect::<Vec<_>>(),
            "variance_at_k_star": at(r.k_star)?,
            "variance_at_rho_hat": at(1.0)?,
            "stationary_ratio": stationary_ratio(r.k_star, &k.rho_hat, k.x0, k.l, k.c, k.horizon),
        })
    };
    Ok(Outcome::new(
        summary.clone(),
        vec![report_file("kstar.json", &summary)?],
    ))
}

pub fn parse_axis(spec: &str) -> Result<AxisSpec> {
    let parts: Vec<&str> = spec.split(':').collect();
    let bad = || CliError::Usage(format!("axis `{spec}` is not min:max:steps"));
    if parts.len() != 3 {
        return Err(bad());
    }
    let min: f64 = parts[0].trim().parse().map_err(|_| bad())?;
    let max: f64 = parts[1].trim().parse().map_err(|_| bad())?;
    let steps: usize = parts[2].trim().parse().map_err(|_| bad())?;
    Ok(AxisSpec::new(min, max, steps)?)
}

/// `axes` overrides `surface.axes` when non-empty.
pub fn surface(cfg: &Config, axes: &[String]) -> Result<Outcome> {
    let specs = if axes.is_empty() {
        &cfg.surface.axes
    } else {
        axes
    };
    if specs.is_empty() || specs.len() > 2 {
        return Err(CliError::Usage(format!(
            "surface takes one or two axes, got {}",
            specs.len()
        )));
    }
    let axes: Vec<AxisSpec> = specs.iter().map(|s| parse_axis(s)).collect::<Result<_>>()?;
    let s = &cfg.surface;
    let grid = variance_surface(
        &axes,
        &s.rho_hat,
        s.x0,
        s.l,
        s.c,
        s.horizon,
        cfg.surface_mode(),
        s.cell_cap,
    )?;
    let (rows, cols) = grid.shape();
    let summary = json!({
        "rows": rows,
        "cols": cols,
        "singular_cells": grid.singular.len(),
        "argmin": grid.argmin().map(|(i, v)| json!({ "cell": i, "value": v })),
        "k_star": grid.markers.k_star,
    });
    Ok(Outcome::new(
        summary,
        vec![("surface.txt".into(), io::format_surface(&grid))],
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
struct MomentsOut {
    count: usize,
    mean: f64,
    variance: Option<f64>,
    se_mean: Option<f64>,
    se_variance: Option<f64>,
}

fn moments_out(values: &[f64]) -> MomentsOut {
    match moments_of(values) {
        Ok(Moments {
            count,
            mean,
            variance,
            se_mean,
            se_variance,
        }) => MomentsOut {
            count,
            mean,
            variance: Some(variance),
            se_mean: Some(se_mean),
            se_variance: Some(se_variance),
        },
        Err(_) => MomentsOut {
            count: values.len(),
            mean: values.first().copied().unwrap_or(f64::NAN),
            variance: None,
            se_mean: None,
            se_variance: None,
        },
    }
}

pub fn sim_config(cfg: &Config) -> Result<SimConfig> {
    let mut sim = SimConfig::new(
        cfg.market()?,
        cfg.problem()?,
        cfg.scenario()?,
        cfg.simulation.paths,
        cfg.simulation.steps,
        cfg.seed,
    )?;
    sim.record_paths = cfg.simulation.record_paths;
    sim.overflow_guard = cfg.simulation.overflow_guard;
    sim.noise = cfg.noise();
    sim.validate()?;
    Ok(sim)
}

pub fn simulate(cfg: &Config, exec: &impl Executor) -> Result<Outcome> {
    let sim = sim_config(cfg)?;
    let (mis, rob) = paired_simulate(&sim, exec)?;
    let hash = cfg.hash()?;
    let both_finite = |a: &WealthEnsemble, b: &WealthEnsemble| -> Vec<f64> {
        (0..a.terminal.len())
            .filter(|i| {
                a.overflowed.binary_search(i).is_err() && b.overflowed.binary_search(i).is_err()
            })
            .map(|i| a.terminal[i] - b.terminal[i])
            .collect()
    };
    let m = moments_out(&mis.finite_terminal());
    let r = moments_out(&rob.finite_terminal());
    let diff = moments_out(&both_finite(&mis, &rob));
    let rho_hat = sim.market.rho_hat();
    let p = &cfg.problem;
    let t = sim.market.horizon();
    let closed = |rho: &[f64]| {
        variance_with_exploration(rho, rho_hat, p.x0, p.l, p.c, t)
            .map(|v| v.variance)
            .ok()
    };
    let summary = json!({
        "paths": sim.paths,
        "steps": sim.steps,
        "seed": sim.seed,
        "config_hash": hash,
        "misspecified": m,
        "robust": r,
        "variance_ratio": match (r.variance, m.variance) { (Some(a), Some(b)) => Some(a / b), _ => None },
        "difference_variance": diff.variance,
        "overflowed_misspecified": mis.overflowed.len(),
        "overflowed_robust": rob.overflowed.len(),
        "omega_misspecified": mis.omega,
        "omega_robust": rob.omega,
        "rho_star": rob.rho_used,
        "closed_form_variance_misspecified": closed(&mis.rho_used),
        "closed_form_variance_robust": closed(&rob.rho_used),
    });
    let mut files = vec![
        report_file("comparison.json", &summary)?,
        (
            "ensemble_misspecified.csv".into(),
            io::format_ensemble(&mis, &hash),
        ),
        (
            "ensemble_robust.csv".into(),
            io::format_ensemble(&rob, &hash),
        ),
    ];
    if let (Some(a), Some(b)) = (&mis.paths, &rob.paths) {
        files.push(("paths_misspecified.csv".into(), io::format_paths(a)));
        files.push(("paths_robust.csv".into(), io::format_paths(b)));
    }
    Ok(Outcome::new(summary, files))
}

/// Discounted price series from `calibration.prices` or the synthetic
/// fixture.
pub fn load_series(cfg: &Config) -> Result<(PriceSeries, &'static str)> {
    let c = &cfg.calibration;
    let (raw, source) = match &c.prices {
        Some(path) => (
            io::read_prices(Path::new(path), "DATA", c.trading_days)?,
            "file",
        ),
        None => (gbm_series(&cfg.gbm_spec(), cfg.seed)?, "synthetic"),
    };
    Ok((discount(&raw, c.rate), source))
}

pub struct Prepared {
    pub pools: Pools,
    pub sigma_train: f64,
    pub sigma_valid: f64,
    pub source: &'static str,
}

pub fn prepare(cfg: &Config) -> Result<Prepared> {
    let (series, source) = load_series(cfg)?;
    let window = cfg.calibration.window;
    let pools = build_pool(&series, cfg.split_spec(), window)?;
    let sigma_train = historical_vol(&series.prices()[pools.ranges[0].clone()], window)?;
    let sigma_valid = historical_vol(&series.prices()[pools.ranges[1].clone()], window)?;
    Ok(Prepared {
        pools,
        sigma_train,
        sigma_valid,
        source,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationFields {
    pub rho: f64,
    pub sigma_train: f64,
    pub sigma_valid: f64,
    pub omega: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationDoc {
    pub calibration: CalibrationFields,
    pub seed: u64,
    pub steps: usize,
    pub source: String,
    pub windows: [usize; 3],
    pub final_loss: Option<f64>,
}

fn calibration_doc(r: &CalibrationResult, prep: &Prepared) -> CalibrationDoc {
    CalibrationDoc {
        calibration: CalibrationFields {
            rho: r.rho,
            sigma_train: r.sigma_train,
            sigma_valid: r.sigma_valid,
            omega: r.omega,
        },
        seed: r.seed,
        steps: r.loss_history.len(),
        source: prep.source.into(),
        windows: [
            prep.pools.train.len(),
            prep.pools.valid.len(),
            prep.pools.test.len(),
        ],
        final_loss: r.loss_history.last().copied(),
    }
}

pub fn run_calibration(
    cfg: &Config,
    exec: &impl Executor,
) -> Result<(CalibrationResult, Prepared)> {
    let prep = prepare(cfg)?;
    let hp = cfg.hyperparams();
    let r = calibrate(
        &prep.pools.train,
        prep.sigma_train,
        prep.sigma_valid,
        &hp,
        cfg.seed,
        exec,
    )?;
    Ok((r, prep))
}

pub fn calibrate_cmd(cfg: &Config, exec: &impl Executor) -> Result<Outcome> {
    let (r, prep) = run_calibration(cfg, exec)?;
    let doc = calibration_doc(&r, &prep);
    let summary = serde_json::to_value(&doc)?;
    Ok(Outcome::new(
        summary.clone(),
        vec![
            report_file("calibration.json", &summary)?,
            (
                "loss_history.csv".into(),
                io::format_loss_history(&r.loss_history),
            ),
        ],
    ))
}

fn performance_json(doc: &CalibrationFields, rep: &PerformanceReport) -> Value {
    let rows: Vec<Value> = rep
        .rows
        .iter()
        .map(|r| {
            json!({
                "R": r.scaling,
                "rho_star": r.rho_star,
                "test_loss": r.test_loss,
                "test_mean": r.test_mean,
                "test_variance": r.test_variance,
            })
        })
        .collect();
    json!({
        "calibration": doc,
        "rows": rows,
        "test_windows": rep.windows,
        "draws_per_window": rep.draws_per_window,
    })
}

/// Backtests a stored calibration (`calibration_file`) or, without one, a
/// fresh calibration on the same data.
pub fn backtest_cmd(
    cfg: &Config,
    calibration_file: Option<&Path>,
    exec: &impl Executor,
) -> Result<Outcome> {
    let hp = cfg.hyperparams();
    let (result, prep, loss) = match calibration_file {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
            let doc: CalibrationDoc = serde_json::from_str(&text)?;
            let prep = prepare(cfg)?;
            let c = &doc.calibration;
            let result = CalibrationResult {
                rho: c.rho,
                omega: c.omega,
                sigma_train: c.sigma_train,
                sigma_valid: c.sigma_valid,
                loss_history: Vec::new(),
                seed: doc.seed,
            };
            (result, prep, None)
        }
        None => {
            let (r, prep) = run_calibration(cfg, exec)?;
            let loss = io::format_loss_history(&r.loss_history);
            (r, prep, Some(loss))
        }
    };
    let rep = backtest(
        &result,
        &prep.pools.test,
        result.sigma_valid,
        &hp,
        cfg.seed,
        exec,
    )?;
    let fields = CalibrationFields {
        rho: result.rho,
        sigma_train: result.sigma_train,
        sigma_valid: result.sigma_valid,
        omega: result.omega,
    };
    let summary = performance_json(&fields, &rep);
    let mut files = vec![report_file("performance.json", &summary)?];
    if let Some(loss) = loss {
        files.push(("loss_history.csv".into(), loss));
    }
    Ok(Outcome::new(summary, files))
}

pub fn verify(cfg: &Config, exec: &impl Executor) -> Result<Outcome> {
    let report = run_verify(cfg, exec)?;
    let summary = serde_json::to_value(&report)?;
    let mut out = Outcome::new(summary.clone(), vec![report_file("verify.json", &summary)?]);
    out.property_failure = report.first_failure;
    Ok(out)
}
