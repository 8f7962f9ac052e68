//! Property self-test: saddle inequality, minimum-norm projection, k*
//! bracket, variance gradient and the convexity claims.

use rand::Rng;
use robustmv_core::admissible::AdmissibleSet;
use robustmv_core::closed_form::m_cross;
use robustmv_core::convexity::{check_convexity, log_grid, ConvexityTarget};
use robustmv_core::exec::Executor;
use robustmv_core::math::{dot, in_singular_band, norm, norm_sq};
use robustmv_core::rng::{self, Purpose};
use robustmv_core::variance::{
    line_derivative, solve_kstar, variance_gradient, variance_with_exploration,
};
use serde::Serialize;

use crate::config::{Config, SetKind};
use crate::error::Result;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub checked: usize,
    pub failures: usize,
    /// Smallest margin seen; negative margins are failures.
    pub worst_margin: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerifyReport {
    pub passed: bool,
    pub first_failure: Option<String>,
    pub checks: Vec<CheckResult>,
}

fn result(name: impl Into<String>, margins: &[f64]) -> CheckResult {
    let failures = margins.iter().filter(|m| !(**m >= 0.0)).count();
    let worst =
        margins.iter().copied().fold(
            f64::INFINITY,
            |a, m| if m.is_nan() { f64::NAN } else { a.min(m) },
        );
    CheckResult {
        name: name.into(),
        passed: failures == 0 && !margins.is_empty(),
        checked: margins.len(),
        failures,
        worst_margin: worst,
    }
}

fn sets(cfg: &Config) -> Result<Vec<(&'static str, AdmissibleSet)>> {
    let configured = cfg.admissible_set()?;
    let rho = &cfg.problem.rho;
    let r = cfg.set.radius;
    Ok(match cfg.set.kind {
        SetKind::Cube => vec![
            ("cube", configured),
            ("ball", AdmissibleSet::ball(rho.clone(), r)),
        ],
        SetKind::Ball => vec![
            ("ball", configured),
            ("cube", AdmissibleSet::cube_around(rho, r)),
        ],
    })
}

/// `m_cross(rho*, rho*) - m_cross(rho, rho*) + slack >= 0` for sampled `rho`.
pub fn saddle_margins(cfg: &Config, set: &AdmissibleSet, exec: &impl Executor) -> Result<Vec<f64>> {
    let market = cfg.market()?;
    let vol = market.volatility();
    let policy = cfg.set_policy();
    let rho_star = set.project_min_norm(set.dim(), policy)?;
    let p = &cfg.problem;
    let t = market.horizon();
    let top = m_cross(&rho_star, &rho_star, vol, p.x0, p.l, p.c, t)?;
    let points = set.sample_boundary_and_interior(cfg.verify.saddle_samples, cfg.seed, policy)?;
    let slack = cfg.verify.saddle_slack;
    exec.map_range(points.len(), |i| {
        m_cross(&points[i], &rho_star, vol, p.x0, p.l, p.c, t).map(|m| top - m + slack)
    })
    .into_iter()
    .collect::<std::result::Result<_, _>>()
    .map_err(Into::into)
}

fn projection_margins(cfg: &Config, set: &AdmissibleSet) -> Result<Vec<f64>> {
    let policy = cfg.set_policy();
    let star = set.project_min_norm(set.dim(), policy)?;
    let points = set.sample_boundary_and_interior(cfg.verify.saddle_samples, cfg.seed, policy)?;
    let n = norm(&star);
    let mut margins: Vec<f64> = points.iter().map(|p| norm(p) - n + 1e-12).collect();
    margins.push(if set.contains(&star)? { 1.0 } else { -1.0 });
    Ok(margins)
}

fn unit(r: &mut impl Rng) -> f64 {
    1.0 - r.random::<f64>()
}

/// Random instance `(rho_hat, c, T, x0 - l)` drawn from the ranges of the
/// bracket property.
fn kstar_instance(seed: u64, i: usize) -> (Vec<f64>, f64, f64, f64) {
    let mut r = rng::stream(seed, Purpose::Verify, rng::pair_index(1, i as u64));
    let d = r.random_range(1..=4);
    let rho_hat = (0..d).map(|_| unit(&mut r)).collect();
    let c = 5.0 * unit(&mut r);
    let t = 0.25 + 4.75 * r.random::<f64>();
    let dx = unit(&mut r);
    (rho_hat, c, t, dx)
}

/// Minimum of `k* - 1/2`, `1 - k*` and `tol - |grad|` per instance.
pub fn kstar_margins(cfg: &Config, exec: &impl Executor) -> Result<Vec<f64>> {
    let v = &cfg.verify;
    let tol = cfg.kstar.tol;
    exec.map_range(v.kstar_instances, |i| {
        let (rho_hat, c, t, dx) = kstar_instance(cfg.seed, i);
        let k = solve_kstar(&rho_hat, dx, 0.0, c, t, tol)?;
        let grad = line_derivative(k.k_star, &rho_hat, dx, 0.0, c, t).abs() / norm(&rho_hat);
        Ok((k.k_star - 0.5)
            .min(1.0 - k.k_star)
            .min(v.kstar_grad_tol - grad))
    })
    .into_iter()
    .collect()
}

/// `tol - relative error` of the analytic gradient against central
/// differences at random points away from the singular band.
pub fn gradient_margins(cfg: &Config, exec: &impl Executor) -> Result<Vec<f64>> {
    let v = &cfg.verify;
    let h = v.gradient_step;
    exec.map_range(v.gradient_points, |i| {
        let mut r = rng::stream(cfg.seed, Purpose::Verify, rng::pair_index(2, i as u64));
        let (rho, rho_hat, c, t, dx) = loop {
            let d = r.random_range(1..=4);
            let rho_hat: Vec<f64> = (0..d).map(|_| 0.1 + 0.9 * unit(&mut r)).collect();
            let rho: Vec<f64> = (0..d).map(|_| 0.1 + 0.9 * unit(&mut r)).collect();
            let c = 0.1 + 2.9 * unit(&mut r);
            let t = 0.5 + 1.5 * r.random::<f64>();
            let dx = 0.1 + 0.9 * unit(&mut r);
            let (q, p) = (norm_sq(&rho), dot(&rho, &rho_hat));
            if !in_singular_band(q, p) && (q - p).abs() > 1e-3 {
                break (rho, rho_hat, c, t, dx);
            }
        };
        let g = variance_gradient(&rho, &rho_hat, dx, 0.0, c, t)?;
        let mut err = 0.0;
        for j in 0..rho.len() {
            let mut up = rho.clone();
            let mut dn = rho.clone();
            up[j] += h;
            dn[j] -= h;
            let fd = (variance_with_exploration(&up, &rho_hat, dx, 0.0, c, t)?.variance
                - variance_with_exploration(&dn, &rho_hat, dx, 0.0, c, t)?.variance)
                / (2.0 * h);
            err += (g[j] - fd) * (g[j] - fd);
        }
        Ok(v.gradient_rel_tol - err.sqrt() / norm(&g).max(f64::MIN_POSITIVE))
    })
    .into_iter()
    .collect()
}

/// Convexity and sign claims on logarithmic grids and along
/// random rays.
pub fn convexity_checks(cfg: &Config) -> Vec<CheckResult> {
    let n = cfg.verify.convexity_points;
    let x_grid = log_grid(1e-3, 10.0, n);
    let xi_grid: Vec<f64> = log_grid(1e-6, 19.0, n)
        .into_iter()
        .map(|y| 1.0 + y)
        .collect();
    let mut out = Vec::new();
    for (target, grid) in [
        (ConvexityTarget::HPositive, &x_grid),
        (ConvexityTarget::H2LowerBound, &x_grid),
        (ConvexityTarget::G, &x_grid),
        (ConvexityTarget::XiPositive, &xi_grid),
    ] {
        out.push(from_report(check_convexity(&target, grid)));
    }
    let mut explore = Vec::new();
    let mut classical = Vec::new();
    for i in 0..cfg.verify.rays {
        let mut r = rng::stream(cfg.seed, Purpose::Verify, rng::pair_index(3, i as u64));
        let d = r.random_range(1..=4);
        let rho_hat: Vec<f64> = (0..d).map(|_| 0.1 + 0.9 * unit(&mut r)).collect();
        let origin: Vec<f64> = (0..d).map(|_| 0.1 + 0.9 * unit(&mut r)).collect();
        let direction: Vec<f64> = (0..d).map(|_| rng::normal(&mut r)).collect();
        let t = 0.5 + 1.5 * r.random::<f64>();
        let s_grid: Vec<f64> = (0..20).map(|j| -0.5 + j as f64 / 19.0).collect();
        let k_grid: Vec<f64> = (0..20).map(|j| 0.05 + 1.95 * j as f64 / 19.0).collect();
        explore.push(check_convexity(
            &ConvexityTarget::ExplorationTermAlongRay {
                rho_hat: rho_hat.clone(),
                origin,
                direction,
                horizon: t,
            },
            &s_grid,
        ));
        classical.push(check_convexity(
            &ConvexityTarget::ClassicalTermOfK {
                rho_hat,
                horizon: t,
            },
            &k_grid,
        ));
    }
    for (name, reports) in [
        ("exploration_term_of_rho", explore),
        ("classical_term_of_k", classical),
    ] {
        let failures: usize = reports.iter().map(|r| r.violations.len()).sum();
        out.push(CheckResult {
            name: format!("convexity.{name}"),
            passed: reports.iter().all(|r| r.passed()),
            checked: reports.iter().map(|r| r.checked).sum(),
            failures,
            worst_margin: reports
                .iter()
                .map(|r| r.min_margin)
                .fold(f64::INFINITY, f64::min),
        });
    }
    out
}

fn from_report(r: robustmv_core::convexity::ConvexityReport) -> CheckResult {
    CheckResult {
        name: format!("convexity.{}", r.target),
        passed: r.passed(),
        checked: r.checked,
        failures: r.violations.len(),
        worst_margin: r.min_margin,
    }
}

pub fn run_verify(cfg: &Config, exec: &impl Executor) -> Result<VerifyReport> {
    cfg.rho_star()?;
    let mut checks = Vec::new();
    for (name, set) in sets(cfg)? {
        checks.push(result(
            format!("saddle.{name}"),
            &saddle_margins(cfg, &set, exec)?,
        ));
        checks.push(result(
            format!("projection.{name}"),
            &projection_margins(cfg, &set)?,
        ));
    }
    checks.push(result("kstar_bracket", &kstar_margins(cfg, exec)?));
    checks.push(result("variance_gradient", &gradient_margins(cfg, exec)?));
    checks.extend(convexity_checks(cfg));
    let first_failure = checks.iter().find(|c| !c.passed).map(|c| c.name.clone());
    Ok(VerifyReport {
        passed: first_failure.is_none(),
        first_failure,
        checks,
    })
}
