//! Layered configuration: built-in defaults, then a TOML file, then
//! `ROBUSTMV_SECTION__KEY` environment variables, then `--set key=value`
//! overrides. Every key of the resolved document is addressable by its dotted
//! path (`simulation.paths`, `set.radius`, `seed`).

use std::path::Path;

use nalgebra::DMatrix;
use robustmv_core::admissible::{AdmissibleSet, ProjectionMode, SetPolicy};
use robustmv_core::calibration::synthetic::{GbmSegment, GbmSpec};
use robustmv_core::calibration::{GradientMode, Hyperparams, SplitSpec};
use robustmv_core::closed_form::ScenarioPair;
use robustmv_core::model::{
    build_volatility, validate_market, MarketParams, ProblemParams, ValidatedMarket, DEFAULT_EPS,
};
use robustmv_core::simulator::{NoiseCoupling, DEFAULT_OVERFLOW_GUARD};
use robustmv_core::variance::{SurfaceMode, DEFAULT_CELL_CAP, KSTAR_DEFAULT_TOL, KSTAR_MAX_ITER};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};

pub const ENV_PREFIX: &str = "ROBUSTMV_";

/// Environment variables read by the command line itself rather than the
/// config document.
const ENV_RESERVED: [&str; 3] = ["ROBUSTMV_CONFIG", "ROBUSTMV_THREADS", "ROBUSTMV_OUT_DIR"];

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    pub seed: u64,
    pub market: MarketConfig,
    pub problem: ProblemConfig,
    pub set: SetConfig,
    pub simulation: SimulationConfig,
    pub kstar: KstarConfig,
    pub surface: SurfaceConfig,
    pub calibration: CalibrationConfig,
    pub verify: VerifyConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MarketConfig {
    /// Asset count; optional, checked against the vector lengths when set.
    pub d: Option<usize>,
    #[serde(rename = "T")]
    pub horizon: f64,
    pub rate: f64,
    pub rho_hat: Vec<f64>,
    /// Explicit volatility rows. Takes precedence over `diag_vols` and
    /// `correlation`.
    pub sigma: Option<Vec<Vec<f64>>>,
    pub diag_vols: Vec<f64>,
    pub correlation: Vec<Vec<f64>>,
    pub eps: f64,
}

impl Default for MarketConfig {
    fn default() -> Self {
        MarketConfig {
            d: None,
            horizon: 1.0,
            rate: 0.02,
            rho_hat: vec![0.4; 4],
            sigma: None,
            diag_vols: vec![0.15, 0.2, 0.4, 0.3],
            correlation: vec![
                vec![1.0, -0.85, 0.45, 0.78],
                vec![-0.85, 1.0, -0.41, -0.62],
                vec![0.45, -0.41, 1.0, 0.64],
                vec![0.78, -0.62, 0.64, 1.0],
            ],
            eps: DEFAULT_EPS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProblemConfig {
    pub x0: f64,
    pub l: f64,
    pub c: f64,
    /// The investor's (possibly misspecified) premium.
    pub rho: Vec<f64>,
}

impl Default for ProblemConfig {
    fn default() -> Self {
        ProblemConfig {
            x0: 1.0,
            l: 1.2,
            c: 1.5,
            rho: vec![0.5; 4],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SetKind {
    Cube,
    Ball,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Projection {
    Exact,
    TableCompat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SetConfig {
    #[serde(rename = "type")]
    pub kind: SetKind,
    /// Cube half-width around `problem.rho` or ball radius.
    pub radius: f64,
    pub lower: Option<Vec<f64>>,
    pub upper: Option<Vec<f64>>,
    /// Ball center, defaulting to `problem.rho`.
    pub center: Option<Vec<f64>>,
    pub projection: Projection,
    pub allow_zero_lower: bool,
    /// Use this robust premium instead of the projection; it must lie in
    /// the set.
    pub rho_star: Option<Vec<f64>>,
}

impl Default for SetConfig {
    fn default() -> Self {
        SetConfig {
            kind: SetKind::Cube,
            radius: 0.25,
            lower: None,
            upper: None,
            center: None,
            projection: Projection::Exact,
            allow_zero_lower: false,
            rho_star: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Noise {
    Common,
    Independent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulationConfig {
    pub paths: usize,
    pub steps: usize,
    pub record_paths: bool,
    pub overflow_guard: f64,
    pub noise: Noise,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        SimulationConfig {
            paths: 8192,
            steps: 400,
            record_paths: false,
            overflow_guard: DEFAULT_OVERFLOW_GUARD,
            noise: Noise::Common,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KstarConfig {
    pub rho_hat: Vec<f64>,
    pub c: f64,
    #[serde(rename = "T")]
    pub horizon: f64,
    pub x0: f64,
    pub l: f64,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for KstarConfig {
    fn default() -> Self {
        KstarConfig {
            rho_hat: vec![0.3, 0.6],
            c: 0.5,
            horizon: 1.0,
            x0: 1.0,
            l: 1.3,
            tol: KSTAR_DEFAULT_TOL,
            max_iter: KSTAR_MAX_ITER,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SurfaceKind {
    Exploration,
    Classical,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SurfaceConfig {
    pub rho_hat: Vec<f64>,
    pub c: f64,
    #[serde(rename = "T")]
    pub horizon: f64,
    pub x0: f64,
    pub l: f64,
    pub mode: SurfaceKind,
    pub cell_cap: usize,
    /// One `min:max:steps` entry per axis (one or two).
    pub axes: Vec<String>,
}

impl Default for SurfaceConfig {
    fn default() -> Self {
        SurfaceConfig {
            rho_hat: vec![0.3, 0.6],
            c: 0.5,
            horizon: 1.0,
            x0: 1.0,
            l: 1.3,
            mode: SurfaceKind::Exploration,
            cell_cap: DEFAULT_CELL_CAP,
            axes: vec!["0.01:1.2:120".into(), "0.01:1.2:120".into()],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Gradient {
    Pathwise,
    FiniteDifference,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SegmentConfig {
    pub years: u32,
    pub rho: f64,
    pub sigma: f64,
}

impl Default for SegmentConfig {
    fn default() -> Self {
        SegmentConfig {
            years: 13,
            rho: 0.4,
            sigma: 0.2,
        }
    }
}

/// Geometric Brownian motion fixture used when no price file is given.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticConfig {
    pub start_year: i32,
    pub segments: Vec<SegmentConfig>,
    pub initial_price: f64,
    pub moment_matched: bool,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            start_year: 2001,
            segments: vec![SegmentConfig::default()],
            initial_price: 100.0,
            moment_matched: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CalibrationConfig {
    /// `date,close` file; the synthetic fixture is used when absent.
    pub prices: Option<String>,
    pub synthetic: SyntheticConfig,
    pub window: usize,
    pub trading_days: usize,
    pub train_years: u32,
    pub valid_years: u32,
    pub test_years: u32,
    pub rate: f64,
    pub batch: usize,
    pub steps: usize,
    pub x0: f64,
    pub l: f64,
    pub c: f64,
    #[serde(rename = "T")]
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
    pub gradient: Gradient,
    pub fd_step: f64,
    pub draws_per_window: usize,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        let hp = Hyperparams::default();
        let split = SplitSpec::default();
        CalibrationConfig {
            prices: None,
            synthetic: SyntheticConfig::default(),
            window: 252,
            trading_days: 252,
            train_years: split.train_years,
            valid_years: split.valid_years,
            test_years: split.test_years,
            rate: 0.02,
            batch: hp.batch,
            steps: hp.steps,
            x0: hp.x0,
            l: hp.l,
            c: hp.c,
            horizon: hp.horizon,
            lr_a: hp.lr_a,
            lr_b: hp.lr_b,
            beta1: hp.beta1,
            beta2: hp.beta2,
            adam_eps: hp.adam_eps,
            scalings: hp.scalings,
            rho_init: hp.rho_init,
            omega_init: hp.omega_init,
            rho_max: hp.rho_max,
            loss_guard: hp.loss_guard,
            gradient: Gradient::Pathwise,
            fd_step: 1e-5,
            draws_per_window: hp.draws_per_window,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerifyConfig {
    pub saddle_slack: f64,
    pub saddle_samples: usize,
    pub gradient_points: usize,
    pub gradient_step: f64,
    pub gradient_rel_tol: f64,
    pub kstar_instances: usize,
    pub kstar_grad_tol: f64,
    pub convexity_points: usize,
    pub rays: usize,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        VerifyConfig {
            saddle_slack: 1e-12,
            saddle_samples: 1000,
            gradient_points: 100,
            gradient_step: 1e-5,
            gradient_rel_tol: 1e-6,
            kstar_instances: 500,
            kstar_grad_tol: 1e-8,
            convexity_points: 400,
            rays: 50,
        }
    }
}

impl Config {
    /// Resolves defaults, file, environment and explicit overrides, in that
    /// order of increasing precedence.
    pub fn resolve<I>(file: Option<&Path>, env: I, sets: &[String]) -> Result<Config>
    where
        I: IntoIterator<Item = (String, String)>,
    {
        let mut doc = serde_json::to_value(Config::default())?;
        if let Some(path) = file {
            let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
            let table: toml::Table = toml::from_str(&text)
                .map_err(|e| CliError::config(path.display().to_string(), e))?;
            merge(&mut doc, serde_json::to_value(table)?, "")?;
        }
        let mut env: Vec<(String, String)> = env
            .into_iter()
            .filter(|(k, _)| k.starts_with(ENV_PREFIX) && !ENV_RESERVED.contains(&k.as_str()))
            .collect();
        env.sort();
        for (key, raw) in env {
            let path = key[ENV_PREFIX.len()..]
                .to_ascii_lowercase()
                .replace("__", ".");
            set_path(&mut doc, &path, parse_scalar(&raw))?;
        }
        for item in sets {
            let (path, raw) = item
                .split_once('=')
                .ok_or_else(|| CliError::Usage(format!("override `{item}` is not key=value")))?;
            set_path(&mut doc, path.trim(), parse_scalar(raw.trim()))?;
        }
        Config::from_value(doc)
    }

    pub fn from_value(doc: Value) -> Result<Config> {
        let cfg: Config = serde_path_to_error::deserialize(doc)
            .map_err(|e| CliError::config(e.path().to_string(), e.inner()))?;
        Ok(cfg)
    }

    /// Canonical JSON (sorted keys) of the resolved configuration.
    pub fn canonical_json(&self) -> Result<String> {
        let v = serde_json::to_value(self)?;
        Ok(serde_json::to_string(&v)?)
    }

    pub fn hash(&self) -> Result<String> {
        let digest = Sha256::digest(self.canonical_json()?.as_bytes());
        Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
    }

    pub fn sigma(&self) -> Result<DMatrix<f64>> {
        let m = &self.market;
        if let Some(rows) = &m.sigma {
            return matrix("market.sigma", rows);
        }
        let corr = matrix("market.correlation", &m.correlation)?;
        Ok(build_volatility(&m.diag_vols, &corr)?)
    }

    pub fn market(&self) -> Result<ValidatedMarket> {
        let sigma = self.sigma()?;
        if let Some(d) = self.market.d {
            if d != sigma.nrows() || d != self.market.rho_hat.len() {
                return Err(CliError::config(
                    "market.d",
                    format!("d = {d} does not match sigma and rho_hat"),
                ));
            }
        }
        let raw = MarketParams::new(sigma, self.market.rho_hat.clone(), self.market.horizon);
        Ok(validate_market(&raw, self.market.eps)?)
    }

    pub fn problem(&self) -> Result<ProblemParams> {
        Ok(ProblemParams::new(
            self.problem.x0,
            self.problem.l,
            self.problem.c,
        )?)
    }

    pub fn set_policy(&self) -> SetPolicy {
        SetPolicy {
            projection: match self.set.projection {
                Projection::Exact => ProjectionMode::Exact,
                Projection::TableCompat => ProjectionMode::TableCompat,
            },
            allow_zero_lower: self.set.allow_zero_lower,
        }
    }

    pub fn admissible_set(&self) -> Result<AdmissibleSet> {
        let s = &self.set;
        let rho = &self.problem.rho;
        let set = match s.kind {
            SetKind::Cube => match (&s.lower, &s.upper) {
                (Some(lower), Some(upper)) => AdmissibleSet::Cube {
                    lower: lower.clone(),
                    upper: upper.clone(),
                },
                (None, None) => AdmissibleSet::cube_around(rho, s.radius),
                _ => {
                    return Err(CliError::config(
                        "set.lower",
                        "give both lower and upper or neither",
                    ))
                }
            },
            SetKind::Ball => {
                AdmissibleSet::ball(s.center.clone().unwrap_or_else(|| rho.clone()), s.radius)
            }
        };
        set.validate(self.set_policy())?;
        Ok(set)
    }

    /// The configured `rho_star` (checked for membership) or the set's
    /// minimum-norm point.
    pub fn rho_star(&self) -> Result<Vec<f64>> {
        let set = self.admissible_set()?;
        match &self.set.rho_star {
            Some(r) => {
                if !set.contains(r)? {
                    return Err(robustmv_core::Error::InvalidSet(format!(
                        "rho_star {r:?} lies outside the set"
                    ))
                    .into());
                }
                Ok(r.clone())
            }
            None => Ok(set.project_min_norm(self.problem.rho.len(), self.set_policy())?),
        }
    }

    pub fn scenario(&self) -> Result<ScenarioPair> {
        Ok(ScenarioPair::new(
            self.problem.rho.clone(),
            self.market.rho_hat.clone(),
            Some(self.rho_star()?),
        )?)
    }

    pub fn noise(&self) -> NoiseCoupling {
        match self.simulation.noise {
            Noise::Common => NoiseCoupling::Common,
            Noise::Independent => NoiseCoupling::Independent,
        }
    }

    pub fn surface_mode(&self) -> SurfaceMode {
        match self.surface.mode {
            SurfaceKind::Exploration => SurfaceMode::Exploration,
            SurfaceKind::Classical => SurfaceMode::Classical,
        }
    }

    pub fn hyperparams(&self) -> Hyperparams {
        let c = &self.calibration;
        Hyperparams {
            batch: c.batch,
            steps: c.steps,
            x0: c.x0,
            l: c.l,
            c: c.c,
            horizon: c.horizon,
            lr_a: c.lr_a,
            lr_b: c.lr_b,
            beta1: c.beta1,
            beta2: c.beta2,
            adam_eps: c.adam_eps,
            scalings: c.scalings.clone(),
            rho_init: c.rho_init,
            omega_init: c.omega_init,
            rho_max: c.rho_max,
            loss_guard: c.loss_guard,
            gradient: match c.gradient {
                Gradient::Pathwise => GradientMode::Pathwise,
                Gradient::FiniteDifference => GradientMode::FiniteDifference { step: c.fd_step },
            },
            draws_per_window: c.draws_per_window,
        }
    }

    pub fn split_spec(&self) -> SplitSpec {
        let c = &self.calibration;
        SplitSpec {
            train_years: c.train_years,
            valid_years: c.valid_years,
            test_years: c.test_years,
        }
    }

    pub fn gbm_spec(&self) -> GbmSpec {
        let s = &self.calibration.synthetic;
        let segments = s
            .segments
            .iter()
            .map(|g| GbmSegment {
                years: g.years,
                rho: g.rho,
                sigma: g.sigma,
            })
            .collect();
        let mut spec = GbmSpec::new(s.start_year, segments);
        spec.rate = self.calibration.rate;
        spec.days_per_year = self.calibration.trading_days;
        spec.initial_price = s.initial_price;
        spec.moment_matched = s.moment_matched;
        spec
    }
}

fn matrix(name: &str, rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let n = rows.len();
    if n == 0 || rows.iter().any(|r| r.len() != n) {
        return Err(CliError::config(name, "must be a non-empty square matrix"));
    }
    Ok(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
}

/// TOML literal if it parses as one, else the raw string.
fn parse_scalar(raw: &str) -> Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .and_then(|v| serde_json::to_value(v).ok())
        .unwrap_or_else(|| Value::String(raw.to_string()))
}

fn merge(base: &mut Value, over: Value, prefix: &str) -> Result<()> {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                let path = if prefix.is_empty() {
                    k.clone()
                } else {
                    format!("{prefix}.{k}")
                };
                match b.get_mut(&k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge(slot, v, &path)?,
                    Some(slot) => *slot = v,
                    None => return Err(CliError::config(path, "unknown key")),
                }
            }
            Ok(())
        }
        (b, o) => {
            *b = o;
            Ok(())
        }
    }
}

fn set_path(doc: &mut Value, path: &str, value: Value) -> Result<()> {
    let mut node = doc;
    let parts: Vec<&str> = path.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let obj = node
            .as_object_mut()
            .ok_or_else(|| CliError::config(path, "not a section"))?;
        let key = if obj.contains_key(*part) {
            part.to_string()
        } else {
            obj.keys()
                .find(|k| k.eq_ignore_ascii_case(part))
                .cloned()
                .unwrap_or_default()
        };
        let slot = obj
            .get_mut(&key)
            .ok_or_else(|| CliError::config(path, "unknown key"))?;
        if i + 1 == parts.len() {
            *slot = value;
            return Ok(());
        }
        node = slot;
    }
    Err(CliError::config(path, "empty key"))
}
