//! Admissible risk-premium sets and their minimum-norm (worst-case) element.

use alloc::format;
use alloc::vec::Vec;

use rand::Rng;

use crate::error::{Error, Result};
use crate::math;
use crate::rng::{self, Purpose};

/// How the minimum-norm point of a ball is computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ProjectionMode {
    /// `c (1 - R/|c|)`, the true minimizer of `|x|` over the ball.
    #[default]
    Exact,
    /// `c (1 - R/|c|^2)`, the scaling that reproduces the elliptic columns of
    /// the published variance table. Not a minimizer in general.
    TableCompat,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct SetPolicy {
    pub projection: ProjectionMode,
    /// Accept cube lower bounds equal to zero.
    pub allow_zero_lower: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub enum AdmissibleSet {
    Cube { lower: Vec<f64>, upper: Vec<f64> },
    Ball { center: Vec<f64>, radius: f64 },
}

/// Relative slack of the ball membership test, absorbing rounding in points
/// generated on the sphere.
const BALL_SLACK: f64 = 1e-12;

impl AdmissibleSet {
    /// Cube `[rho - r, rho + r]` around the investor's estimate.
    pub fn cube_around(rho: &[f64], r: f64) -> Self {
        AdmissibleSet::Cube {
            lower: rho.iter().map(|x| x - r).collect(),
            upper: rho.iter().map(|x| x + r).collect(),
        }
    }

    pub fn ball(center: Vec<f64>, radius: f64) -> Self {
        AdmissibleSet::Ball { center, radius }
    }

    pub fn dim(&self) -> usize {
        match self {
            AdmissibleSet::Cube { lower, .. } => lower.len(),
            AdmissibleSet::Ball { center, .. } => center.len(),
        }
    }

    pub fn validate(&self, policy: SetPolicy) -> Result<()> {
        match self {
            AdmissibleSet::Cube { lower, upper } => {
                if lower.is_empty() || lower.len() != upper.len() {
                    return Err(Error::InvalidSet(format!(
                        "cube bounds have lengths {} and {}",
                        lower.len(),
                        upper.len()
                    )));
                }
                for (j, (&lo, &hi)) in lower.iter().zip(upper).enumerate() {
                    if !lo.is_finite() || !hi.is_finite() || lo > hi {
                        return Err(Error::InvalidSet(format!(
                            "bounds [{lo}, {hi}] in coordinate {j}"
                        )));
                    }
                    let ok = if policy.allow_zero_lower {
                        lo >= 0.0
                    } else {
                        lo > 0.0
                    };
                    if !ok {
                        return Err(Error::InvalidSet(format!(
                            "lower bound {lo} in coordinate {j} must be positive"
                        )));
                    }
                }
                if lower.iter().all(|&lo| lo == 0.0) {
                    return Err(Error::InvalidSet("cube contains the origin".into()));
                }
                Ok(())
            }
            AdmissibleSet::Ball { center, radius } => {
                if center.is_empty() {
                    return Err(Error::InvalidSet("ball center is empty".into()));
                }
                if !(*radius >= 0.0) || !radius.is_finite() {
                    return Err(Error::InvalidSet(format!("radius {radius} must be >= 0")));
                }
                if let Some(j) = center.iter().position(|&x| !(x > 0.0) || !x.is_finite()) {
                    return Err(Error::InvalidSet(format!(
                        "center coordinate {j} must be positive"
                    )));
                }
                let norm = math::norm(center);
                if !(*radius < norm) {
                    return Err(Error::InvalidSet(format!(
                        "radius {radius} must be below the center norm {norm}"
                    )));
                }
                if policy.projection == ProjectionMode::TableCompat && !(*radius < norm * norm) {
                    return Err(Error::InvalidSet(format!(
                        "table-compat scaling 1 - {radius}/{} is not positive",
                        norm * norm
                    )));
                }
                Ok(())
            }
        }
    }

    /// Worst-case premium: the element of smallest Euclidean norm.
    pub fn project_min_norm(&self, dim: usize, policy: SetPolicy) -> Result<Vec<f64>> {
        self.validate(policy)?;
        if dim != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: dim,
            });
        }
        Ok(match self {
            AdmissibleSet::Cube { lower, .. } => lower.clone(),
            AdmissibleSet::Ball { center, radius } => {
                let norm = math::norm(center);
                let scale = match policy.projection {
                    ProjectionMode::Exact => 1.0 - radius / norm,
                    ProjectionMode::TableCompat => 1.0 - radius / (norm * norm),
                };
                math::scaled(center, scale)
            }
        })
    }

    pub fn contains(&self, point: &[f64]) -> Result<bool> {
        if point.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: point.len(),
            });
        }
        Ok(match self {
            AdmissibleSet::Cube { lower, upper } => point
                .iter()
                .zip(lower.iter().zip(upper))
                .all(|(&x, (&lo, &hi))| lo <= x && x <= hi),
            AdmissibleSet::Ball { center, radius } => {
                let dist_sq: f64 = point
                    .iter()
                    .zip(center)
                    .map(|(x, c)| (x - c) * (x - c))
                    .sum();
                dist_sq <= radius * radius * (1.0 + BALL_SLACK)
            }
        })
    }

    /// `count` seeded points of the set, the exact minimum-norm point first,
    /// then alternating interior and boundary draws.
    pub fn sample_boundary_and_interior(
        &self,
        count: usize,
        seed: u64,
        policy: SetPolicy,
    ) -> Result<Vec<Vec<f64>>> {
        self.validate(policy)?;
        if count == 0 {
            return Err(Error::invalid("count", "must be at least 1"));
        }
        let exact = SetPolicy {
            projection: ProjectionMode::Exact,
            ..policy
        };
        let mut out = Vec::with_capacity(count);
        out.push(self.project_min_norm(self.dim(), exact)?);
        let mut rng = rng::stream(seed, Purpose::SetSampling, 0);
        for i in 1..count {
            let on_boundary = i % 2 == 0;
            out.push(match self {
                AdmissibleSet::Cube { lower, upper } => {
                    let mut p: Vec<f64> = lower
                        .iter()
                        .zip(upper)
                        .map(|(&lo, &hi)| lo + rng.random::<f64>() * (hi - lo))
                        .collect();
                    if on_boundary {
                        let j = rng.random_range(0..p.len());
                        p[j] = if rng.random::<bool>() {
                            upper[j]
                        } else {
                            lower[j]
                        };
                    }
                    p
                }
                AdmissibleSet::Ball { center, radius } => {
                    let d = center.len();
                    let mut dir: Vec<f64> = (0..d).map(|_| rng::normal(&mut rng)).collect();
                    let n = math::norm(&dir);
                    let r = if on_boundary {
                        *radius
                    } else {
                        radius * libm::pow(rng.random::<f64>(), 1.0 / d as f64)
                    };
                    for (x, c) in dir.iter_mut().zip(center) {
                        *x = c + r * *x / n;
                    }
                    dir
                }
            });
        }
        Ok(out)
    }
}
