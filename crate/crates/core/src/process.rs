//! Ornstein-Uhlenbeck process specification and its one-step moments.
//!
//! The process is `dX = kappa (theta - X) dt + sigma_j dW` with a piecewise
//! constant volatility per time step. With `log_space` set the same dynamics
//! describe the log of the quoted quantity (exponential OU); the lattice is
//! built on the log-state and [`OuSpec::quote`] maps states back.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Below this value of `kappa * dt` the variance uses its series expansion.
const SMALL_DECAY: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OuSpec {
    pub kappa: f64,
    pub theta: f64,
    /// One volatility per level, or a single entry used for every level.
    pub sigma: Vec<f64>,
    pub x0: f64,
    pub dt: f64,
    pub levels: usize,
    #[serde(default)]
    pub log_space: bool,
}

impl OuSpec {
    /// Constant-volatility spec in state space.
    pub fn new(kappa: f64, theta: f64, sigma: f64, x0: f64, dt: f64, levels: usize) -> Self {
        Self {
            kappa,
            theta,
            sigma: vec![sigma],
            x0,
            dt,
            levels,
            log_space: false,
        }
    }

    pub fn with_log_space(mut self, log_space: bool) -> Self {
        self.log_space = log_space;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |field, reason: &str| {
            Err(Error::InvalidSpec {
                field,
                reason: reason.to_string(),
            })
        };
        if !(self.kappa.is_finite() && self.kappa >= 0.0) {
            return bad("kappa", "must be finite and >= 0");
        }
        if !self.theta.is_finite() {
            return bad("theta", "must be finite");
        }
        if !self.x0.is_finite() {
            return bad("x0", "must be finite");
        }
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return bad("dt", "must be finite and > 0");
        }
        if self.levels == 0 {
            return bad("levels", "must be >= 1");
        }
        if self.sigma.len() != 1 && self.sigma.len() != self.levels {
            return bad("sigma", "needs one entry or exactly `levels` entries");
        }
        if self.sigma.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return bad("sigma", "entries must be finite and > 0");
        }
        Ok(())
    }

    pub fn sigma_at(&self, j: usize) -> f64 {
        if self.sigma.len() == 1 {
            self.sigma[0]
        } else {
            self.sigma[j]
        }
    }

    /// One-step decay factor `exp(-kappa dt)`.
    pub fn decay(&self) -> f64 {
        (-self.kappa * self.dt).exp()
    }

    /// Maps a lattice state to the quoted quantity.
    pub fn quote(&self, state: f64) -> f64 {
        if self.log_space {
            state.exp()
        } else {
            state
        }
    }

    fn check_level(&self, j: usize) -> Result<()> {
        if j < self.levels {
            Ok(())
        } else {
            Err(Error::LevelOutOfRange {
                j,
                max: self.levels - 1,
            })
        }
    }
}

/// `E[X(t_{j+1}) | X(t_j) = x]`.
pub fn conditional_mean(spec: &OuSpec, j: usize, x: f64) -> Result<f64> {
    spec.check_level(j)?;
    Ok(ou_mean(spec.kappa, spec.theta, spec.dt, x))
}

/// `Var(X(t_{j+1}) | X(t_j))`, the same for every state.
pub fn conditional_variance(spec: &OuSpec, j: usize) -> Result<f64> {
    spec.check_level(j)?;
    Ok(ou_variance(spec.kappa, spec.sigma_at(j), spec.dt))
}

fn ou_mean(kappa: f64, theta: f64, dt: f64, x: f64) -> f64 {
    let decay = (-kappa * dt).exp();
    x * decay - theta * (-kappa * dt).exp_m1()
}

fn ou_variance(kappa: f64, sigma: f64, dt: f64) -> f64 {
    let kdt = kappa * dt;
    if kdt < SMALL_DECAY {
        // (1 - e^{-2u}) / 2u = 1 - u + O(u^2)
        sigma * sigma * dt * (1.0 - kdt)
    } else {
        -sigma * sigma * (-2.0 * kdt).exp_m1() / (2.0 * kappa)
    }
}

/// Exact mean and variance of `X(t_j)` given `X(0) = x0`.
pub fn terminal_moments(spec: &OuSpec, j: usize) -> Result<(f64, f64)> {
    if j > spec.levels {
        return Err(Error::LevelOutOfRange {
            j,
            max: spec.levels,
        });
    }
    let decay = spec.decay();
    let mut mean = spec.x0;
    let mut var = 0.0;
    for i in 0..j {
        mean = ou_mean(spec.kappa, spec.theta, spec.dt, mean);
        var = decay * decay * var + ou_variance(spec.kappa, spec.sigma_at(i), spec.dt);
    }
    Ok((mean, var))
}

pub type MeanFn = Arc<dyn Fn(usize, f64) -> f64 + Send + Sync>;

/// Conditional moments consumed by the lattice builder.
#[derive(Clone)]
pub struct MomentModel {
    mean_fn: MeanFn,
    var: Vec<f64>,
    t: Vec<f64>,
    x0: f64,
    dt: f64,
    log_space: bool,
}

impl fmt::Debug for MomentModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("MomentModel")
            .field("var", &self.var)
            .field("t", &self.t)
            .field("x0", &self.x0)
            .field("log_space", &self.log_space)
            .finish_non_exhaustive()
    }
}

impl MomentModel {
    /// Builds a model from an arbitrary mean function, e.g. one with a
    /// time-varying reversion target. `var` holds one entry per level.
    pub fn custom(mean_fn: MeanFn, var: Vec<f64>, x0: f64, dt: f64) -> Result<Self> {
        if var.is_empty() {
            return Err(Error::InvalidSpec {
                field: "levels",
                reason: "must be >= 1".into(),
            });
        }
        if let Some(v) = var.iter().find(|v| !(v.is_finite() && **v > 0.0)) {
            return Err(Error::NonPositiveVariance(*v));
        }
        if !(dt.is_finite() && dt > 0.0) {
            return Err(Error::InvalidSpec {
                field: "dt",
                reason: "must be finite and > 0".into(),
            });
        }
        let t = (0..=var.len()).map(|j| j as f64 * dt).collect();
        Ok(Self {
            mean_fn,
            var,
            t,
            x0,
            dt,
            log_space: false,
        })
    }

    pub fn mean(&self, j: usize, x: f64) -> f64 {
        (self.mean_fn)(j, x)
    }

    pub fn var(&self, j: usize) -> f64 {
        self.var[j]
    }

    pub fn variances(&self) -> &[f64] {
        &self.var
    }

    /// Time grid `t_0..=t_levels`.
    pub fn times(&self) -> &[f64] {
        &self.t
    }

    pub fn levels(&self) -> usize {
        self.var.len()
    }

    pub fn x0(&self) -> f64 {
        self.x0
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn log_space(&self) -> bool {
        self.log_space
    }
}

pub fn make_moment_model(spec: &OuSpec) -> Result<MomentModel> {
    spec.validate()?;
    let (kappa, theta, dt) = (spec.kappa, spec.theta, spec.dt);
    let var = (0..spec.levels)
        .map(|j| ou_variance(kappa, spec.sigma_at(j), dt))
        .collect::<Vec<_>>();
    let mut model = MomentModel::custom(
        Arc::new(move |_, x| ou_mean(kappa, theta, dt, x)),
        var,
        spec.x0,
        dt,
    )?;
    model.log_space = spec.log_space;
    Ok(model)
}
