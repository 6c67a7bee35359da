//! Variance-preserving noise schedules.
//!
//! Timesteps are 1-based: t ranges over [1, T]. `alpha_bar` is the cumulative
//! product of (1 - beta); the signal/noise rates a_t = sqrt(alpha_bar_t) and
//! s_t = sqrt(1 - alpha_bar_t) satisfy a_t^2 + s_t^2 = 1 exactly.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScheduleKind {
    /// Squared-cosine alpha_bar profile with per-step beta clipped at 0.999.
    Cosine,
    /// Beta linear from 1e-4 to 0.02, scaled by 1000/T.
    Linear,
}

impl fmt::Display for ScheduleKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ScheduleKind::Cosine => write!(f, "cosine"),
            ScheduleKind::Linear => write!(f, "linear"),
        }
    }
}

impl FromStr for ScheduleKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cosine" => Ok(ScheduleKind::Cosine),
            "linear" => Ok(ScheduleKind::Linear),
            other => Err(Error::BadArgument(format!(
                "unknown schedule kind {other:?} (expected cosine|linear)"
            ))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct NoiseSchedule {
    pub kind: ScheduleKind,
    pub steps: usize,
    /// betas[t-1] = beta_t.
    betas: Vec<f64>,
    /// alpha_bars[t-1] = prod_{u<=t} (1 - beta_u).
    alpha_bars: Vec<f64>,
}

/// Builds a schedule with T steps.
pub fn make_schedule(kind: ScheduleKind, steps: usize) -> Result<NoiseSchedule> {
    if steps < 2 {
        return Err(Error::BadArgument(format!(
            "schedule needs at least 2 steps, got {steps}"
        )));
    }
    let betas: Vec<f64> = match kind {
        ScheduleKind::Cosine => {
            let s = 0.008;
            let f = |u: f64| ((u / steps as f64 + s) / (1.0 + s) * std::f64::consts::FRAC_PI_2)
                .cos()
                .powi(2);
            (1..=steps)
                .map(|t| (1.0 - f(t as f64) / f(t as f64 - 1.0)).min(0.999))
                .collect()
        }
        ScheduleKind::Linear => {
            let scale = 1000.0 / steps as f64;
            let lo = 1e-4 * scale;
            let hi = 0.02 * scale;
            (0..steps)
                .map(|i| (lo + (hi - lo) * i as f64 / (steps - 1) as f64).min(0.999))
                .collect()
        }
    };
    // Recompute alpha_bar from the clipped betas so the variance-preserving
    // identity holds exactly for the coefficients actually used.
    let mut alpha_bars = Vec::with_capacity(steps);
    let mut prod = 1.0;
    for &b in &betas {
        if !(b > 0.0 && b < 1.0) {
            return Err(Error::BadArgument(format!(
                "schedule produced beta {b} outside (0, 1)"
            )));
        }
        prod *= 1.0 - b;
        alpha_bars.push(prod);
    }
    Ok(NoiseSchedule {
        kind,
        steps,
        betas,
        alpha_bars,
    })
}

impl NoiseSchedule {
    /// Errors unless 1 <= t <= T.
    pub fn validate_t(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.steps {
            return Err(Error::BadTimestep {
                t,
                steps: self.steps,
            });
        }
        Ok(())
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t - 1]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        1.0 - self.betas[t - 1]
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bars[t - 1]
    }

    /// alpha_bar at t-1, with alpha_bar_0 = 1.
    pub fn alpha_bar_prev(&self, t: usize) -> f64 {
        if t <= 1 {
            1.0
        } else {
            self.alpha_bars[t - 2]
        }
    }

    /// Signal rate a_t = sqrt(alpha_bar_t).
    pub fn signal_rate(&self, t: usize) -> f64 {
        self.alpha_bar(t).sqrt()
    }

    /// Noise rate s_t = sqrt(1 - alpha_bar_t).
    pub fn noise_rate(&self, t: usize) -> f64 {
        (1.0 - self.alpha_bar(t)).sqrt()
    }

    /// True posterior variance beta_tilde_t = (1 - alpha_bar_{t-1}) / (1 - alpha_bar_t) * beta_t.
    ///
    /// Zero at t = 1 (the posterior there is deterministic).
    pub fn posterior_variance(&self, t: usize) -> f64 {
        (1.0 - self.alpha_bar_prev(t)) / (1.0 - self.alpha_bar(t)) * self.beta(t)
    }

    /// log beta_tilde with the t=1 entry replaced by the t=2 value, so the
    /// logarithm is finite everywhere.
    pub fn log_posterior_variance_clipped(&self, t: usize) -> f64 {
        if t == 1 {
            self.posterior_variance(2).ln()
        } else {
            self.posterior_variance(t).ln()
        }
    }

    /// Coefficients (c0, c1) of the posterior mean c0 * x0 + c1 * x_t.
    pub fn posterior_mean_coefs(&self, t: usize) -> (f64, f64) {
        let ab = self.alpha_bar(t);
        let ab_prev = self.alpha_bar_prev(t);
        let c0 = ab_prev.sqrt() * self.beta(t) / (1.0 - ab);
        let c1 = self.alpha(t).sqrt() * (1.0 - ab_prev) / (1.0 - ab);
        (c0, c1)
    }
}
