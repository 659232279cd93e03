//! Inner-loop var dispatch laws: conventional droop, delayed droop and the
//! shifted adaptive droop. Everything here is a pure function of one
//! inverter's own parameters and its own bus voltage.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const CONSISTENCY_TOL: f64 = 1e-9;

/// Piecewise-linear droop curve with deadband and saturation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DroopParams {
    pub mu: f64,
    pub deadband: f64,
    pub slope: f64,
    pub q_min: f64,
    pub q_max: f64,
    pub v_min: f64,
    pub v_max: f64,
}

impl DroopParams {
    /// Builds the curve from its four set-points; the slope follows from them
    /// and both sides of the curve must agree on it.
    pub fn from_setpoints(mu: f64, deadband: f64, v_min: f64, v_max: f64, q_min: f64, q_max: f64) -> Result<Self> {
        if !(deadband >= 0.0) {
            return Err(Error::InvalidParams("deadband must be >= 0".into()));
        }
        if !(q_min <= 0.0 && 0.0 <= q_max) {
            return Err(Error::InvalidParams(format!("need q_min <= 0 <= q_max, got [{q_min}, {q_max}]")));
        }
        let lo = mu - deadband / 2.0 - v_min;
        let hi = mu + deadband / 2.0 - v_max;
        if !(lo > 0.0 && hi < 0.0) {
            return Err(Error::InvalidParams(format!(
                "cut-offs [{v_min}, {v_max}] must enclose the deadband around mu={mu}"
            )));
        }
        let slope = q_max / lo;
        let other = q_min / hi;
        if (slope - other).abs() > CONSISTENCY_TOL * slope.abs().max(1.0) {
            return Err(Error::InvalidParams(format!("inconsistent set-points: slopes {slope} and {other} differ")));
        }
        Ok(Self { mu, deadband, slope, q_min, q_max, v_min, v_max })
    }

    /// Builds a symmetric curve with slope `m` and var limits `±q_lim`.
    pub fn from_slope(mu: f64, deadband: f64, slope: f64, q_lim: f64) -> Result<Self> {
        if !(slope > 0.0) {
            return Err(Error::InvalidParams("droop slope must be > 0".into()));
        }
        if !(q_lim >= 0.0) {
            return Err(Error::InvalidParams("var limit must be >= 0".into()));
        }
        Ok(Self {
            mu,
            deadband,
            slope,
            q_min: -q_lim,
            q_max: q_lim,
            v_min: mu - deadband / 2.0 - q_lim / slope,
            v_max: mu + deadband / 2.0 + q_lim / slope,
        })
    }

    /// Re-derives the curve for new var limits while keeping the voltage
    /// cut-offs fixed, so the effective slope scales with available capacity.
    pub fn with_capacity(&self, q_lim: f64) -> Self {
        let lo = self.mu - self.deadband / 2.0 - self.v_min;
        Self { slope: q_lim / lo, q_min: -q_lim, q_max: q_lim, ..*self }
    }

    pub fn clamp(&self, q: f64) -> f64 {
        q.clamp(self.q_min, self.q_max)
    }
}

/// Adaptive control parameters `cp` of one inverter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdaptiveParams {
    pub m_p: f64,
    pub q_p: f64,
    pub q_min_p: f64,
    pub q_max_p: f64,
    pub v_min_p: f64,
    pub v_max_p: f64,
    pub mu: f64,
}

impl AdaptiveParams {
    /// Parameters with the cut-offs derived from slope, offset and limits.
    pub fn new(m_p: f64, q_p: f64, q_min_p: f64, q_max_p: f64, mu: f64) -> Result<Self> {
        if !(m_p >= 0.0) {
            return Err(Error::InvalidParams("adaptive slope must be >= 0".into()));
        }
        if !(q_min_p <= q_p && q_p <= q_max_p) {
            return Err(Error::InvalidParams(format!("q_p={q_p} outside [{q_min_p}, {q_max_p}]")));
        }
        let (v_min_p, v_max_p) = slope_to_cutoffs(m_p, q_p, q_min_p, q_max_p, mu);
        Ok(Self { m_p, q_p, q_min_p, q_max_p, v_min_p, v_max_p, mu })
    }

    /// The slope recovered from the cut-offs on both sides of the curve.
    pub fn implied_slopes(&self) -> (f64, f64) {
        ((self.q_min_p - self.q_p) / (self.mu - self.v_max_p), (self.q_max_p - self.q_p) / (self.mu - self.v_min_p))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ControllerKind {
    None,
    Conventional,
    Delayed { tau: f64 },
    Adaptive,
}

impl ControllerKind {
    pub fn validate(&self) -> Result<()> {
        match *self {
            ControllerKind::Delayed { tau } if !(0.0..1.0).contains(&tau) => {
                Err(Error::InvalidParams(format!("delay coefficient tau={tau} outside [0, 1)")))
            }
            _ => Ok(()),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ControllerKind::None => "none",
            ControllerKind::Conventional => "conventional",
            ControllerKind::Delayed { .. } => "delayed",
            ControllerKind::Adaptive => "adaptive",
        }
    }
}

/// Conventional droop: zero inside the deadband, linear outside, saturated
/// beyond the cut-offs.
pub fn droop_dispatch(params: &DroopParams, v: f64) -> f64 {
    let dev = v - params.mu;
    let half = params.deadband / 2.0;
    let q = if dev > half {
        -params.slope * (dev - half)
    } else if dev < -half {
        -params.slope * (dev + half)
    } else {
        0.0
    };
    params.clamp(q)
}

/// Droop followed by a delay block: `clamp(f(v) + tau * q_prev)`.
pub fn delayed_dispatch(params: &DroopParams, tau: f64, v: f64, q_prev: f64) -> f64 {
    params.clamp(droop_dispatch(params, v) + tau * q_prev)
}

/// Shifted droop `P[q_p - m_p (v - mu)]`, saturated to `[q_min_p, q_max_p]`.
pub fn adaptive_dispatch(params: &AdaptiveParams, v: f64) -> f64 {
    let q = params.q_p - params.m_p * (v - params.mu);
    q.clamp(params.q_min_p, params.q_max_p)
}

/// Voltage cut-offs `(v_min_p, v_max_p)` at which the adaptive curve meets its
/// var limits. A zero slope never reaches the limits; the cut-offs are then
/// `(-inf, +inf)`.
pub fn slope_to_cutoffs(m_p: f64, q_p: f64, q_min_p: f64, q_max_p: f64, mu: f64) -> (f64, f64) {
    if m_p == 0.0 {
        return (f64::NEG_INFINITY, f64::INFINITY);
    }
    let v_max = mu - (q_min_p - q_p) / m_p;
    let v_min = mu - (q_max_p - q_p) / m_p;
    (v_min, v_max)
}
