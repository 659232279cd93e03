//! Outer-loop parameter dispatch for the adaptive controller.
//!
//! Once per horizon of `t_outer` inner ticks each inverter summarizes its own
//! voltage window, moves its var offset to cancel the average set-point error,
//! moves its slope according to the flicker zone, and refreshes its var limits
//! from the real power it expects to produce.

use serde::{Deserialize, Serialize};

use crate::control::{slope_to_cutoffs, AdaptiveParams};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdaptiveConfig {
    /// Inner ticks per outer-loop horizon. Scenarios set this from their own
    /// `t_outer`.
    #[serde(skip)]
    pub t_outer: usize,
    pub k_d: f64,
    pub eps_sse: f64,
    /// Flicker tolerance in percent.
    pub eps_vf: f64,
    /// Borderline flicker limit in percent.
    pub vf_lim: f64,
    /// Maximum flicker limit in percent.
    pub vf_lim_bar: f64,
    pub delta_vf: f64,
    pub delta_vf_bar: f64,
    pub m_init: f64,
    pub m_floor: f64,
    /// Optional upper bound on the slope.
    pub m_ceiling: Option<f64>,
    /// Average the set-point error over only the last `n` samples of each
    /// window instead of the whole window.
    pub sse_tail: Option<usize>,
    /// Sum signed rather than absolute voltage differences in the flicker index.
    pub signed_flicker: bool,
}

impl Default for AdaptiveConfig {
    fn default() -> Self {
        Self {
            t_outer: 10,
            k_d: 4.0,
            eps_sse: 0.005,
            eps_vf: 0.01,
            vf_lim: 0.03,
            vf_lim_bar: 0.09,
            delta_vf: 0.5,
            delta_vf_bar: 1.0,
            m_init: 1.0,
            m_floor: 0.1,
            m_ceiling: None,
            sse_tail: None,
            signed_flicker: false,
        }
    }
}

impl AdaptiveConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParams(msg));
        if self.t_outer < 2 {
            return bad(format!("t_outer must be >= 2, got {}", self.t_outer));
        }
        if !(self.k_d > 0.0) {
            return bad(format!("k_d must be > 0, got {}", self.k_d));
        }
        if !(self.eps_sse >= 0.0) {
            return bad(format!("eps_sse must be >= 0, got {}", self.eps_sse));
        }
        if !(self.vf_lim_bar > self.vf_lim && self.vf_lim > self.eps_vf && self.eps_vf > 0.0) {
            return bad(format!(
                "need vf_lim_bar > vf_lim > eps_vf > 0, got {} / {} / {}",
                self.vf_lim_bar, self.vf_lim, self.eps_vf
            ));
        }
        if !(self.delta_vf_bar > self.delta_vf && self.delta_vf > 0.0) {
            return bad(format!("need delta_vf_bar > delta_vf > 0, got {} / {}", self.delta_vf_bar, self.delta_vf));
        }
        if !(self.m_floor >= 0.0) {
            return bad(format!("m_floor must be >= 0, got {}", self.m_floor));
        }
        if !(self.m_init >= self.m_floor) {
            return bad(format!("m_init {} below m_floor {}", self.m_init, self.m_floor));
        }
        if let Some(c) = self.m_ceiling {
            if !(c >= self.m_init) {
                return bad(format!("m_ceiling {c} below m_init {}", self.m_init));
            }
        }
        if let Some(n) = self.sse_tail {
            if n == 0 || n > self.t_outer {
                return bad(format!("sse_tail {n} outside 1..={}", self.t_outer));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowStats {
    pub sse_avg: f64,
    /// Flicker index in percent.
    pub vf: f64,
    pub p_pv_avg: f64,
}

/// Flicker index of a window: `100/T * sum |V_t - V_{t-1}| / V_t`.
pub fn flicker(voltages: &[f64], signed: bool) -> f64 {
    let t = voltages.len();
    if t == 0 {
        return 0.0;
    }
    let sum: f64 = voltages
        .windows(2)
        .map(|w| {
            let d = (w[1] - w[0]) / w[1];
            if signed {
                d
            } else {
                d.abs()
            }
        })
        .sum();
    (100.0 * sum / t as f64).abs()
}

pub fn window_stats(voltages: &[f64], mu: f64, p_pv: &[f64], cfg: &AdaptiveConfig) -> Result<WindowStats> {
    if voltages.len() != cfg.t_outer || p_pv.len() != cfg.t_outer {
        return Err(Error::Dimension(format!(
            "window needs {} samples, got {} voltages and {} pv samples",
            cfg.t_outer,
            voltages.len(),
            p_pv.len()
        )));
    }
    let t = cfg.t_outer as f64;
    let tail = &voltages[cfg.t_outer - cfg.sse_tail.unwrap_or(cfg.t_outer).min(cfg.t_outer)..];
    Ok(WindowStats {
        sse_avg: tail.iter().map(|v| v - mu).sum::<f64>() / tail.len() as f64,
        vf: flicker(voltages, cfg.signed_flicker),
        p_pv_avg: p_pv.iter().sum::<f64>() / t,
    })
}

/// Error-adaptive offset: `q_p - k_d * sse_avg` outside the tolerance band.
pub fn strategy1_update_qp(q_p_prev: f64, stats: &WindowStats, cfg: &AdaptiveConfig) -> f64 {
    if stats.sse_avg.abs() > cfg.eps_sse {
        q_p_prev - cfg.k_d * stats.sse_avg
    } else {
        q_p_prev
    }
}

/// Flicker zone of a window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlickerZone {
    Critical,
    Subcritical,
    Safe,
    Relaxed,
}

pub fn flicker_zone(vf: f64, cfg: &AdaptiveConfig) -> FlickerZone {
    if vf > cfg.vf_lim_bar {
        FlickerZone::Critical
    } else if vf > cfg.vf_lim {
        FlickerZone::Subcritical
    } else if vf > cfg.vf_lim - cfg.eps_vf {
        FlickerZone::Safe
    } else {
        FlickerZone::Relaxed
    }
}

pub fn strategy2_update_slope(m_prev: f64, stats: &WindowStats, cfg: &AdaptiveConfig) -> f64 {
    let m = match flicker_zone(stats.vf, cfg) {
        FlickerZone::Critical => m_prev - cfg.delta_vf_bar,
        FlickerZone::Subcritical => m_prev - cfg.delta_vf,
        FlickerZone::Safe => m_prev,
        FlickerZone::Relaxed if stats.sse_avg.abs() > cfg.eps_sse => {
            let up = m_prev + cfg.delta_vf;
            match cfg.m_ceiling {
                Some(c) => up.min(c.max(m_prev)),
                None => up,
            }
        }
        FlickerZone::Relaxed => m_prev,
    };
    m.max(cfg.m_floor)
}

/// Var limits left over by the expected real output.
pub fn capacity_limits(rating_s: f64, p_pv_avg: f64) -> (f64, f64) {
    let p = p_pv_avg.min(rating_s);
    let q = (rating_s * rating_s - p * p).max(0.0).sqrt();
    (-q, q)
}

/// One full parameter dispatch for one inverter.
pub fn outer_loop_step(
    params: &AdaptiveParams,
    rating_s: f64,
    voltages: &[f64],
    p_pv: &[f64],
    cfg: &AdaptiveConfig,
) -> Result<(AdaptiveParams, WindowStats)> {
    let stats = window_stats(voltages, params.mu, p_pv, cfg)?;
    let q_p = strategy1_update_qp(params.q_p, &stats, cfg);
    let m_p = strategy2_update_slope(params.m_p, &stats, cfg);
    let (q_min_p, q_max_p) = capacity_limits(rating_s, stats.p_pv_avg);
    let q_p = q_p.clamp(q_min_p, q_max_p);
    let (v_min_p, v_max_p) = slope_to_cutoffs(m_p, q_p, q_min_p, q_max_p, params.mu);
    let next = AdaptiveParams { m_p, q_p, q_min_p, q_max_p, v_min_p, v_max_p, mu: params.mu };
    Ok((next, stats))
}
