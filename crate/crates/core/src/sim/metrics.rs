//! Set-point tracking, flicker and voltage-violation metrics over a trace.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::adaptation::flicker;

use super::scenario::Scenario;
use super::trace::SimulationTrace;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricLimits {
    /// Flicker limit in percent.
    pub vf_lim: f64,
    pub t_outer: usize,
    pub dt_inner: f64,
    /// Instantaneous band.
    pub range_a: (f64, f64),
    /// Sustained band.
    pub range_b: (f64, f64),
    /// Seconds outside the sustained band before a violation counts.
    pub sustain_seconds: f64,
}

impl MetricLimits {
    pub fn from_scenario(s: &Scenario) -> Self {
        Self { vf_lim: s.adaptive.vf_lim, t_outer: s.t_outer, dt_inner: s.dt_inner, ..Self::default() }
    }
}

impl Default for MetricLimits {
    fn default() -> Self {
        Self {
            vf_lim: 0.03,
            t_outer: 10,
            dt_inner: 1.0,
            range_a: (0.9, 1.06),
            range_b: (0.95, 1.05),
            sustain_seconds: 300.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitMetrics {
    pub unit: usize,
    pub bus: String,
    pub msse: f64,
    pub vvi: usize,
    pub fc: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    /// Mean absolute set-point error in percent.
    pub msse: f64,
    pub vvi: usize,
    pub fc: usize,
    pub per_unit: Vec<UnitMetrics>,
}

fn outside(v: f64, band: (f64, f64)) -> bool {
    v < band.0 || v > band.1
}

/// Computes metrics over PV units. `mu[t][u]` is unit `u`'s set-point at tick
/// `t`; samples on de-energized buses are skipped.
pub fn metrics(trace: &SimulationTrace, mu: &[Vec<f64>], limits: &MetricLimits) -> MetricsReport {
    let t_outer = limits.t_outer.max(1);
    let mut per_unit = Vec::with_capacity(trace.n_units());
    for (u, bus) in trace.unit_buses.iter().enumerate() {
        let samples: Vec<_> = trace.unit_series(u).collect();

        let mut err_sum = 0.0;
        let mut live = 0usize;
        for (t, s) in samples.iter().enumerate() {
            if !s.flags.deenergized {
                err_sum += (s.v - mu[t][u]).abs();
                live += 1;
            }
        }
        let msse = if live == 0 { 0.0 } else { 100.0 * err_sum / live as f64 };

        let mut vvi = 0;
        let mut run = 0usize;
        for s in &samples {
            if s.flags.deenergized {
                run = 0;
                continue;
            }
            if outside(s.v, limits.range_b) {
                run += 1;
            } else {
                run = 0;
            }
            let sustained = run > 0 && run as f64 * limits.dt_inner >= limits.sustain_seconds;
            if outside(s.v, limits.range_a) || sustained {
                vvi += 1;
            }
        }

        let fc = samples
            .chunks_exact(t_outer)
            .filter(|w| w.iter().all(|s| !s.flags.deenergized))
            .filter(|w| {
                let v: Vec<f64> = w.iter().map(|s| s.v).collect();
                flicker(&v, false) > limits.vf_lim
            })
            .count();

        per_unit.push(UnitMetrics { unit: u, bus: bus.clone(), msse, vvi, fc });
    }
    let n = per_unit.len().max(1) as f64;
    MetricsReport {
        msse: per_unit.iter().map(|m| m.msse).sum::<f64>() / n,
        vvi: per_unit.iter().map(|m| m.vvi).sum(),
        fc: per_unit.iter().map(|m| m.fc).sum(),
        per_unit,
    }
}

impl fmt::Display for MetricsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:>6} {:>8} {:>10} {:>8} {:>8}", "unit", "bus", "MSSE(%)", "VVI", "FC")?;
        for m in &self.per_unit {
            writeln!(f, "{:>6} {:>8} {:>10.4} {:>8} {:>8}", m.unit, m.bus, m.msse, m.vvi, m.fc)?;
        }
        write!(f, "{:>6} {:>8} {:>10.4} {:>8} {:>8}", "total", "", self.msse, self.vvi, self.fc)
    }
}
