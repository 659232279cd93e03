use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::adaptation::AdaptiveConfig;
use crate::control::ControllerKind;
use crate::error::{Error, Result};
use crate::feeder::FeederModel;

use super::profile::SeriesSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlantKind {
    #[default]
    PowerFlow,
    /// First-order model around the initial operating point.
    Linearized,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControllerChoice {
    #[default]
    None,
    Conventional,
    Delayed,
    Adaptive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControllerConfig {
    pub kind: ControllerChoice,
    /// Droop slope for conventional and delayed control.
    pub slope: f64,
    pub tau: f64,
    pub deadband: f64,
    pub mu: f64,
    /// Keep the droop cut-offs fixed and rescale the var limits (and so the
    /// slope) with the headroom left by the current real output.
    pub track_capacity: bool,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        Self { kind: ControllerChoice::None, slope: 1.0, tau: 0.5, deadband: 0.0, mu: 1.0, track_capacity: false }
    }
}

impl ControllerConfig {
    pub fn controller_kind(&self) -> ControllerKind {
        match self.kind {
            ControllerChoice::None => ControllerKind::None,
            ControllerChoice::Conventional => ControllerKind::Conventional,
            ControllerChoice::Delayed => ControllerKind::Delayed { tau: self.tau },
            ControllerChoice::Adaptive => ControllerKind::Adaptive,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EventKind {
    SubstationVoltage {
        v: f64,
    },
    Setpoint {
        mu: f64,
        #[serde(default)]
        units: Option<Vec<usize>>,
    },
    CloudCover {
        scale: f64,
        #[serde(default)]
        units: Option<Vec<usize>>,
    },
    Intermittency {
        series: String,
        #[serde(default)]
        units: Option<Vec<usize>>,
    },
    Switch {
        line: String,
        closed: bool,
    },
    LoadScale {
        factor: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub tick: usize,
    #[serde(flatten)]
    pub kind: EventKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default)]
    pub name: String,
    /// Bundled feeder this scenario was written for, used when no feeder file
    /// is given.
    #[serde(default)]
    pub feeder: Option<String>,
    pub horizon: usize,
    #[serde(default = "default_dt")]
    pub dt_inner: f64,
    #[serde(default = "default_t_outer")]
    pub t_outer: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub plant: PlantKind,
    #[serde(default)]
    pub controller: ControllerConfig,
    #[serde(default)]
    pub adaptive: AdaptiveConfig,
    /// Series driving every unit's real output; constant 1 when absent.
    #[serde(default)]
    pub pv_profile: Option<String>,
    #[serde(default)]
    pub series: BTreeMap<String, SeriesSpec>,
    #[serde(default)]
    pub events: Vec<Event>,
}

fn default_dt() -> f64 {
    1.0
}

fn default_t_outer() -> usize {
    10
}

fn check_units(units: &Option<Vec<usize>>, n_units: usize, tick: usize) -> Result<()> {
    if let Some(us) = units {
        if let Some(u) = us.iter().find(|&&u| u >= n_units) {
            return Err(Error::InvalidScenario(format!(
                "event at tick {tick} names PV unit {u}, feeder has {n_units}"
            )));
        }
    }
    Ok(())
}

impl Scenario {
    pub fn from_json_str(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_json_string(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Adaptive settings with the scenario's outer horizon applied.
    pub fn adaptive_config(&self) -> AdaptiveConfig {
        AdaptiveConfig { t_outer: self.t_outer, ..self.adaptive }
    }

    /// Checks the scenario against the feeder it will run on, including a dry
    /// run of every topology event.
    pub fn validate(&self, model: &FeederModel) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidScenario(m));
        if !(self.dt_inner > 0.0) {
            return bad(format!("dt_inner must be > 0, got {}", self.dt_inner));
        }
        if self.horizon < self.t_outer {
            return bad(format!("horizon {} shorter than t_outer {}", self.horizon, self.t_outer));
        }
        let c = &self.controller;
        if !(c.slope > 0.0) {
            return bad(format!("controller slope must be > 0, got {}", c.slope));
        }
        if !(c.deadband >= 0.0) {
            return bad(format!("deadband must be >= 0, got {}", c.deadband));
        }
        if !(0.5..=1.5).contains(&c.mu) {
            return bad(format!("set-point {} outside 0.5-1.5 pu", c.mu));
        }
        c.controller_kind().validate()?;
        self.adaptive_config().validate()?;
        for (name, s) in &self.series {
            s.validate().map_err(|e| Error::InvalidScenario(format!("series `{name}`: {e}")))?;
        }
        if let Some(p) = &self.pv_profile {
            if !self.series.contains_key(p) {
                return bad(format!("pv_profile names unknown series `{p}`"));
            }
        }
        if self.events.windows(2).any(|w| w[0].tick > w[1].tick) {
            return bad("events must be sorted by tick".into());
        }
        let n_units = model.pv_units.len();
        let mut topo = model.clone();
        for e in &self.events {
            if e.tick >= self.horizon {
                return bad(format!("event at tick {} beyond horizon {}", e.tick, self.horizon));
            }
            match &e.kind {
                EventKind::SubstationVoltage { v } | EventKind::Setpoint { mu: v, .. } if !(0.5..=1.5).contains(v) => {
                    return bad(format!("voltage {v} at tick {} outside 0.5-1.5 pu", e.tick));
                }
                EventKind::Setpoint { units, .. } => check_units(units, n_units, e.tick)?,
                EventKind::CloudCover { scale, units } => {
                    if !(*scale >= 0.0) {
                        return bad(format!("cloud scale {scale} at tick {} is negative", e.tick));
                    }
                    check_units(units, n_units, e.tick)?;
                }
                EventKind::Intermittency { series, units } => {
                    if !self.series.contains_key(series) {
                        return bad(format!("unknown series `{series}` at tick {}", e.tick));
                    }
                    check_units(units, n_units, e.tick)?;
                }
                EventKind::Switch { line, closed } => {
                    if self.plant == PlantKind::Linearized {
                        return bad("switch events need the power-flow plant".into());
                    }
                    topo = topo.apply_topology_event(line, *closed)?;
                }
                EventKind::LoadScale { factor } if !(*factor >= 0.0) => {
                    return bad(format!("load scale {factor} at tick {} is negative", e.tick));
                }
                _ => {}
            }
        }
        Ok(())
    }

    /// Set-point of every unit at every tick.
    pub fn mu_schedule(&self, n_units: usize) -> Vec<Vec<f64>> {
        let mut mu = vec![self.controller.mu; n_units];
        let mut out = Vec::with_capacity(self.horizon);
        let mut events = self.events.iter().peekable();
        for t in 0..self.horizon {
            while let Some(e) = events.next_if(|e| e.tick == t) {
                if let EventKind::Setpoint { mu: m, units } = &e.kind {
                    for (u, mu_u) in mu.iter_mut().enumerate() {
                        if units.as_ref().is_none_or(|us| us.contains(&u)) {
                            *mu_u = *m;
                        }
                    }
                }
            }
            out.push(mu.clone());
        }
        out
    }
}
