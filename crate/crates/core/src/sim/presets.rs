//! Built-in scenarios. Every preset names the bundled feeder it was written
//! for and carries all of its input data.

use std::collections::BTreeMap;

use crate::adaptation::AdaptiveConfig;
use crate::error::{Error, Result};
use crate::feeder::FeederModel;

use super::profile::SeriesSpec;
use super::scenario::{ControllerChoice, ControllerConfig, Event, EventKind, PlantKind, Scenario};

pub const PRESET_NAMES: &[&str] = &[
    "fig3a",
    "fig3b",
    "fig3c",
    "fig10a",
    "fig10b",
    "fig10c",
    "setpoint_step",
    "intermittency",
    "cloud_cover",
    "substation_surge",
    "outer_sweep",
];

fn ev(tick: usize, kind: EventKind) -> Event {
    Event { tick, kind }
}

fn cloud(tick: usize, scale: f64) -> Event {
    ev(tick, EventKind::CloudCover { scale, units: None })
}

fn base(name: &str, feeder: &str, horizon: usize, t_outer: usize) -> Scenario {
    Scenario {
        name: name.into(),
        feeder: Some(feeder.into()),
        horizon,
        dt_inner: 1.0,
        t_outer,
        seed: 0,
        plant: PlantKind::PowerFlow,
        controller: ControllerConfig::default(),
        adaptive: AdaptiveConfig::default(),
        pv_profile: None,
        series: BTreeMap::new(),
        events: vec![],
    }
}

/// Small-feeder timeline: PV switched on at t=20 and one disturbance at t=80.
fn small(name: &str, disturbance: EventKind, adaptive: bool, slope: f64, tau: f64) -> Scenario {
    let mut s = base(name, "ieee4_mod", 160, 10);
    s.events = vec![cloud(0, 0.0), cloud(20, 1.0), ev(80, disturbance)];
    s.adaptive = small_feeder_limits();
    s.controller = if adaptive {
        ControllerConfig { kind: ControllerChoice::Adaptive, ..Default::default() }
    } else {
        ControllerConfig { kind: ControllerChoice::Delayed, slope, tau, ..Default::default() }
    };
    s
}

/// Flicker limits for the small feeder: a single well-damped step response
/// stays in the safe zone while sustained oscillation is still caught.
fn small_feeder_limits() -> AdaptiveConfig {
    AdaptiveConfig { vf_lim: 0.3, vf_lim_bar: 0.9, eps_vf: 0.1, ..Default::default() }
}

fn substation_step() -> EventKind {
    EventKind::SubstationVoltage { v: 1.05 }
}

fn cloud_drop() -> EventKind {
    EventKind::CloudCover { scale: 0.2, units: None }
}

fn switch_close() -> EventKind {
    EventKind::Switch { line: "switch1".into(), closed: true }
}

fn medium(name: &str, horizon: usize) -> Scenario {
    let mut s = base(name, "feeder30", horizon, 60);
    s.controller = ControllerConfig { kind: ControllerChoice::Adaptive, slope: 5.0, ..Default::default() };
    s.adaptive.m_init = 0.5;
    s
}

pub fn preset(name: &str) -> Result<Scenario> {
    let name = name.strip_prefix("presets/").unwrap_or(name);
    let s = match name {
        "fig3a" => small(name, substation_step(), false, 1.0, 0.5),
        "fig3b" => {
            let mut s = small(name, cloud_drop(), false, 6.0, 0.9);
            s.controller.track_capacity = true;
            s
        }
        "fig3c" => small(name, switch_close(), false, 6.0, 0.9),
        "fig10a" => small(name, substation_step(), true, 1.0, 0.5),
        "fig10b" => {
            let mut s = small(name, cloud_drop(), true, 6.0, 0.9);
            s.controller.track_capacity = true;
            s
        }
        "fig10c" => small(name, switch_close(), true, 6.0, 0.9),
        "setpoint_step" => {
            let mut s = base(name, "ieee4_mod", 160, 10);
            s.controller.kind = ControllerChoice::Adaptive;
            s.adaptive = small_feeder_limits();
            s.events = vec![ev(60, EventKind::Setpoint { mu: 0.98, units: None })];
            s
        }
        "intermittency" => {
            let mut s = medium(name, 3600);
            s.series.insert(
                "clouds".into(),
                SeriesSpec::Telegraph { period: 30, low: 0.2, high: 1.0, flip_probability: 0.5, start_high: true },
            );
            s.pv_profile = Some("clouds".into());
            s
        }
        "cloud_cover" => {
            let mut s = medium(name, 1200);
            s.events = vec![cloud(600, 0.2)];
            s
        }
        "substation_surge" => {
            let mut s = medium(name, 1800);
            s.events =
                vec![ev(0, EventKind::SubstationVoltage { v: 1.0 }), ev(600, EventKind::SubstationVoltage { v: 1.07 })];
            s
        }
        "outer_sweep" => {
            let mut s = base(name, "ieee4_mod", 90, 10);
            s.plant = PlantKind::Linearized;
            s.controller = ControllerConfig { kind: ControllerChoice::Adaptive, mu: 1.04, ..Default::default() };
            s.adaptive = AdaptiveConfig {
                eps_sse: 0.0,
                m_ceiling: Some(1.0),
                sse_tail: Some(1),
                vf_lim: 100.0,
                vf_lim_bar: 200.0,
                ..Default::default()
            };
            s
        }
        other => return Err(Error::UnknownPreset(other.to_string())),
    };
    Ok(s)
}

/// The preset's scenario together with its bundled feeder.
pub fn preset_with_feeder(name: &str) -> Result<(Scenario, FeederModel)> {
    let s = preset(name)?;
    let model = FeederModel::bundled(s.feeder.as_deref().unwrap_or("ieee4_mod"))?;
    Ok((s, model))
}
