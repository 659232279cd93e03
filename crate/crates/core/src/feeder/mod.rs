//! Feeder data model and the physics map from inverter injections to bus voltages.
//!
//! All electrical quantities are per unit on the model's single VA base, except
//! `base_voltage`, which is kept in volts for reporting. Bus and line identifiers
//! are free-form strings taken from the feeder file.

mod powerflow;
mod sensitivity;

pub use powerflow::{line_losses, slack_injection, solve_power_flow, Injections, PowerFlowSolution, SolverOptions};
pub use sensitivity::{sensitivity_matrix, voltage_sensitivities, Sensitivity, VoltageSensitivities};

use std::collections::{HashMap, VecDeque};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BusKind {
    Slack,
    Load,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bus {
    pub id: String,
    pub kind: BusKind,
    /// Nominal line-to-line voltage in volts.
    #[serde(default = "default_base_voltage")]
    pub base_voltage: f64,
    #[serde(default)]
    pub load_p: f64,
    #[serde(default)]
    pub load_q: f64,
    /// Voltage magnitude set-point, used only on the slack bus.
    #[serde(default = "one")]
    pub v_set: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SwitchState {
    Closed,
    Open,
    #[default]
    NotASwitch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Line {
    pub id: String,
    pub from: String,
    pub to: String,
    pub r: f64,
    pub x: f64,
    #[serde(default, rename = "switch")]
    pub switch_state: SwitchState,
}

impl Line {
    pub fn in_service(&self) -> bool {
        self.switch_state != SwitchState::Open
    }

    pub fn is_switch(&self) -> bool {
        self.switch_state != SwitchState::NotASwitch
    }
}

/// A PV inverter. `p_rated` is the panel output that profiles scale; `p_out`
/// and `q_inj` carry the current operating state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PvUnit {
    pub bus: String,
    pub rating_s: f64,
    pub p_rated: f64,
    /// Defaults to `p_rated` when absent from the file.
    #[serde(default = "unset")]
    pub p_out: f64,
    #[serde(default)]
    pub q_inj: f64,
}

impl PvUnit {
    /// Reactive headroom left after real output: `sqrt(s^2 - p^2)`.
    pub fn q_capacity(&self, p: f64) -> f64 {
        let p = p.clamp(0.0, self.rating_s);
        (self.rating_s * self.rating_s - p * p).max(0.0).sqrt()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeederModel {
    #[serde(default)]
    pub name: String,
    /// System base in MVA. Informational; every stored quantity is already per unit.
    #[serde(default = "one")]
    pub base_mva: f64,
    pub buses: Vec<Bus>,
    pub lines: Vec<Line>,
    #[serde(default)]
    pub pv_units: Vec<PvUnit>,
    /// Multiplier on every bus load.
    #[serde(default = "one")]
    pub load_scale: f64,
}

fn unset() -> f64 {
    -1.0
}

fn one() -> f64 {
    1.0
}

fn default_base_voltage() -> f64 {
    4160.0
}

pub const IEEE4_MOD_JSON: &str = include_str!("../../examples/ieee4_mod.json");
pub const FEEDER30_JSON: &str = include_str!("../../examples/feeder30.json");

/// Names of the feeders bundled with the crate.
pub const BUNDLED_FEEDERS: &[&str] = &["ieee4_mod", "feeder30"];

impl FeederModel {
    pub fn from_json_str(text: &str) -> Result<Self> {
        let mut model: FeederModel = serde_json::from_str(text)?;
        for pv in &mut model.pv_units {
            if pv.p_out < 0.0 {
                pv.p_out = pv.p_rated;
            }
        }
        model.validate()?;
        Ok(model)
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json_str(&text)
    }

    pub fn to_json_string(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn bundled(name: &str) -> Result<Self> {
        match name {
            "ieee4_mod" => Self::from_json_str(IEEE4_MOD_JSON),
            "feeder30" => Self::from_json_str(FEEDER30_JSON),
            other => Err(Error::InvalidModel(format!("no bundled feeder named `{other}`"))),
        }
    }

    /// The four-bus example: substation, intermediate node, node 3 with load and
    /// PV, and a similar node 4 behind a normally open switch.
    pub fn ieee4_mod() -> Self {
        Self::bundled("ieee4_mod").expect("bundled feeder is valid")
    }

    pub fn feeder30() -> Self {
        Self::bundled("feeder30").expect("bundled feeder is valid")
    }

    pub fn n_buses(&self) -> usize {
        self.buses.len()
    }

    pub fn bus_index(&self, id: &str) -> Result<usize> {
        self.buses.iter().position(|b| b.id == id).ok_or_else(|| Error::UnknownBus(id.to_string()))
    }

    pub fn line_index(&self, id: &str) -> Result<usize> {
        self.lines.iter().position(|l| l.id == id).ok_or_else(|| Error::UnknownLine(id.to_string()))
    }

    pub fn slack_index(&self) -> usize {
        self.buses.iter().position(|b| b.kind == BusKind::Slack).expect("validated model has a slack bus")
    }

    pub fn slack_voltage(&self) -> f64 {
        self.buses[self.slack_index()].v_set
    }

    pub fn set_slack_voltage(&mut self, v: f64) {
        let s = self.slack_index();
        self.buses[s].v_set = v;
    }

    /// Bus index hosting each PV unit, in unit order.
    pub fn pv_bus_indices(&self) -> Vec<usize> {
        self.pv_units.iter().map(|pv| self.bus_index(&pv.bus).expect("validated model")).collect()
    }

    fn bus_map(&self) -> HashMap<&str, usize> {
        self.buses.iter().enumerate().map(|(i, b)| (b.id.as_str(), i)).collect()
    }

    /// Line endpoints as bus indices.
    pub(crate) fn line_ends(&self) -> Vec<(usize, usize)> {
        let map = self.bus_map();
        self.lines.iter().map(|l| (map[l.from.as_str()], map[l.to.as_str()])).collect()
    }

    fn reachable(&self, use_line: impl Fn(&Line) -> bool) -> Vec<bool> {
        let ends = self.line_ends();
        let n = self.buses.len();
        let mut adj = vec![Vec::new(); n];
        for (line, &(f, t)) in self.lines.iter().zip(&ends) {
            if use_line(line) {
                adj[f].push(t);
                adj[t].push(f);
            }
        }
        let mut seen = vec![false; n];
        let start = self.slack_index();
        seen[start] = true;
        let mut queue = VecDeque::from([start]);
        while let Some(b) = queue.pop_front() {
            for &nb in &adj[b] {
                if !seen[nb] {
                    seen[nb] = true;
                    queue.push_back(nb);
                }
            }
        }
        seen
    }

    /// Buses reachable from the slack through in-service lines.
    pub fn energized(&self) -> Vec<bool> {
        self.reachable(Line::in_service)
    }

    fn carries_load_or_pv(&self, bus: usize) -> bool {
        let b = &self.buses[bus];
        b.load_p != 0.0 || b.load_q != 0.0 || self.pv_units.iter().any(|pv| pv.bus == b.id)
    }

    pub fn validate(&self) -> Result<()> {
        let slacks = self.buses.iter().filter(|b| b.kind == BusKind::Slack).count();
        if slacks != 1 {
            return Err(Error::InvalidModel(format!("expected exactly one slack bus, found {slacks}")));
        }
        let mut seen = HashMap::new();
        for b in &self.buses {
            if seen.insert(b.id.as_str(), ()).is_some() {
                return Err(Error::InvalidModel(format!("duplicate bus id `{}`", b.id)));
            }
            if !(b.base_voltage > 0.0 && b.base_voltage.is_finite()) {
                return Err(Error::InvalidModel(format!("bus `{}`: base_voltage must be > 0", b.id)));
            }
            if !b.load_p.is_finite() || !b.load_q.is_finite() {
                return Err(Error::InvalidModel(format!("bus `{}`: non-finite load", b.id)));
            }
            if !(b.v_set > 0.0 && b.v_set.is_finite()) {
                return Err(Error::InvalidModel(format!("bus `{}`: v_set must be > 0", b.id)));
            }
        }
        let mut line_ids = HashMap::new();
        for l in &self.lines {
            if line_ids.insert(l.id.as_str(), ()).is_some() {
                return Err(Error::InvalidModel(format!("duplicate line id `{}`", l.id)));
            }
            self.bus_index(&l.from)?;
            self.bus_index(&l.to)?;
            if l.from == l.to {
                return Err(Error::InvalidModel(format!("line `{}` is a self-loop", l.id)));
            }
            if !(l.r.is_finite() && l.x.is_finite()) || l.r.hypot(l.x) <= 0.0 {
                return Err(Error::InvalidModel(format!("line `{}`: impedance magnitude must be > 0", l.id)));
            }
        }
        for pv in &self.pv_units {
            self.bus_index(&pv.bus)?;
            if !(pv.rating_s > 0.0) || !(pv.p_rated >= 0.0) || pv.p_rated > pv.rating_s {
                return Err(Error::InvalidModel(format!(
                    "PV unit at bus `{}`: need 0 <= p_rated <= rating_s and rating_s > 0",
                    pv.bus
                )));
            }
            if !(pv.p_out >= 0.0) || pv.p_out > pv.rating_s {
                return Err(Error::InvalidModel(format!(
                    "PV unit at bus `{}`: p_out must lie in [0, rating_s]",
                    pv.bus
                )));
            }
        }
        if !(self.load_scale >= 0.0 && self.load_scale.is_finite()) {
            return Err(Error::InvalidModel("load_scale must be >= 0".into()));
        }
        let connected = self.reachable(|_| true);
        if let Some(i) = connected.iter().position(|c| !c) {
            return Err(Error::DisconnectedBus(self.buses[i].id.clone()));
        }
        self.check_radial()
    }

    fn check_radial(&self) -> Result<()> {
        let energized = self.energized();
        let n_live = energized.iter().filter(|&&e| e).count();
        let ends = self.line_ends();
        let live_lines =
            self.lines.iter().zip(&ends).filter(|(l, (f, t))| l.in_service() && energized[*f] && energized[*t]).count();
        if live_lines + 1 != n_live {
            return Err(Error::InvalidModel(
                "energized network must be radial (meshed topologies are not supported)".into(),
            ));
        }
        Ok(())
    }

    /// Returns a copy of the model with `line_id` set to closed or open.
    ///
    /// Switches may de-energize the buses behind them (that is what a normally
    /// open tie is for). Opening an ordinary line is refused when it would cut
    /// off a bus carrying load or PV.
    pub fn apply_topology_event(&self, line_id: &str, closed: bool) -> Result<FeederModel> {
        let idx = self.line_index(line_id)?;
        let mut next = self.clone();
        let line = &mut next.lines[idx];
        if closed {
            if line.switch_state == SwitchState::Open {
                line.switch_state = SwitchState::Closed;
            }
        } else if line.is_switch() {
            line.switch_state = SwitchState::Open;
        } else {
            line.switch_state = SwitchState::Open;
            let before = self.energized();
            let after = next.energized();
            if let Some(bus) = (0..self.buses.len()).find(|&b| before[b] && !after[b] && self.carries_load_or_pv(b)) {
                return Err(Error::Islanding { line: line_id.to_string(), bus: self.buses[bus].id.clone() });
            }
        }
        next.check_radial()?;
        Ok(next)
    }

    /// Per-bus inverter injections from the PV units' current state.
    pub fn pv_injections(&self) -> Injections {
        let n = self.buses.len();
        let mut inj = Injections::zeros(n);
        for (pv, bus) in self.pv_units.iter().zip(self.pv_bus_indices()) {
            inj.p[bus] += pv.p_out;
            inj.q[bus] += pv.q_inj;
        }
        inj
    }

    pub fn total_load(&self) -> (f64, f64) {
        let live = self.energized();
        self.buses
            .iter()
            .zip(live)
            .filter(|(_, e)| *e)
            .fold((0.0, 0.0), |(p, q), (b, _)| (p + b.load_p * self.load_scale, q + b.load_q * self.load_scale))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_feeders_validate() {
        for name in BUNDLED_FEEDERS {
            FeederModel::bundled(name).unwrap();
        }
    }

    #[test]
    fn ieee4_switch_starts_open() {
        let m = FeederModel::ieee4_mod();
        let live = m.energized();
        assert_eq!(live.iter().filter(|&&e| e).count(), 3);
        assert!(!live[m.bus_index("4").unwrap()]);
    }

    #[test]
    fn closing_and_reopening_switch_round_trips() {
        let m = FeederModel::ieee4_mod();
        let closed = m.apply_topology_event("switch1", true).unwrap();
        assert!(closed.energized().iter().all(|&e| e));
        let reopened = closed.apply_topology_event("switch1", false).unwrap();
        assert_eq!(reopened, m);
    }

    #[test]
    fn opening_radial_line_islands() {
        let m = FeederModel::ieee4_mod();
        let err = m.apply_topology_event("l23", false).unwrap_err();
        assert!(matches!(err, Error::Islanding { ref bus, .. } if bus == "3"), "{err}");
    }

    #[test]
    fn unknown_switch_is_an_error() {
        let m = FeederModel::ieee4_mod();
        assert!(matches!(m.apply_topology_event("nope", true), Err(Error::UnknownLine(_))));
    }

    #[test]
    fn rejects_two_slacks() {
        let mut m = FeederModel::ieee4_mod();
        m.buses[1].kind = BusKind::Slack;
        assert!(m.validate().is_err());
    }

    #[test]
    fn rejects_bus_without_any_path() {
        let mut m = FeederModel::ieee4_mod();
        m.buses.push(Bus {
            id: "orphan".into(),
            kind: BusKind::Load,
            base_voltage: 4160.0,
            load_p: 0.0,
            load_q: 0.0,
            v_set: 1.0,
        });
        assert!(matches!(m.validate(), Err(Error::DisconnectedBus(b)) if b == "orphan"));
    }

    #[test]
    fn rejects_zero_impedance() {
        let mut m = FeederModel::ieee4_mod();
        m.lines[0].r = 0.0;
        m.lines[0].x = 0.0;
        assert!(m.validate().is_err());
    }

    #[test]
    fn q_capacity_matches_triangle() {
        let pv = PvUnit { bus: "3".into(), rating_s: 0.5, p_rated: 0.4, p_out: 0.4, q_inj: 0.0 };
        assert!((pv.q_capacity(0.4) - 0.3).abs() < 1e-12);
        assert_eq!(pv.q_capacity(0.9), 0.0);
        assert_eq!(pv.q_capacity(0.0), 0.5);
    }
}
