//! Quasi-static time-series engine.
//!
//! Each inner tick applies the events scheduled for it, lets every inverter
//! dispatch vars from its own last measured voltage, and solves the plant once.
//! An inverter with no real output is offline: it injects no vars and its
//! outer loop skips any window that contains such a tick.
//! For the adaptive controller the outer loop runs at the start of every tick
//! that is a multiple of `t_outer`, over the window that just ended.

use std::collections::BTreeMap;

use crate::adaptation::{flicker_zone, outer_loop_step, AdaptiveConfig};
use crate::control::{
    adaptive_dispatch, delayed_dispatch, droop_dispatch, AdaptiveParams, ControllerKind, DroopParams,
};
use crate::error::Result;
use crate::feeder::{FeederModel, Injections, PowerFlowSolution, SolverOptions};

use super::plant::{LinearPlant, Plant, PowerFlowPlant};
use super::profile::series_seed;
use super::scenario::{EventKind, PlantKind, Scenario};
use super::trace::{ParamRecord, SampleFlags, SimulationTrace, TickRecord, UnitSample};

#[derive(Debug, Clone)]
struct UnitState {
    bus: usize,
    rating_s: f64,
    p_rated: f64,
    cloud: f64,
    /// Name of the series driving this unit; `None` for a constant 1.
    profile: Option<String>,
    mu: f64,
    q_prev: f64,
    droop: DroopParams,
    adaptive: Option<AdaptiveParams>,
    window_v: Vec<f64>,
    window_p: Vec<f64>,
    window_clean: bool,
}

/// A running simulation. Build with [`Simulation::new`], then either call
/// [`Simulation::step_inner`] tick by tick or [`Simulation::run`].
pub struct Simulation {
    scenario: Scenario,
    cfg: AdaptiveConfig,
    kind: ControllerKind,
    model: FeederModel,
    options: SolverOptions,
    plant: Option<Box<dyn Plant + Send>>,
    series: BTreeMap<String, Vec<f64>>,
    units: Vec<UnitState>,
    v_prev: Vec<f64>,
    tick: usize,
    next_event: usize,
    outer: usize,
    trace: SimulationTrace,
}

impl Simulation {
    pub fn new(scenario: &Scenario, model: &FeederModel) -> Result<Self> {
        Self::with_options(scenario, model, SolverOptions::default())
    }

    pub fn with_options(scenario: &Scenario, model: &FeederModel, options: SolverOptions) -> Result<Self> {
        model.validate()?;
        scenario.validate(model)?;
        let series = scenario
            .series
            .iter()
            .map(|(name, spec)| (name.clone(), spec.sample(scenario.horizon, series_seed(scenario.seed, name))))
            .collect();
        let c = &scenario.controller;
        let units = model
            .pv_units
            .iter()
            .map(|pv| {
                let q_nom = pv.q_capacity(pv.p_rated);
                Ok(UnitState {
                    bus: model.bus_index(&pv.bus)?,
                    rating_s: pv.rating_s,
                    p_rated: pv.p_rated,
                    cloud: 1.0,
                    profile: scenario.pv_profile.clone(),
                    mu: c.mu,
                    q_prev: 0.0,
                    droop: DroopParams::from_slope(c.mu, c.deadband, c.slope, q_nom)?,
                    adaptive: None,
                    window_v: Vec::with_capacity(scenario.t_outer),
                    window_p: Vec::with_capacity(scenario.t_outer),
                    window_clean: true,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let trace = SimulationTrace {
            bus_ids: model.buses.iter().map(|b| b.id.clone()).collect(),
            unit_buses: model.pv_units.iter().map(|p| p.bus.clone()).collect(),
            ticks: Vec::with_capacity(scenario.horizon),
            params: Vec::new(),
        };
        Ok(Self {
            cfg: scenario.adaptive_config(),
            kind: c.controller_kind(),
            scenario: scenario.clone(),
            model: model.clone(),
            options,
            plant: None,
            series,
            units,
            v_prev: Vec::new(),
            tick: 0,
            next_event: 0,
            outer: 0,
            trace,
        })
    }

    pub fn tick(&self) -> usize {
        self.tick
    }

    pub fn is_done(&self) -> bool {
        self.tick >= self.scenario.horizon
    }

    /// The feeder as currently modified by events.
    pub fn model(&self) -> &FeederModel {
        &self.model
    }

    pub fn trace(&self) -> &SimulationTrace {
        &self.trace
    }

    /// Last solved voltage at every bus.
    pub fn voltages(&self) -> &[f64] {
        &self.v_prev
    }

    /// Current adaptive parameters of each unit (adaptive control only).
    pub fn adaptive_params(&self) -> Vec<Option<AdaptiveParams>> {
        self.units.iter().map(|u| u.adaptive).collect()
    }

    /// Solves the plant with the given var injections per unit, leaving the
    /// simulation state untouched. Useful for open-loop disturbance probes.
    pub fn probe(&mut self, q_units: &[f64]) -> Result<PowerFlowSolution> {
        let p: Vec<f64> = (0..self.units.len()).map(|i| self.unit_p(i)).collect();
        let inj = self.injections(&p, q_units);
        let model = self.model.clone();
        match self.plant.as_mut() {
            Some(plant) => plant.solve(&model, &inj),
            None => PowerFlowPlant::new(self.options).solve(&model, &inj),
        }
    }

    fn unit_p(&self, i: usize) -> f64 {
        let u = &self.units[i];
        let shape = match &u.profile {
            Some(name) => self.series[name][self.tick.min(self.scenario.horizon - 1)],
            None => 1.0,
        };
        (u.p_rated * shape * u.cloud).clamp(0.0, u.rating_s)
    }

    fn injections(&self, p: &[f64], q: &[f64]) -> Injections {
        let energized = self.model.energized();
        let mut inj = Injections::zeros(self.model.n_buses());
        for (i, u) in self.units.iter().enumerate() {
            if energized[u.bus] {
                inj.p[u.bus] += p[i];
                inj.q[u.bus] += q[i];
            }
        }
        inj
    }

    fn apply_events(&mut self) -> Result<()> {
        let t = self.tick;
        while let Some(e) = self.scenario.events.get(self.next_event).filter(|e| e.tick == t) {
            let kind = e.kind.clone();
            self.next_event += 1;
            let selected = |units: &Option<Vec<usize>>, i: usize| units.as_ref().is_none_or(|us| us.contains(&i));
            match kind {
                EventKind::SubstationVoltage { v } => self.model.set_slack_voltage(v),
                EventKind::Setpoint { mu, units } => {
                    let c = &self.scenario.controller;
                    for (i, u) in self.units.iter_mut().enumerate() {
                        if !selected(&units, i) {
                            continue;
                        }
                        u.mu = mu;
                        u.droop = DroopParams::from_slope(mu, c.deadband, c.slope, u.droop.q_max)?;
                        if let Some(a) = &u.adaptive {
                            u.adaptive = Some(AdaptiveParams::new(a.m_p, a.q_p, a.q_min_p, a.q_max_p, mu)?);
                        }
                    }
                }
                EventKind::CloudCover { scale, units } => {
                    for (i, u) in self.units.iter_mut().enumerate() {
                        if selected(&units, i) {
                            u.cloud = scale;
                        }
                    }
                }
                EventKind::Intermittency { series, units } => {
                    for (i, u) in self.units.iter_mut().enumerate() {
                        if selected(&units, i) {
                            u.profile = Some(series.clone());
                        }
                    }
                }
                EventKind::Switch { line, closed } => {
                    self.model = self.model.apply_topology_event(&line, closed)?;
                }
                EventKind::LoadScale { factor } => self.model.load_scale = factor,
            }
        }
        Ok(())
    }

    fn outer_loop(&mut self) -> Result<()> {
        let t = self.tick;
        let t_outer = self.cfg.t_outer;
        for (i, u) in self.units.iter_mut().enumerate() {
            let Some(params) = u.adaptive else { continue };
            let full = u.window_v.len() == t_outer && u.window_clean;
            let mut record = ParamRecord {
                outer: self.outer,
                tick: t,
                unit: i,
                bus: self.trace.unit_buses[i].clone(),
                m_p: params.m_p,
                q_p: params.q_p,
                q_min_p: params.q_min_p,
                q_max_p: params.q_max_p,
                v_min_p: params.v_min_p,
                v_max_p: params.v_max_p,
                sse_avg: None,
                sse_end: None,
                vf: None,
                zone: None,
                updated: false,
            };
            if full {
                let (next, stats) = outer_loop_step(&params, u.rating_s, &u.window_v, &u.window_p, &self.cfg)?;
                u.adaptive = Some(next);
                record = ParamRecord {
                    m_p: next.m_p,
                    q_p: next.q_p,
                    q_min_p: next.q_min_p,
                    q_max_p: next.q_max_p,
                    v_min_p: next.v_min_p,
                    v_max_p: next.v_max_p,
                    sse_avg: Some(stats.sse_avg),
                    sse_end: u.window_v.last().map(|v| v - params.mu),
                    vf: Some(stats.vf),
                    zone: Some(flicker_zone(stats.vf, &self.cfg)),
                    updated: true,
                    ..record
                };
            }
            self.trace.params.push(record);
            u.window_v.clear();
            u.window_p.clear();
            u.window_clean = true;
        }
        self.outer += 1;
        Ok(())
    }

    fn start(&mut self, p: &[f64]) -> Result<()> {
        let zero_q = vec![0.0; self.units.len()];
        let inj = self.injections(p, &zero_q);
        let mut plant: Box<dyn Plant + Send> = match self.scenario.plant {
            PlantKind::PowerFlow => Box::new(PowerFlowPlant::new(self.options)),
            PlantKind::Linearized => Box::new(LinearPlant::new(&self.model, &inj, &self.options)?),
        };
        let sol = plant.solve(&self.model, &inj)?;
        self.v_prev = if sol.converged {
            sol.voltages
        } else {
            let vs = self.model.slack_voltage();
            sol.energized.iter().map(|&e| if e { vs } else { 0.0 }).collect()
        };
        self.plant = Some(plant);
        if self.kind == ControllerKind::Adaptive {
            for (i, u) in self.units.iter_mut().enumerate() {
                let q = (u.rating_s * u.rating_s - p[i] * p[i]).max(0.0).sqrt();
                u.adaptive = Some(AdaptiveParams::new(self.cfg.m_init, 0.0, -q, q, u.mu)?);
            }
        }
        Ok(())
    }

    fn dispatch(&mut self, p: &[f64]) -> Vec<f64> {
        let energized = self.model.energized();
        let track = self.scenario.controller.track_capacity;
        let kind = self.kind;
        let v_prev = &self.v_prev;
        self.units
            .iter_mut()
            .enumerate()
            .map(|(i, u)| {
                let v = v_prev[u.bus];
                let cap = (u.rating_s * u.rating_s - p[i] * p[i]).max(0.0).sqrt();
                let q = if !energized[u.bus] || !(v > 0.0) || !(p[i] > 0.0) {
                    0.0
                } else {
                    let droop = if track { u.droop.with_capacity(cap) } else { u.droop };
                    match kind {
                        ControllerKind::None => 0.0,
                        ControllerKind::Conventional => droop_dispatch(&droop, v),
                        ControllerKind::Delayed { tau } => delayed_dispatch(&droop, tau, v, u.q_prev),
                        ControllerKind::Adaptive => {
                            adaptive_dispatch(u.adaptive.as_ref().expect("adaptive params set at start"), v)
                        }
                    }
                };
                let q = q.clamp(-cap, cap);
                u.q_prev = q;
                q
            })
            .collect()
    }

    /// Advances one inner tick.
    pub fn step_inner(&mut self) -> Result<()> {
        let t = self.tick;
        if self.kind == ControllerKind::Adaptive && t > 0 && t.is_multiple_of(self.cfg.t_outer) {
            self.outer_loop()?;
        }
        self.apply_events()?;
        let p: Vec<f64> = (0..self.units.len()).map(|i| self.unit_p(i)).collect();
        if t == 0 {
            self.start(&p)?;
        }
        let q = self.dispatch(&p);
        let inj = self.injections(&p, &q);
        let plant = self.plant.as_mut().expect("plant built at tick 0");
        let sol = plant.solve(&self.model, &inj)?;
        let energized = self.model.energized();
        let voltages = if sol.converged {
            sol.voltages
        } else {
            energized.iter().zip(&self.v_prev).map(|(&e, &v)| if e { v } else { 0.0 }).collect()
        };
        let units = self
            .units
            .iter_mut()
            .enumerate()
            .map(|(i, u)| {
                let flags = SampleFlags { nonconverged: !sol.converged, deenergized: !energized[u.bus] };
                let v = voltages[u.bus];
                u.window_v.push(v);
                u.window_p.push(p[i]);
                u.window_clean &= flags.is_clean() && p[i] > 0.0;
                UnitSample { v, q: q[i], p: p[i], flags }
            })
            .collect();
        self.trace.ticks.push(TickRecord {
            tick: t,
            bus_voltages: voltages.clone(),
            units,
            converged: sol.converged,
            iterations: sol.iterations,
        });
        self.v_prev = voltages;
        self.tick += 1;
        Ok(())
    }

    pub fn run(mut self) -> Result<SimulationTrace> {
        while !self.is_done() {
            self.step_inner()?;
        }
        Ok(self.trace)
    }
}

/// Runs a scenario to its horizon.
pub fn run(scenario: &Scenario, model: &FeederModel) -> Result<SimulationTrace> {
    Simulation::new(scenario, model)?.run()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::scenario::{ControllerChoice, ControllerConfig};

    fn scenario(kind: ControllerChoice, slope: f64, horizon: usize) -> Scenario {
        Scenario {
            name: String::new(),
            feeder: None,
            horizon,
            dt_inner: 1.0,
            t_outer: 10,
            seed: 0,
            plant: PlantKind::PowerFlow,
            controller: ControllerConfig { kind, slope, ..Default::default() },
            adaptive: AdaptiveConfig::default(),
            pv_profile: None,
            series: BTreeMap::new(),
            events: vec![],
        }
    }

    #[test]
    fn no_control_is_constant() {
        let tr = run(&scenario(ControllerChoice::None, 1.0, 20), &FeederModel::ieee4_mod()).unwrap();
        let v0 = &tr.ticks[0].bus_voltages;
        assert!(tr.ticks.iter().all(|t| &t.bus_voltages == v0));
    }

    #[test]
    fn conservative_droop_settles() {
        let tr = run(&scenario(ControllerChoice::Conventional, 1.0, 60), &FeederModel::ieee4_mod()).unwrap();
        assert!(*tr.dispatch_residuals().last().unwrap() < 1e-8);
    }

    #[test]
    fn steep_droop_oscillates() {
        let tr = run(&scenario(ControllerChoice::Conventional, 6.0, 60), &FeederModel::ieee4_mod()).unwrap();
        let v = tr.unit_voltages(0);
        let tail = &v[40..];
        let spread = tail.iter().cloned().fold(f64::MIN, f64::max) - tail.iter().cloned().fold(f64::MAX, f64::min);
        assert!(spread > 0.01, "{spread}");
    }

    #[test]
    fn deenergized_unit_is_flagged() {
        let tr = run(&scenario(ControllerChoice::Conventional, 1.0, 12), &FeederModel::ieee4_mod()).unwrap();
        let s = tr.ticks[5].units[1];
        assert!(s.flags.deenergized);
        assert_eq!((s.v, s.q), (0.0, 0.0));
    }

    #[test]
    fn adaptive_records_outer_loops() {
        let tr = run(&scenario(ControllerChoice::Adaptive, 1.0, 40), &FeederModel::ieee4_mod()).unwrap();
        assert_eq!(tr.unit_params(0).len(), 3);
        assert!(tr.unit_params(0).iter().all(|p| p.updated));
        assert!(tr.unit_params(1).iter().all(|p| !p.updated));
    }
}
