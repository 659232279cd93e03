//! The physics map from inverter injections to bus voltages.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::feeder::{
    solve_power_flow, voltage_sensitivities, FeederModel, Injections, PowerFlowSolution, SolverOptions,
};

pub trait Plant {
    fn solve(&mut self, model: &FeederModel, injections: &Injections) -> Result<PowerFlowSolution>;
}

/// Full Newton power flow, warm-started from the last converged solution.
#[derive(Debug, Clone, Default)]
pub struct PowerFlowPlant {
    pub options: SolverOptions,
    last: Option<PowerFlowSolution>,
}

impl PowerFlowPlant {
    pub fn new(options: SolverOptions) -> Self {
        Self { options, last: None }
    }
}

impl Plant for PowerFlowPlant {
    fn solve(&mut self, model: &FeederModel, injections: &Injections) -> Result<PowerFlowSolution> {
        let sol = solve_power_flow(model, injections, self.last.as_ref(), &self.options)?;
        if sol.converged {
            self.last = Some(sol.clone());
        }
        Ok(sol)
    }
}

/// First-order voltage model around a fixed operating point:
/// `V = V0 + S_p dP + S_q dQ + s_v dV_slack`, with net bus injections.
#[derive(Debug, Clone)]
pub struct LinearPlant {
    base: PowerFlowSolution,
    pq: Vec<usize>,
    dv_dp: DMatrix<f64>,
    dv_dq: DMatrix<f64>,
    dv_dslack: DVector<f64>,
    p0: DVector<f64>,
    q0: DVector<f64>,
    slack0: f64,
}

fn net_injections(model: &FeederModel, inj: &Injections, pq: &[usize]) -> (DVector<f64>, DVector<f64>) {
    let p = pq.iter().map(|&i| inj.p[i] - model.buses[i].load_p * model.load_scale);
    let q = pq.iter().map(|&i| inj.q[i] - model.buses[i].load_q * model.load_scale);
    (DVector::from_iterator(pq.len(), p), DVector::from_iterator(pq.len(), q))
}

impl LinearPlant {
    /// Linearizes `model` at the power-flow solution for `injections`.
    pub fn new(model: &FeederModel, injections: &Injections, options: &SolverOptions) -> Result<Self> {
        let base = solve_power_flow(model, injections, None, options)?;
        if !base.converged {
            return Err(Error::NotConverged);
        }
        let sens = voltage_sensitivities(model, &base)?;
        let h = 1e-6;
        let shifted = |dv: f64| -> Result<PowerFlowSolution> {
            let mut m = model.clone();
            m.set_slack_voltage(model.slack_voltage() + dv);
            let s = solve_power_flow(&m, injections, Some(&base), options)?;
            if s.converged {
                Ok(s)
            } else {
                Err(Error::NotConverged)
            }
        };
        let (up, down) = (shifted(h)?, shifted(-h)?);
        let dv_dslack = DVector::from_iterator(
            sens.pq.len(),
            sens.pq.iter().map(|&i| (up.voltages[i] - down.voltages[i]) / (2.0 * h)),
        );
        let (p0, q0) = net_injections(model, injections, &sens.pq);
        Ok(Self {
            pq: sens.pq,
            dv_dp: sens.dv_dp,
            dv_dq: sens.dv_dq,
            dv_dslack,
            p0,
            q0,
            slack0: model.slack_voltage(),
            base,
        })
    }

    /// The operating point the model is linearized at.
    pub fn base(&self) -> &PowerFlowSolution {
        &self.base
    }
}

impl Plant for LinearPlant {
    fn solve(&mut self, model: &FeederModel, injections: &Injections) -> Result<PowerFlowSolution> {
        if model.energized() != self.base.energized {
            return Err(Error::InvalidScenario("topology changed under a linearized plant".into()));
        }
        let (p, q) = net_injections(model, injections, &self.pq);
        let dv = &self.dv_dp * (p - &self.p0)
            + &self.dv_dq * (q - &self.q0)
            + &self.dv_dslack * (model.slack_voltage() - self.slack0);
        let mut voltages = self.base.voltages.clone();
        voltages[model.slack_index()] = model.slack_voltage();
        for (k, &i) in self.pq.iter().enumerate() {
            voltages[i] += dv[k];
        }
        Ok(PowerFlowSolution {
            voltages,
            angles: self.base.angles.clone(),
            energized: self.base.energized.clone(),
            converged: true,
            iterations: 0,
            max_mismatch: 0.0,
        })
    }
}
