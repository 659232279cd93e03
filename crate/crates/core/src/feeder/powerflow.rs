//! Polar Newton-Raphson power flow over the energized part of a radial feeder.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::FeederModel;
use crate::error::{Error, Result};

/// Per-bus inverter injections (loads come from the model).
#[derive(Debug, Clone, PartialEq)]
pub struct Injections {
    pub p: Vec<f64>,
    pub q: Vec<f64>,
}

impl Injections {
    pub fn zeros(n: usize) -> Self {
        Self { p: vec![0.0; n], q: vec![0.0; n] }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self { tol: 1e-8, max_iter: 30 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerFlowSolution {
    /// Voltage magnitude per bus; zero on de-energized buses.
    pub voltages: Vec<f64>,
    pub angles: Vec<f64>,
    pub energized: Vec<bool>,
    pub converged: bool,
    pub iterations: usize,
    pub max_mismatch: f64,
}

/// Bus admittance matrix and the PQ-bus ordering used by the solver.
pub(crate) struct Network {
    pub ybus: DMatrix<Complex64>,
    /// Energized non-slack buses, in bus order.
    pub pq: Vec<usize>,
    pub slack: usize,
    pub energized: Vec<bool>,
}

impl Network {
    pub fn build(model: &FeederModel) -> Self {
        let n = model.n_buses();
        let energized = model.energized();
        let mut ybus = DMatrix::from_element(n, n, Complex64::new(0.0, 0.0));
        for (line, (f, t)) in model.lines.iter().zip(model.line_ends()) {
            if !line.in_service() || !energized[f] || !energized[t] {
                continue;
            }
            let y = Complex64::new(1.0, 0.0) / Complex64::new(line.r, line.x);
            ybus[(f, f)] += y;
            ybus[(t, t)] += y;
            ybus[(f, t)] -= y;
            ybus[(t, f)] -= y;
        }
        let slack = model.slack_index();
        let pq = (0..n).filter(|&i| i != slack && energized[i]).collect();
        Self { ybus, pq, slack, energized }
    }

    /// Calculated complex power injection at every bus.
    pub fn injections(&self, v: &[f64], th: &[f64]) -> Vec<Complex64> {
        let n = v.len();
        let vc: Vec<Complex64> = (0..n).map(|i| Complex64::from_polar(v[i], th[i])).collect();
        (0..n)
            .map(|i| {
                let current: Complex64 = (0..n).map(|j| self.ybus[(i, j)] * vc[j]).sum();
                vc[i] * current.conj()
            })
            .collect()
    }

    /// Jacobian of [P; Q] at PQ buses with respect to [theta; |V|] at PQ buses.
    pub fn jacobian(&self, v: &[f64], th: &[f64], s: &[Complex64]) -> DMatrix<f64> {
        let m = self.pq.len();
        let mut jac = DMatrix::zeros(2 * m, 2 * m);
        for (r, &i) in self.pq.iter().enumerate() {
            let (pi, qi) = (s[i].re, s[i].im);
            for (c, &j) in self.pq.iter().enumerate() {
                let g = self.ybus[(i, j)].re;
                let b = self.ybus[(i, j)].im;
                if i == j {
                    jac[(r, c)] = -qi - b * v[i] * v[i];
                    jac[(r, m + c)] = pi / v[i] + g * v[i];
                    jac[(m + r, c)] = pi - g * v[i] * v[i];
                    jac[(m + r, m + c)] = qi / v[i] - b * v[i];
                } else {
                    if g == 0.0 && b == 0.0 {
                        continue;
                    }
                    let (sn, cs) = (th[i] - th[j]).sin_cos();
                    let gs_bc = g * sn - b * cs;
                    let gc_bs = g * cs + b * sn;
                    jac[(r, c)] = v[i] * v[j] * gs_bc;
                    jac[(r, m + c)] = v[i] * gc_bs;
                    jac[(m + r, c)] = -v[i] * v[j] * gc_bs;
                    jac[(m + r, m + c)] = v[i] * gs_bc;
                }
            }
        }
        jac
    }
}

fn specified(model: &FeederModel, inj: &Injections, net: &Network) -> (Vec<f64>, Vec<f64>) {
    let n = model.n_buses();
    let mut p = vec![0.0; n];
    let mut q = vec![0.0; n];
    for i in 0..n {
        if !net.energized[i] {
            continue;
        }
        let b = &model.buses[i];
        p[i] = inj.p[i] - b.load_p * model.load_scale;
        q[i] = inj.q[i] - b.load_q * model.load_scale;
    }
    (p, q)
}

/// Solves the power flow. With `start`, iterates from that solution and falls
/// back to a flat start if the warm start fails to converge. Non-convergence is
/// reported through `converged = false`, not as an error.
pub fn solve_power_flow(
    model: &FeederModel,
    injections: &Injections,
    start: Option<&PowerFlowSolution>,
    opts: &SolverOptions,
) -> Result<PowerFlowSolution> {
    let n = model.n_buses();
    if injections.p.len() != n || injections.q.len() != n {
        return Err(Error::Dimension(format!(
            "injections have {}/{} entries for {n} buses",
            injections.p.len(),
            injections.q.len()
        )));
    }
    let net = Network::build(model);
    if let Some(s) = start.filter(|s| s.converged && s.energized == net.energized) {
        let sol = newton(model, injections, &net, &s.voltages, &s.angles, opts);
        if sol.converged {
            return Ok(sol);
        }
    }
    let flat_v: Vec<f64> = (0..n).map(|i| if net.energized[i] { model.slack_voltage() } else { 0.0 }).collect();
    Ok(newton(model, injections, &net, &flat_v, &vec![0.0; n], opts))
}

fn newton(
    model: &FeederModel,
    inj: &Injections,
    net: &Network,
    v0: &[f64],
    th0: &[f64],
    opts: &SolverOptions,
) -> PowerFlowSolution {
    let (p_spec, q_spec) = specified(model, inj, net);
    let m = net.pq.len();
    let mut v = v0.to_vec();
    let mut th = th0.to_vec();
    v[net.slack] = model.slack_voltage();
    th[net.slack] = 0.0;
    for i in 0..v.len() {
        if !net.energized[i] {
            v[i] = 0.0;
            th[i] = 0.0;
        }
    }

    let mut iterations = 0;
    let mut max_mismatch;
    let mut converged = false;
    loop {
        let s = net.injections(&v, &th);
        let mut mis = DVector::zeros(2 * m);
        for (r, &i) in net.pq.iter().enumerate() {
            mis[r] = p_spec[i] - s[i].re;
            mis[m + r] = q_spec[i] - s[i].im;
        }
        max_mismatch = mis.amax();
        if !max_mismatch.is_finite() {
            break;
        }
        if max_mismatch <= opts.tol {
            converged = true;
            break;
        }
        if iterations >= opts.max_iter {
            break;
        }
        let jac = net.jacobian(&v, &th, &s);
        let Some(dx) = jac.lu().solve(&mis) else {
            break;
        };
        for (r, &i) in net.pq.iter().enumerate() {
            th[i] += dx[r];
            v[i] += dx[m + r];
        }
        iterations += 1;
        if net.pq.iter().any(|&i| !(v[i] > 0.0)) {
            break;
        }
    }

    PowerFlowSolution { voltages: v, angles: th, energized: net.energized.clone(), converged, iterations, max_mismatch }
}

/// Complex power delivered by the slack bus.
pub fn slack_injection(model: &FeederModel, sol: &PowerFlowSolution) -> Complex64 {
    let net = Network::build(model);
    net.injections(&sol.voltages, &sol.angles)[net.slack]
}

/// Total real power lost in in-service lines.
pub fn line_losses(model: &FeederModel, sol: &PowerFlowSolution) -> f64 {
    model
        .lines
        .iter()
        .zip(model.line_ends())
        .filter(|(l, (f, t))| l.in_service() && sol.energized[*f] && sol.energized[*t])
        .map(|(l, (f, t))| {
            let vf = Complex64::from_polar(sol.voltages[f], sol.angles[f]);
            let vt = Complex64::from_polar(sol.voltages[t], sol.angles[t]);
            let i = (vf - vt) / Complex64::new(l.r, l.x);
            i.norm_sqr() * l.r
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::feeder::{Bus, BusKind, Line, SwitchState};

    fn two_bus(load_p: f64, load_q: f64) -> FeederModel {
        FeederModel {
            name: "two-bus".into(),
            base_mva: 1.0,
            buses: vec![
                Bus {
                    id: "s".into(),
                    kind: BusKind::Slack,
                    base_voltage: 4160.0,
                    load_p: 0.0,
                    load_q: 0.0,
                    v_set: 1.0,
                },
                Bus { id: "r".into(), kind: BusKind::Load, base_voltage: 4160.0, load_p, load_q, v_set: 1.0 },
            ],
            lines: vec![Line {
                id: "l".into(),
                from: "s".into(),
                to: "r".into(),
                r: 0.01,
                x: 0.05,
                switch_state: SwitchState::NotASwitch,
            }],
            pv_units: vec![],
            load_scale: 1.0,
        }
    }

    #[test]
    fn zero_injection_is_flat() {
        let m = two_bus(0.0, 0.0);
        let sol = solve_power_flow(&m, &Injections::zeros(2), None, &SolverOptions::default()).unwrap();
        assert!(sol.converged);
        assert_eq!(sol.voltages, vec![1.0, 1.0]);
        assert_eq!(sol.angles, vec![0.0, 0.0]);
    }

    #[test]
    fn warm_start_converges_in_fewer_iterations() {
        let m = two_bus(0.5, 0.2);
        let opts = SolverOptions::default();
        let cold = solve_power_flow(&m, &Injections::zeros(2), None, &opts).unwrap();
        let warm = solve_power_flow(&m, &Injections::zeros(2), Some(&cold), &opts).unwrap();
        assert!(warm.converged);
        assert!(warm.iterations <= 1);
    }

    #[test]
    fn impossible_load_does_not_converge() {
        let m = two_bus(20.0, 10.0);
        let sol = solve_power_flow(&m, &Injections::zeros(2), None, &SolverOptions::default()).unwrap();
        assert!(!sol.converged);
    }

    #[test]
    fn wrong_injection_length_is_rejected() {
        let m = two_bus(0.5, 0.2);
        assert!(solve_power_flow(&m, &Injections::zeros(3), None, &SolverOptions::default()).is_err());
    }
}
