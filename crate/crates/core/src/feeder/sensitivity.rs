use nalgebra::DMatrix;

use super::powerflow::{Network, PowerFlowSolution};
use super::FeederModel;
use crate::error::{Error, Result};

/// Voltage sensitivity to inverter var injection, reduced to the energized
/// buses that host PV units.
#[derive(Debug, Clone, PartialEq)]
pub struct Sensitivity {
    /// Bus indices for rows and columns.
    pub buses: Vec<usize>,
    pub bus_ids: Vec<String>,
    /// `matrix[(i, j)] = dV_i / dQ_j`.
    pub matrix: DMatrix<f64>,
}

/// Full voltage-magnitude sensitivities over every energized non-slack bus.
#[derive(Debug, Clone, PartialEq)]
pub struct VoltageSensitivities {
    pub pq: Vec<usize>,
    pub dv_dp: DMatrix<f64>,
    pub dv_dq: DMatrix<f64>,
}

pub fn voltage_sensitivities(model: &FeederModel, op: &PowerFlowSolution) -> Result<VoltageSensitivities> {
    if !op.converged {
        return Err(Error::NotConverged);
    }
    let net = Network::build(model);
    let s = net.injections(&op.voltages, &op.angles);
    let jac = net.jacobian(&op.voltages, &op.angles, &s);
    let inv = jac.try_inverse().ok_or_else(|| {
        Error::Singular("power-flow Jacobian at this operating point (near voltage collapse?)".into())
    })?;
    let m = net.pq.len();
    Ok(VoltageSensitivities {
        dv_dp: inv.view((m, 0), (m, m)).into_owned(),
        dv_dq: inv.view((m, m), (m, m)).into_owned(),
        pq: net.pq,
    })
}

/// Extracts `A = dV/dQ` at the operating point for the PV-hosting buses.
pub fn sensitivity_matrix(model: &FeederModel, op: &PowerFlowSolution) -> Result<Sensitivity> {
    let full = voltage_sensitivities(model, op)?;
    let mut buses: Vec<usize> = Vec::new();
    for b in model.pv_bus_indices() {
        if op.energized[b] && !buses.contains(&b) {
            buses.push(b);
        }
    }
    let pos: Vec<usize> =
        buses.iter().map(|b| full.pq.iter().position(|p| p == b).expect("energized PV bus is a PQ bus")).collect();
    let k = buses.len();
    let matrix = DMatrix::from_fn(k, k, |i, j| full.dv_dq[(pos[i], pos[j])]);
    Ok(Sensitivity { bus_ids: buses.iter().map(|&b| model.buses[b].id.clone()).collect(), buses, matrix })
}
