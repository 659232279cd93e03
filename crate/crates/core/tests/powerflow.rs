use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use voltvar_core::feeder::{
    line_losses, sensitivity_matrix, slack_injection, solve_power_flow, Bus, BusKind, FeederModel, Injections, Line,
    PowerFlowSolution, SolverOptions, SwitchState,
};

fn solve(model: &FeederModel, inj: &Injections) -> PowerFlowSolution {
    let sol = solve_power_flow(model, inj, None, &SolverOptions::default()).unwrap();
    assert!(sol.converged);
    sol
}

fn two_bus(v0: f64, r: f64, x: f64, p: f64, q: f64) -> FeederModel {
    FeederModel {
        name: "two".into(),
        base_mva: 1.0,
        buses: vec![
            Bus { id: "s".into(), kind: BusKind::Slack, base_voltage: 4160.0, load_p: 0.0, load_q: 0.0, v_set: v0 },
            Bus { id: "l".into(), kind: BusKind::Load, base_voltage: 4160.0, load_p: p, load_q: q, v_set: 1.0 },
        ],
        lines: vec![Line {
            id: "sl".into(),
            from: "s".into(),
            to: "l".into(),
            r,
            x,
            switch_state: SwitchState::NotASwitch,
        }],
        pv_units: vec![],
        load_scale: 1.0,
    }
}

/// Receiving-end voltage of a single line from the quartic in `|V|^2`.
fn two_bus_closed_form(v0: f64, r: f64, x: f64, p: f64, q: f64) -> f64 {
    let b = v0 * v0 - 2.0 * (r * p + x * q);
    let c = (r * r + x * x) * (p * p + q * q);
    ((b + (b * b - 4.0 * c).sqrt()) / 2.0).sqrt()
}

#[test]
fn two_bus_matches_closed_form() {
    for &(v0, r, x, p, q) in &[
        (1.0, 0.01, 0.02, 0.5, 0.2),
        (1.03, 0.2, 0.2, 0.3, -0.1),
        (0.98, 0.05, 0.15, -0.4, 0.05),
        (1.05, 0.3, 0.1, 0.4, 0.2),
    ] {
        let m = two_bus(v0, r, x, p, q);
        let sol = solve(&m, &Injections::zeros(2));
        let want = two_bus_closed_form(v0, r, x, p, q);
        assert!((sol.voltages[1] - want).abs() < 1e-8, "{} vs {}", sol.voltages[1], want);
    }
}

/// Z-bus style fixed point `V_L = Y_LL^-1 (conj(S_L / V_L) - Y_L0 V_0)`.
fn fixed_point_voltages(model: &FeederModel, inj: &Injections) -> Vec<f64> {
    let n = model.n_buses();
    let live = model.energized();
    let mut y = DMatrix::from_element(n, n, Complex64::new(0.0, 0.0));
    for line in model.lines.iter().filter(|l| l.in_service()) {
        let (f, t) = (model.bus_index(&line.from).unwrap(), model.bus_index(&line.to).unwrap());
        if !(live[f] && live[t]) {
            continue;
        }
        let yl = Complex64::new(1.0, 0.0) / Complex64::new(line.r, line.x);
        y[(f, f)] += yl;
        y[(t, t)] += yl;
        y[(f, t)] -= yl;
        y[(t, f)] -= yl;
    }
    let s0 = model.slack_index();
    let others: Vec<usize> = (0..n).filter(|&i| i != s0 && live[i]).collect();
    let k = others.len();
    let yll = DMatrix::from_fn(k, k, |i, j| y[(others[i], others[j])]);
    let yll_inv = yll.try_inverse().unwrap();
    let v0 = Complex64::new(model.slack_voltage(), 0.0);
    let s: Vec<Complex64> = others
        .iter()
        .map(|&i| {
            let b = &model.buses[i];
            Complex64::new(inj.p[i] - b.load_p * model.load_scale, inj.q[i] - b.load_q * model.load_scale)
        })
        .collect();
    let mut v = DVector::from_element(k, v0);
    for _ in 0..500 {
        let rhs = DVector::from_fn(k, |i, _| (s[i] / v[i]).conj() - y[(others[i], s0)] * v0);
        v = &yll_inv * rhs;
    }
    let mut out = vec![0.0; n];
    out[s0] = model.slack_voltage();
    for (i, &b) in others.iter().enumerate() {
        out[b] = v[i].norm();
    }
    out
}

#[test]
fn four_bus_matches_nodal_fixed_point() {
    for closed in [false, true] {
        let mut m = FeederModel::ieee4_mod();
        if closed {
            m = m.apply_topology_event("switch1", true).unwrap();
        }
        let mut inj = m.pv_injections();
        inj.q[m.bus_index("3").unwrap()] = -0.05;
        let newton = solve(&m, &inj);
        let oracle = fixed_point_voltages(&m, &inj);
        for (i, (a, b)) in newton.voltages.iter().zip(&oracle).enumerate() {
            assert!((a - b).abs() < 1e-6, "closed={closed} bus {i}: {a} vs {b}");
        }
    }
}

#[test]
fn feeder30_matches_nodal_fixed_point() {
    let m = FeederModel::feeder30();
    let inj = m.pv_injections();
    let newton = solve(&m, &inj);
    for (a, b) in newton.voltages.iter().zip(fixed_point_voltages(&m, &inj)) {
        assert!((a - b).abs() < 1e-6);
    }
}

#[test]
fn real_power_balances() {
    for m in [FeederModel::ieee4_mod(), FeederModel::feeder30()] {
        let inj = m.pv_injections();
        let sol = solve(&m, &inj);
        let live = m.energized();
        let pv: f64 = inj.p.iter().zip(&live).filter(|(_, &e)| e).map(|(p, _)| p).sum();
        let (load, _) = m.total_load();
        let slack = slack_injection(&m, &sol).re;
        let losses = line_losses(&m, &sol);
        assert!((slack + pv - load - losses).abs() < 1e-7, "{}: imbalance", m.name);
    }
}

#[test]
fn sensitivity_matches_finite_differences() {
    let h = 1e-6;
    for m in [FeederModel::ieee4_mod().apply_topology_event("switch1", true).unwrap(), FeederModel::feeder30()] {
        let inj = m.pv_injections();
        let s = sensitivity_matrix(&m, &solve(&m, &inj)).unwrap();
        for (j, &bj) in s.buses.iter().enumerate() {
            let mut up = inj.clone();
            up.q[bj] += h;
            let mut down = inj.clone();
            down.q[bj] -= h;
            let (vu, vd) = (solve(&m, &up).voltages, solve(&m, &down).voltages);
            for (i, &bi) in s.buses.iter().enumerate() {
                let fd = (vu[bi] - vd[bi]) / (2.0 * h);
                assert!((fd - s.matrix[(i, j)]).abs() < 1e-4, "{}: A[{i},{j}]", m.name);
            }
        }
    }
}

#[test]
fn sensitivity_is_positive_and_diagonally_largest() {
    let m = FeederModel::feeder30();
    let a = sensitivity_matrix(&m, &solve(&m, &m.pv_injections())).unwrap().matrix;
    for i in 0..a.nrows() {
        for j in 0..a.ncols() {
            assert!(a[(i, j)] > 0.0);
            assert!(a[(i, i)] >= a[(j, i)] - 1e-9);
        }
    }
}

#[test]
fn deenergized_island_reports_zero_voltage() {
    let m = FeederModel::ieee4_mod();
    let sol = solve(&m, &m.pv_injections());
    let b4 = m.bus_index("4").unwrap();
    assert!(!sol.energized[b4]);
    assert_eq!(sol.voltages[b4], 0.0);
}
