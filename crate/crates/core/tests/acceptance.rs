//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use voltvar_core::analysis::{
    critical_slopes, eigenvalue_magnitudes, norm_inf, norm_one, outer_b_matrix, predict_sse, scalar_b, spectral_radius,
};
use voltvar_core::feeder::{
    sensitivity_matrix, solve_power_flow, FeederModel, Injections, PowerFlowSolution, SolverOptions,
};
use voltvar_core::sim::{metrics, preset_with_feeder, run, LinearPlant, MetricLimits, Plant, Scenario};

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn within_time(elapsed: Duration, limit_s: f64, detail: String) -> Outcome {
    let detail = format!("{detail}; {:.3}s (limit {limit_s}s)", elapsed.as_secs_f64());
    check(elapsed.as_secs_f64() < limit_s, detail)
}

fn solved(model: &FeederModel, inj: &Injections) -> PowerFlowSolution {
    let sol = solve_power_flow(model, inj, None, &SolverOptions::default()).expect("power flow");
    assert!(sol.converged, "power flow did not converge");
    sol
}

fn ieee4_closed() -> FeederModel {
    FeederModel::ieee4_mod().apply_topology_event("switch1", true).expect("switch1 exists")
}

fn small_scenario(kind: &str, slope: f64, horizon: usize, extra: &str) -> Scenario {
    let json = format!(
        r#"{{"name":"acceptance","horizon":{horizon},
            "controller":{{"kind":"{kind}","slope":{slope}}}{extra}}}"#
    );
    Scenario::from_json_str(&json).expect("scenario json")
}

fn peak_to_peak(v: &[f64]) -> f64 {
    let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
    hi - lo
}

fn critical_slope() -> Outcome {
    let t0 = Instant::now();
    let model = FeederModel::ieee4_mod();
    let op = solved(&model, &model.pv_injections());
    let s = sensitivity_matrix(&model, &op).map_err(|e| e.to_string())?;
    let a33 = s.matrix[(s.bus_ids.iter().position(|b| b == "3").ok_or("bus 3 missing")?, 0)];
    let mc = critical_slopes(&s.matrix)[0];
    let ok = (a33 - 0.2857).abs() <= 0.02 && (mc - 3.5).abs() <= 0.25;
    let detail = format!("a33 = {a33:.4} (0.2857 +/- 0.02), m_c = {mc:.4} (3.5 +/- 0.25)");
    if !ok {
        return Err(detail);
    }
    within_time(t0.elapsed(), 1.0, detail)
}

fn stability_dichotomy() -> Outcome {
    let model = FeederModel::ieee4_mod();

    let t0 = Instant::now();
    let trace = run(&small_scenario("conventional", 1.0, 60, ""), &model).map_err(|e| e.to_string())?;
    let elapsed_settle = t0.elapsed();
    let res = trace.dispatch_residuals();
    let settled_at = (1..res.len()).find(|&t| res[t..].iter().all(|&r| r < 1e-6));

    let t0 = Instant::now();
    let trace = run(&small_scenario("conventional", 6.0, 60, ""), &model).map_err(|e| e.to_string())?;
    let elapsed_osc = t0.elapsed();
    let v = trace.unit_voltages(0);
    let p2p = peak_to_peak(&v[v.len() - 20..]);
    let p2p_prev = peak_to_peak(&v[v.len() - 40..v.len() - 20]);

    let detail = format!(
        "m=1 residual < 1e-6 from tick {settled_at:?}; m=6 node-3 p2p last 20 ticks = {p2p:.4} \
         (previous 20: {p2p_prev:.4}); {:.3}s / {:.3}s",
        elapsed_settle.as_secs_f64(),
        elapsed_osc.as_secs_f64()
    );
    let ok = settled_at.is_some_and(|t| t < 60)
        && p2p > 0.01
        && p2p >= p2p_prev * (1.0 - 1e-6)
        && elapsed_settle.as_secs_f64() < 1.0
        && elapsed_osc.as_secs_f64() < 1.0;
    check(ok, detail)
}

#[derive(Debug, PartialEq)]
enum Regime {
    Monotone,
    OneShot,
    Alternating,
    Growing,
    Other,
}

fn classify(sse: &[f64]) -> Regime {
    let abs: Vec<f64> = sse.iter().map(|e| e.abs()).collect();
    if abs.len() > 1 && abs[1] < 1e-4 {
        return Regime::OneShot;
    }
    let decreasing = abs.windows(2).all(|w| w[1] < w[0]);
    let non_decreasing = abs.windows(2).all(|w| w[1] >= w[0]);
    let same_sign = sse.windows(2).all(|w| w[0] * w[1] > 0.0);
    let alternating = sse.windows(2).all(|w| w[0] * w[1] < 0.0);
    match (decreasing, same_sign, alternating, non_decreasing) {
        (true, true, _, _) => Regime::Monotone,
        (true, _, true, _) => Regime::Alternating,
        (_, _, _, true) => Regime::Growing,
        _ => Regime::Other,
    }
}

fn outer_loop_regimes() -> Outcome {
    let t0 = Instant::now();
    let b = scalar_b(2.0 / 7.0, 1.0, 4.5);
    let mut parts = vec![format!("b(4.5) = {b:e}")];
    let mut ok = b == 0.0;
    let expected =
        [(2.0, Regime::Monotone), (4.5, Regime::OneShot), (7.0, Regime::Alternating), (10.0, Regime::Growing)];
    for (k, want) in expected {
        let (mut s, model) = preset_with_feeder("outer_sweep").map_err(|e| e.to_string())?;
        s.adaptive.k_d = k;
        let trace = run(&s, &model).map_err(|e| e.to_string())?;
        let sse: Vec<f64> = trace.unit_params(0).iter().filter_map(|p| p.sse_end).collect();
        let got = classify(&sse);
        ok &= got == want;
        parts.push(format!("k={k}: {got:?}"));
    }
    let detail = parts.join(", ");
    if !ok {
        return Err(detail);
    }
    within_time(t0.elapsed(), 5.0, detail)
}

fn b_matrix() -> Outcome {
    let model = ieee4_closed();
    let op = solved(&model, &model.pv_injections());
    let a = sensitivity_matrix(&model, &op).map_err(|e| e.to_string())?.matrix;
    let n = a.nrows();
    let r = outer_b_matrix(&a, &vec![1.0; n], &vec![4.0; n]).map_err(|e| e.to_string())?;
    let mags = &r.b_eigenvalue_magnitudes;
    let ok = mags.len() == 2 && (mags[0] - 0.73).abs() <= 0.05 && (mags[1] - 0.56).abs() <= 0.05;
    check(ok, format!("|eig(B)| = {mags:.4?} (expected 0.73, 0.56 +/- 0.05)"))
}

fn disturbance_recovery() -> Outcome {
    let (s, model) = preset_with_feeder("fig10a").map_err(|e| e.to_string())?;
    let eps = s.adaptive.eps_sse;
    let adaptive = run(&s, &model).map_err(|e| e.to_string())?;
    let step = 80;
    let settled_from = step + 2 * s.t_outer;
    let worst_adaptive = adaptive.unit_voltages(0)[settled_from..].iter().map(|v| (v - 1.0).abs()).fold(0.0, f64::max);

    let (s, model) = preset_with_feeder("fig3a").map_err(|e| e.to_string())?;
    let delayed = run(&s, &model).map_err(|e| e.to_string())?;
    let least_delayed =
        delayed.unit_voltages(0)[step + 1..].iter().map(|v| (v - 1.0).abs()).fold(f64::INFINITY, f64::min);

    check(
        worst_adaptive <= eps && least_delayed > 0.01,
        format!(
            "adaptive max |V-mu| from tick {settled_from} = {worst_adaptive:.5} (<= {eps}); \
             delayed min |V-mu| after step = {least_delayed:.5} (> 0.01)"
        ),
    )
}

fn sse_closed_form() -> Outcome {
    let mut parts = Vec::new();
    let mut ok = true;
    for (plant, tol) in [("linearized", 1e-6), ("power_flow", 1e-3)] {
        let extra = format!(r#","plant":"{plant}","events":[{{"tick":100,"kind":"substation_voltage","v":1.05}}]"#);
        let s = small_scenario("conventional", 1.0, 200, &extra);
        let model = FeederModel::ieee4_mod();
        let trace = run(&s, &model).map_err(|e| e.to_string())?;
        let v_bar = trace.unit_voltages(0)[99];
        let q_bar = trace.unit_vars(0)[99];
        let v_end = trace.unit_voltages(0)[199];

        let bus = model.bus_index("3").map_err(|e| e.to_string())?;
        let mut inj = model.pv_injections();
        let mut stepped = model.clone();
        stepped.set_slack_voltage(1.05);
        let (a, v_open) = if plant == "linearized" {
            let mut lin = LinearPlant::new(&model, &inj, &SolverOptions::default()).map_err(|e| e.to_string())?;
            let a = sensitivity_matrix(&model, lin.base()).map_err(|e| e.to_string())?.matrix;
            inj.q[bus] = q_bar;
            (a, lin.solve(&stepped, &inj).map_err(|e| e.to_string())?.voltages[bus])
        } else {
            inj.q[bus] = q_bar;
            let a = sensitivity_matrix(&model, &solved(&model, &inj)).map_err(|e| e.to_string())?.matrix;
            (a, solved(&stepped, &inj).voltages[bus])
        };
        let (v_pred, _) = predict_sse(
            &a,
            &[1.0],
            &DVector::from_element(1, v_open - v_bar),
            &DVector::from_element(1, v_bar),
            &DVector::from_element(1, 1.0),
        )
        .map_err(|e| e.to_string())?;
        let err = (v_pred[0] - v_end).abs();
        ok &= err <= tol;
        parts.push(format!("{plant}: |predicted - simulated| = {err:.2e} (<= {tol:e})"));
    }
    check(ok, parts.join("; "))
}

fn property_suite() -> Outcome {
    let t0 = Instant::now();
    let mut rows = Vec::new();
    for kind in ["adaptive", "conventional", "delayed", "none"] {
        let (mut s, model) = preset_with_feeder("intermittency").map_err(|e| e.to_string())?;
        s.controller.kind = serde_json::from_str(&format!("\"{kind}\"")).map_err(|e| e.to_string())?;
        let trace = run(&s, &model).map_err(|e| e.to_string())?;
        let r = metrics(&trace, &s.mu_schedule(trace.n_units()), &MetricLimits::from_scenario(&s));
        rows.push((kind, model.pv_units.len(), r));
    }
    let [ad, conv, del, none] = [&rows[0].2, &rows[1].2, &rows[2].2, &rows[3].2];
    let ok = rows[0].1 == 10 && ad.fc == 0 && conv.fc >= 1 && ad.msse < del.msse && del.msse < none.msse && ad.vvi == 0;
    let detail = format!(
        "FC adaptive {} / conventional {}; MSSE adaptive {:.4} < delayed {:.4} < none {:.4}; VVI adaptive {}",
        ad.fc, conv.fc, ad.msse, del.msse, none.msse, ad.vvi
    );
    if !ok {
        return Err(detail);
    }
    within_time(t0.elapsed(), 60.0, detail)
}

fn random_matrix(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, n, |_, _| rng.gen_range(-2.0..2.0))
}

/// Symmetric positive sensitivity-like matrix with a dominant diagonal.
fn random_sensitivity(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
    let mut a = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let x = if i == j { rng.gen_range(0.1..1.0) } else { rng.gen_range(0.0..0.3) };
            a[(i, j)] = x;
            a[(j, i)] = x;
        }
    }
    a
}

fn finite_difference_max_error(model: &FeederModel) -> f64 {
    let inj = model.pv_injections();
    let op = solved(model, &inj);
    let s = sensitivity_matrix(model, &op).expect("sensitivity");
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for (j, &bj) in s.buses.iter().enumerate() {
        let mut up = inj.clone();
        up.q[bj] += h;
        let mut down = inj.clone();
        down.q[bj] -= h;
        let (vu, vd) = (solved(model, &up).voltages, solved(model, &down).voltages);
        for (i, &bi) in s.buses.iter().enumerate() {
            worst = worst.max(((vu[bi] - vd[bi]) / (2.0 * h) - s.matrix[(i, j)]).abs());
        }
    }
    worst
}

fn invariant_suites() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut bound_failures = 0;
    for _ in 0..100 {
        let n = rng.gen_range(1..=8);
        let x = random_matrix(&mut rng, n);
        let rho = spectral_radius(&x).map_err(|e| e.to_string())?;
        if rho > norm_inf(&x) + 1e-9 || rho > norm_one(&x) + 1e-9 {
            bound_failures += 1;
        }
    }

    let mut row_sum_failures = 0;
    for _ in 0..100 {
        let n = rng.gen_range(1..=8);
        let a = random_sensitivity(&mut rng, n);
        let slopes: Vec<f64> = critical_slopes(&a).iter().map(|mc| mc * rng.gen_range(0.0..0.999)).collect();
        let ma = DMatrix::from_diagonal(&DVector::from_vec(slopes)) * &a;
        let rho = eigenvalue_magnitudes(&ma).map_err(|e| e.to_string())?[0];
        if rho >= 1.0 {
            row_sum_failures += 1;
        }
    }

    let fd = finite_difference_max_error(&ieee4_closed()).max(finite_difference_max_error(&FeederModel::feeder30()));

    let (s, model) = preset_with_feeder("intermittency").map_err(|e| e.to_string())?;
    let identical = run(&s, &model).map_err(|e| e.to_string())? == run(&s, &model).map_err(|e| e.to_string())?;

    check(
        bound_failures == 0 && row_sum_failures == 0 && fd <= 1e-4 && identical,
        format!(
            "norm bound violations {bound_failures}/100; row-sum => rho<1 violations {row_sum_failures}/100; \
             finite-difference error {fd:.2e} (<= 1e-4); identical seeded traces: {identical}"
        ),
    )
}

type Criterion = (&'static str, fn() -> Outcome);

fn main() -> ExitCode {
    let criteria: [Criterion; 8] = [
        ("critical slope", critical_slope),
        ("stability dichotomy", stability_dichotomy),
        ("outer-loop k_d regimes", outer_loop_regimes),
        ("B-matrix eigenvalues", b_matrix),
        ("disturbance recovery", disturbance_recovery),
        ("SSE closed form", sse_closed_form),
        ("property suite", property_suite),
        ("invariant suites", invariant_suites),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let outcome = std::panic::catch_unwind(f).unwrap_or_else(|_| Err("panicked".into()));
        let (tag, detail) = match outcome {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        println!("criterion {}: {tag}: {name}: {detail}", i + 1);
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
