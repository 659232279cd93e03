use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde_json::{json, Value};

use voltvar_core::analysis::{outer_b_matrix, stability_report};
use voltvar_core::feeder::{sensitivity_matrix, solve_power_flow, FeederModel, SolverOptions, BUNDLED_FEEDERS};
use voltvar_core::sim::{
    metrics, preset, run, ControllerChoice, EventKind, MetricLimits, Scenario, SimulationTrace, PRESET_NAMES,
};

/// Prints to stdout, ignoring a closed pipe.
macro_rules! say {
    ($($arg:tt)*) => {{
        let _ = writeln!(std::io::stdout(), $($arg)*);
    }};
}

const EXIT_USAGE: u8 = 2;
const EXIT_UNSTABLE: u8 = 3;
const EXIT_RUNTIME: u8 = 4;

/// Local volt/VAR droop control simulator for PV inverters.
#[derive(Debug, Parser)]
#[command(name = "voltvar-sim", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run one scenario and write its traces and metrics.
    Run(RunArgs),
    /// Print the stability and outer-loop convergence reports.
    Analyze(CommonArgs),
    /// Run a scenario once per parameter value and collect SSE per outer window.
    Sweep(SweepArgs),
    /// List the built-in scenarios.
    Presets,
}

#[derive(Debug, Args)]
struct CommonArgs {
    /// Feeder JSON file or bundled feeder name.
    #[arg(long)]
    feeder: Option<String>,
    /// Scenario JSON file or preset name (`fig3a` or `presets/fig3a`).
    #[arg(long)]
    scenario: Option<String>,
    /// Override a scenario parameter, e.g. `--set slope=2`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct RunArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Output directory.
    #[arg(long, env = "VOLTVAR_SIM_OUT", default_value = "out")]
    out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SweepParam {
    #[value(name = "k_d")]
    KD,
    M,
    Tau,
    #[value(name = "T")]
    T,
}

impl SweepParam {
    fn keys(self) -> &'static [&'static str] {
        match self {
            SweepParam::KD => &["k_d"],
            SweepParam::M => &["slope", "m_init"],
            SweepParam::Tau => &["tau"],
            SweepParam::T => &["t_outer"],
        }
    }

    fn label(self) -> &'static str {
        match self {
            SweepParam::KD => "k_d",
            SweepParam::M => "m",
            SweepParam::Tau => "tau",
            SweepParam::T => "T",
        }
    }
}

#[derive(Debug, Args)]
struct SweepArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[arg(long, value_enum)]
    param: SweepParam,
    /// Comma-separated values.
    #[arg(long, value_delimiter = ',', num_args = 1.., required = true)]
    values: Vec<f64>,
    #[arg(long, env = "VOLTVAR_SIM_OUT", default_value = "out")]
    out: PathBuf,
    /// Worker threads; defaults to the number of CPUs.
    #[arg(long)]
    jobs: Option<usize>,
}

/// Failure classes with their exit codes.
enum Failure {
    Usage(anyhow::Error),
    Runtime(anyhow::Error),
}

type CliResult<T> = Result<T, Failure>;

fn usage<E: Into<anyhow::Error>>(e: E) -> Failure {
    Failure::Usage(e.into())
}

fn runtime<E: Into<anyhow::Error>>(e: E) -> Failure {
    Failure::Runtime(e.into())
}

/// Scenario keys accepted by `--set`, with their place in the scenario JSON.
const OVERRIDES: &[(&str, &[&str])] = &[
    ("horizon", &["horizon"]),
    ("dt_inner", &["dt_inner"]),
    ("t_outer", &["t_outer"]),
    ("seed", &["seed"]),
    ("plant", &["plant"]),
    ("controller", &["controller", "kind"]),
    ("slope", &["controller", "slope"]),
    ("tau", &["controller", "tau"]),
    ("deadband", &["controller", "deadband"]),
    ("mu", &["controller", "mu"]),
    ("track_capacity", &["controller", "track_capacity"]),
    ("k_d", &["adaptive", "k_d"]),
    ("eps_sse", &["adaptive", "eps_sse"]),
    ("eps_vf", &["adaptive", "eps_vf"]),
    ("vf_lim", &["adaptive", "vf_lim"]),
    ("vf_lim_bar", &["adaptive", "vf_lim_bar"]),
    ("delta_vf", &["adaptive", "delta_vf"]),
    ("delta_vf_bar", &["adaptive", "delta_vf_bar"]),
    ("m_init", &["adaptive", "m_init"]),
    ("m_floor", &["adaptive", "m_floor"]),
    ("m_ceiling", &["adaptive", "m_ceiling"]),
    ("sse_tail", &["adaptive", "sse_tail"]),
    ("signed_flicker", &["adaptive", "signed_flicker"]),
];

fn apply_override(doc: &mut Value, key: &str, raw: &str) -> anyhow::Result<()> {
    let path = OVERRIDES.iter().find(|(k, _)| *k == key).map(|(_, p)| *p).ok_or_else(|| {
        let known: Vec<&str> = OVERRIDES.iter().map(|(k, _)| *k).collect();
        anyhow!("unknown override key `{key}`; known keys: {}", known.join(", "))
    })?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut node = doc;
    for part in &path[..path.len() - 1] {
        node = node
            .as_object_mut()
            .ok_or_else(|| anyhow!("scenario field `{part}` is not an object"))?
            .entry(*part)
            .or_insert_with(|| json!({}));
    }
    node.as_object_mut().ok_or_else(|| anyhow!("cannot set `{key}`"))?.insert(path[path.len() - 1].to_string(), value);
    Ok(())
}

fn with_overrides<'a>(
    scenario: &Scenario,
    pairs: impl IntoIterator<Item = (&'a str, String)>,
) -> anyhow::Result<Scenario> {
    let mut doc = serde_json::to_value(scenario)?;
    for (key, raw) in pairs {
        apply_override(&mut doc, key, &raw)?;
    }
    serde_json::from_value(doc).context("override produced an invalid scenario")
}

fn parse_overrides(list: &[String]) -> anyhow::Result<Vec<(&str, String)>> {
    list.iter()
        .map(|s| {
            s.split_once('=')
                .map(|(k, v)| (k.trim(), v.trim().to_string()))
                .ok_or_else(|| anyhow!("override `{s}` is not KEY=VALUE"))
        })
        .collect()
}

fn load_scenario(spec: Option<&str>) -> anyhow::Result<Scenario> {
    match spec {
        None => Ok(Scenario::from_json_str(r#"{"name":"default","horizon":100}"#)?),
        Some(s) if Path::new(s).is_file() => Scenario::from_path(s).with_context(|| format!("reading scenario `{s}`")),
        Some(s) => Ok(preset(s)?),
    }
}

/// A feeder file, or a bundled feeder named directly or by a missing file's stem.
fn load_feeder(spec: Option<&str>, scenario: &Scenario) -> anyhow::Result<FeederModel> {
    let Some(spec) = spec else {
        return Ok(FeederModel::bundled(scenario.feeder.as_deref().unwrap_or("ieee4_mod"))?);
    };
    let path = Path::new(spec);
    if path.is_file() {
        return FeederModel::from_path(path).with_context(|| format!("reading feeder `{spec}`"));
    }
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or(spec);
    if BUNDLED_FEEDERS.contains(&stem) {
        return Ok(FeederModel::bundled(stem)?);
    }
    bail!("feeder `{spec}` is neither a file nor a bundled feeder ({})", BUNDLED_FEEDERS.join(", "))
}

fn prepare(args: &CommonArgs) -> CliResult<(Scenario, FeederModel)> {
    let base = load_scenario(args.scenario.as_deref()).map_err(usage)?;
    let pairs = parse_overrides(&args.overrides).map_err(usage)?;
    let mut scenario = with_overrides(&base, pairs).map_err(usage)?;
    if let Some(seed) = args.seed {
        scenario.seed = seed;
    }
    let model = load_feeder(args.feeder.as_deref(), &scenario).map_err(usage)?;
    scenario.validate(&model).map_err(usage)?;
    Ok((scenario, model))
}

fn create(path: &Path) -> CliResult<File> {
    File::create(path).with_context(|| format!("creating {}", path.display())).map_err(runtime)
}

fn cmd_run(args: &RunArgs) -> CliResult<u8> {
    let (scenario, model) = prepare(&args.common)?;
    let trace = run(&scenario, &model).map_err(runtime)?;
    let report = metrics(&trace, &scenario.mu_schedule(trace.n_units()), &MetricLimits::from_scenario(&scenario));

    trace.write_dir(&args.out).with_context(|| format!("writing {}", args.out.display())).map_err(runtime)?;
    let mut f = create(&args.out.join("metrics.json"))?;
    serde_json::to_writer_pretty(&mut f, &report).map_err(runtime)?;
    let mut f = create(&args.out.join("scenario.json"))?;
    f.write_all(scenario.to_json_string().map_err(runtime)?.as_bytes()).map_err(runtime)?;

    let nonconverged = trace.ticks.iter().filter(|t| !t.converged).count();
    say!("scenario {} on {}: {} ticks", scenario.name, model.name, trace.ticks.len());
    if nonconverged > 0 {
        say!("warning: power flow did not converge on {nonconverged} ticks");
    }
    say!("{report}");
    say!("wrote {}", args.out.display());
    Ok(0)
}

/// Feeder state at tick 0: topology, substation and load events applied, PV
/// at rated output and no vars.
fn initial_model(scenario: &Scenario, model: &FeederModel) -> anyhow::Result<FeederModel> {
    let mut m = model.clone();
    for e in scenario.events.iter().take_while(|e| e.tick == 0) {
        match &e.kind {
            EventKind::Switch { line, closed } => m = m.apply_topology_event(line, *closed)?,
            EventKind::SubstationVoltage { v } => m.set_slack_voltage(*v),
            EventKind::LoadScale { factor } => m.load_scale = *factor,
            _ => {}
        }
    }
    Ok(m)
}

fn cmd_analyze(args: &CommonArgs) -> CliResult<u8> {
    let (scenario, model) = prepare(args)?;
    let m = initial_model(&scenario, &model).map_err(usage)?;
    let op = solve_power_flow(&m, &m.pv_injections(), None, &SolverOptions::default()).map_err(runtime)?;
    if !op.converged {
        return Err(runtime(anyhow!("operating point power flow did not converge")));
    }
    let sens = sensitivity_matrix(&m, &op).map_err(runtime)?;
    let n = sens.buses.len();
    let slope = match scenario.controller.kind {
        ControllerChoice::Adaptive => scenario.adaptive.m_init,
        _ => scenario.controller.slope,
    };
    let slopes = vec![slope; n];
    let at = |e: voltvar_core::Error| anyhow!("{e} (PV buses {})", sens.bus_ids.join(", "));
    let id = format!("{}@{}", m.name, scenario.name);
    let mut stability = stability_report(&sens.matrix, &slopes).map_err(|e| runtime(at(e)))?;
    stability.operating_point_id = Some(id.clone());
    let mut convergence =
        outer_b_matrix(&sens.matrix, &slopes, &vec![scenario.adaptive.k_d; n]).map_err(|e| runtime(at(e)))?;
    convergence.operating_point_id = Some(id);

    let out = json!({
        "pv_buses": sens.bus_ids,
        "slope": slope,
        "k_d": scenario.adaptive.k_d,
        "sensitivity": sens.matrix.row_iter().map(|r| r.iter().copied().collect::<Vec<f64>>()).collect::<Vec<_>>(),
        "stability": stability,
        "convergence": convergence,
    });
    say!("{}", serde_json::to_string_pretty(&out).map_err(runtime)?);
    Ok(if stability.stable_spectral && convergence.converges { 0 } else { EXIT_UNSTABLE })
}

struct SweepRow {
    value: f64,
    window: usize,
    tick_end: usize,
    unit: usize,
    bus: String,
    sse_avg: f64,
    sse_end: f64,
}

fn window_errors(value: f64, scenario: &Scenario, trace: &SimulationTrace) -> Vec<SweepRow> {
    let mu = scenario.mu_schedule(trace.n_units());
    let t = scenario.t_outer;
    let mut rows = Vec::new();
    for (u, bus) in trace.unit_buses.iter().enumerate() {
        let samples: Vec<_> = trace.unit_series(u).collect();
        for (w, chunk) in samples.chunks_exact(t).enumerate() {
            if chunk.iter().any(|s| !s.flags.is_clean()) {
                continue;
            }
            let start = w * t;
            let err: Vec<f64> = chunk.iter().enumerate().map(|(i, s)| s.v - mu[start + i][u]).collect();
            rows.push(SweepRow {
                value,
                window: w,
                tick_end: start + t - 1,
                unit: u,
                bus: bus.clone(),
                sse_avg: err.iter().sum::<f64>() / t as f64,
                sse_end: err[t - 1],
            });
        }
    }
    rows
}

fn cmd_sweep(args: &SweepArgs) -> CliResult<u8> {
    let (base, model) = prepare(&args.common)?;
    let scenarios = args
        .values
        .iter()
        .map(|&v| {
            let raw = if matches!(args.param, SweepParam::T) {
                if v < 1.0 || v.fract() != 0.0 {
                    bail!("T must be a positive integer, got {v}");
                }
                format!("{}", v as usize)
            } else {
                v.to_string()
            };
            let s = with_overrides(&base, args.param.keys().iter().map(|k| (*k, raw.clone())))?;
            s.validate(&model)?;
            Ok((v, s))
        })
        .collect::<anyhow::Result<Vec<_>>>()
        .map_err(usage)?;

    let pool = rayon::ThreadPoolBuilder::new().num_threads(args.jobs.unwrap_or(0)).build().map_err(runtime)?;
    let results: Vec<(f64, Scenario, SimulationTrace)> = pool
        .install(|| {
            scenarios
                .into_par_iter()
                .map(|(v, s)| run(&s, &model).map(|t| (v, s, t)))
                .collect::<voltvar_core::Result<Vec<_>>>()
        })
        .map_err(runtime)?;

    std::fs::create_dir_all(&args.out).map_err(runtime)?;
    let path = args.out.join("sweep.csv");
    let mut f = std::io::BufWriter::new(create(&path)?);
    let label = args.param.label();
    writeln!(f, "param,value,window,tick_end,unit,bus,sse_avg,sse_end").map_err(runtime)?;
    for (v, s, trace) in &results {
        for r in window_errors(*v, s, trace) {
            writeln!(
                f,
                "{label},{},{},{},{},{},{},{}",
                r.value, r.window, r.tick_end, r.unit, r.bus, r.sse_avg, r.sse_end
            )
            .map_err(runtime)?;
        }
        let report = metrics(trace, &s.mu_schedule(trace.n_units()), &MetricLimits::from_scenario(s));
        say!("{label}={v}: MSSE {:.4}% VVI {} FC {}", report.msse, report.vvi, report.fc);
    }
    f.flush().map_err(runtime)?;
    say!("wrote {}", path.display());
    Ok(0)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Analyze(args) => cmd_analyze(args),
        Command::Sweep(args) => cmd_sweep(args),
        Command::Presets => {
            for name in PRESET_NAMES {
                say!("{name}");
            }
            Ok(0)
        }
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(Failure::Usage(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_USAGE)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_RUNTIME)
        }
    }
}
