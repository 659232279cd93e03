//! Scenario-driven quasi-static simulation of controllers on a feeder.

mod engine;
mod metrics;
mod plant;
mod presets;
mod profile;
mod scenario;
mod trace;

pub use engine::{run, Simulation};
pub use metrics::{metrics, MetricLimits, MetricsReport, UnitMetrics};
pub use plant::{LinearPlant, Plant, PowerFlowPlant};
pub use presets::{preset, preset_with_feeder, PRESET_NAMES};
pub use profile::{series_seed, telegraph, SeriesSpec};
pub use scenario::{ControllerChoice, ControllerConfig, Event, EventKind, PlantKind, Scenario};
pub use trace::{ParamRecord, SampleFlags, SimulationTrace, TickRecord, UnitSample, TRACE_HEADER};
