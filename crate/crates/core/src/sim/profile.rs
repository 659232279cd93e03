//! Per-unit input series: constants, explicit samples and a seeded random
//! telegraph that stands in for measured cloud intermittency.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SeriesSpec {
    Constant {
        value: f64,
    },
    /// Explicit samples; the last one holds past the end.
    Values {
        values: Vec<f64>,
    },
    /// Two-level signal that may switch level every `period` ticks.
    Telegraph {
        period: usize,
        low: f64,
        high: f64,
        flip_probability: f64,
        #[serde(default = "start_high")]
        start_high: bool,
    },
}

fn start_high() -> bool {
    true
}

impl SeriesSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidScenario(m.into()));
        match self {
            SeriesSpec::Constant { value } if !(*value >= 0.0) => bad("series values must be >= 0"),
            SeriesSpec::Values { values } if values.is_empty() => bad("empty value series"),
            SeriesSpec::Values { values } if values.iter().any(|v| !(*v >= 0.0)) => bad("series values must be >= 0"),
            SeriesSpec::Telegraph { period, low, high, flip_probability, .. } => {
                if *period == 0 {
                    bad("telegraph period must be >= 1")
                } else if !(*low >= 0.0 && *high >= *low) {
                    bad("telegraph levels need 0 <= low <= high")
                } else if !(0.0..=1.0).contains(flip_probability) {
                    bad("flip probability outside [0, 1]")
                } else {
                    Ok(())
                }
            }
            _ => Ok(()),
        }
    }

    /// Samples the series for `len` ticks. `seed` only matters for random
    /// series.
    pub fn sample(&self, len: usize, seed: u64) -> Vec<f64> {
        match self {
            SeriesSpec::Constant { value } => vec![*value; len],
            SeriesSpec::Values { values } => {
                let last = *values.last().unwrap_or(&0.0);
                (0..len).map(|t| values.get(t).copied().unwrap_or(last)).collect()
            }
            SeriesSpec::Telegraph { period, low, high, flip_probability, start_high } => {
                telegraph(len, *period, *low, *high, *flip_probability, *start_high, seed)
            }
        }
    }
}

pub fn telegraph(
    len: usize,
    period: usize,
    low: f64,
    high: f64,
    flip_probability: f64,
    start_high: bool,
    seed: u64,
) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut is_high = start_high;
    (0..len)
        .map(|t| {
            if t > 0 && t % period == 0 && rng.gen_bool(flip_probability) {
                is_high = !is_high;
            }
            if is_high {
                high
            } else {
                low
            }
        })
        .collect()
}

/// Deterministic per-series seed derived from the scenario seed and the
/// series name.
pub fn series_seed(scenario_seed: u64, name: &str) -> u64 {
    name.bytes().fold(scenario_seed ^ 0xcbf2_9ce4_8422_2325, |h, b| (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01b3))
}
