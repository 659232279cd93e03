//! Simulation traces and their CSV form.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::adaptation::FlickerZone;
use crate::error::{Error, Result};

pub const TRACE_HEADER: [&str; 6] = ["tick", "bus", "V_pu", "q_inj_pu", "p_out_pu", "flags"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SampleFlags {
    /// The power flow failed and voltages were carried forward.
    pub nonconverged: bool,
    /// The unit's bus is cut off from the substation.
    pub deenergized: bool,
}

impl SampleFlags {
    pub fn is_clean(&self) -> bool {
        !self.nonconverged && !self.deenergized
    }

    fn to_field(self) -> String {
        let mut parts = Vec::new();
        if self.nonconverged {
            parts.push("nonconverged");
        }
        if self.deenergized {
            parts.push("deenergized");
        }
        parts.join(";")
    }

    fn parse(field: &str) -> Result<Self> {
        let mut flags = Self::default();
        for part in field.split(';').filter(|p| !p.is_empty()) {
            match part {
                "nonconverged" => flags.nonconverged = true,
                "deenergized" => flags.deenergized = true,
                other => return Err(Error::InvalidScenario(format!("unknown trace flag `{other}`"))),
            }
        }
        Ok(flags)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UnitSample {
    pub v: f64,
    pub q: f64,
    pub p: f64,
    pub flags: SampleFlags,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TickRecord {
    pub tick: usize,
    /// Every bus voltage; empty for traces read back from CSV.
    pub bus_voltages: Vec<f64>,
    pub units: Vec<UnitSample>,
    pub converged: bool,
    pub iterations: usize,
}

/// Parameters dispatched to one unit at one outer-loop boundary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamRecord {
    pub outer: usize,
    pub tick: usize,
    pub unit: usize,
    pub bus: String,
    pub m_p: f64,
    pub q_p: f64,
    pub q_min_p: f64,
    pub q_max_p: f64,
    pub v_min_p: f64,
    pub v_max_p: f64,
    /// Window statistics; `None` when the parameters were kept.
    pub sse_avg: Option<f64>,
    /// Set-point error of the last sample in the window.
    pub sse_end: Option<f64>,
    pub vf: Option<f64>,
    pub zone: Option<FlickerZone>,
    /// False when the window held unusable samples and parameters were kept.
    pub updated: bool,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SimulationTrace {
    pub bus_ids: Vec<String>,
    /// Bus id of each PV unit, in unit order.
    pub unit_buses: Vec<String>,
    pub ticks: Vec<TickRecord>,
    pub params: Vec<ParamRecord>,
}

impl SimulationTrace {
    pub fn n_units(&self) -> usize {
        self.unit_buses.len()
    }

    pub fn unit_series(&self, unit: usize) -> impl Iterator<Item = &UnitSample> + '_ {
        self.ticks.iter().map(move |t| &t.units[unit])
    }

    pub fn unit_voltages(&self, unit: usize) -> Vec<f64> {
        self.unit_series(unit).map(|s| s.v).collect()
    }

    pub fn unit_vars(&self, unit: usize) -> Vec<f64> {
        self.unit_series(unit).map(|s| s.q).collect()
    }

    /// Largest change in any unit's dispatch between consecutive ticks; the
    /// first entry is zero.
    pub fn dispatch_residuals(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.ticks.len().min(1)];
        for w in self.ticks.windows(2) {
            let r = w[0].units.iter().zip(&w[1].units).map(|(a, b)| (b.q - a.q).abs()).fold(0.0, f64::max);
            out.push(r);
        }
        out
    }

    /// Parameter records of one unit, in outer-loop order.
    pub fn unit_params(&self, unit: usize) -> Vec<&ParamRecord> {
        self.params.iter().filter(|p| p.unit == unit).collect()
    }

    pub fn write_trace_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(TRACE_HEADER)?;
        for t in &self.ticks {
            for (bus, s) in self.unit_buses.iter().zip(&t.units) {
                w.write_record([
                    t.tick.to_string(),
                    bus.clone(),
                    s.v.to_string(),
                    s.q.to_string(),
                    s.p.to_string(),
                    s.flags.to_field(),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_params_csv<W: Write>(&self, out: W) -> Result<()> {
        let opt = |x: Option<f64>| x.map_or_else(String::new, |x| x.to_string());
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "outer", "tick", "unit", "bus", "m_p", "q_p", "q_min_p", "q_max_p", "v_min_p", "v_max_p", "sse_avg",
            "sse_end", "vf", "zone", "updated",
        ])?;
        for p in &self.params {
            let zone = match p.zone {
                Some(z) => serde_json::to_value(z)?.as_str().unwrap_or_default().to_string(),
                None => String::new(),
            };
            w.write_record([
                p.outer.to_string(),
                p.tick.to_string(),
                p.unit.to_string(),
                p.bus.clone(),
                p.m_p.to_string(),
                p.q_p.to_string(),
                p.q_min_p.to_string(),
                p.q_max_p.to_string(),
                p.v_min_p.to_string(),
                p.v_max_p.to_string(),
                opt(p.sse_avg),
                opt(p.sse_end),
                opt(p.vf),
                zone,
                p.updated.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// One row per tick with every bus voltage.
    pub fn write_bus_voltages_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["tick".to_string()];
        header.extend(self.bus_ids.iter().cloned());
        w.write_record(&header)?;
        for t in &self.ticks {
            let mut row = vec![t.tick.to_string()];
            row.extend(t.bus_voltages.iter().map(f64::to_string));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Writes `trace.csv`, `params.csv` and `bus_voltages.csv` into `dir`.
    pub fn write_dir(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        self.write_trace_csv(File::create(dir.join("trace.csv"))?)?;
        self.write_params_csv(File::create(dir.join("params.csv"))?)?;
        self.write_bus_voltages_csv(File::create(dir.join("bus_voltages.csv"))?)?;
        Ok(())
    }

    /// Reads a per-unit trace. Units are taken in the order their rows appear
    /// within each tick.
    pub fn read_trace_csv<R: Read>(input: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(input);
        let header = r.headers()?.clone();
        if header.iter().ne(TRACE_HEADER) {
            return Err(Error::InvalidScenario(format!("unexpected trace header {:?}", header)));
        }
        let bad = |m: String| Error::InvalidScenario(m);
        let mut trace = SimulationTrace::default();
        let mut current: Option<TickRecord> = None;
        let mut buses_this_tick: Vec<String> = Vec::new();
        let finish = |trace: &mut SimulationTrace, rec: TickRecord, buses: &mut Vec<String>| -> Result<()> {
            if trace.ticks.is_empty() {
                trace.unit_buses = std::mem::take(buses);
            } else if *buses != trace.unit_buses {
                return Err(Error::InvalidScenario(format!("tick {} has a different unit set", rec.tick)));
            } else {
                buses.clear();
            }
            trace.ticks.push(rec);
            Ok(())
        };
        for row in r.records() {
            let row = row?;
            let tick: usize = row[0].parse().map_err(|_| bad(format!("bad tick `{}`", &row[0])))?;
            let num = |i: usize| -> Result<f64> {
                row[i].parse().map_err(|_| bad(format!("bad number `{}` in column {}", &row[i], TRACE_HEADER[i])))
            };
            let sample = UnitSample { v: num(2)?, q: num(3)?, p: num(4)?, flags: SampleFlags::parse(&row[5])? };
            if current.as_ref().is_none_or(|c| c.tick != tick) {
                if let Some(done) = current.take() {
                    finish(&mut trace, done, &mut buses_this_tick)?;
                }
                current = Some(TickRecord {
                    tick,
                    bus_voltages: Vec::new(),
                    units: Vec::new(),
                    converged: true,
                    iterations: 0,
                });
            }
            let rec = current.as_mut().expect("tick record started above");
            rec.converged &= !sample.flags.nonconverged;
            rec.units.push(sample);
            buses_this_tick.push(row[1].to_string());
        }
        if let Some(done) = current.take() {
            finish(&mut trace, done, &mut buses_this_tick)?;
        }
        Ok(trace)
    }

    pub fn read_trace_file(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_trace_csv(File::open(path)?)
    }
}
