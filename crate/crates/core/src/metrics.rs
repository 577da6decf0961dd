//! Post-run analytics and the CSV emitters for plot data.
//!
//! Every CSV starts with one `#` comment line naming the file kind and the
//! schema version; read with a comment-aware parser.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::engine::SimReport;
use crate::error::{Result, SimError};
use crate::mapper::PredictionRecord;

pub const CSV_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MapeField {
    Time,
    Energy,
}

/// Mean absolute percentage error, in percent.
pub fn mape(records: &[PredictionRecord], field: MapeField) -> Result<f64> {
    if records.is_empty() {
        return Err(SimError::Empty("prediction records"));
    }
    let sum: f64 = records
        .iter()
        .map(|r| {
            let (real, predicted) = match field {
                MapeField::Time => (r.actual_seconds, r.predicted_seconds),
                MapeField::Energy => (r.actual_energy_mj, r.predicted_energy_mj),
            };
            ((real - predicted) / real).abs()
        })
        .sum();
    Ok(sum / records.len() as f64 * 100.0)
}

/// Energy-delay product in J·s.
pub fn edp(energy_j: f64, time_s: f64) -> f64 {
    energy_j * time_s
}

/// Mean over cores of the time spent neither in tasks nor asleep, in
/// percent of the makespan.
pub fn overhead_fraction(report: &SimReport) -> f64 {
    if report.core_times.is_empty() || report.makespan_s <= 0.0 {
        return 0.0;
    }
    let n = report.core_times.len() as f64;
    report.core_times.iter().map(|c| 1.0 - (c.task_s + c.sleep_s) / report.makespan_s).sum::<f64>() / n * 100.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlaceShare {
    pub cluster: String,
    pub width: u32,
    pub tasks: usize,
    pub fraction: f64,
}

/// Per-core time split; fractions sum to 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoreSplit {
    pub core: usize,
    pub task: f64,
    pub sleep: f64,
    pub steal: f64,
    pub scheduling: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Distributions {
    pub places: Vec<PlaceShare>,
    pub cores: Vec<CoreSplit>,
}

pub fn distributions(report: &SimReport) -> Distributions {
    let total: usize = report.place_counts.iter().map(|p| p.tasks).sum();
    let places = report
        .place_counts
        .iter()
        .map(|p| PlaceShare {
            cluster: p.cluster_tag.clone(),
            width: p.width,
            tasks: p.tasks,
            fraction: if total == 0 { 0.0 } else { p.tasks as f64 / total as f64 },
        })
        .collect();
    let cores = report
        .core_times
        .iter()
        .enumerate()
        .map(|(core, t)| {
            let sum = t.total();
            let f = |x: f64| if sum > 0.0 { x / sum } else { 0.0 };
            CoreSplit {
                core,
                task: f(t.task_s),
                sleep: f(t.sleep_s),
                steal: f(t.steal_s),
                scheduling: f(t.scheduling_s),
            }
        })
        .collect();
    Distributions { places, cores }
}

/// One row of a comparison or sweep table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub policy: String,
    pub platform: String,
    pub kernel: String,
    pub dop: u32,
    pub tasks: usize,
    pub freq: String,
    pub seed: u64,
    pub energy_j: f64,
    pub makespan_s: f64,
    pub edp_js: f64,
    pub overhead_pct: f64,
    /// Empty for policies that make no energy predictions.
    pub time_mape_pct: Option<f64>,
    pub energy_mape_pct: Option<f64>,
}

impl RunSummary {
    pub fn from_report(report: &SimReport, kernel: &str, dop: u32, freq: &str) -> Self {
        RunSummary {
            policy: report.policy.clone(),
            platform: report.platform.clone(),
            kernel: kernel.to_string(),
            dop,
            tasks: report.tasks,
            freq: freq.to_string(),
            seed: report.seed,
            energy_j: report.total_energy_j(),
            makespan_s: report.makespan_s,
            edp_js: edp(report.total_energy_j(), report.makespan_s),
            overhead_pct: overhead_fraction(report),
            time_mape_pct: mape(&report.predictions, MapeField::Time).ok(),
            energy_mape_pct: mape(&report.predictions, MapeField::Energy).ok(),
        }
    }
}

fn header<W: Write>(w: &mut W, kind: &str) -> std::io::Result<()> {
    writeln!(w, "# erase-sim {kind} v{CSV_SCHEMA_VERSION}")
}

/// Comment header plus one serialized row per item.
pub fn write_csv<W: Write, T: Serialize>(
    mut w: W,
    kind: &str,
    rows: impl IntoIterator<Item = T>,
) -> anyhow::Result<()> {
    header(&mut w, kind)?;
    let mut out = csv::Writer::from_writer(w);
    for r in rows {
        out.serialize(r)?;
    }
    out.flush()?;
    Ok(())
}

/// Columns: cluster, width, tasks, fraction.
pub fn write_task_distribution<W: Write>(w: W, d: &Distributions) -> anyhow::Result<()> {
    write_csv(w, "task_distribution", &d.places)
}

/// Columns: core, task, sleep, steal, scheduling.
pub fn write_time_distribution<W: Write>(w: W, d: &Distributions) -> anyhow::Result<()> {
    write_csv(w, "time_distribution", &d.cores)
}

#[derive(Serialize)]
struct PowerRow {
    time_s: f64,
    power_mw: f64,
    freq_hz: String,
}

/// Columns: time_s, power_mw, freq_hz (per-cluster levels joined by `/`).
pub fn write_power_timeline<W: Write>(w: W, report: &SimReport) -> anyhow::Result<()> {
    let initial: Vec<u64> = report.initial_freq_hz.clone();
    let mut freqs = initial;
    let mut changes = report.dvfs_changes.iter().peekable();
    let rows = report.power_samples.iter().map(|s| {
        while let Some(d) = changes.next_if(|d| d.time <= s.time) {
            freqs[d.cluster] = d.to_hz;
        }
        PowerRow {
            time_s: s.time,
            power_mw: s.power_mw,
            freq_hz: freqs.iter().map(u64::to_string).collect::<Vec<_>>().join("/"),
        }
    });
    let rows: Vec<PowerRow> = rows.collect();
    write_csv(w, "power_timeline", rows)
}

/// Columns: the fields of [`RunSummary`].
pub fn write_summaries<W: Write>(w: W, kind: &str, rows: &[RunSummary]) -> anyhow::Result<()> {
    write_csv(w, kind, rows)
}
