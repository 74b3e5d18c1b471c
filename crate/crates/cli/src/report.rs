//! Tables and summary documents written by `batch` and `generate`.

use std::path::Path;

use serde::Serialize;

use scengen_core::engine::{CampaignReport, EpisodeRow};
use scengen_core::metrics::{histogram, CampaignMetrics, DEFAULT_KL_BINS};

use crate::CliError;

pub fn fmt_ttc(t: Option<f64>) -> String {
    t.map_or_else(|| "none".to_string(), |t| format!("{t:.3} s"))
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), CliError> {
    let fail = |e: csv::Error| CliError::Input(format!("cannot write {}: {e}", path.display()));
    let mut w = csv::Writer::from_path(path).map_err(fail)?;
    for r in rows {
        w.serialize(r).map_err(fail)?;
    }
    w.flush().map_err(|e| CliError::Input(format!("cannot write {}: {e}", path.display())))
}

#[derive(Serialize)]
struct EpisodeLine<'a> {
    scenario_id: &'a str,
    intent: &'a str,
    collided: bool,
    collision_step: Option<usize>,
    min_ttc: Option<f64>,
    iterations: usize,
    memory_event: &'a str,
    critical: bool,
    error: &'a str,
}

pub fn write_episodes(path: &Path, rows: &[EpisodeRow]) -> Result<(), CliError> {
    let lines: Vec<EpisodeLine> = rows
        .iter()
        .map(|r| EpisodeLine {
            scenario_id: &r.scenario_id,
            intent: r.intent.as_deref().unwrap_or(""),
            collided: r.collided,
            collision_step: r.collision_step,
            min_ttc: r.min_ttc,
            iterations: r.iterations,
            memory_event: match r.memory_event {
                Some(scengen_core::membank::MemoryEvent::Hit) => "hit",
                Some(scengen_core::membank::MemoryEvent::Generated) => "generated",
                None => "",
            },
            critical: r.critical,
            error: r.error.as_deref().unwrap_or(""),
        })
        .collect();
    write_csv(path, &lines)
}

#[derive(Serialize)]
struct HistogramLine {
    bin_center: f64,
    generated_density: f64,
    raw_density: f64,
}

/// Both sample sets binned on their pooled range, as probability densities.
pub fn write_histogram(path: &Path, generated: &[f64], raw: &[f64]) -> Result<(), CliError> {
    let (lo, hi) =
        generated.iter().chain(raw).fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    if !(lo.is_finite() && hi.is_finite()) {
        return write_csv::<HistogramLine>(path, &[]);
    }
    let bins = DEFAULT_KL_BINS;
    let width = if hi > lo { (hi - lo) / bins as f64 } else { 1.0 };
    let g = histogram(generated, lo, hi, bins);
    let r = histogram(raw, lo, hi, bins);
    let lines: Vec<HistogramLine> = (0..bins)
        .map(|i| HistogramLine {
            bin_center: lo + (i as f64 + 0.5) * width,
            generated_density: g[i] / width,
            raw_density: r[i] / width,
        })
        .collect();
    write_csv(path, &lines)
}

#[derive(Serialize)]
struct Summary<'a> {
    episodes: usize,
    failed: usize,
    generated: &'a CampaignMetrics,
    raw: &'a CampaignMetrics,
}

pub fn summary_json(report: &CampaignReport) -> String {
    let summary = Summary {
        episodes: report.rows.len(),
        failed: report.rows.iter().filter(|r| r.error.is_some()).count(),
        generated: &report.metrics,
        raw: &report.raw_metrics,
    };
    let mut s = serde_json::to_string_pretty(&summary).expect("summary serializes");
    s.push('\n');
    s
}
