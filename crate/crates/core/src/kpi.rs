//! KPI report computed from a run log.

use crate::runlog::RunLog;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct KpiReport {
    /// vehicle-hours of delay over completed trips, never negative
    pub total_delay: f64,
    /// completed trips
    pub throughput: u64,
    /// vehicles queued network-wide, averaged over ticks
    pub mean_queue: f64,
    pub max_queue: u64,
    pub ticks: u64,
    pub mode_shifted: u64,
    /// strategy activations per level name
    pub activations: BTreeMap<String, u64>,
}

pub fn compute_kpis(log: &RunLog) -> KpiReport {
    let mut acc = KpiAccumulator::default();
    acc.update(log);
    acc.report()
}

/// Folds run-log records into a report as they are appended.
#[derive(Clone, Debug, Default)]
pub struct KpiAccumulator {
    report: KpiReport,
    queue_sum: u64,
    cursor: usize,
}

impl KpiAccumulator {
    /// Consume the records appended since the last call.
    pub fn update(&mut self, log: &RunLog) {
        let r = &mut self.report;
        for rec in &log.records()[self.cursor..] {
            let p = &rec.payload;
            match rec.kind.as_str() {
                "arrive" => {
                    r.throughput += 1;
                    let travel = p["travel_time"].as_f64().unwrap_or(0.0);
                    let ff = p["free_flow_time"].as_f64().unwrap_or(0.0);
                    r.total_delay += (travel - ff).max(0.0) / 3600.0;
                }
                "tick" => {
                    let q = p["queued"].as_u64().unwrap_or(0);
                    r.ticks += 1;
                    self.queue_sum += q;
                    r.max_queue = r.max_queue.max(q);
                    r.mode_shifted = p["mode_shifted"].as_u64().unwrap_or(r.mode_shifted);
                }
                "strategy_activated" => {
                    if let Some(level) = p["level"].as_str() {
                        *r.activations.entry(level.to_owned()).or_default() += 1;
                    }
                }
                _ => {}
            }
        }
        self.cursor = log.len();
    }

    pub fn report(&self) -> KpiReport {
        let mut r = self.report.clone();
        if r.ticks > 0 {
            r.mean_queue = self.queue_sum as f64 / r.ticks as f64;
        }
        r
    }
}

/// Field-wise difference `b - a` of the scalar KPIs.
pub fn kpi_delta(a: &KpiReport, b: &KpiReport) -> BTreeMap<&'static str, f64> {
    BTreeMap::from([
        ("total_delay", b.total_delay - a.total_delay),
        ("throughput", b.throughput as f64 - a.throughput as f64),
        ("mean_queue", b.mean_queue - a.mean_queue),
        ("max_queue", b.max_queue as f64 - a.max_queue as f64),
        (
            "mode_shifted",
            b.mode_shifted as f64 - a.mode_shifted as f64,
        ),
    ])
}
