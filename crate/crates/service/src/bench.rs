//! Per-tier cost/quality benchmark: the same labeled dialogs are played
//! with every stage routed to one endpoint at a time.

use std::sync::atomic::Ordering;
use std::sync::Arc;

use serde::Serialize;

use ridechat_core::dialog::RoutingTable;
use ridechat_core::eval::compute_metrics;

use crate::config::Resources;
use crate::gateway::LatencyStats;
use crate::golden::{run_golden, GoldenSession, Offline};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BenchRow {
    pub endpoint: String,
    pub turns: usize,
    /// Turns where a model call failed and a fallback answered.
    pub degraded: usize,
    pub roa: f64,
    pub rra: f64,
    pub soa: f64,
    pub sra: f64,
    pub latency: LatencyStats,
}

/// Every assignment keeps its tier but points at `key`.
pub fn pinned_routing(base: &RoutingTable, key: &str) -> RoutingTable {
    let mut t = base.clone();
    for a in [
        &mut t.planning,
        &mut t.replier_selection,
        &mut t.specialized,
        &mut t.error_handling,
        &mut t.knowledge_enhanced,
    ] {
        a.endpoint_key = Some(key.into());
    }
    t.endpoints = [key.to_string()].into();
    t
}

pub fn run_bench(
    resources: &Resources,
    golden: &[GoldenSession],
    endpoints: &[String],
    threshold: u8,
) -> Result<Vec<BenchRow>, String> {
    let known: Vec<&str> = resources.backends.keys().collect();
    endpoints
        .iter()
        .map(|key| {
            if !known.contains(&key.as_str()) {
                return Err(format!("endpoint `{key}` is not configured (known: {})", known.join(", ")));
            }
            let routing = pinned_routing(&resources.routing, key);
            let assistant = resources.assistant_with(routing, Arc::new(resources.backends.clone()));
            let offline = Offline::new(Arc::new(assistant));
            let labeled = run_golden(&offline, golden)?;
            let report = compute_metrics(&labeled, threshold).map_err(|e| e.to_string())?;
            let samples = offline.latencies.lock().unwrap_or_else(|p| p.into_inner()).clone();
            let degraded = offline.degraded.load(Ordering::SeqCst);
            Ok(BenchRow {
                endpoint: key.clone(),
                turns: samples.len(),
                degraded,
                roa: report.roa,
                rra: report.rra,
                soa: report.soa,
                sra: report.sra,
                latency: LatencyStats::from_samples(&samples, degraded),
            })
        })
        .collect()
}

pub const BENCH_HEADER: &str =
    "| Endpoint | Turns | Degraded | ROA | RRA | SOA | SRA | Mean ms | p50 ms | p95 ms | Max ms |";

pub fn render_bench_table(rows: &[BenchRow]) -> String {
    let mut out = format!("{BENCH_HEADER}\n|---|---|---|---|---|---|---|---|---|---|---|\n");
    for r in rows {
        out.push_str(&format!(
            "| {} | {} | {} | {:.2}% | {:.2}% | {:.2}% | {:.2}% | {:.3} | {:.3} | {:.3} | {:.3} |\n",
            r.endpoint,
            r.turns,
            r.degraded,
            r.roa * 100.0,
            r.rra * 100.0,
            r.soa * 100.0,
            r.sra * 100.0,
            r.latency.mean_ms,
            r.latency.p50_ms,
            r.latency.p95_ms,
            r.latency.max_ms,
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pinning_routes_every_stage_to_one_key() {
        let t = pinned_routing(&RoutingTable::default(), "small");
        assert_eq!(t.required_keys().into_iter().collect::<Vec<_>>(), ["small"]);
        assert_eq!(t.endpoints.len(), 1);
    }

    #[test]
    fn table_has_one_row_per_endpoint() {
        let row = BenchRow {
            endpoint: "x".into(),
            turns: 2,
            degraded: 0,
            roa: 1.0,
            rra: 0.5,
            soa: 1.0,
            sra: 0.0,
            latency: LatencyStats::from_samples(&[], 0),
        };
        let t = render_bench_table(&[row.clone(), BenchRow { endpoint: "y".into(), ..row }]);
        let lines: Vec<&str> = t.lines().collect();
        assert_eq!(lines.len(), 4);
        assert!(lines[2].starts_with("| x | 2 | 0 | 100.00% | 50.00%"));
        assert!(lines.iter().all(|l| l.matches('|').count() == 12));
    }
}
