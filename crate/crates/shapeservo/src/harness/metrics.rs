//! Multi-seed comparison of control methods.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::harness::runner::{run, Method, RunResult};
use crate::harness::scenario::Scenario;

#[derive(Debug, Clone, Copy, Serialize)]
pub struct SummaryStats {
    pub median: f64,
    pub q25: f64,
    pub q75: f64,
    pub iqr: f64,
}

impl SummaryStats {
    fn from_values(values: &[f64]) -> Self {
        let mut sorted = values.to_vec();
        sorted.sort_by(|a, b| a.partial_cmp(b).expect("metrics are ordered"));
        let q25 = quantile(&sorted, 0.25);
        let q75 = quantile(&sorted, 0.75);
        SummaryStats { median: quantile(&sorted, 0.5), q25, q75, iqr: q75 - q25 }
    }
}

/// Linear-interpolation quantile over a sorted slice.
fn quantile(sorted: &[f64], p: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    if sorted.len() == 1 {
        return sorted[0];
    }
    let pos = p * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] * (1.0 - frac) + sorted[hi] * frac
}

#[derive(Debug, Clone, Serialize)]
pub struct MethodStats {
    pub method: Method,
    pub runs: usize,
    pub successes: usize,
    pub success_rate: f64,
    pub steady_state_error: SummaryStats,
    pub convergence_time: SummaryStats,
    pub total_violations: usize,
    pub failures: Vec<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ComparisonSummary {
    pub scenario: String,
    pub seeds: Vec<u64>,
    pub success_threshold: f64,
    /// Success definition recorded alongside the numbers: final max error
    /// at or below the threshold and zero boundary violations.
    pub success_definition: String,
    pub methods: Vec<MethodStats>,
}

impl ComparisonSummary {
    pub fn stats_for(&self, method: Method) -> Option<&MethodStats> {
        self.methods.iter().find(|m| m.method == method)
    }
}

/// Runs every (method, seed) combination — in parallel, each run fully
/// isolated — and aggregates per-method statistics. Results are sorted by
/// (method, seed) before aggregation so the summary does not depend on
/// scheduling.
pub fn compare(scenario: &Scenario, methods: &[Method], seeds: &[u64]) -> Result<ComparisonSummary> {
    if methods.is_empty() {
        return Err(Error::Config("compare needs at least one method".into()));
    }
    if seeds.is_empty() {
        return Err(Error::Config("compare needs at least one seed".into()));
    }
    scenario.validate()?;

    let grid: Vec<(usize, u64)> = methods
        .iter()
        .enumerate()
        .flat_map(|(mi, _)| seeds.iter().map(move |&s| (mi, s)))
        .collect();
    let mut results: Vec<(usize, RunResult)> = grid
        .par_iter()
        .map(|&(mi, seed)| run(scenario, methods[mi], seed).map(|r| (mi, r)))
        .collect::<Result<Vec<_>>>()?;
    results.sort_by_key(|(mi, r)| (*mi, r.seed));

    let mut stats = Vec::with_capacity(methods.len());
    for (mi, &method) in methods.iter().enumerate() {
        let rs: Vec<&RunResult> = results.iter().filter(|(i, _)| *i == mi).map(|(_, r)| r).collect();
        let successes = rs.iter().filter(|r| r.success).count();
        let sse: Vec<f64> = rs.iter().map(|r| r.steady_state_error).collect();
        let ct: Vec<f64> = rs.iter().map(|r| r.convergence_time).collect();
        stats.push(MethodStats {
            method,
            runs: rs.len(),
            successes,
            success_rate: successes as f64 / rs.len() as f64,
            steady_state_error: SummaryStats::from_values(&sse),
            convergence_time: SummaryStats::from_values(&ct),
            total_violations: rs.iter().map(|r| r.violation_count).sum(),
            failures: rs.iter().filter_map(|r| r.failure.clone()).collect(),
        });
    }

    Ok(ComparisonSummary {
        scenario: scenario.name.clone(),
        seeds: seeds.to_vec(),
        success_threshold: scenario.success_threshold(),
        success_definition: format!(
            "final max|e| <= {:.6} (factor {} of max mu_inf) and zero boundary violations",
            scenario.success_threshold(),
            scenario.success_threshold_factor
        ),
        methods: stats,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantiles_interpolate() {
        let sorted = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile(&sorted, 0.5), 2.5);
        assert_eq!(quantile(&sorted, 0.0), 1.0);
        assert_eq!(quantile(&sorted, 1.0), 4.0);
        assert_eq!(quantile(&[7.0], 0.5), 7.0);
    }

    #[test]
    fn identical_method_entries_produce_identical_statistics() {
        let mut scenario = Scenario::preset("task_a").unwrap().unwrap();
        scenario.stages[0].duration = 2.0;
        let summary = compare(&scenario, &[Method::PpcRbf, Method::PpcRbf], &[1, 2]).unwrap();
        assert_eq!(summary.methods.len(), 2);
        let a = &summary.methods[0];
        let b = &summary.methods[1];
        assert_eq!(a.steady_state_error.median.to_bits(), b.steady_state_error.median.to_bits());
        assert_eq!(a.convergence_time.median.to_bits(), b.convergence_time.median.to_bits());
        assert_eq!(a.success_rate, b.success_rate);
    }

    #[test]
    fn single_method_summary_is_degenerate_but_valid() {
        let mut scenario = Scenario::preset("task_a").unwrap().unwrap();
        scenario.stages[0].duration = 2.0;
        let summary = compare(&scenario, &[Method::BaselineRbf], &[5]).unwrap();
        assert_eq!(summary.methods.len(), 1);
        assert_eq!(summary.methods[0].runs, 1);
    }
}
