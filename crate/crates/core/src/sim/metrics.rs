//! Run metrics and their text rendering.

use super::network::{millis, Micros};
use super::Strategy;
use serde::{Deserialize, Serialize};
use std::fmt;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LatencySummary {
    pub count: usize,
    pub mean_ms: f64,
    pub p50_ms: f64,
    pub p90_ms: f64,
    pub p99_ms: f64,
    pub max_ms: f64,
}

impl LatencySummary {
    pub fn from_samples(mut samples: Vec<Micros>) -> Self {
        if samples.is_empty() {
            return LatencySummary::default();
        }
        samples.sort_unstable();
        let n = samples.len();
        // Nearest-rank percentile.
        let pct = |p: f64| millis(samples[((p * n as f64).ceil() as usize).clamp(1, n) - 1]);
        LatencySummary {
            count: n,
            mean_ms: millis(samples.iter().sum::<u64>()) / n as f64,
            p50_ms: pct(0.50),
            p90_ms: pct(0.90),
            p99_ms: pct(0.99),
            max_ms: millis(samples[n - 1]),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub strategy: Strategy,
    pub attempts: u64,
    pub committed: u64,
    pub aborted: u64,
    /// Commits within the configured duration per simulated second.
    pub throughput: f64,
    pub latency: LatencySummary,
    pub messages_sent: u64,
    pub messages_dropped: u64,
    /// Total time transactions spent waiting on other sites (locks, remote
    /// sequence allocation, two-phase commit).
    pub coordination_stall_ms: f64,
    /// Whether all replicas held equal states when the run ended, before
    /// healing and draining.
    pub converged_at_end: bool,
    /// Per replica: equal to every other replica after the drain.
    pub converged: Vec<bool>,
    /// Replica states observed invalid after an event.
    pub violations: u64,
    pub first_violation: Option<String>,
    /// Lock-protected runs: whether the committed history is conflict
    /// equivalent to its commit order.
    pub serializable: Option<bool>,
    pub events: u64,
    pub simulated_ms: f64,
}

impl Metrics {
    pub(crate) fn new(strategy: Strategy, replicas: usize) -> Self {
        Metrics {
            strategy,
            attempts: 0,
            committed: 0,
            aborted: 0,
            throughput: 0.0,
            latency: LatencySummary::default(),
            messages_sent: 0,
            messages_dropped: 0,
            coordination_stall_ms: 0.0,
            converged_at_end: true,
            converged: vec![true; replicas],
            violations: 0,
            first_violation: None,
            serializable: None,
            events: 0,
            simulated_ms: 0.0,
        }
    }

    pub fn all_converged(&self) -> bool {
        self.converged.iter().all(|&c| c)
    }
}

impl fmt::Display for Metrics {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let rows: Vec<(&str, String)> = vec![
            ("strategy", self.strategy.to_string()),
            ("attempts", self.attempts.to_string()),
            ("committed", self.committed.to_string()),
            ("aborted", self.aborted.to_string()),
            ("throughput (txn/s)", format!("{:.1}", self.throughput)),
            (
                "latency ms (mean/p50/p99/max)",
                format!(
                    "{:.3} / {:.3} / {:.3} / {:.3}",
                    self.latency.mean_ms, self.latency.p50_ms, self.latency.p99_ms, self.latency.max_ms
                ),
            ),
            (
                "messages (sent/dropped)",
                format!("{} / {}", self.messages_sent, self.messages_dropped),
            ),
            ("coordination stall (ms)", format!("{:.3}", self.coordination_stall_ms)),
            ("converged at end", self.converged_at_end.to_string()),
            ("converged after drain", self.all_converged().to_string()),
            ("invariant violations", self.violations.to_string()),
        ];
        for (k, v) in rows {
            writeln!(f, "{k:<32}{v}")?;
        }
        if let Some(s) = self.serializable {
            writeln!(f, "{:<32}{s}", "serializable")?;
        }
        if let Some(w) = &self.first_violation {
            writeln!(f, "{:<32}{w}", "first violation")?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn percentiles_use_nearest_rank() {
        let s = LatencySummary::from_samples((1..=100).map(|ms| ms * 1000).collect());
        assert_eq!(s.count, 100);
        assert_eq!((s.p50_ms, s.p90_ms, s.p99_ms, s.max_ms), (50.0, 90.0, 99.0, 100.0));
        assert!((s.mean_ms - 50.5).abs() < 1e-9);
        assert_eq!(LatencySummary::from_samples(Vec::new()), LatencySummary::default());
    }

    #[test]
    fn convergence_requires_every_replica() {
        let mut m = Metrics::new(Strategy::CoordinationFree, 3);
        assert!(m.all_converged());
        m.converged[2] = false;
        assert!(!m.all_converged());
    }
}
