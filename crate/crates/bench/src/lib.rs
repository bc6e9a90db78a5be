//! Shared fixtures for the benchmarks.

use mg1lab::{match_exponential_moments, MatchFamily, QueueModel, ServiceDistribution, SimConfig};

/// Preset match of the first `m` moments of `Exp(1)`.
pub fn matched(m: u32) -> ServiceDistribution {
    match_exponential_moments(1.0, m, &MatchFamily::preset(m)).expect("preset match").distribution
}

/// Heavy-traffic model with matched service at slack `epsilon`.
pub fn matched_model(m: u32, epsilon: f64) -> QueueModel {
    QueueModel::with_slack(1.0, epsilon, matched(m)).expect("stable model")
}

/// Small simulation config: `samples` per replication, 4 replications.
pub fn small_run(model: QueueModel, samples: u64) -> SimConfig {
    SimConfig::new(model, samples, 4, 1)
}
