//! Distances between the scaled sojourn time `εD` and `Exp(μ)`.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::queue::{scaled_sojourn_moments, smooth_functional, Phase, QueueModel};
use crate::service::log_space;
use crate::simulate::{Estimate, SampleBatch, BATCHES_PER_REPLICATION};

/// Minimum sample size for empirical distances.
pub const MIN_DISTANCE_SAMPLES: usize = 10_000;

/// Moment gaps above this mean the first moments are not aligned.
pub const DIVERGENCE_TOL: f64 = 1e-8;

/// Orders reported in the `gap_j` columns.
pub const GAP_ORDERS: u32 = 6;

fn exp_quantile(u: f64, mu: f64) -> f64 {
    -(-u).ln_1p() / mu
}

/// `(mean |x_(i) - q_i|^k)^(1/k)` with `q_i` the `Exp(mu)` quantile at `(i - 0.5)/n`.
fn quantile_coupling(values: &mut [f64], k: u32, mu: f64) -> f64 {
    values.sort_unstable_by(f64::total_cmp);
    let n = values.len() as f64;
    let sum: f64 = values
        .iter()
        .enumerate()
        .map(|(i, &x)| (x - exp_quantile((i as f64 + 0.5) / n, mu)).abs().powi(k as i32))
        .sum();
    (sum / n).powf(1.0 / k as f64)
}

fn spread_se(estimates: &[f64]) -> f64 {
    let n = estimates.len() as f64;
    let mean = estimates.iter().sum::<f64>() / n;
    let var = estimates.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (var / n).sqrt()
}

/// Empirical Wasserstein-`k` distance between `epsilon * D` and `Exp(mu)` by
/// quantile coupling on the pooled sample.
///
/// The standard error is the spread of the per-replication estimates, or of
/// 20 contiguous batches when there is a single replication.
pub fn wasserstein_empirical(batch: &SampleBatch, k: u32, mu: f64, epsilon: f64) -> Result<Estimate> {
    if batch.len() < MIN_DISTANCE_SAMPLES {
        return Err(Error::InsufficientSamples { have: batch.len(), need: MIN_DISTANCE_SAMPLES });
    }
    if k == 0 {
        return Err(Error::OrderOutOfRange { order: k, min: 1, max: u32::MAX });
    }
    let scaled: Vec<f64> = batch.sojourn.iter().map(|d| epsilon * d).collect();
    let groups: Vec<std::ops::Range<usize>> = if batch.replications() >= 2 {
        batch.replication_ranges()
    } else {
        let len = batch.len() / BATCHES_PER_REPLICATION;
        (0..BATCHES_PER_REPLICATION).map(|b| b * len..(b + 1) * len).collect()
    };
    let parts: Vec<f64> = groups
        .par_iter()
        .map(|r| quantile_coupling(&mut scaled[r.clone()].to_vec(), k, mu))
        .collect();
    let mut pooled = scaled;
    let mean = quantile_coupling(&mut pooled, k, mu);
    Ok(Estimate { mean, se: spread_se(&parts) })
}

/// Default dictionary frequencies: 64 log-spaced points in `[0.05, 20]`.
pub fn default_omega_grid() -> Vec<f64> {
    log_space(0.05, 20.0, 64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZolotarevLowerBound {
    pub value: f64,
    pub omega: f64,
    pub phase: Phase,
    /// Grid points where the transform was numerically singular.
    pub skipped: Vec<(f64, Phase)>,
}

/// `max |E[h(εD)] - E[h(Z)]|` over `h = ω^-k cos(ωx + phase)` for `ω` on the
/// grid and both phases. Every `h` has `|h^(k)| <= 1`, so this is a lower
/// bound on the Zolotarev-`k` distance.
pub fn zolotarev_lower_bound(model: &QueueModel, k: u32, omega_grid: &[f64]) -> Result<ZolotarevLowerBound> {
    if omega_grid.is_empty() {
        return Err(Error::Invalid("empty frequency grid".into()));
    }
    let points: Vec<(f64, Phase)> = omega_grid
        .iter()
        .flat_map(|&w| [(w, Phase::Cos), (w, Phase::Sin)])
        .collect();
    let evaluated: Vec<Result<f64>> = points
        .par_iter()
        .map(|&(w, p)| smooth_functional(model, w, p, k, true).map(|f| f.difference.abs()))
        .collect();

    let mut best: Option<(f64, f64, Phase)> = None;
    let mut skipped = Vec::new();
    for (&(w, p), r) in points.iter().zip(evaluated) {
        match r {
            Ok(v) => {
                if best.map_or(true, |b| v > b.0) {
                    best = Some((v, w, p));
                }
            }
            Err(Error::NearSingularDenominator { .. }) => skipped.push((w, p)),
            Err(e) => return Err(e),
        }
    }
    let (value, omega, phase) =
        best.ok_or_else(|| Error::NearSingularDenominator { re: 0.0, im: -omega_grid[0] * model.epsilon })?;
    Ok(ZolotarevLowerBound { value, omega, phase, skipped })
}

fn factorial(j: u32) -> f64 {
    (1..=j).map(f64::from).product()
}

/// `|E[(εD)^j] - j!/μ^j|` from the exact recursions.
pub fn moment_gap(model: &QueueModel, j: u32) -> Result<f64> {
    let m = scaled_sojourn_moments(model, j)?;
    Ok((m.get(j as usize) - factorial(j) / model.mu.powi(j as i32)).abs())
}

/// Gaps for orders `1..=n`.
pub fn moment_gaps(model: &QueueModel, n: u32) -> Result<Vec<f64>> {
    let m = scaled_sojourn_moments(model, n)?;
    Ok((1..=n)
        .map(|j| (m.get(j as usize) - factorial(j) / model.mu.powi(j as i32)).abs())
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Divergence {
    Finite,
    Infinite,
}

/// The Zolotarev-`k` distance is infinite unless moments `1..k-1` of `εD`
/// agree with those of `Exp(μ)`.
pub fn divergence_check(model: &QueueModel, k: u32) -> Result<Divergence> {
    if k < 2 {
        return Ok(Divergence::Finite);
    }
    let worst = moment_gaps(model, k - 1)?.into_iter().fold(0.0, f64::max);
    Ok(if worst > DIVERGENCE_TOL { Divergence::Infinite } else { Divergence::Finite })
}

/// One `(ε, k)` row of a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceReport {
    pub epsilon: f64,
    pub k: u32,
    pub wasserstein: Option<Estimate>,
    pub zolotarev_lower: ZolotarevLowerBound,
    /// `|E[(εD)^j] - j!/μ^j|` for `j = 1..=6`.
    pub moment_gaps: Vec<f64>,
    pub divergence: Divergence,
}

pub const CSV_HEADER: &str =
    "epsilon,k,w_est,w_se,zol_lb,zol_lb_omega,zol_lb_phase,gap_1,gap_2,gap_3,gap_4,gap_5,gap_6,divergent";

impl DistanceReport {
    pub fn csv_row(&self) -> String {
        let mut row = String::new();
        let (w, se) = match self.wasserstein {
            Some(e) => (e.mean.to_string(), e.se.to_string()),
            None => (String::new(), String::new()),
        };
        let phase = match self.zolotarev_lower.phase {
            Phase::Cos => "cos",
            Phase::Sin => "sin",
        };
        write!(
            row,
            "{},{},{w},{se},{},{},{phase}",
            self.epsilon, self.k, self.zolotarev_lower.value, self.zolotarev_lower.omega
        )
        .expect("writing to a String");
        for g in &self.moment_gaps {
            write!(row, ",{g}").expect("writing to a String");
        }
        write!(row, ",{}", self.divergence == Divergence::Infinite).expect("writing to a String");
        row
    }
}

/// Exact part of a report (no Monte Carlo).
pub fn exact_report(model: &QueueModel, k: u32, omega_grid: &[f64]) -> Result<DistanceReport> {
    Ok(DistanceReport {
        epsilon: model.epsilon,
        k,
        wasserstein: None,
        zolotarev_lower: zolotarev_lower_bound(model, k, omega_grid)?,
        moment_gaps: moment_gaps(model, GAP_ORDERS)?,
        divergence: divergence_check(model, k)?,
    })
}

/// Kolmogorov–Smirnov test of `samples` against `Exp(rate)`: `(D_n, p-value)`,
/// with the asymptotic Kolmogorov law and the usual small-sample correction.
pub fn ks_exponential(samples: &[f64], rate: f64) -> (f64, f64) {
    let mut xs = samples.to_vec();
    xs.sort_unstable_by(f64::total_cmp);
    let n = xs.len() as f64;
    let d = xs
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let cdf = -(-rate * x).exp_m1();
            (cdf - i as f64 / n).max((i as f64 + 1.0) / n - cdf)
        })
        .fold(0.0, f64::max);
    let t = (n.sqrt() + 0.12 + 0.11 / n.sqrt()) * d;
    let p = if t < 0.2 {
        1.0
    } else {
        let sum: f64 = (1..=100)
            .map(|j| {
                let j = j as f64;
                let sign = if j as u64 % 2 == 1 { 1.0 } else { -1.0 };
                sign * (-2.0 * j * j * t * t).exp()
            })
            .sum();
        (2.0 * sum).clamp(0.0, 1.0)
    };
    (d, p)
}
