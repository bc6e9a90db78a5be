//! Explicit constants of the error bounds: the `(b, d)` series, `C₁`, `C₂`,
//! the Wasserstein and moment corollaries, and `M', M'', M`.

use std::collections::HashMap;
use std::sync::{Mutex, OnceLock};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature::integrate_panels;
use crate::queue::QueueModel;
use crate::service::ServiceDistribution;

pub const MIN_SERIES_ORDER: u32 = 2;
pub const MAX_SERIES_ORDER: u32 = 12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BdEntry {
    pub b: f64,
    pub d: u32,
}

/// `(b_{k,j}, d_{k,j})`, `j = 1..=2^(k-1)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BdSeries {
    pub order_k: u32,
    pub entries: Vec<BdEntry>,
}

impl BdSeries {
    /// `Σ_j b_{k,j} E[S^{d_{k,j}}]`.
    pub fn weighted_moment_sum(&self, service: &ServiceDistribution) -> f64 {
        self.entries.iter().map(|e| e.b * service.moment(e.d)).sum()
    }
}

/// How the block inherited from order `k-1` is scaled.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum LastBlock {
    /// Divide by `μ`, as the last construction step states.
    FinalStep,
    /// Divide by `μ^(k-r+2)` at `r = k`, i.e. by `μ²`.
    InheritanceRule,
}

fn build_series(k: u32, lambda: f64, mu: f64, last: LastBlock) -> Vec<BdEntry> {
    if k == 2 {
        return vec![BdEntry { b: lambda / 6.0, d: 3 }, BdEntry { b: mu * lambda / 24.0, d: 4 }];
    }
    let factorial: f64 = (1..=k + 2).map(f64::from).product();
    let mut entries = vec![
        BdEntry { b: lambda / factorial, d: k + 2 },
        BdEntry { b: lambda / (6.0 * mu.powi(k as i32 - 1)), d: 3 },
    ];
    for r in 3..k {
        let scale = mu.powi((k - r + 2) as i32);
        entries.extend(build_series(r - 1, lambda, mu, last).into_iter().map(|e| BdEntry { b: e.b / scale, d: e.d }));
    }
    let scale = match last {
        LastBlock::FinalStep => mu,
        LastBlock::InheritanceRule => mu * mu,
    };
    entries.extend(build_series(k - 1, lambda, mu, last).into_iter().map(|e| BdEntry { b: e.b / scale, d: e.d }));
    entries
}

fn check_series_args(k: u32, lambda: f64, mu: f64) -> Result<()> {
    if !(MIN_SERIES_ORDER..=MAX_SERIES_ORDER).contains(&k) {
        return Err(Error::OrderOutOfRange { order: k, min: MIN_SERIES_ORDER, max: MAX_SERIES_ORDER });
    }
    if !(lambda.is_finite() && lambda > 0.0 && mu.is_finite() && mu > 0.0) {
        return Err(Error::Domain(format!("rates must be positive, got lambda={lambda}, mu={mu}")));
    }
    Ok(())
}

type SeriesKey = (u32, u64, u64);

fn series_cache() -> &'static Mutex<HashMap<SeriesKey, Vec<BdEntry>>> {
    static CACHE: OnceLock<Mutex<HashMap<SeriesKey, Vec<BdEntry>>>> = OnceLock::new();
    CACHE.get_or_init(|| Mutex::new(HashMap::new()))
}

/// The `(b, d)` series for `2 <= k <= 12`, memoized per `(k, λ, μ)`.
///
/// Order 2 is seeded with `(λ/6, 3), (μλ/24, 4)`. For `k >= 3` the entries
/// are `(λ/(k+2)!, k+2)`, `(λ/(6μ^(k-1)), 3)`, then for `r = 3..k-1` the
/// order-`(r-1)` series divided by `μ^(k-r+2)`, and finally the
/// order-`(k-1)` series divided by `μ`.
pub fn bd_series(k: u32, lambda: f64, mu: f64) -> Result<BdSeries> {
    check_series_args(k, lambda, mu)?;
    let key = (k, lambda.to_bits(), mu.to_bits());
    if let Some(hit) = series_cache().lock().expect("cache poisoned").get(&key) {
        return Ok(BdSeries { order_k: k, entries: hit.clone() });
    }
    // Built outside the lock; concurrent writers insert identical values.
    let entries = build_series(k, lambda, mu, LastBlock::FinalStep);
    series_cache().lock().expect("cache poisoned").insert(key, entries.clone());
    Ok(BdSeries { order_k: k, entries })
}

/// Same series without touching the cache.
pub fn bd_series_uncached(k: u32, lambda: f64, mu: f64) -> Result<BdSeries> {
    check_series_args(k, lambda, mu)?;
    Ok(BdSeries { order_k: k, entries: build_series(k, lambda, mu, LastBlock::FinalStep) })
}

/// The series under the alternative reading in which the block inherited
/// from order `k-1` follows the general `μ^(k-r+2)` rule at `r = k`.
pub fn bd_series_inheritance_reading(k: u32, lambda: f64, mu: f64) -> Result<BdSeries> {
    check_series_args(k, lambda, mu)?;
    Ok(BdSeries { order_k: k, entries: build_series(k, lambda, mu, LastBlock::InheritanceRule) })
}

/// Whether the two readings of the last block give different series.
pub fn series_readings_disagree(k: u32, lambda: f64, mu: f64) -> Result<bool> {
    Ok(bd_series(k, lambda, mu)? != bd_series_inheritance_reading(k, lambda, mu)?)
}

const C1_GRID: usize = 4000;

fn c1_integrand(service: &ServiceDistribution, mu: f64, k: u32) -> impl Fn(f64) -> f64 + '_ {
    move |y: f64| y.powi(k as i32) * (service.density_derivative(y) + mu * service.density(y))
}

/// Smallest `L` (on a geometric ladder) beyond which the integrand envelope
/// `y^k Σ w (θ + μ) g_b(y)` stays below `1e-16`.
fn c1_horizon(service: &ServiceDistribution, mu: f64, k: u32) -> f64 {
    let envelope = |y: f64| {
        y.powi(k as i32)
            * service
                .branches()
                .iter()
                .map(|b| b.weight * (b.rate + mu) * ServiceDistribution::erlang(b.shape, b.rate).map_or(0.0, |e| e.density(y)))
                .sum::<f64>()
    };
    let slowest = service
        .branches()
        .iter()
        .map(|b| (k + b.shape) as f64 / b.rate)
        .fold(0.0, f64::max);
    let mut horizon = 2.0 * slowest.max(1.0 / service.min_rate());
    while envelope(horizon) > 1e-16 && horizon < 1e6 {
        horizon *= 1.25;
    }
    horizon
}

fn sign_change_breakpoints<F: Fn(f64) -> f64>(f: &F, horizon: f64) -> Vec<f64> {
    let mut points = vec![0.0];
    let step = horizon / C1_GRID as f64;
    let mut prev = f(0.0);
    for i in 1..=C1_GRID {
        let y = step * i as f64;
        let cur = f(y);
        if prev != 0.0 && cur != 0.0 && prev.signum() != cur.signum() {
            let (mut lo, mut hi) = (y - step, y);
            let lo_sign = prev.signum();
            for _ in 0..80 {
                let mid = 0.5 * (lo + hi);
                if f(mid).signum() == lo_sign {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            points.push(0.5 * (lo + hi));
        }
        if cur != 0.0 {
            prev = cur;
        }
    }
    points.push(horizon);
    points
}

fn c1_on(service: &ServiceDistribution, mu: f64, k: u32, horizon: f64) -> Result<f64> {
    let f = c1_integrand(service, mu, k);
    let breaks = sign_change_breakpoints(&f, horizon);
    Ok(integrate_panels(|y| f(y).abs(), &breaks, 1e-15, 1e-12)?.value)
}

/// `C₁ = ∫₀^∞ |y^k (g'(y) + μ g(y))| dy`.
///
/// Adaptive Gauss–Kronrod on panels split at the sign changes of the
/// integrand, truncated at the envelope horizon and checked by doubling it.
pub fn c1_constant(service: &ServiceDistribution, mu: f64, k: u32) -> Result<f64> {
    if !(mu.is_finite() && mu > 0.0) {
        return Err(Error::Domain(format!("target rate must be positive, got {mu}")));
    }
    let horizon = c1_horizon(service, mu, k);
    let value = c1_on(service, mu, k, horizon)?;
    let doubled = c1_on(service, mu, k, 2.0 * horizon)?;
    if (doubled - value).abs() > 1e-7 * doubled.abs() + 1e-15 {
        return Err(Error::QuadratureNonConvergent(format!(
            "C1 moved from {value} to {doubled} when the horizon doubled to {}",
            2.0 * horizon
        )));
    }
    Ok(doubled)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundConstants {
    pub order_k: u32,
    pub lambda: f64,
    pub mu: f64,
    pub c1: f64,
    /// `2 Σ_j b_{k,j} E[S^{d_{k,j}}]`.
    pub series_term: f64,
    pub c2: f64,
    pub series: BdSeries,
}

/// `C₂ = C₁/(μ k!) + 2 Σ_j b_{k,j} E[S^{d_{k,j}}]`.
pub fn c2_constant(model: &QueueModel, k: u32) -> Result<BoundConstants> {
    let series = bd_series(k, model.lambda, model.mu)?;
    let c1 = c1_constant(&model.service, model.mu, k)?;
    let factorial: f64 = (1..=k).map(f64::from).product();
    let series_term = 2.0 * series.weighted_moment_sum(&model.service);
    Ok(BoundConstants {
        order_k: k,
        lambda: model.lambda,
        mu: model.mu,
        c1,
        series_term,
        c2: c1 / (model.mu * factorial) + series_term,
        series,
    })
}

/// Wasserstein-`k` bound `2 (2^(k-2) k C₂)^(1/k) ε`.
pub fn cor2_wasserstein_bound(constants: &BoundConstants, epsilon: f64) -> f64 {
    let k = constants.order_k as f64;
    2.0 * (2f64.powf(k - 2.0) * k * constants.c2).powf(1.0 / k) * epsilon
}

/// Moment bound `C₂ k! ε^k` on `|E[(εD)^k] - k!/μ^k|`.
pub fn cor3_moment_bound(constants: &BoundConstants, epsilon: f64) -> f64 {
    let factorial: f64 = (1..=constants.order_k).map(f64::from).product();
    constants.c2 * factorial * epsilon.powi(constants.order_k as i32)
}

/// Wasserstein-`k` distance implied by a Zolotarev-`k` distance `d_zol`.
pub fn wasserstein_from_zolotarev(d_zol: f64, k: u32) -> f64 {
    let k = k as f64;
    2.0 * (2f64.powf(k - 2.0) * k * d_zol).powf(1.0 / k)
}

/// Checks `d_W <= 2 (2^(k-2) k d_zol)^(1/k) + slack`. Without aligned first
/// `k-1` moments the Zolotarev distance is infinite and the check is vacuous.
pub fn zol_wasserstein_inequality_check(d_zol: f64, d_w: f64, k: u32, moments_aligned: bool, slack: f64) -> bool {
    !moments_aligned || d_w <= wasserstein_from_zolotarev(d_zol, k) + slack
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AltConstants {
    pub m_prime: f64,
    pub m_double_prime: f64,
    pub m_total: f64,
    /// `(24e² + 18e + 2112)/μ² + (2/3) μ² E[S⁴]`.
    pub envelope: f64,
    /// `(E[e^{-λS}], E[S e^{-λS}], E[S⁴])`.
    pub ingredients: (f64, f64, f64),
}

impl AltConstants {
    pub fn within_envelope(&self) -> bool {
        self.m_total <= self.envelope
    }
}

pub fn alt_constants(model: &QueueModel) -> Result<AltConstants> {
    let (lam, mu) = (model.lambda, model.mu);
    let s = Complex64::new(lam, 0.0);
    let hat = model.service.laplace(s)?.re;
    let tilted = -model.service.laplace_derivative(s)?.re;
    let s4 = model.service.moment(4);
    let m_prime = 6.0 * (1.0 - hat - lam * tilted) / (lam * lam * hat * hat)
        + 2.0 / (lam * mu)
        + 4.0 * (1.0 - hat) / (lam * lam * hat)
        + (1.0 - hat) / (lam * mu * hat)
        + 14.0 / (lam * lam)
        + 4.0 / (mu * mu);
    let m_double_prime = (8.0 / 24.0) * (s4 + 16.0 * 24.0 / lam.powi(4));
    let e = std::f64::consts::E;
    Ok(AltConstants {
        m_prime,
        m_double_prime,
        m_total: m_prime + 2.0 * m_double_prime * lam * mu,
        envelope: (24.0 * e * e + 18.0 * e + 2112.0) / (mu * mu) + (2.0 / 3.0) * mu * mu * s4,
        ingredients: (hat, tilted, s4),
    })
}

/// Jensen floor `E[e^{-λS}] >= e^{-λ E[S]}`.
pub fn jensen_floor_holds(service: &ServiceDistribution, lambda: f64) -> Result<bool> {
    let hat = service.laplace(Complex64::new(lambda, 0.0))?.re;
    Ok(hat >= (-lambda * service.mean()).exp() * (1.0 - 1e-15))
}
