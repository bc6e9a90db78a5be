//! Exact steady-state quantities of the M/G/1 queue.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::service::{MomentVector, ServiceDistribution};

/// Highest order served by the moment recursions.
pub const MAX_RECURSION_ORDER: u32 = 10;

/// Threshold on the transform denominator below which the transform is refused.
const SINGULAR_TOL: f64 = 1e-13;

/// Poisson(λ) arrivals into a single FIFO server with the given service law.
///
/// `mu` is the rate of the exponential target; `rho = λ E[S]` and
/// `epsilon = 1 - rho` are derived on construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueueModel {
    pub lambda: f64,
    pub mu: f64,
    pub service: ServiceDistribution,
    pub rho: f64,
    pub epsilon: f64,
}

impl QueueModel {
    pub fn new(lambda: f64, mu: f64, service: ServiceDistribution) -> Result<Self> {
        if !(lambda.is_finite() && lambda > 0.0) {
            return Err(Error::Invalid(format!("arrival rate must be positive, got {lambda}")));
        }
        if !(mu.is_finite() && mu > 0.0) {
            return Err(Error::Invalid(format!("target rate must be positive, got {mu}")));
        }
        let rho = lambda * service.mean();
        if rho >= 1.0 {
            return Err(Error::UnstableQueue { rho });
        }
        Ok(QueueModel { lambda, mu, service, rho, epsilon: 1.0 - rho })
    }

    /// Model at slack `epsilon`: `λ = (1 - ε) / E[S]`, i.e. `μ(1 - ε)` for a mean-matched law.
    pub fn with_slack(mu: f64, epsilon: f64, service: ServiceDistribution) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon < 1.0) {
            return Err(Error::Domain(format!("slack must lie in (0, 1), got {epsilon}")));
        }
        // Keeps `epsilon = 1 - rho` exact for the rounded λ, so the recursions
        // stay self-consistent; it differs from the request by one rounding.
        Self::new((1.0 - epsilon) / service.mean(), mu, service)
    }

    /// M/M/1 with rates `lambda`, `mu`.
    pub fn mm1(lambda: f64, mu: f64) -> Result<Self> {
        Self::new(lambda, mu, ServiceDistribution::exponential(mu)?)
    }
}

/// Waiting and sojourn moments up to `order`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SteadyMoments {
    pub waiting: MomentVector,
    pub sojourn: MomentVector,
    pub order: u32,
}

fn binomial(n: u32, k: u32) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

fn check_order(n: u32) -> Result<()> {
    if n == 0 || n > MAX_RECURSION_ORDER {
        return Err(Error::OrderOutOfRange { order: n, min: 1, max: MAX_RECURSION_ORDER });
    }
    Ok(())
}

fn waiting_raw(model: &QueueModel, n: u32) -> Vec<f64> {
    let s = &model.service;
    let factor = model.lambda / model.epsilon;
    let mut w = vec![1.0];
    for k in 1..=n {
        let mut acc = 0.0;
        for i in 1..=k {
            acc += binomial(k, i) * s.moment(i + 1) / (i + 1) as f64 * w[(k - i) as usize];
        }
        w.push(factor * acc);
    }
    w
}

/// `E[W^1..=W^n]` from the Takács recursion.
pub fn waiting_moments(model: &QueueModel, n: u32) -> Result<MomentVector> {
    check_order(n)?;
    if model.rho >= 1.0 {
        return Err(Error::UnstableQueue { rho: model.rho });
    }
    MomentVector::new(waiting_raw(model, n)[1..].to_vec())
}

/// `E[D^1..=D^n]` with `D = W + S`, `W` independent of `S`.
pub fn sojourn_moments(model: &QueueModel, n: u32) -> Result<MomentVector> {
    check_order(n)?;
    if model.rho >= 1.0 {
        return Err(Error::UnstableQueue { rho: model.rho });
    }
    let w = waiting_raw(model, n);
    let d = (1..=n)
        .map(|k| (0..=k).map(|i| binomial(k, i) * w[i as usize] * model.service.moment(k - i)).sum())
        .collect();
    MomentVector::new(d)
}

pub fn steady_moments(model: &QueueModel, n: u32) -> Result<SteadyMoments> {
    Ok(SteadyMoments { waiting: waiting_moments(model, n)?, sojourn: sojourn_moments(model, n)?, order: n })
}

/// `E[(εD)^1..=(εD)^n]`.
pub fn scaled_sojourn_moments(model: &QueueModel, n: u32) -> Result<MomentVector> {
    Ok(sojourn_moments(model, n)?.scaled(model.epsilon))
}

/// Pollaczek–Khinchine sojourn transform `E[exp(-s D)]`.
///
/// The textbook form `ε s Ŝ / (s - λ + λ Ŝ)` is evaluated as
/// `ε Ŝ / (ε + λ s D₂(s))` with `D₂(s) = (E[S] - (1 - Ŝ)/s) / s`. This removes
/// the zero at `s = 0` analytically and avoids forming `1 - λ E[S] ≈ ε` by
/// subtraction. Valid wherever the service transform is, except near zeros
/// of the denominator.
pub fn pk_transform(model: &QueueModel, s: Complex64) -> Result<Complex64> {
    if s == Complex64::new(0.0, 0.0) {
        return Ok(Complex64::new(1.0, 0.0));
    }
    let hat = model.service.laplace(s)?;
    let denom = pk_denominator(model, s)?;
    Ok(model.epsilon * hat / denom)
}

fn pk_denominator(model: &QueueModel, s: Complex64) -> Result<Complex64> {
    let denom = model.epsilon + model.lambda * s * model.service.second_excess_transform(s)?;
    if denom.norm() < SINGULAR_TOL {
        return Err(Error::NearSingularDenominator { re: s.re, im: s.im });
    }
    Ok(denom)
}

/// `E[exp(-s D)] - εμ / (εμ + s)`, the transform gap to `D ~ Exp(εμ)`.
///
/// Written as `ε s G(s) / ((ε + λ s D₂)(εμ + s))` with
/// `G = 1 - (s + εμ) R - μ λ D₂`, so the two transforms are never subtracted.
/// `G` is expanded once more as `κ₀ + s ((s + εμ) D₂ + μ λ D₃ - E[S])` with
/// `κ₀ = (1 - μ E[S]) + λ μ (E[S]² - E[S²]/2)`, which vanishes exactly when the
/// first two moments match `Exp(μ)`.
pub fn pk_transform_gap(model: &QueueModel, s: Complex64) -> Result<Complex64> {
    let eps = model.epsilon;
    let mu = model.mu;
    let lam = model.lambda;
    let denom = pk_denominator(model, s)?;
    let d2 = model.service.second_excess_transform(s)?;
    let d3 = model.service.third_excess_transform(s)?;
    let m1 = model.service.mean();
    let kappa0 = (1.0 - mu * m1) + lam * mu * (m1 * m1 - 0.5 * model.service.moment(2));
    let g = kappa0 + s * ((s + eps * mu) * d2 + mu * lam * d3 - m1);
    Ok(eps * s * g / (denom * (eps * mu + s)))
}

/// Phase of the trigonometric test function.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Cos,
    Sin,
}

impl Phase {
    pub fn radians(self) -> f64 {
        match self {
            Phase::Cos => 0.0,
            Phase::Sin => std::f64::consts::FRAC_PI_2,
        }
    }

    pub fn unit(self) -> Complex64 {
        match self {
            Phase::Cos => Complex64::new(1.0, 0.0),
            Phase::Sin => Complex64::new(0.0, 1.0),
        }
    }
}

/// `E[h(X)]` for `h(x) = ω^-k cos(ωx + phase)`, for the queue and for `Z ~ Exp(μ)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmoothFunctional {
    pub queue: f64,
    pub target: f64,
    /// `queue - target`, computed from the transform difference directly.
    pub difference: f64,
}

/// Evaluates `E[h(εD)]` (or `E[h(D)]` when `scaled` is false) through the
/// transform at `s = -iωε`, alongside `E[h(Z)]`.
pub fn smooth_functional(model: &QueueModel, omega: f64, phase: Phase, k: u32, scaled: bool) -> Result<SmoothFunctional> {
    if !(omega.is_finite() && omega > 0.0) {
        return Err(Error::Domain(format!("frequency must be positive, got {omega}")));
    }
    let scale = if scaled { model.epsilon } else { 1.0 };
    let s = Complex64::new(0.0, -omega * scale);
    let f = pk_transform(model, s)?;
    let t = model.mu / Complex64::new(model.mu, -omega);
    let amp = omega.powi(-(k as i32));
    let e = phase.unit();
    let difference = if scaled {
        amp * (e * pk_transform_gap(model, s)?).re
    } else {
        amp * (e * (f - t)).re
    };
    Ok(SmoothFunctional { queue: amp * (e * f).re, target: amp * (e * t).re, difference })
}

/// `(E[e^{-λD}], E[D e^{-λD}], E[D² e^{-λD}])` in closed form.
pub fn transform_derivatives_at_lambda(model: &QueueModel) -> Result<(f64, f64, f64)> {
    let lam = model.lambda;
    let s = Complex64::new(lam, 0.0);
    let hat = model.service.laplace(s)?.re;
    let hat_d = model.service.laplace_derivative(s)?.re;
    let eps = model.epsilon;
    let first = eps * (1.0 - hat) / (lam * hat);
    let second = eps * 2.0 * (1.0 - hat + lam * hat_d) / (lam * hat).powi(2);
    Ok((eps, first, second))
}

/// Overshoot `U = (X - D)^+` of an interarrival time over the previous sojourn:
/// returns `(E[U], E[U²], E[U³], P(U = 0))`.
pub fn overshoot_moments(model: &QueueModel) -> (f64, f64, f64, f64) {
    let lam = model.lambda;
    let delta = 1.0 / lam - model.service.mean();
    (delta, 2.0 * delta / lam, 6.0 * delta / (lam * lam), model.rho)
}
