//! Stein equation for the exponential target and the generator of the
//! scaled waiting-time process.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature::GaussLaguerre;
use crate::queue::{Phase, QueueModel};
use crate::simulate::{batch_means, Estimate, SampleBatch};

/// `h(x) = ω^-k cos(ωx + phase)`; `h^(k)` has unit sup norm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestFunction {
    pub omega: f64,
    pub phase: Phase,
    pub order_k: u32,
}

impl TestFunction {
    pub fn new(omega: f64, phase: Phase, order_k: u32) -> Result<Self> {
        if !(omega.is_finite() && omega > 0.0) {
            return Err(Error::Domain(format!("frequency must be positive, got {omega}")));
        }
        if order_k < 2 {
            return Err(Error::OrderOutOfRange { order: order_k, min: 2, max: u32::MAX });
        }
        Ok(TestFunction { omega, phase, order_k })
    }

    /// `ω^-k e^{iφ}`, so that `h(x) = Re(c e^{iωx})`.
    fn coefficient(&self) -> Complex64 {
        self.phase.unit() * self.omega.powi(-(self.order_k as i32))
    }

    /// `h^(j)(x)`.
    pub fn derivative(&self, j: u32, x: f64) -> f64 {
        let i_omega = Complex64::new(0.0, self.omega);
        (self.coefficient() * i_omega.powu(j) * (i_omega * x).exp()).re
    }

    pub fn value(&self, x: f64) -> f64 {
        self.derivative(0, x)
    }

    /// `E[h(Z)]` for `Z ~ Exp(mu)`.
    pub fn target_mean(&self, mu: f64) -> f64 {
        (self.coefficient() * mu / Complex64::new(mu, -self.omega)).re
    }
}

/// Solution `f_h` of `-μ f' + f'' + μ f'(0) = h - E[h(Z)]` with `f'(0) = 0`
/// and bounded derivatives.
///
/// With `H(x) = e^{μx} ∫_x^∞ h(t) e^{-μt} dt` one has `f' = E[h(Z)]/μ - H`
/// and `f^(j) = -H^(j-1)` for `j >= 2`; every `H^(m)` is a damped oscillation
/// in closed form.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SteinSolution {
    pub source: TestFunction,
    pub mu: f64,
}

impl SteinSolution {
    pub fn new(source: TestFunction, mu: f64) -> Result<Self> {
        if !(mu.is_finite() && mu > 0.0) {
            return Err(Error::Domain(format!("target rate must be positive, got {mu}")));
        }
        Ok(SteinSolution { source, mu })
    }

    fn h_primitive(&self, m: u32, x: f64) -> f64 {
        let h = &self.source;
        let i_omega = Complex64::new(0.0, h.omega);
        (h.coefficient() * i_omega.powu(m) * (i_omega * x).exp() / Complex64::new(self.mu, -h.omega)).re
    }

    /// `f^(j)(x)` for `j >= 1`.
    pub fn derivative(&self, j: u32, x: f64) -> f64 {
        assert!(j >= 1, "f is determined up to a constant; ask for j >= 1");
        if j == 1 {
            self.source.target_mean(self.mu) / self.mu - self.h_primitive(0, x)
        } else {
            -self.h_primitive(j - 1, x)
        }
    }

    /// `f^(k+1)(x) = -[μ cos(ωx+ψ) - ω sin(ωx+ψ)] / (μ² + ω²)`, `ψ = φ + kπ/2`.
    pub fn derivative_k1(&self, x: f64) -> f64 {
        let h = &self.source;
        let psi = h.phase.radians() + h.order_k as f64 * std::f64::consts::FRAC_PI_2;
        let arg = h.omega * x + psi;
        -(self.mu * arg.cos() - h.omega * arg.sin()) / (self.mu * self.mu + h.omega * h.omega)
    }

    /// `f^(k+2)(x) = h^(k)(x) + μ f^(k+1)(x)`.
    pub fn derivative_k2(&self, x: f64) -> f64 {
        self.source.derivative(self.source.order_k, x) + self.mu * self.derivative_k1(x)
    }
}

/// `f^(level)(x)` for `level ∈ {k+1, k+2}`.
pub fn stein_derivative(solution: &SteinSolution, level: u32, x: f64) -> Result<f64> {
    if x < 0.0 {
        return Err(Error::Domain(format!("x must be non-negative, got {x}")));
    }
    let k = solution.source.order_k;
    match level {
        l if l == k + 1 => Ok(solution.derivative_k1(x)),
        l if l == k + 2 => Ok(solution.derivative_k2(x)),
        _ => Err(Error::OrderOutOfRange { order: level, min: k + 1, max: k + 2 }),
    }
}

/// Left side of the Stein equation, `-μ f'(x) + f''(x) + μ f'(0)`.
pub fn generator_exponential(solution: &SteinSolution, x: f64) -> f64 {
    let mu = solution.mu;
    -mu * solution.derivative(1, x) + solution.derivative(2, x) + mu * solution.derivative(1, 0.0)
}

/// A twice-differentiable test function for the waiting-time generator.
pub trait SmoothTest: Sync {
    fn value(&self, u: f64) -> f64;
    fn derivative(&self, u: f64) -> f64;
}

/// Built-in generator test functions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestFn {
    Constant(f64),
    /// `u`
    Linear,
    /// `u²`
    Quadratic,
    /// `u² e^{-u}`
    QuadraticDamped,
}

impl SmoothTest for TestFn {
    fn value(&self, u: f64) -> f64 {
        match self {
            TestFn::Constant(c) => *c,
            TestFn::Linear => u,
            TestFn::Quadratic => u * u,
            TestFn::QuadraticDamped => u * u * (-u).exp(),
        }
    }

    fn derivative(&self, u: f64) -> f64 {
        match self {
            TestFn::Constant(_) => 0.0,
            TestFn::Linear => 1.0,
            TestFn::Quadratic => 2.0 * u,
            TestFn::QuadraticDamped => (2.0 * u - u * u) * (-u).exp(),
        }
    }
}

/// Test function from a value closure and its derivative.
pub struct FnPair<F, G> {
    pub value: F,
    pub derivative: G,
}

impl<F, G> SmoothTest for FnPair<F, G>
where
    F: Fn(f64) -> f64 + Sync,
    G: Fn(f64) -> f64 + Sync,
{
    fn value(&self, u: f64) -> f64 {
        (self.value)(u)
    }
    fn derivative(&self, u: f64) -> f64 {
        (self.derivative)(u)
    }
}

/// Nodes per Erlang branch for the service integral.
const LAGUERRE_NODES: usize = 32;

/// Generator of the scaled waiting-time process `εW`, shifted by `εy`:
/// `λ ∫ (f(x + εy + εs) - f(x + εy)) dF(s) - ε f'(x + εy) 1{x > 0}`.
///
/// The service integral uses a generalized Gauss–Laguerre rule per Erlang
/// branch, which is exact for polynomial `f` up to high degree.
#[derive(Debug, Clone)]
pub struct ShiftedWaitingGenerator {
    lambda: f64,
    epsilon: f64,
    /// `(weight, service value)` pairs.
    nodes: Vec<(f64, f64)>,
}

impl ShiftedWaitingGenerator {
    pub fn new(model: &QueueModel) -> Self {
        let mut nodes = Vec::new();
        for b in model.service.branches() {
            let rule = GaussLaguerre::new(LAGUERRE_NODES, b.shape as f64 - 1.0);
            for (t, w) in rule.nodes.iter().zip(&rule.weights) {
                nodes.push((b.weight * w, t / b.rate));
            }
        }
        ShiftedWaitingGenerator { lambda: model.lambda, epsilon: model.epsilon, nodes }
    }

    /// Generator at scaled waiting level `x = εW` with service shift `y`.
    pub fn apply<T: SmoothTest + ?Sized>(&self, f: &T, x: f64, y: f64) -> f64 {
        let base = x + self.epsilon * y;
        let f0 = f.value(base);
        let jump: f64 = self
            .nodes
            .iter()
            .map(|&(w, s)| w * (f.value(base + self.epsilon * s) - f0))
            .sum();
        let drift = if x > 0.0 { self.epsilon * f.derivative(base) } else { 0.0 };
        self.lambda * jump - drift
    }
}

/// One-shot form of [`ShiftedWaitingGenerator::apply`].
pub fn generator_shifted_waiting<T: SmoothTest + ?Sized>(model: &QueueModel, f: &T, x: f64, y: f64) -> Result<f64> {
    if x < 0.0 || y < 0.0 {
        return Err(Error::Domain(format!("x and y must be non-negative, got x={x}, y={y}")));
    }
    Ok(ShiftedWaitingGenerator::new(model).apply(f, x, y))
}

/// Minimum sample count for [`stationarity_residual`].
pub const MIN_STATIONARITY_SAMPLES: usize = 10_000;

/// Monte Carlo mean of the generator over stationary waiting samples, with a
/// batch-means standard error. Should vanish up to sampling error.
pub fn stationarity_residual<T: SmoothTest + ?Sized>(model: &QueueModel, f: &T, y: f64, samples: &SampleBatch) -> Result<Estimate> {
    if samples.len() < MIN_STATIONARITY_SAMPLES {
        return Err(Error::InsufficientSamples { have: samples.len(), need: MIN_STATIONARITY_SAMPLES });
    }
    if y < 0.0 {
        return Err(Error::Domain(format!("y must be non-negative, got {y}")));
    }
    let gen = ShiftedWaitingGenerator::new(model);
    let eps = model.epsilon;
    let values: Vec<f64> = samples.waiting.par_iter().map(|&w| gen.apply(f, eps * w, y)).collect();
    Ok(batch_means(&values, &samples.replication_ranges()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrature::integrate;
    use crate::service::{Branch, ServiceDistribution};
    use proptest::prelude::*;

    fn solution(omega: f64, phase: Phase, k: u32, mu: f64) -> SteinSolution {
        SteinSolution::new(TestFunction::new(omega, phase, k).unwrap(), mu).unwrap()
    }

    #[test]
    fn k1_derivative_example() {
        // h^(k) = cos(ωx) exactly when k ≡ 0 mod 4.
        for k in [4, 8] {
            let s = solution(1.0, Phase::Cos, k, 1.0);
            assert!((s.derivative_k1(0.0) + 0.5).abs() < 1e-15, "k={k}");
        }
        // k = 2 flips the sign: h'' = -cos(ωx).
        assert!((solution(1.0, Phase::Cos, 2, 1.0).derivative_k1(0.0) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn k1_matches_defining_integral() {
        let s = solution(1.3, Phase::Sin, 3, 0.7);
        for x in [0.0, 0.4, 2.5] {
            let h = s.source;
            let integral = integrate(|t| h.derivative(3, t) * (-0.7 * (t - x)).exp(), x, x + 80.0, 1e-13, 0.0).unwrap();
            assert!((s.derivative_k1(x) + integral.value).abs() < 1e-10);
        }
    }

    #[test]
    fn low_frequency_limit() {
        let s = solution(1e-6, Phase::Cos, 2, 2.0);
        // h'' = -cos(ωx) ≈ -1, so f''' ≈ 1/μ.
        assert!((s.derivative_k1(3.0) - 0.5).abs() < 1e-6);
    }

    #[test]
    fn generator_exponential_example() {
        let s = solution(1.0, Phase::Cos, 2, 1.0);
        // Unscaled: cos(0) - Re(1/(1-i)) = 0.5; ω = 1 makes the scale trivial.
        assert!((generator_exponential(&s, 0.0) - 0.5).abs() < 1e-15);
        assert!((s.source.target_mean(1.0) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn target_mean_matches_quadrature() {
        let h = TestFunction::new(0.8, Phase::Sin, 2).unwrap();
        let q = integrate(|z| h.value(z) * 1.5 * (-1.5 * z).exp(), 0.0, 60.0, 1e-13, 0.0).unwrap();
        assert!((q.value - h.target_mean(1.5)).abs() < 1e-11);
    }

    #[test]
    fn stein_derivative_levels() {
        let s = solution(2.0, Phase::Cos, 3, 1.0);
        assert_eq!(stein_derivative(&s, 4, 1.0).unwrap(), s.derivative_k1(1.0));
        assert_eq!(stein_derivative(&s, 5, 1.0).unwrap(), s.derivative_k2(1.0));
        assert!(stein_derivative(&s, 3, 1.0).is_err());
        assert!(stein_derivative(&s, 4, -1.0).is_err());
        // Closed form agrees with the generic primitive chain.
        assert!((s.derivative(4, 1.0) - s.derivative_k1(1.0)).abs() < 1e-14);
        assert!((s.derivative(5, 1.0) - s.derivative_k2(1.0)).abs() < 1e-14);
    }

    #[test]
    fn derivative_bounds_on_grid() {
        for k in [2, 3, 4] {
            for omega in [0.1, 0.5, 1.0, 2.0, 5.0, 10.0] {
                for phase in [Phase::Cos, Phase::Sin] {
                    for mu in [0.5, 1.0, 3.0] {
                        let s = solution(omega, phase, k, mu);
                        for i in 0..200 {
                            let x = 20.0 * i as f64 / 199.0;
                            assert!(s.derivative_k1(x).abs() <= 1.0 / mu + 1e-9);
                            assert!(s.derivative_k2(x).abs() <= 2.0 + 1e-9);
                            let r = -mu * s.derivative_k1(x) + s.derivative_k2(x) - s.source.derivative(k, x);
                            assert!(r.abs() <= 1e-10);
                        }
                    }
                }
            }
        }
    }

    proptest! {
        #[test]
        fn stein_equation_residual(omega in 0.05f64..20.0, x in 0.0f64..20.0, mu in 0.2f64..5.0, k in 2u32..5, sin in any::<bool>()) {
            let phase = if sin { Phase::Sin } else { Phase::Cos };
            let s = solution(omega, phase, k, mu);
            let lhs = generator_exponential(&s, x);
            let rhs = s.source.value(x) - s.source.target_mean(mu);
            prop_assert!((lhs - rhs).abs() < 1e-8 * (1.0 + rhs.abs()));
        }

        #[test]
        fn generator_is_linear(alpha in -3.0f64..3.0, beta in -3.0f64..3.0, x in 0.0f64..5.0, y in 0.0f64..2.0) {
            let model = QueueModel::with_slack(1.0, 0.1, ServiceDistribution::new(vec![
                Branch { weight: 0.6, shape: 2, rate: 2.0 },
                Branch { weight: 0.4, shape: 1, rate: 1.0 },
            ]).unwrap()).unwrap();
            let gen = ShiftedWaitingGenerator::new(&model);
            let combo = FnPair {
                value: |u: f64| alpha * u * u + beta * u * u * (-u).exp(),
                derivative: |u: f64| alpha * 2.0 * u + beta * (2.0 * u - u * u) * (-u).exp(),
            };
            let lhs = gen.apply(&combo, x, y);
            let rhs = alpha * gen.apply(&TestFn::Quadratic, x, y) + beta * gen.apply(&TestFn::QuadraticDamped, x, y);
            prop_assert!((lhs - rhs).abs() < 1e-12 * (1.0 + lhs.abs()));
        }
    }

    #[test]
    fn generator_linear_and_constant() {
        let model = QueueModel::mm1(0.9, 1.0).unwrap();
        let eps = model.epsilon;
        let at_boundary = generator_shifted_waiting(&model, &TestFn::Linear, 0.0, 1.0).unwrap();
        assert!((at_boundary - eps * model.rho).abs() < 1e-14);
        let inside = generator_shifted_waiting(&model, &TestFn::Linear, 0.3, 0.0).unwrap();
        assert!((inside + eps * eps).abs() < 1e-14);
        for (x, y) in [(0.0, 0.0), (1.0, 2.0)] {
            assert_eq!(generator_shifted_waiting(&model, &TestFn::Constant(3.0), x, y).unwrap(), 0.0);
        }
    }

    #[test]
    fn generator_quadrature_against_adaptive() {
        let dist = ServiceDistribution::new(vec![
            Branch { weight: 0.5, shape: 1, rate: 1.0 },
            Branch { weight: 0.5, shape: 3, rate: 3.0 },
        ])
        .unwrap();
        let model = QueueModel::with_slack(1.0, 0.2, dist.clone()).unwrap();
        let f = TestFn::QuadraticDamped;
        let (x, y) = (0.7, 1.0);
        let base = x + 0.2 * y;
        let integral = integrate(|s| (f.value(base + 0.2 * s) - f.value(base)) * dist.density(s), 0.0, 60.0, 1e-14, 0.0)
            .unwrap()
            .value;
        let direct = model.lambda * integral - 0.2 * f.derivative(base);
        let got = generator_shifted_waiting(&model, &f, x, y).unwrap();
        assert!((got - direct).abs() < 1e-12, "{got} vs {direct}");
    }
}
