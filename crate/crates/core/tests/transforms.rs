use mg1lab::*;
use num_complex::Complex64;
use proptest::prelude::*;

/// `E[D^j]` for `j = 1..=n` from Taylor coefficients of the PK transform on a
/// circle of radius `r` about 0 (trapezoidal Cauchy integral).
fn contour_moments(model: &QueueModel, n: u32, r: f64) -> Vec<f64> {
    let nodes = 128;
    let values: Vec<Complex64> = (0..nodes)
        .map(|i| {
            let s = Complex64::from_polar(r, 2.0 * std::f64::consts::PI * i as f64 / nodes as f64);
            pk_transform(model, s).unwrap()
        })
        .collect();
    (1..=n)
        .map(|j| {
            let coeff: Complex64 = values
                .iter()
                .enumerate()
                .map(|(i, v)| v * Complex64::from_polar(r.powi(-(j as i32)), -2.0 * std::f64::consts::PI * (i * j as usize) as f64 / nodes as f64))
                .sum::<Complex64>()
                / nodes as f64;
            let fact: f64 = (1..=j).map(f64::from).product();
            (if j % 2 == 0 { 1.0 } else { -1.0 }) * fact * coeff.re
        })
        .collect()
}

/// A radius inside which the transform is analytic: below the slowest
/// service rate and small enough that `|λ s D₂(s)| < ε/2`.
fn safe_radius(model: &QueueModel) -> f64 {
    let mut r = 0.5 * model.service.min_rate();
    while model.lambda * r * model.service.second_excess_transform(Complex64::new(-r, 0.0)).unwrap().re
        >= 0.5 * model.epsilon
    {
        r *= 0.5;
    }
    r
}

fn assert_recursion_matches_contour(model: &QueueModel, n: u32, rel: f64) {
    let exact = sojourn_moments(model, n).unwrap();
    let contour = contour_moments(model, n, safe_radius(model));
    for j in 1..=n as usize {
        let (a, b) = (exact.get(j), contour[j - 1]);
        assert!((a - b).abs() <= rel * a, "j={j}: recursion {a} vs contour {b}");
    }
}

#[test]
fn mm1_recursion_matches_contour() {
    for lam in [0.2, 0.5, 0.9] {
        assert_recursion_matches_contour(&QueueModel::mm1(lam, 1.0).unwrap(), 6, 1e-9);
    }
}

#[test]
fn matched_recursion_matches_contour() {
    for m in [2, 3, 4] {
        let dist = match_exponential_moments(1.0, m, &MatchFamily::preset(m)).unwrap().distribution;
        for eps in [0.2, 0.05] {
            assert_recursion_matches_contour(&QueueModel::with_slack(1.0, eps, dist.clone()).unwrap(), 6, 1e-8);
        }
    }
}

#[test]
fn gap_agrees_with_transform_difference() {
    let dist = match_exponential_moments(1.0, 3, &MatchFamily::preset(3)).unwrap().distribution;
    let model = QueueModel::with_slack(1.0, 0.1, dist).unwrap();
    let target = model.epsilon * model.mu;
    for w in [0.01, 0.1, 1.0, 7.0] {
        let s = Complex64::new(0.0, -w);
        let plain = pk_transform(&model, s).unwrap() - target / (target + s);
        let gap = mg1lab::queue::pk_transform_gap(&model, s).unwrap();
        assert!((plain - gap).norm() < 1e-12, "omega={w}: {plain} vs {gap}");
    }
}

fn mixture() -> impl Strategy<Value = ServiceDistribution> {
    prop::collection::vec((0.1f64..1.0, 1u32..5, 0.5f64..4.0), 1..4).prop_map(|parts| {
        let total: f64 = parts.iter().map(|p| p.0).sum();
        ServiceDistribution::new(
            parts.into_iter().map(|(w, shape, rate)| Branch { weight: w / total, shape, rate }).collect(),
        )
        .unwrap()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn recursion_matches_contour_for_random_mixtures(dist in mixture(), rho in 0.1f64..0.9) {
        let lambda = rho / dist.mean();
        let model = QueueModel::new(lambda, 1.0, dist).unwrap();
        let exact = sojourn_moments(&model, 4).unwrap();
        let contour = contour_moments(&model, 4, safe_radius(&model));
        for j in 1..=4usize {
            prop_assert!((exact.get(j) - contour[j - 1]).abs() <= 1e-7 * exact.get(j));
        }
    }

    #[test]
    fn waiting_plus_service_is_sojourn_mean(dist in mixture(), rho in 0.1f64..0.9) {
        let lambda = rho / dist.mean();
        let model = QueueModel::new(lambda, 1.0, dist.clone()).unwrap();
        let w = waiting_moments(&model, 1).unwrap().get(1);
        let d = sojourn_moments(&model, 1).unwrap().get(1);
        prop_assert!((w + dist.mean() - d).abs() <= 1e-12 * d);
    }
}
