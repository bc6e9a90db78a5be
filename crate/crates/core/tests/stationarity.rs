use mg1lab::*;

fn steady(model: &QueueModel, seed: u64) -> SampleBatch {
    lindley_run(&SimConfig::new(model.clone(), 50_000, 8, seed)).unwrap()
}

#[test]
fn mm1_generator_has_zero_stationary_mean() {
    let model = QueueModel::mm1(0.5, 1.0).unwrap();
    let batch = steady(&model, 1);
    for f in [TestFn::Linear, TestFn::Quadratic, TestFn::QuadraticDamped] {
        for y in [0.0, 1.0] {
            let est = stationarity_residual(&model, &f, y, &batch).unwrap();
            assert!(est.mean.abs() <= 4.0 * est.se, "{f:?} y={y}: {est:?}");
        }
    }
}

#[test]
fn wrong_arrival_rate_is_detected() {
    let model = QueueModel::mm1(0.5, 1.0).unwrap();
    let batch = steady(&model, 2);
    let wrong = QueueModel::mm1(0.6, 1.0).unwrap();
    let est = stationarity_residual(&wrong, &TestFn::Linear, 0.0, &batch).unwrap();
    assert!(est.mean.abs() > 10.0 * est.se, "{est:?}");
}

#[test]
fn linear_generator_matches_closed_form() {
    // For f(u) = u the generator is λ ε E[S] - ε 1{x > 0}.
    let dist = match_exponential_moments(1.0, 3, &MatchFamily::preset(3)).unwrap().distribution;
    let model = QueueModel::new(0.9, 1.0, dist.clone()).unwrap();
    let eps = model.epsilon;
    for x in [0.0, 0.3, 2.0] {
        let g = generator_shifted_waiting(&model, &TestFn::Linear, x, 0.0).unwrap();
        let want = 0.9 * eps * dist.mean() - if x > 0.0 { eps } else { 0.0 };
        assert!((g - want).abs() < 1e-13, "x={x}: {g} vs {want}");
    }
}
