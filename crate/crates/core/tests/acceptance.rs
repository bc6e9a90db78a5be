//! Acceptance run: one PASS/FAIL line per criterion, non-zero exit on any failure.

use std::time::Instant;

use mg1lab::bounds::bd_series;
use mg1lab::experiments::{fit_rate, RatePoint, EXACT_NOISE_FLOOR};
use mg1lab::queue::overshoot_moments;
use mg1lab::service::log_space;
use mg1lab::*;

const GRID: [f64; 5] = [0.2, 0.1, 0.05, 0.025, 0.0125];

type Outcome = std::result::Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn matched(m: u32) -> ServiceDistribution {
    match_exponential_moments(1.0, m, &MatchFamily::preset(m)).expect("preset match").distribution
}

fn check(cond: bool, detail: String) -> Outcome {
    if cond {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn sample(model: QueueModel, samples_per_rep: u64, reps: u32, seed: u64, thin: u32) -> SampleBatch {
    let mut config = SimConfig::new(model, samples_per_rep, reps, seed);
    config.warmup_steps *= 2;
    config.thin = thin;
    lindley_run(&config).expect("simulation")
}

fn recursion_exactness() -> Outcome {
    for (lam, mu) in [(0.5, 1.0), (0.9, 2.5), (0.3, 0.7)] {
        let s = bd_series(2, lam, mu).map_err(|e| e.to_string())?;
        let want = [BdEntry { b: lam / 6.0, d: 3 }, BdEntry { b: mu * lam / 24.0, d: 4 }];
        if s.entries != want {
            return Err(format!("k=2 at lambda={lam}, mu={mu}: {:?}", s.entries));
        }
        for k in 2..=8u32 {
            let s = bd_series(k, lam, mu).map_err(|e| e.to_string())?;
            if s.entries.len() != 1 << (k - 1) {
                return Err(format!("k={k}: length {}", s.entries.len()));
            }
            if let Some(e) = s.entries.iter().find(|e| e.d < 3 || e.d > k + 2) {
                return Err(format!("k={k}: d={} out of [3, k+2]", e.d));
            }
        }
    }
    Ok("k=2 bit-exact, lengths 2^(k-1) and 3 <= d <= k+2 for k <= 8".into())
}

fn moment_alignment() -> Outcome {
    let service = matched(4);
    let mut worst_rel: f64 = 0.0;
    let mut min_gap4 = f64::INFINITY;
    for eps in [0.2, 0.1, 0.05] {
        let model = QueueModel::with_slack(1.0, eps, service.clone()).map_err(|e| e.to_string())?;
        let m = scaled_sojourn_moments(&model, 4).map_err(|e| e.to_string())?;
        for j in 1..=3usize {
            let fact: f64 = (1..=j).map(|i| i as f64).product();
            worst_rel = worst_rel.max((m.get(j) - fact).abs() / fact);
        }
        min_gap4 = min_gap4.min((m.get(4) - 24.0).abs());
    }
    check(
        worst_rel <= 1e-9 && min_gap4 >= 1e-3,
        format!("max rel gap j<=3 {worst_rel:.2e} (<= 1e-9), min |E[(eD)^4]-24| {min_gap4:.3e} (>= 1e-3)"),
    )
}

fn sandwich(m: u32, k: u32, slope_min: f64, r2_min: Option<f64>) -> Outcome {
    let service = matched(m);
    let omegas = default_omega_grid();
    let mut points = Vec::new();
    for eps in GRID {
        let model = QueueModel::with_slack(1.0, eps, service.clone()).map_err(|e| e.to_string())?;
        let lb = zolotarev_lower_bound(&model, k, &omegas).map_err(|e| e.to_string())?.value;
        let upper = c2_constant(&model, k).map_err(|e| e.to_string())?.c2 * eps.powi(k as i32);
        if lb > upper {
            return Err(format!("eps={eps}: LB {lb:.3e} > C2 eps^{k} {upper:.3e}"));
        }
        points.push(RatePoint { epsilon: eps, value: lb, noise_floor: EXACT_NOISE_FLOOR });
    }
    let fit = fit_rate(&points[2..]).map_err(|e| e.to_string())?;
    let r2_ok = r2_min.map_or(true, |r| fit.r_squared >= r);
    check(
        fit.slope >= slope_min && r2_ok,
        format!("LB <= C2 eps^{k} on grid; slope {:.3} (>= {slope_min}), r2 {:.4}", fit.slope, fit.r_squared),
    )
}

fn wasserstein_bound() -> Outcome {
    let service = matched(3);
    let mut parts = Vec::new();
    for (eps, seed) in [(0.2, 11u64), (0.1, 12)] {
        let model = QueueModel::with_slack(1.0, eps, service.clone()).map_err(|e| e.to_string())?;
        let constants = c2_constant(&model, 2).map_err(|e| e.to_string())?;
        let batch = sample(model.clone(), 125_000, 8, seed, 1);
        let w = wasserstein_empirical(&batch, 2, 1.0, model.epsilon).map_err(|e| e.to_string())?;
        let bound = cor2_wasserstein_bound(&constants, eps);
        if w.mean > bound + 3.0 * w.se {
            return Err(format!("eps={eps}: W2 {:.4} > {bound:.4} + 3 SE ({:.1e})", w.mean, w.se));
        }
        parts.push(format!("eps={eps} W2 {:.4}±{:.1e} <= {bound:.4}", w.mean, w.se));
    }
    Ok(parts.join("; "))
}

fn overshoot_identities() -> Outcome {
    let mut worst: f64 = 0.0;
    for (lam, seed) in [(0.5, 21u64), (0.9, 22)] {
        let model = QueueModel::mm1(lam, 1.0).map_err(|e| e.to_string())?;
        let eps = model.epsilon;
        let (u1, u2, u3, _) = overshoot_moments(&model);
        let batch = sample(model, 125_000, 8, seed, 1);
        let checks = [
            ("E[exp(-lambda D)]", batch_estimate(&batch, |d, _, _| (-lam * d).exp()), 1.0 - lam),
            ("E[U]", batch_estimate(&batch, |_, _, u| u), u1),
            ("E[U^2]", batch_estimate(&batch, |_, _, u| u * u), u2),
            ("E[U^3]", batch_estimate(&batch, |_, _, u| u * u * u), u3),
            ("P(W=0)", batch_estimate(&batch, |_, w, _| f64::from(u8::from(w == 0.0))), eps),
        ];
        for (name, est, target) in checks {
            let z = est.z_score(target).abs();
            worst = worst.max(z);
            if z > 4.0 {
                return Err(format!("lambda={lam} {name}: {:.5} vs {target:.5}, |z| = {z:.2}", est.mean));
            }
        }
    }
    Ok(format!("10 identities at lambda in {{0.5, 0.9}}, max |z| = {worst:.2} (<= 4)"))
}

fn derivative_bounds() -> Outcome {
    let mut omegas = vec![0.1, 0.5, 1.0, 2.0, 5.0, 10.0];
    omegas.extend(log_space(0.05, 20.0, 6));
    let xs = log_space(1.0, 21.0, 200).into_iter().map(|x| x - 1.0).collect::<Vec<_>>();
    let (mut d1, mut d2, mut res): (f64, f64, f64) = (0.0, 0.0, 0.0);
    for mu in [1.0, 0.5, 2.5] {
        for &omega in &omegas {
            for phase in [Phase::Cos, Phase::Sin] {
                for k in 2..=4 {
                    let h = TestFunction::new(omega, phase, k).map_err(|e| e.to_string())?;
                    let sol = SteinSolution::new(h, mu).map_err(|e| e.to_string())?;
                    for &x in &xs {
                        let a = sol.derivative_k1(x);
                        let b = sol.derivative_k2(x);
                        d1 = d1.max(a.abs() * mu);
                        d2 = d2.max(b.abs());
                        let direct_b = sol.derivative(k + 2, x);
                        res = res.max((-mu * a + direct_b - h.derivative(k, x)).abs());
                    }
                }
            }
        }
    }
    check(
        d1 <= 1.0 + 1e-9 && d2 <= 2.0 + 1e-9 && res <= 1e-10,
        format!("max mu|f^(k+1)| {d1:.6}, max |f^(k+2)| {d2:.6}, max Stein residual {res:.1e}"),
    )
}

fn generator_stationarity() -> Outcome {
    let model = QueueModel::new(0.9, 1.0, matched(3)).map_err(|e| e.to_string())?;
    let batch = sample(model.clone(), 125_000, 8, 31, 1);
    let mut parts = Vec::new();
    for (name, f) in [("linear", TestFn::Linear), ("u^2 e^-u", TestFn::QuadraticDamped)] {
        for y in [0.0, 1.0] {
            let est = stationarity_residual(&model, &f, y, &batch).map_err(|e| e.to_string())?;
            let z = est.mean.abs() / est.se;
            if z > 3.0 {
                return Err(format!("{name}, y={y}: {:.3e} with SE {:.3e}", est.mean, est.se));
            }
            parts.push(format!("{name} y={y} |z|={z:.2}"));
        }
    }
    Ok(parts.join(", "))
}

fn alternative_constants() -> Outcome {
    let model = QueueModel::mm1(0.5, 1.0).map_err(|e| e.to_string())?;
    let alt = alt_constants(&model).map_err(|e| e.to_string())?;
    let rel = |a: f64, b: f64| (a - b).abs() / b;
    if rel(alt.m_prime, 79.0) > 1e-9 || rel(alt.m_double_prime, 2056.0) > 1e-9 || rel(alt.m_total, 2135.0) > 1e-9 {
        return Err(format!("M' {} M'' {} M {}", alt.m_prime, alt.m_double_prime, alt.m_total));
    }
    if !alt.within_envelope() {
        return Err(format!("M {} above envelope {}", alt.m_total, alt.envelope));
    }
    let omegas = default_omega_grid();
    for service in [ServiceDistribution::exponential(1.0).map_err(|e| e.to_string())?, matched(3)] {
        for eps in GRID {
            let model = QueueModel::with_slack(1.0, eps, service.clone()).map_err(|e| e.to_string())?;
            let lb = zolotarev_lower_bound(&model, 2, &omegas).map_err(|e| e.to_string())?.value;
            let m = alt_constants(&model).map_err(|e| e.to_string())?.m_total;
            if lb > m * eps * eps {
                return Err(format!("eps={eps}: LB {lb:.3e} > M eps^2 {:.3e}", m * eps * eps));
            }
        }
    }
    Ok(format!("M'=79, M''=2056, M=2135 (envelope {:.2}); LB <= M eps^2 on grid", alt.envelope))
}

fn negative_control() -> Outcome {
    let mut verdicts = Vec::new();
    for (m, want) in [(2, Divergence::Infinite), (3, Divergence::Finite)] {
        let model = QueueModel::with_slack(1.0, 0.1, matched(m)).map_err(|e| e.to_string())?;
        let got = divergence_check(&model, 3).map_err(|e| e.to_string())?;
        if got != want {
            return Err(format!("m={m}: {got:?}, expected {want:?}"));
        }
        verdicts.push(format!("m={m} -> {got:?}"));
    }
    Ok(verdicts.join(", "))
}

fn mm1_oracle() -> Outcome {
    let omegas = default_omega_grid();
    let service = ServiceDistribution::exponential(1.0).map_err(|e| e.to_string())?;
    let (mut lb_max, mut gap_max): (f64, f64) = (0.0, 0.0);
    for eps in GRID {
        let model = QueueModel::with_slack(1.0, eps, service.clone()).map_err(|e| e.to_string())?;
        for k in 2..=6 {
            lb_max = lb_max.max(zolotarev_lower_bound(&model, k, &omegas).map_err(|e| e.to_string())?.value);
        }
        for g in moment_gaps(&model, 6).map_err(|e| e.to_string())? {
            gap_max = gap_max.max(g);
        }
    }
    // Thinning by 32 makes the recorded sojourns close to independent at rho = 0.5.
    let model = QueueModel::mm1(0.5, 1.0).map_err(|e| e.to_string())?;
    let batch = sample(model.clone(), 125_000, 8, 41, 32);
    let n = batch.len() as f64;
    let w1 = wasserstein_empirical(&batch, 1, 1.0, model.epsilon).map_err(|e| e.to_string())?;
    let floor = 1.0 / n.sqrt();
    check(
        lb_max <= 1e-10 && gap_max <= 1e-12 && w1.mean <= 2.0 * floor,
        format!("max LB {lb_max:.1e}, max gap {gap_max:.1e}, W1 {:.2e} vs 2 n^-1/2 = {:.2e}", w1.mean, 2.0 * floor),
    )
}

fn main() {
    let criteria: [Criterion; 11] = [
        ("constant recursion exactness", recursion_exactness),
        ("moment alignment", moment_alignment),
        ("sandwich k=2", || sandwich(3, 2, 1.7, Some(0.98))),
        ("sandwich k=3", || sandwich(4, 3, 2.6, None)),
        ("Wasserstein-2 bound", wasserstein_bound),
        ("overshoot identities", overshoot_identities),
        ("Stein derivative bounds", derivative_bounds),
        ("generator stationarity", generator_stationarity),
        ("alternative constants", alternative_constants),
        ("divergence negative control", negative_control),
        ("M/M/1 degenerate oracle", mm1_oracle),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = run();
        let secs = start.elapsed().as_secs_f64();
        let (tag, detail) = match outcome {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        println!("{tag} {:>2} {name}: {detail} [{secs:.2}s]", i + 1);
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
