use std::fmt::Write as _;
use std::path::Path;

use serde_json::json;

use mg1lab::experiments::{load_spec, read_sweep_csv, report, run_sweep, SweepOptions};
use mg1lab::metrics::CSV_HEADER;
use mg1lab::service::log_space;
use mg1lab::simulate::{write_binary, write_csv};
use mg1lab::{
    alt_constants, batch_estimate, c2_constant, lindley_run, match_exponential_moments, stationarity_residual,
    steady_moments, Error, MatchFamily, Phase, QueueModel, Result, ServiceDistribution, SimConfig, SteinSolution,
    TestFn, TestFunction,
};

use crate::{Cli, Command, Format, Global, ServiceArgs};

pub fn run(cli: &Cli) -> Result<()> {
    let g = &cli.global;
    if g.threads > 0 {
        // Fails only if a global pool already exists, which is harmless here.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(g.threads).build_global();
    }
    match &cli.command {
        Command::Match { mu, order } => match_cmd(g, *mu, *order),
        Command::Moments { lambda, mu, n, service } => moments_cmd(g, *lambda, *mu, *n, service),
        Command::Constants { k, lambda, mu, service } => constants_cmd(g, *k, *lambda, *mu, service),
        Command::Simulate { lambda, mu, samples, replications, warmup_factor, thin, service } => {
            simulate_cmd(g, *lambda, *mu, *samples, *replications, *warmup_factor, *thin, service)
        }
        Command::Sweep { resume } => sweep_cmd(g, *resume),
        Command::SteinCheck { mu, lambda, samples, replications, service } => {
            stein_cmd(g, *mu, *lambda, *samples, *replications, service)
        }
        Command::Report { input } => report_cmd(g, input.as_deref()),
    }
}

fn emit(g: &Global, text: String) -> Result<()> {
    let text = if text.ends_with('\n') { text } else { text + "\n" };
    match &g.out {
        Some(path) => std::fs::write(path, text)?,
        None => print!("{text}"),
    }
    Ok(())
}

fn emit_json(g: &Global, value: &serde_json::Value) -> Result<()> {
    emit(g, serde_json::to_string_pretty(value)?)
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
}

fn service_for(args: &ServiceArgs, mu: f64, default_match: Option<u32>) -> Result<ServiceDistribution> {
    if let Some(path) = &args.service {
        return read_json(path);
    }
    match args.matched.or(default_match) {
        Some(m) => Ok(match_exponential_moments(mu, m, &MatchFamily::preset(m))?.distribution),
        None => ServiceDistribution::exponential(mu),
    }
}

fn match_cmd(g: &Global, mu: f64, order: u32) -> Result<()> {
    let family = match &g.config {
        Some(path) => read_json(path)?,
        None => MatchFamily::preset(order),
    };
    let found = match_exponential_moments(mu, order, &family)?;
    match g.format {
        Format::Json => emit_json(g, &serde_json::to_value(&found)?),
        Format::Csv => {
            let mut out = String::from("weight,shape,rate\n");
            for b in found.distribution.branches() {
                writeln!(out, "{},{},{}", b.weight, b.shape, b.rate).expect("writing to a String");
            }
            emit(g, out)
        }
    }
}

fn moments_cmd(g: &Global, lambda: f64, mu: f64, n: u32, service: &ServiceArgs) -> Result<()> {
    let model = QueueModel::new(lambda, mu, service_for(service, mu, None)?)?;
    let m = steady_moments(&model, n)?;
    let scaled = m.sojourn.scaled(model.epsilon);
    match g.format {
        Format::Json => emit_json(
            g,
            &json!({
                "lambda": model.lambda,
                "mu": model.mu,
                "rho": model.rho,
                "epsilon": model.epsilon,
                "waiting": m.waiting.as_slice(),
                "sojourn": m.sojourn.as_slice(),
                "scaled_sojourn": scaled.as_slice(),
            }),
        ),
        Format::Csv => {
            let mut out = String::from("j,waiting,sojourn,scaled_sojourn\n");
            for j in 1..=n as usize {
                writeln!(out, "{j},{},{},{}", m.waiting.get(j), m.sojourn.get(j), scaled.get(j))
                    .expect("writing to a String");
            }
            emit(g, out)
        }
    }
}

fn constants_cmd(g: &Global, k: u32, lambda: f64, mu: f64, service: &ServiceArgs) -> Result<()> {
    let model = QueueModel::new(lambda, mu, service_for(service, mu, None)?)?;
    let c = c2_constant(&model, k)?;
    let alt = alt_constants(&model)?;
    match g.format {
        Format::Json => emit_json(
            g,
            &json!({
                "k": k,
                "lambda": lambda,
                "mu": mu,
                "series": c.series.entries,
                "c1": c.c1,
                "c2": c.c2,
                "m_prime": alt.m_prime,
                "m_double_prime": alt.m_double_prime,
                "m_total": alt.m_total,
            }),
        ),
        Format::Csv => {
            let series: Vec<String> = c.series.entries.iter().map(|e| format!("{}@{}", e.b, e.d)).collect();
            emit(
                g,
                format!(
                    "k,lambda,mu,c1,c2,m_prime,m_double_prime,m_total,series\n{k},{lambda},{mu},{},{},{},{},{},{}\n",
                    c.c1,
                    c.c2,
                    alt.m_prime,
                    alt.m_double_prime,
                    alt.m_total,
                    series.join("|")
                ),
            )
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn simulate_cmd(
    g: &Global,
    lambda: Option<f64>,
    mu: f64,
    samples: u64,
    replications: u32,
    warmup_factor: f64,
    thin: u32,
    service: &ServiceArgs,
) -> Result<()> {
    let out = g.out.as_ref().ok_or_else(|| Error::Invalid("simulate needs --out".into()))?;
    let mut config: SimConfig = match &g.config {
        Some(path) => read_json(path)?,
        None => {
            let lambda = lambda.ok_or_else(|| Error::Invalid("simulate needs --lambda or --config".into()))?;
            if warmup_factor.is_nan() || warmup_factor < 1.0 {
                return Err(Error::Invalid("warmup factor must be >= 1".into()));
            }
            let model = QueueModel::new(lambda, mu, service_for(service, mu, None)?)?;
            let mut c = SimConfig::new(model, samples, replications, 0);
            c.warmup_steps = (warmup_factor * c.warmup_steps as f64).ceil() as u64;
            c.thin = thin;
            c
        }
    };
    if let Some(seed) = g.seed {
        config.base_seed = seed;
    }
    let batch = lindley_run(&config)?;
    match g.format {
        Format::Json => write_binary(&batch, out)?,
        Format::Csv => write_csv(&batch, out)?,
    }
    let sojourn = batch_estimate(&batch, |d, _, _| d);
    let idle = batch_estimate(&batch, |_, w, _| f64::from(u8::from(w == 0.0)));
    println!(
        "{}",
        json!({
            "records": batch.len(),
            "replications": batch.replications(),
            "mean_sojourn": sojourn,
            "idle_fraction": idle,
            "epsilon": config.model.epsilon,
        })
    );
    Ok(())
}

fn sweep_cmd(g: &Global, resume: bool) -> Result<()> {
    let path = g.config.as_ref().ok_or_else(|| Error::Invalid("sweep needs --config".into()))?;
    let mut spec = load_spec(path)?;
    if let Some(seed) = g.seed {
        spec.base_seed = seed;
    }
    if let Some(out) = &g.out {
        spec.output = Some(out.clone());
    }
    let options = SweepOptions { threads: g.threads, reproducible: g.reproducible, resume, stop_after: None };
    let outcome = run_sweep(&spec, &options)?;
    let failures: Vec<_> =
        outcome.failures.iter().map(|(e, err)| json!({"epsilon": e, "error": err.kind(), "message": err.to_string()})).collect();
    for f in &failures {
        eprintln!("{f}");
    }
    match (&spec.output, g.format) {
        (None, Format::Csv) => {
            let mut out = String::new();
            if !g.reproducible {
                let secs =
                    std::time::SystemTime::now().duration_since(std::time::UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
                writeln!(out, "# generated unix={secs}").expect("writing to a String");
            }
            writeln!(out, "{CSV_HEADER}").expect("writing to a String");
            for r in &outcome.reports {
                writeln!(out, "{}", r.csv_row()).expect("writing to a String");
            }
            print!("{out}");
        }
        (None, Format::Json) => {
            println!("{}", serde_json::to_string_pretty(&json!({"reports": outcome.reports, "failures": failures}))?)
        }
        (Some(p), _) => println!(
            "{}",
            json!({"output": p, "rows": outcome.reports.len(), "failures": failures})
        ),
    }
    Ok(())
}

fn stein_cmd(g: &Global, mu: f64, lambda: f64, samples: u64, replications: u32, service: &ServiceArgs) -> Result<()> {
    let omegas = [0.1, 0.5, 1.0, 2.0, 5.0, 10.0];
    let xs = log_space(1.0, 21.0, 200);
    let (mut d1, mut d2, mut residual): (f64, f64, f64) = (0.0, 0.0, 0.0);
    for omega in omegas {
        for phase in [Phase::Cos, Phase::Sin] {
            for k in 2..=4 {
                let h = TestFunction::new(omega, phase, k)?;
                let sol = SteinSolution::new(h, mu)?;
                for x in xs.iter().map(|x| x - 1.0) {
                    let a = sol.derivative(k + 1, x);
                    let b = sol.derivative(k + 2, x);
                    d1 = d1.max(a.abs());
                    d2 = d2.max(b.abs());
                    residual = residual.max((-mu * a + b - h.derivative(k, x)).abs());
                }
            }
        }
    }

    let model = QueueModel::new(lambda, mu, service_for(service, mu, Some(3))?)?;
    let mut config = SimConfig::new(model.clone(), samples, replications, g.seed.unwrap_or(0));
    config.warmup_steps *= 2;
    let batch = lindley_run(&config)?;
    let mut stationarity = Vec::new();
    for (name, f) in [("linear", TestFn::Linear), ("quadratic", TestFn::Quadratic), ("quadratic_damped", TestFn::QuadraticDamped)] {
        for y in [0.0, 1.0] {
            let est = stationarity_residual(&model, &f, y, &batch)?;
            let z = if est.se > 0.0 { est.mean / est.se } else { 0.0 };
            stationarity.push((name, y, est, z));
        }
    }

    let bounds = [
        ("f_k1_max", d1, 1.0 / mu + 1e-9),
        ("f_k2_max", d2, 2.0 + 1e-9),
        ("stein_residual_max", residual, 1e-10),
    ];
    match g.format {
        Format::Json => emit_json(
            g,
            &json!({
                "derivative_bounds": bounds.iter().map(|(n, v, l)| json!({"check": n, "value": v, "limit": l, "pass": v <= l})).collect::<Vec<_>>(),
                "stationarity": stationarity.iter().map(|(n, y, e, z)| json!({"f": n, "y": y, "mean": e.mean, "se": e.se, "z": z, "pass": z.abs() <= 3.0})).collect::<Vec<_>>(),
            }),
        ),
        Format::Csv => {
            let mut out = String::from("check,param,value,limit,pass\n");
            for (n, v, l) in bounds {
                writeln!(out, "{n},,{v},{l},{}", v <= l).expect("writing to a String");
            }
            for (n, y, _, z) in &stationarity {
                writeln!(out, "stationarity_{n},y={y},{z},3,{}", z.abs() <= 3.0).expect("writing to a String");
            }
            emit(g, out)
        }
    }
}

fn report_cmd(g: &Global, input: Option<&Path>) -> Result<()> {
    let path = g.config.as_ref().ok_or_else(|| Error::Invalid("report needs --config".into()))?;
    let spec = load_spec(path)?;
    let csv = input
        .map(Path::to_path_buf)
        .or_else(|| spec.output.clone())
        .ok_or_else(|| Error::Invalid("report needs --input or an output path in the sweep config".into()))?;
    let rows = read_sweep_csv(&csv)?;
    let rep = report(&spec, &rows)?;
    match g.format {
        Format::Json => emit_json(g, &serde_json::to_value(&rep)?),
        Format::Csv => {
            let mut out = String::from("k,slope,intercept,r_squared,points_used,min_slope,slope_pass,bound_pass\n");
            for o in &rep.orders {
                let (s, i, r, n) = o
                    .fit
                    .as_ref()
                    .map(|f| (f.slope.to_string(), f.intercept.to_string(), f.r_squared.to_string(), f.points_used.to_string()))
                    .unwrap_or_default();
                writeln!(out, "{},{s},{i},{r},{n},{},{},{}", o.k, o.min_slope, o.slope_pass, o.bound_pass)
                    .expect("writing to a String");
            }
            emit(g, out)
        }
    }
}
