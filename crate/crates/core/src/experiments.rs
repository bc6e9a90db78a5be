//! ε-sweeps, rate fits and pass/fail reports.

use std::collections::{HashMap, HashSet};
use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bounds::{c2_constant, cor2_wasserstein_bound};
use crate::error::{Error, Result};
use crate::metrics::{
    default_omega_grid, exact_report, wasserstein_empirical, DistanceReport, Divergence, ZolotarevLowerBound, CSV_HEADER,
};
use crate::queue::{Phase, QueueModel};
use crate::service::{log_space, match_exponential_moments, MatchFamily, ServiceDistribution};
use crate::simulate::{lindley_run, Estimate, SimConfig};

/// Default sweep grid.
pub const DEFAULT_GRID: [f64; 5] = [0.2, 0.1, 0.05, 0.025, 0.0125];

/// Noise floor of transform-exact metrics.
pub const EXACT_NOISE_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ServiceSpec {
    Exponential,
    Matched {
        order: u32,
        #[serde(default)]
        family: Option<MatchFamily>,
    },
    Explicit {
        distribution: ServiceDistribution,
    },
}

impl ServiceSpec {
    pub fn build(&self, mu: f64) -> Result<ServiceDistribution> {
        match self {
            ServiceSpec::Exponential => ServiceDistribution::exponential(mu),
            ServiceSpec::Matched { order, family } => {
                let family = family.clone().unwrap_or_else(|| MatchFamily::preset(*order));
                Ok(match_exponential_moments(mu, *order, &family)?.distribution)
            }
            ServiceSpec::Explicit { distribution } => Ok(distribution.clone()),
        }
    }
}

fn one_u32() -> u32 {
    1
}

fn one_f64() -> f64 {
    1.0
}

/// Simulation settings applied at every grid point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimTemplate {
    pub sample_steps: u64,
    pub replications: u32,
    /// Warmup as a multiple of `10/ε²`.
    #[serde(default = "one_f64")]
    pub warmup_factor: f64,
    #[serde(default = "one_u32")]
    pub thin: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OmegaGrid {
    pub lo: f64,
    pub hi: f64,
    pub points: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub mu: f64,
    /// Orders `k` reported at each grid point.
    pub orders: Vec<u32>,
    pub epsilon_grid: Vec<f64>,
    pub service: ServiceSpec,
    #[serde(default)]
    pub simulation: Option<SimTemplate>,
    #[serde(default)]
    pub omega_grid: Option<OmegaGrid>,
    #[serde(default)]
    pub base_seed: u64,
    #[serde(default)]
    pub output: Option<PathBuf>,
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.mu.is_finite() && self.mu > 0.0) {
            return Err(Error::Invalid(format!("mu must be positive, got {}", self.mu)));
        }
        if self.orders.is_empty() || self.orders.iter().any(|&k| !(2..=6).contains(&k)) {
            return Err(Error::Invalid("orders must be non-empty and within 2..=6".into()));
        }
        if self.epsilon_grid.len() < 3 {
            return Err(Error::Invalid("epsilon grid needs at least 3 points".into()));
        }
        if let Some(e) = self.epsilon_grid.iter().find(|e| !(**e > 0.0 && **e < 0.5)) {
            return Err(Error::Invalid(format!("epsilon {e} outside (0, 1/2)")));
        }
        if self.epsilon_grid.windows(2).any(|w| w[1] >= w[0]) {
            return Err(Error::Invalid("epsilon grid must be strictly decreasing".into()));
        }
        if let Some(g) = &self.omega_grid {
            if !(g.lo > 0.0 && g.hi > g.lo && g.points >= 1) {
                return Err(Error::Invalid("omega grid needs 0 < lo < hi and points >= 1".into()));
            }
        }
        if let Some(t) = &self.simulation {
            if t.warmup_factor.is_nan() || t.warmup_factor < 1.0 {
                return Err(Error::Invalid("warmup_factor must be >= 1".into()));
            }
        }
        Ok(())
    }

    pub fn omegas(&self) -> Vec<f64> {
        match &self.omega_grid {
            Some(g) => log_space(g.lo, g.hi, g.points),
            None => default_omega_grid(),
        }
    }
}

/// Seed of the simulation at grid point `epsilon`.
pub fn point_seed(base_seed: u64, epsilon: f64) -> u64 {
    ChaCha8Rng::seed_from_u64(base_seed ^ epsilon.to_bits()).next_u64()
}

fn evaluate_point(spec: &SweepSpec, service: &ServiceDistribution, epsilon: f64) -> Result<Vec<DistanceReport>> {
    let model = QueueModel::with_slack(spec.mu, epsilon, service.clone())?;
    let omegas = spec.omegas();
    let batch = match &spec.simulation {
        Some(t) => {
            let warmup = (t.warmup_factor * SimConfig::min_warmup(model.epsilon) as f64).ceil() as u64;
            let config = SimConfig {
                model: model.clone(),
                warmup_steps: warmup,
                sample_steps: t.sample_steps,
                replications: t.replications,
                base_seed: point_seed(spec.base_seed, epsilon),
                thin: t.thin,
            };
            Some(lindley_run(&config)?)
        }
        None => None,
    };
    spec.orders
        .iter()
        .map(|&k| {
            let mut report = exact_report(&model, k, &omegas)?;
            report.epsilon = epsilon;
            if let Some(b) = &batch {
                report.wasserstein = Some(wasserstein_empirical(b, k, spec.mu, model.epsilon)?);
            }
            Ok(report)
        })
        .collect()
}

/// Result of a sweep: reports in grid order plus the points that failed.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepOutcome {
    pub reports: Vec<DistanceReport>,
    pub failures: Vec<(f64, Error)>,
}

/// Options controlling persistence.
#[derive(Debug, Clone, Default)]
pub struct SweepOptions {
    /// Points evaluated concurrently (0 uses the rayon default).
    pub threads: usize,
    /// Omit the timestamp comment line.
    pub reproducible: bool,
    /// Reuse completed points already present in the output file.
    pub resume: bool,
    /// Stop after this many newly evaluated points (for interruption tests).
    pub stop_after: Option<usize>,
}

fn completed_points(path: &Path, orders: &[u32]) -> Result<(Option<String>, Vec<String>, HashSet<u64>)> {
    let text = match std::fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok((None, Vec::new(), HashSet::new())),
        Err(e) => return Err(e.into()),
    };
    // Only newline-terminated lines were fully written.
    let complete = match text.rfind('\n') {
        Some(i) => &text[..=i],
        None => "",
    };
    let mut stamp = None;
    let mut rows: Vec<String> = Vec::new();
    for line in complete.lines() {
        if line.starts_with("# generated") {
            stamp = Some(line.to_string());
        } else if !line.starts_with('#') && line != CSV_HEADER && !line.is_empty() {
            rows.push(line.to_string());
        }
    }
    let mut seen: HashMap<u64, HashSet<u32>> = HashMap::new();
    for row in &rows {
        let r = parse_csv_row(row)?;
        seen.entry(r.epsilon.to_bits()).or_default().insert(r.k);
    }
    let done: HashSet<u64> = seen
        .into_iter()
        .filter(|(_, ks)| orders.iter().all(|k| ks.contains(k)))
        .map(|(e, _)| e)
        .collect();
    rows.retain(|row| parse_csv_row(row).map(|r| done.contains(&r.epsilon.to_bits())).unwrap_or(false));
    Ok((stamp, rows, done))
}

/// Runs the sweep. With an output path, rows are appended in grid order as
/// each chunk of `threads` points completes, so an interrupted sweep can be
/// resumed with `resume = true`.
pub fn run_sweep(spec: &SweepSpec, options: &SweepOptions) -> Result<SweepOutcome> {
    spec.validate()?;
    let service = spec.service.build(spec.mu)?;

    let mut done = HashSet::new();
    let mut writer = match &spec.output {
        Some(path) => {
            let (stamp, rows, completed) =
                if options.resume { completed_points(path, &spec.orders)? } else { (None, Vec::new(), HashSet::new()) };
            done = completed;
            let mut w = BufWriter::new(File::create(path)?);
            if !options.reproducible {
                let line = stamp.unwrap_or_else(|| {
                    let secs = std::time::SystemTime::now()
                        .duration_since(std::time::UNIX_EPOCH)
                        .map(|d| d.as_secs())
                        .unwrap_or(0);
                    format!("# generated unix={secs}")
                });
                writeln!(w, "{line}")?;
            }
            writeln!(w, "{CSV_HEADER}")?;
            for row in &rows {
                writeln!(w, "{row}")?;
            }
            w.flush()?;
            Some(w)
        }
        None => None,
    };
    let mut previous: HashMap<u64, Vec<DistanceReport>> = HashMap::new();
    if options.resume {
        if let Some(path) = &spec.output {
            for line in std::fs::read_to_string(path)?.lines() {
                if line.starts_with('#') || line == CSV_HEADER || line.is_empty() {
                    continue;
                }
                let r = parse_csv_row(line)?;
                previous.entry(r.epsilon.to_bits()).or_default().push(r);
            }
        }
    }

    let pending: Vec<f64> = spec.epsilon_grid.iter().copied().filter(|e| !done.contains(&e.to_bits())).collect();
    let pending = match options.stop_after {
        Some(n) => pending.into_iter().take(n).collect(),
        None => pending,
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(options.threads)
        .build()
        .map_err(|e| Error::Invalid(format!("thread pool: {e}")))?;
    let chunk = options.threads.max(1);
    let mut fresh: HashMap<u64, Result<Vec<DistanceReport>>> = HashMap::new();
    for group in pending.chunks(chunk) {
        let results: Vec<Result<Vec<DistanceReport>>> =
            pool.install(|| group.par_iter().map(|&e| evaluate_point(spec, &service, e)).collect());
        for (&eps, result) in group.iter().zip(results) {
            if let (Some(w), Ok(rows)) = (writer.as_mut(), &result) {
                for r in rows {
                    writeln!(w, "{}", r.csv_row())?;
                }
            }
            if let (Some(w), Err(e)) = (writer.as_mut(), &result) {
                writeln!(w, "# failed epsilon={eps} error={} {}", e.kind(), e.to_string().replace('\n', " "))?;
            }
            fresh.insert(eps.to_bits(), result);
        }
        if let Some(w) = writer.as_mut() {
            w.flush()?;
        }
    }

    let mut outcome = SweepOutcome { reports: Vec::new(), failures: Vec::new() };
    for &eps in &spec.epsilon_grid {
        if let Some(rows) = previous.remove(&eps.to_bits()) {
            outcome.reports.extend(rows);
        } else if let Some(result) = fresh.remove(&eps.to_bits()) {
            match result {
                Ok(rows) => outcome.reports.extend(rows),
                Err(e) => outcome.failures.push((eps, e)),
            }
        }
    }
    Ok(outcome)
}

fn parse_f64(field: &str, name: &str) -> Result<f64> {
    field.parse().map_err(|_| Error::Invalid(format!("bad {name} field {field:?}")))
}

/// Inverse of [`DistanceReport::csv_row`] (the skipped-point list is not stored).
pub fn parse_csv_row(line: &str) -> Result<DistanceReport> {
    let f: Vec<&str> = line.split(',').collect();
    if f.len() != CSV_HEADER.split(',').count() {
        return Err(Error::Invalid(format!("row has {} fields: {line}", f.len())));
    }
    let wasserstein = if f[2].is_empty() {
        None
    } else {
        Some(Estimate { mean: parse_f64(f[2], "w_est")?, se: parse_f64(f[3], "w_se")? })
    };
    let phase = match f[6] {
        "cos" => Phase::Cos,
        "sin" => Phase::Sin,
        other => return Err(Error::Invalid(format!("bad phase {other:?}"))),
    };
    let divergence = match f[13] {
        "true" => Divergence::Infinite,
        "false" => Divergence::Finite,
        other => return Err(Error::Invalid(format!("bad divergent flag {other:?}"))),
    };
    Ok(DistanceReport {
        epsilon: parse_f64(f[0], "epsilon")?,
        k: f[1].parse().map_err(|_| Error::Invalid(format!("bad k {:?}", f[1])))?,
        wasserstein,
        zolotarev_lower: ZolotarevLowerBound {
            value: parse_f64(f[4], "zol_lb")?,
            omega: parse_f64(f[5], "zol_lb_omega")?,
            phase,
            skipped: Vec::new(),
        },
        moment_gaps: f[7..13].iter().map(|g| parse_f64(g, "gap")).collect::<Result<_>>()?,
        divergence,
    })
}

/// Reads a sweep CSV, skipping comment lines and the header.
pub fn read_sweep_csv(path: &Path) -> Result<Vec<DistanceReport>> {
    std::fs::read_to_string(path)?
        .lines()
        .filter(|l| !l.starts_with('#') && *l != CSV_HEADER && !l.is_empty())
        .map(parse_csv_row)
        .collect()
}

/// Opens an existing sweep file for appending.
pub fn open_append(path: &Path) -> Result<File> {
    Ok(OpenOptions::new().append(true).open(path)?)
}

/// Least-squares line through `(ln ε, ln value)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub points_used: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RatePoint {
    pub epsilon: f64,
    pub value: f64,
    pub noise_floor: f64,
}

/// OLS fit of `ln value` on `ln ε`, using only points above 10× their noise floor.
pub fn fit_rate(points: &[RatePoint]) -> Result<RateFit> {
    let usable: Vec<(f64, f64)> = points
        .iter()
        .filter(|p| p.epsilon > 0.0 && p.value > 10.0 * p.noise_floor && p.value > 0.0)
        .map(|p| (p.epsilon.ln(), p.value.ln()))
        .collect();
    if usable.len() < 3 {
        return Err(Error::DegenerateFit(format!(
            "{} of {} points above 10x the noise floor, need 3",
            usable.len(),
            points.len()
        )));
    }
    let n = usable.len() as f64;
    let mx = usable.iter().map(|p| p.0).sum::<f64>() / n;
    let my = usable.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = usable.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = usable.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = usable.iter().map(|p| (p.1 - my).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::DegenerateFit("all usable points share one epsilon".into()));
    }
    let slope = sxy / sxx;
    let r_squared = if syy == 0.0 { 1.0 } else { (sxy * sxy / (sxx * syy)).clamp(0.0, 1.0) };
    Ok(RateFit { slope, intercept: my - slope * mx, r_squared, points_used: usable.len() })
}

/// Smallest acceptable fitted slope of the dictionary lower bound at order `k`.
pub fn min_slope(k: u32) -> f64 {
    match k {
        2 => 1.7,
        3 => 2.6,
        _ => 0.85 * k as f64,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderReport {
    pub k: u32,
    pub fit: Option<RateFit>,
    pub fit_error: Option<String>,
    pub min_slope: f64,
    pub slope_pass: bool,
    /// Every finite-divergence row satisfies `zol_lb <= C₂ ε^k + 1e-12` and,
    /// when simulated, `w_est <= 2 (2^(k-2) k C₂)^(1/k) ε + 3 SE`.
    pub bound_pass: bool,
    pub violations: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub orders: Vec<OrderReport>,
    pub pass: bool,
}

/// Rate fits over the three smallest ε and bound checks for each order.
pub fn report(spec: &SweepSpec, rows: &[DistanceReport]) -> Result<Report> {
    let service = spec.service.build(spec.mu)?;
    let mut orders = Vec::new();
    for &k in &spec.orders {
        let mut mine: Vec<&DistanceReport> = rows.iter().filter(|r| r.k == k).collect();
        mine.sort_by(|a, b| b.epsilon.total_cmp(&a.epsilon));
        let tail: Vec<RatePoint> = mine
            .iter()
            .rev()
            .take(3)
            .map(|r| RatePoint { epsilon: r.epsilon, value: r.zolotarev_lower.value, noise_floor: EXACT_NOISE_FLOOR })
            .collect();
        let (fit, fit_error) = match fit_rate(&tail) {
            Ok(f) => (Some(f), None),
            Err(e) => (None, Some(e.to_string())),
        };
        let slope_pass = fit.as_ref().is_some_and(|f| f.slope >= min_slope(k));

        let mut violations = Vec::new();
        for r in &mine {
            if r.divergence == Divergence::Infinite {
                continue;
            }
            let model = QueueModel::with_slack(spec.mu, r.epsilon, service.clone())?;
            let constants = c2_constant(&model, k)?;
            let upper = constants.c2 * r.epsilon.powi(k as i32);
            if r.zolotarev_lower.value > upper + 1e-12 {
                violations.push(format!("eps={} zol_lb={} > C2 eps^k={}", r.epsilon, r.zolotarev_lower.value, upper));
            }
            if let Some(w) = r.wasserstein {
                let bound = cor2_wasserstein_bound(&constants, r.epsilon);
                if w.mean > bound + 3.0 * w.se {
                    violations.push(format!("eps={} w_est={} > {} + 3 SE", r.epsilon, w.mean, bound));
                }
            }
        }
        orders.push(OrderReport {
            k,
            fit,
            fit_error,
            min_slope: min_slope(k),
            slope_pass,
            bound_pass: violations.is_empty(),
            violations,
        });
    }
    let pass = orders.iter().all(|o| o.slope_pass && o.bound_pass);
    Ok(Report { orders, pass })
}

/// Loads a JSON sweep spec.
pub fn load_spec(path: &Path) -> Result<SweepSpec> {
    let spec: SweepSpec = serde_json::from_str(&std::fs::read_to_string(path)?)?;
    spec.validate()?;
    Ok(spec)
}
