//! Lindley-recursion Monte Carlo for the stationary M/G/1 queue.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::queue::QueueModel;
use crate::service::MomentVector;

/// Minimum recorded steps per replication.
pub const MIN_SAMPLE_STEPS: u64 = 10_000;

/// Batches per replication for batch-means standard errors.
pub const BATCHES_PER_REPLICATION: usize = 20;

fn one() -> u32 {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub model: QueueModel,
    pub warmup_steps: u64,
    /// Recorded triples per replication.
    pub sample_steps: u64,
    pub replications: u32,
    pub base_seed: u64,
    /// Record every `thin`-th customer (1 records all of them).
    #[serde(default = "one")]
    pub thin: u32,
}

impl SimConfig {
    /// Smallest admissible warmup, `ceil(10 / ε²)`.
    pub fn min_warmup(epsilon: f64) -> u64 {
        (10.0 / (epsilon * epsilon)).ceil() as u64
    }

    /// Config with the minimal warmup and no thinning.
    pub fn new(model: QueueModel, sample_steps: u64, replications: u32, base_seed: u64) -> Self {
        let warmup_steps = Self::min_warmup(model.epsilon);
        SimConfig { model, warmup_steps, sample_steps, replications, base_seed, thin: 1 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.model.rho >= 1.0 {
            return Err(Error::UnstableQueue { rho: self.model.rho });
        }
        let need = Self::min_warmup(self.model.epsilon);
        if self.warmup_steps < need {
            return Err(Error::Invalid(format!(
                "warmup_steps {} below 10/eps^2 = {need}",
                self.warmup_steps
            )));
        }
        if self.sample_steps < MIN_SAMPLE_STEPS {
            return Err(Error::Invalid(format!(
                "sample_steps {} below {MIN_SAMPLE_STEPS}",
                self.sample_steps
            )));
        }
        if self.replications == 0 {
            return Err(Error::Invalid("replications must be >= 1".into()));
        }
        if self.thin == 0 {
            return Err(Error::Invalid("thin must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchMeta {
    pub config: SimConfig,
    /// `(seed, stream)` that keys each replication's generator.
    pub streams: Vec<(u64, u64)>,
}

/// Recorded `(D, W, U)` triples, replications concatenated in index order.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleBatch {
    pub sojourn: Vec<f64>,
    pub waiting: Vec<f64>,
    pub overshoot: Vec<f64>,
    pub meta: BatchMeta,
}

impl SampleBatch {
    pub fn len(&self) -> usize {
        self.sojourn.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sojourn.is_empty()
    }

    pub fn replications(&self) -> usize {
        self.meta.config.replications as usize
    }

    /// Index ranges of the individual replications.
    pub fn replication_ranges(&self) -> Vec<std::ops::Range<usize>> {
        let per = self.meta.config.sample_steps as usize;
        (0..self.replications()).map(|r| r * per..(r + 1) * per).collect()
    }
}

struct Run {
    sojourn: Vec<f64>,
    waiting: Vec<f64>,
    overshoot: Vec<f64>,
}

fn run_replication(config: &SimConfig, replication: u64) -> Run {
    let model = &config.model;
    let mut rng = ChaCha8Rng::seed_from_u64(config.base_seed);
    rng.set_stream(replication);
    let n = config.sample_steps as usize;
    let mut out = Run { sojourn: Vec::with_capacity(n), waiting: Vec::with_capacity(n), overshoot: Vec::with_capacity(n) };

    let mut d = model.service.sample(&mut rng);
    let step = |d: &mut f64, rng: &mut ChaCha8Rng| {
        let x: f64 = rng.sample::<f64, _>(Exp1) / model.lambda;
        let w = (*d - x).max(0.0);
        let u = (x - *d).max(0.0);
        *d = w + model.service.sample(rng);
        (w, u)
    };
    for _ in 0..config.warmup_steps {
        step(&mut d, &mut rng);
    }
    for _ in 0..n {
        let mut last = (0.0, 0.0);
        for _ in 0..config.thin {
            last = step(&mut d, &mut rng);
        }
        out.sojourn.push(d);
        out.waiting.push(last.0);
        out.overshoot.push(last.1);
    }
    out
}

/// Runs all replications (in parallel) and merges them by index.
///
/// Replication `r` draws from the ChaCha8 stream `r` under `base_seed`, so
/// the result does not depend on scheduling.
pub fn lindley_run(config: &SimConfig) -> Result<SampleBatch> {
    config.validate()?;
    let runs: Vec<Run> = (0..config.replications as u64)
        .into_par_iter()
        .map(|r| run_replication(config, r))
        .collect();
    let total = runs.len() * config.sample_steps as usize;
    let mut batch = SampleBatch {
        sojourn: Vec::with_capacity(total),
        waiting: Vec::with_capacity(total),
        overshoot: Vec::with_capacity(total),
        meta: BatchMeta {
            config: config.clone(),
            streams: (0..config.replications as u64).map(|r| (config.base_seed, r)).collect(),
        },
    };
    for run in runs {
        batch.sojourn.extend(run.sojourn);
        batch.waiting.extend(run.waiting);
        batch.overshoot.extend(run.overshoot);
    }
    Ok(batch)
}

/// A Monte Carlo mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub se: f64,
}

impl Estimate {
    /// `|mean - target|` in units of SE (infinite for a nonzero gap at SE 0).
    pub fn z_score(&self, target: f64) -> f64 {
        let gap = (self.mean - target).abs();
        if gap == 0.0 {
            0.0
        } else {
            gap / self.se
        }
    }
}

/// Batch-means estimate of the mean of `values`, split into
/// [`BATCHES_PER_REPLICATION`] equal batches inside each replication range.
pub fn batch_means(values: &[f64], ranges: &[std::ops::Range<usize>]) -> Estimate {
    let mut means = Vec::with_capacity(ranges.len() * BATCHES_PER_REPLICATION);
    for range in ranges {
        let len = range.len() / BATCHES_PER_REPLICATION;
        for b in 0..BATCHES_PER_REPLICATION {
            let start = range.start + b * len;
            let chunk = &values[start..start + len];
            means.push(chunk.iter().sum::<f64>() / len as f64);
        }
    }
    let nb = means.len() as f64;
    let mean = means.iter().sum::<f64>() / nb;
    let var = means.iter().map(|m| (m - mean).powi(2)).sum::<f64>() / (nb - 1.0);
    Estimate { mean, se: (var / nb).sqrt() }
}

/// Batch-means estimate of `E[f(D, W, U)]`.
pub fn batch_estimate<F>(batch: &SampleBatch, f: F) -> Estimate
where
    F: Fn(f64, f64, f64) -> f64 + Sync,
{
    let values: Vec<f64> = (0..batch.len())
        .into_par_iter()
        .map(|i| f(batch.sojourn[i], batch.waiting[i], batch.overshoot[i]))
        .collect();
    batch_means(&values, &batch.replication_ranges())
}

/// Plug-in moments of `scale * D` with batch-means standard errors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentEstimates {
    pub moments: MomentVector,
    pub standard_errors: Vec<f64>,
}

pub fn batch_moments(batch: &SampleBatch, order: u32, scale: f64) -> Result<MomentEstimates> {
    if order == 0 || order > 6 {
        return Err(Error::OrderOutOfRange { order, min: 1, max: 6 });
    }
    let estimates: Vec<Estimate> = (1..=order as i32)
        .map(|j| batch_estimate(batch, |d, _, _| (scale * d).powi(j)))
        .collect();
    Ok(MomentEstimates {
        moments: MomentVector::new(estimates.iter().map(|e| e.mean).collect())?,
        standard_errors: estimates.iter().map(|e| e.se).collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct DumpHeader {
    meta: BatchMeta,
    records: usize,
    layout: String,
}

/// Binary dump: one JSON header line, then little-endian `f64` triples `(D, W, U)`.
pub fn write_binary(batch: &SampleBatch, path: &Path) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    let header = DumpHeader { meta: batch.meta.clone(), records: batch.len(), layout: "f64le D,W,U".into() };
    serde_json::to_writer(&mut out, &header)?;
    out.write_all(b"\n")?;
    for i in 0..batch.len() {
        for v in [batch.sojourn[i], batch.waiting[i], batch.overshoot[i]] {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn read_binary(path: &Path) -> Result<SampleBatch> {
    let mut input = BufReader::new(File::open(path)?);
    let mut line = String::new();
    input.read_line(&mut line)?;
    let header: DumpHeader = serde_json::from_str(line.trim_end())?;
    let mut batch = SampleBatch {
        sojourn: Vec::with_capacity(header.records),
        waiting: Vec::with_capacity(header.records),
        overshoot: Vec::with_capacity(header.records),
        meta: header.meta,
    };
    let mut buf = [0u8; 24];
    for _ in 0..header.records {
        input.read_exact(&mut buf)?;
        let get = |k: usize| f64::from_le_bytes(buf[8 * k..8 * k + 8].try_into().expect("8 bytes"));
        batch.sojourn.push(get(0));
        batch.waiting.push(get(1));
        batch.overshoot.push(get(2));
    }
    Ok(batch)
}

/// CSV dump with columns `replication,index,sojourn,waiting,overshoot`.
pub fn write_csv(batch: &SampleBatch, path: &Path) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(out, "replication,index,sojourn,waiting,overshoot")?;
    for (r, range) in batch.replication_ranges().into_iter().enumerate() {
        for (j, i) in range.enumerate() {
            writeln!(out, "{r},{j},{:?},{:?},{:?}", batch.sojourn[i], batch.waiting[i], batch.overshoot[i])?;
        }
    }
    out.flush()?;
    Ok(())
}
