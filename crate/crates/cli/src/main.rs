use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;

#[derive(Parser, Debug)]
#[command(name = "mg1lab", version, about = "Heavy-traffic M/G/1 sojourn-time laboratory")]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Global {
    /// Base seed for simulations.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// JSON configuration file (sweep, simulation or match-family config).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output path; stdout when omitted.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads (0 lets rayon decide).
    #[arg(long, global = true, default_value_t = 0)]
    pub threads: usize,
    #[arg(long, global = true, value_enum, default_value_t = Format::Json)]
    pub format: Format,
    /// Omit the timestamp line from sweep CSV output.
    #[arg(long, global = true)]
    pub reproducible: bool,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Csv,
    Json,
}

#[derive(Args, Debug, Clone)]
pub struct ServiceArgs {
    /// Match the first m moments of Exp(mu) with the preset family.
    #[arg(long, conflicts_with = "service")]
    pub matched: Option<u32>,
    /// Service distribution JSON file: {"branches":[{"weight":..,"shape":..,"rate":..}]}.
    #[arg(long)]
    pub service: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Match the first m moments of Exp(mu) by a hyper-Erlang mixture.
    Match {
        #[arg(long, default_value_t = 1.0)]
        mu: f64,
        #[arg(long)]
        order: u32,
    },
    /// Exact waiting and sojourn moments.
    Moments {
        #[arg(long)]
        lambda: f64,
        #[arg(long, default_value_t = 1.0)]
        mu: f64,
        #[arg(long, default_value_t = 6)]
        n: u32,
        #[command(flatten)]
        service: ServiceArgs,
    },
    /// Bound constants: (b, d) series, C1, C2 and the alternative constants.
    Constants {
        #[arg(long)]
        k: u32,
        #[arg(long)]
        lambda: f64,
        #[arg(long, default_value_t = 1.0)]
        mu: f64,
        #[command(flatten)]
        service: ServiceArgs,
    },
    /// Lindley simulation; writes the sample batch to --out.
    Simulate {
        #[arg(long)]
        lambda: Option<f64>,
        #[arg(long, default_value_t = 1.0)]
        mu: f64,
        #[arg(long, default_value_t = 100_000)]
        samples: u64,
        #[arg(long, default_value_t = 8)]
        replications: u32,
        /// Warmup as a multiple of 10/eps^2.
        #[arg(long, default_value_t = 1.0)]
        warmup_factor: f64,
        #[arg(long, default_value_t = 1)]
        thin: u32,
        #[command(flatten)]
        service: ServiceArgs,
    },
    /// Epsilon sweep from a JSON sweep config (--config); CSV rows in grid order.
    Sweep {
        /// Keep completed points already in the output file.
        #[arg(long)]
        resume: bool,
    },
    /// Stein derivative bounds and generator stationarity checks.
    SteinCheck {
        #[arg(long, default_value_t = 1.0)]
        mu: f64,
        #[arg(long, default_value_t = 0.9)]
        lambda: f64,
        #[arg(long, default_value_t = 125_000)]
        samples: u64,
        #[arg(long, default_value_t = 8)]
        replications: u32,
        #[command(flatten)]
        service: ServiceArgs,
    },
    /// Rate fits and bound checks for a finished sweep (--config).
    Report {
        /// Sweep CSV; defaults to the config's output path.
        #[arg(long)]
        input: Option<PathBuf>,
    },
}

fn fail(kind: &str, message: &str, code: u8) -> ExitCode {
    eprintln!("{}", serde_json::json!({ "error": kind, "message": message }));
    ExitCode::from(code)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => return fail("usage", e.to_string().trim(), 1),
    };
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(e.kind(), &e.to_string(), if e.is_validation() { 1 } else { 2 }),
    }
}
