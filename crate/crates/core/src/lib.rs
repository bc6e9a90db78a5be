//! Heavy-traffic M/G/1 sojourn-time laboratory.

pub mod bounds;
pub mod error;
pub mod experiments;
pub mod metrics;
pub mod nnls;
pub mod quadrature;
pub mod queue;
pub mod service;
pub mod simulate;
pub mod stein;

pub use error::{Error, Result};
pub use service::{
    match_exponential_moments, Branch, MatchFamily, MomentMatch, MomentVector, ServiceDistribution, TailBranch,
};
pub use queue::{
    overshoot_moments, pk_transform, scaled_sojourn_moments, smooth_functional, sojourn_moments, steady_moments,
    transform_derivatives_at_lambda, waiting_moments, Phase, QueueModel, SmoothFunctional, SteadyMoments,
};
pub use simulate::{batch_estimate, batch_moments, lindley_run, Estimate, SampleBatch, SimConfig};
pub use stein::{
    generator_exponential, generator_shifted_waiting, stationarity_residual, stein_derivative, ShiftedWaitingGenerator,
    SmoothTest, SteinSolution, TestFn, TestFunction,
};
pub use bounds::{
    alt_constants, bd_series, c1_constant, c2_constant, cor2_wasserstein_bound, cor3_moment_bound,
    zol_wasserstein_inequality_check, AltConstants, BdEntry, BdSeries, BoundConstants,
};
pub use metrics::{
    default_omega_grid, divergence_check, moment_gap, moment_gaps, wasserstein_empirical, zolotarev_lower_bound,
    Divergence, DistanceReport, ZolotarevLowerBound,
};
pub use experiments::{
    fit_rate, load_spec, min_slope, read_sweep_csv, report, run_sweep, RateFit, RatePoint, Report, ServiceSpec,
    SimTemplate, SweepOptions, SweepOutcome, SweepSpec,
};
