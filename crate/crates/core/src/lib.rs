//! Sub-sampled k-nearest-neighbor Z-estimation for conditional moment models.
//!
//! Given data `Z_i = (X_i, Y_i, ...)` and a score `psi(Z; theta)`, the
//! estimate `theta(x)` solves `sum_i alpha(X_i) psi(Z_i; theta) = 0`, where
//! `alpha` averages the "1/k on the k nearest neighbors" rule over all (or
//! `B` random) sub-samples of size `s`. The crate provides the closed-form
//! weights, the solver, plug-in normal confidence intervals, an adaptive
//! choice of `s`, synthetic generators and a Monte Carlo harness.
//!
//! The numerical core is generic over [`Scalar`] (`f32`, `f64`); the aliases
//! at the bottom of this file fix the common choices.

pub mod adaptive;
pub mod combinatorics;
pub mod dataset;
pub mod error;
pub mod harness;
pub mod inference;
pub mod knn;
mod linalg;
pub mod moments;
mod scalar;
pub mod solver;
pub mod synth;

pub use adaptive::{
    estimate_intrinsic_dimension, select_s_estimation, select_s_inference, AdaptiveOptions,
    AdaptiveSelection, DimensionEstimate, GTrace, TracePoint,
};
pub use combinatorics::{
    incrementality, incrementality_exact, incrementality_oracle, zeta, zeta_exact,
    IncrementalitySequences, LogBinomialTable,
};
pub use dataset::{
    csv_header, expand_columns, load_csv, load_json, subsample_without_replacement, write_csv,
    Dataset, Observation, RngSpec,
    Row, Schema, Subsampler,
};
pub use error::{Error, Result};
pub use harness::{
    run_coverage_experiment, run_distribution_experiment, run_rate_experiment, CoverageReport,
    DistributionReport, ExperimentConfig, RateReport, SPolicy, WeightPolicy,
};
pub use inference::{
    confidence_interval, estimate_m0, estimate_sigma_j, infer, normal_quantile, plugin_variance,
    qq_data, InferenceOptions, InferenceResult,
};
pub use knn::{
    complete_weights, incomplete_weights, rank_by_distance, shrinkage_statistic,
    DistanceRanking, KnnKernel, SubsampleKernel, WeightMode, WeightVector,
};
pub use moments::{
    het_effect_moment, iv_moment, quantile_moment, regression_moment, Moment, MomentFunction,
    MomentName, Smoothness,
};
pub use scalar::Scalar;
pub use solver::{
    solve, solve_weighted, weighted_loss_gradient_check, GradientCheck, SolveMethod,
    SolveOptions, SolveResult,
};
pub use synth::{
    doubling_diagnostic, generate, generate_het_effect, Design, Generator, GeneratorKind,
    GeneratorSpec, GroundTruth, MeanFunction,
};

pub type Dataset64 = Dataset<f64>;
pub type Dataset32 = Dataset<f32>;
pub type Observation64 = Observation<f64>;
pub type Observation32 = Observation<f32>;
pub type DistanceRanking64 = DistanceRanking<f64>;
pub type DistanceRanking32 = DistanceRanking<f32>;
pub type WeightVector64 = WeightVector<f64>;
pub type WeightVector32 = WeightVector<f32>;
pub type Moment64 = Moment<f64>;
pub type Moment32 = Moment<f32>;
pub type SolveResult64 = SolveResult<f64>;
pub type SolveResult32 = SolveResult<f32>;
pub type InferenceResult64 = InferenceResult<f64>;
pub type InferenceResult32 = InferenceResult<f32>;
