//! Empirical-Bayes large-scale testing from per-unit summary statistics.
//!
//! Given an estimated effect and standard error for each testing unit, the
//! library estimates two discrete mixing distributions by constrained
//! maximum likelihood — a unimodal distribution g over candidate effects and
//! an unconstrained distribution h over candidate variances — then computes
//! per-unit posterior effect distributions, local false discovery rates
//! (lfdr), local false sign rates (lfsr), and FDR-controlled discovery
//! lists. A simulation harness generates synthetic two-group experiments for
//! calibration studies.

mod error;
pub mod densities;
pub mod estimator;
pub mod grids;
pub mod inference;
pub(crate) mod rng_util;
pub mod selfcheck;
pub mod simulation;

pub use error::{Error, Result};

pub use densities::{
    build_component_tensor, normal_density, scaled_chisq_density, scaled_chisq_log_density,
    unit_likelihood, ComponentTensor, TensorConfig, UnitStats,
};
pub use estimator::{
    fit, fit_tensor, gradient, hessian, neg_log_likelihood, subsample_fit, FitOptions, FitReport,
    MixingPair,
};
pub use grids::{
    build_effect_grid, build_variance_grid, build_variance_grid_spaced, EffectGrid, VarianceGrid,
    VarianceSpacing,
};
pub use inference::{
    discovery_list, pi0_estimate, posterior, DiscoveryList, ListRule, PosteriorTable, Statistic,
};
pub use simulation::{
    ash_normal_oracle, discretize_effect_prior, empirical_fdr, false_discovery_proportion,
    generate_replicate, run_scenario, summarize, wasserstein1, CalibrationReport, GAltShape,
    Pi0Law, ReplicateOutcome, ReplicateTruth, RunSettings, ScenarioSpec, TwoGroupData,
    VarianceLaw,
};
