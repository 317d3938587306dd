//! Simulated method of moments for the screening model.

mod estimate;
mod moments;
mod truncation;

pub use estimate::{
    estimate, group_seed, objective, read_params_csv, EstimationConfig, EstimationResult, FreeParams, GroupFit, GroupTarget, ParamBox, StartTrace,
    Weighting, FAILURE_PENALTY, MAX_PCT_DEVIATION, PARAM_NAMES, SCALE_FLOORS,
};
pub use moments::{
    compute_moments, marginal_default, population_moments, read_moments_csv, write_moments_csv, MomentSimulator, MomentVector,
    MOMENT_NAMES,
};
pub use truncation::{cvm_statistic, select_truncation, select_truncation_with_penalty, TruncatedNormal, TruncationSpec, TRIM_GRID};
