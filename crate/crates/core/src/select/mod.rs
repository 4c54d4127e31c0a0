//! The surrogate indicator ξ, its validation-set mean ξ̄, selection of λ̂,
//! spectrum-quantile baselines and the sufficient-condition diagnostic.

mod grid;
mod surrogate;

pub use grid::{
    auto_grid, log_space, quantile_nearest_rank, spectrum_quantile, GridSpec, DEFAULT_GRID_POINTS,
};
pub use surrogate::{
    select_lambda, sufficient_condition_diagnostic, t_values, xi, xi_bar, ConditionStatus,
    Diagnostic, Surrogate, SurrogateReport, TValues, DEFAULT_THRESHOLD,
};

/// Percentages of the spectrum-quantile baseline.
pub const BASELINE_QUANTILES: [f64; 5] = [10.0, 30.0, 50.0, 70.0, 90.0];
