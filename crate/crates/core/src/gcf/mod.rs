//! GMM on orthogonalized moments: the residual `q - f(k, v; theta)` and the
//! weighting functions `phi(z)` are both taken net of their least-squares
//! projections on a Hermite basis in the control variables, and the special
//! instrument supplies the identifying variation.

mod estimate;
mod frame;
mod moments;
mod orthogonality;
mod weighting;

pub use estimate::{
    avg_log_markup, estimate, estimate_table, gmm_objective, neutral_start, EstimateOptions,
    EstimationResult, OBJECTIVE_PENALTY,
};
pub use frame::{build_lagged_frame, EstimationTable, TABLE_COLUMNS};
pub use moments::{
    control_function_moments, moment_contributions, orthogonal_residual, orthogonalized_moments,
    orthogonalized_moments_unprojected, residual, ControlProjection, InstrumentPlan, Projections,
};
pub use orthogonality::{
    check_neyman_orthogonality, check_with_projections, directional_derivative,
    perturbed_control_function_moments, perturbed_orthogonal_moments, random_direction,
    DerivativeEstimate, DirectionReport, NuisanceDirection, OrthogonalityOptions,
    OrthogonalityReport,
};
pub use weighting::{
    centered_covariance, invert_covariance, quadratic_form, weighting_matrix, OrthoInstruments,
    WeightingMatrix, WeightingMode,
};
