//! Numerical checks of the theoretical claims about confidence-weighted penalties.

pub mod decomposition;
pub mod gaussian;

pub use decomposition::{
    ace_extra_gradient, exact_negative_advantage, finite_difference_gradient,
    negative_advantage_magnitude, overconfident_kl_approximation, random_instance, relative_error,
    residual_gradient, sampled_extra_gradient, selective_regularizer_gradient,
    selective_regularizer_terms, selective_regularizer_value, selective_regularizer_value_with,
    verify_decomposition, verify_decomposition_with_fault, DecompositionReport,
    DecompositionSummary, FaultInjection, IDENTITY_TOLERANCE,
};
pub use gaussian::{
    default_grid, directional_variance_check, gaussian_quality_report, quality_improvement_check,
    quality_improvement_check_with_limit, second_moment_check, DirectionalVariance, Estimate,
    GaussianModelConfig, GaussianQualityReport, QualityVerdict, SecondMomentReport,
};
