//! Roughness-penalized scalar-on-function regression for time series with
//! joint simultaneous confidence bands.
//!
//! The crate fits the linear model relating a scalar response to integrals
//! of functional predictors against coefficient curves, estimated by
//! penalized least squares over an orthonormal basis expansion. Uniform
//! uncertainty statements come from a block multiplier bootstrap of the
//! score-residual process, yielding bands that cover all coefficient
//! curves simultaneously. A simulation harness generates functional
//! moving-average data and measures empirical band coverage.

pub mod basis;
pub mod bootstrap;
pub mod error;
pub mod estimator;
pub mod fdata;
pub mod pipeline;
pub mod quadrature;
pub mod seeding;
pub mod simulate;
pub mod tuning;

pub use basis::{BasisKind, BasisSet};
pub use bootstrap::{
    build_band, BandLevel, BandSet, BootstrapPlan, WeightMode,
};
pub use error::{Error, Result};
pub use estimator::{
    build_design, build_penalty, coefficient_curves, fit_penalized, ModelLayout, PenalizedFit,
};
pub use fdata::{FpcResult, FunctionalDataSet, ScoreSet};
pub use pipeline::{fit_pipeline, master_basis, FittedModel, PipelineSettings, WorkingBasis};
pub use simulate::{
    run_monte_carlo, BetaScenario, DgpConfig, DispersionMode, ErrorScenario, HarnessSettings,
    SimulationReport,
};
pub use quadrature::QuadratureRule;
pub use tuning::{
    select_block_mv, select_dim_cpv, select_lambda_gcv, CpvSelection, GcvSelection,
    MvSelection, TuningConfig,
};
