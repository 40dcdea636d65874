//! Penalized regression spline additive models with automated checks of the
//! basis dimension `k`.

pub mod basis;
pub mod data;
pub mod diagnostics;
pub mod fit;
pub mod kselect;
pub mod seed;
pub mod simulation;

pub use basis::{BasisError, BasisKind, BasisSpec, DesignBlock, KnotVector};
pub use data::{DataError, Dataset};
pub use diagnostics::{kappa_test, resmooth_check, DiagnosticsError, KappaConfig, KappaResult, ResmoothResult};
pub use fit::{evaluate_term, fit, Criterion, FitError, FittedModel, ModelSpec};
pub use kselect::{doubling_driver, grid_search, KSearchTrace, KSelectError, Method};
pub use simulation::{gen_data, run_experiment, test_function, Scenario, ScenarioId, ScenarioResult, ScenarioRow};
