//! Design-of-experiments toolkit for performance evaluation of cloud services.
//!
//! The crate is organized around a small pipeline:
//!
//! 1. [`catalog`] — a queryable catalog of experimental factors (workload,
//!    computing resource, capacity) and validation of factor selections.
//! 2. [`design`] — two-level full-factorial design generation with ±1
//!    codings and seeded run-order randomization.
//! 3. [`runner`] — trial-by-trial execution through a pluggable executor
//!    (synthetic response surface or external command).
//! 4. [`effects`] — main/interaction effect estimation with a Lenth
//!    pseudo-standard-error significance reference line.
//! 5. [`store`] — a file-based experiment workspace with atomic updates.
//! 6. [`report`] — deterministic text, CSV, and SVG (Pareto chart) reports.

pub mod catalog;
pub mod design;
pub mod effects;
pub mod report;
pub mod runner;
pub mod stats;
pub mod store;

pub use catalog::{builtin_catalog, Branch, Catalog, FactorDef, FactorSelection, Role, ValidatedSelection};
pub use design::{full_factorial, randomize_run_order, DesignMatrix, Trial};
pub use effects::{analyze, AnalysisReport, EffectEstimate, ResultSet, Term};
pub use runner::{run_experiment, ExecutorSpec, ResponseModel};
pub use store::Workspace;
