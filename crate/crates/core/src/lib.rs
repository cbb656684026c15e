//! Numerical machinery for Schur-Agler interpolation on the annulus
//! A = { z : q < |z| < 1 }.
//!
//! The crate is built from six layers, each usable on its own:
//!
//! * [`kernel`]: the Sarason kernel family k(z,w;t) with series and
//!   theta-quotient evaluation, the orthonormal basis ζ_n, Gram matrices,
//!   and boundary quadrature.
//! * [`testfn`]: the minimal inner functions ψ_γ (unimodular on both
//!   boundary circles, two interior zeros), their Laurent coefficients and
//!   decay estimates, and rank-two deflated kernels.
//! * [`hereditary`]: functional calculus ζ_j(T), the hereditary maps
//!   k(T,T*) and (1/k)(T,T*), defect factors, liftings, multiplication
//!   matrices, and the Pick compression model.
//! * [`decomposition`]: atomic operator-valued measures on the
//!   test-function circle and the semidefinite feasibility solver that
//!   finds them, plus finite L²-models and Riemann-net refinement checks.
//! * [`realization`]: unitary colligations built from the lurking
//!   isometry, transfer-function evaluation, the commutant intertwining
//!   check, and the reverse extraction of a decomposition from a
//!   colligation.
//! * [`harness`]: JSON-configured task orchestration shared by the CLI
//!   and the Python bindings.

pub mod contour;
pub mod decomposition;
pub mod harness;
pub mod hereditary;
pub mod kernel;
pub mod laurent;
pub mod linalg;
pub mod realization;
pub mod testfn;
pub mod tolerances;

pub use harness::{
    config_from_str, emit_report, parse_config, report_json, run, HarnessError, ProblemConfig,
    ReportFormat, RunReport, RunStatus, Task,
};
pub use kernel::{AnnulusParams, KernelMethod, KernelValue, SeriesControl};
pub use laurent::LaurentCoeffs;
pub use testfn::{AtomFunction, TestFunction};
