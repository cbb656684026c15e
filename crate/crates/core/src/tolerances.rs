//! Numeric tolerances shared across the crate.
//!
//! Every threshold that appears in more than one place, or that a consumer
//! might want to cite, lives here with a one-line justification.  Local
//! truncation knobs (series lengths, quadrature node counts) stay with the
//! code that owns them.

/// Eigenvalue slack when asserting positive semidefiniteness of matrices
/// that are PSD in exact arithmetic (Gram matrices, hereditary images of
/// PSD arguments).  Relative to the matrix norm.
pub const PSD_SLACK: f64 = 1e-10;

/// Relative error allowed on the hereditary round trips
/// k(T,T*) ∘ (1/k)(T,T*) = id and its reverse.
pub const ROUND_TRIP_RTOL: f64 = 1e-8;

/// Default stopping tolerance of the alternating-projection feasibility
/// solver: relative Frobenius residual ‖L(Γ) − B‖ / max(1, ‖B‖).
pub const FEASIBILITY_TOL: f64 = 1e-8;

/// Slack accepted when verifying an infeasibility certificate H:
/// λ_max of every dual-cone image must stay below this times ‖H‖.
pub const CERTIFICATE_TOL: f64 = 1e-8;

/// Tolerance on lifting identities: ‖V*V − I‖ and the intertwining
/// residual ‖V T* − M_ζ* V‖ on truncated models.
pub const LIFTING_TOL: f64 = 1e-6;

/// Allowed deviation of |ψ| from 1 on the boundary circles and of |φ|
/// from its prescribed boundary moduli, sampled densely.
pub const BOUNDARY_MODULUS_TOL: f64 = 1e-6;

/// Newton refinement target for zeros of test functions.
pub const ZERO_TOL: f64 = 1e-8;

/// End-to-end interpolation and commutant-intertwining tolerance for the
/// realization round trip: |W(z_j) − w_j| and ‖XV* − V*M_W‖.
pub const ROUNDTRIP_TOL: f64 = 1e-5;

/// Final balance-identity residual required of the decomposition
/// extracted from a colligation at the largest sampled radius r.
pub const CONVERSE_FINAL_TOL: f64 = 1e-4;

/// Relative eigenvalue cutoff below which a PSD factorization drops a
/// direction; keeping smaller eigenvalues would only inject noise into
/// defect factors and model blocks.
pub const RANK_CUTOFF: f64 = 1e-12;

/// Condition-number ceiling for kernel Gram matrices; beyond this the
/// Pick model is numerically meaningless (nodes too close).
pub const GRAM_COND_LIMIT: f64 = 1e12;

/// Slack on operator norms that are ≤ 1 in exact arithmetic (transfer
/// function values, truncated multiplication matrices of contractive
/// multipliers).
pub const CONTRACTION_SLACK: f64 = 1e-8;

/// Hard cap on the number of terms of a hereditary sum before reporting
/// a convergence failure; reached only for spectra hugging the boundary.
pub const HEREDITARY_TERM_CAP: usize = 4000;

/// Agreement required between the series and theta evaluations of the
/// kernel, and for boundary values that vanish in closed form.
pub const THETA_AGREEMENT_TOL: f64 = 1e-10;

/// A deflated kernel matrix has exact rank two; its third singular value
/// must fall below this fraction of the largest.
pub const DEFLATION_RANK_TOL: f64 = 1e-8;
