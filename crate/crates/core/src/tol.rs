//! Numerical tolerances and budgets used throughout the crate.

/// Tolerance on stored probability distributions (row sums, non-negativity).
pub const DIST_TOL: f64 = 1e-12;

/// Tolerance on derived quantities (residuals, identity checks).
pub const DERIVED_TOL: f64 = 1e-8;

/// Tolerance for cross-checks between two algebraically equal routes.
pub const CROSS_TOL: f64 = 1e-10;

/// Additive slack when checking theoretical bounds.
pub const BOUND_SLACK: f64 = 1e-6;

/// Condition-number guard for linear solves.
pub const COND_LIMIT: f64 = 1e12;

/// Default per-step enumeration budget: largest history/future index space
/// we are willing to materialize. Exceeding it is an error, never a silent
/// truncation.
pub const DEFAULT_BUDGET: u64 = 1 << 20;
