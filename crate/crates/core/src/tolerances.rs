//! Numerical tolerances shared by the exact verifiers.

/// Normalization of enumerated probability tables.
pub const NORMALIZATION: f64 = 1e-12;
/// Detailed balance, checked as a relative difference of probability fluxes.
pub const DETAILED_BALANCE: f64 = 1e-12;
/// Generator row sums.
pub const ROW_SUM: f64 = 1e-12;
/// Stationarity `pi L = 0`.
pub const STATIONARITY: f64 = 1e-10;
/// Identities between exactly computed quantities.
pub const IDENTITY: f64 = 1e-10;
/// Relative slack for inequalities between exact sums.
pub const INEQUALITY_REL: f64 = 1e-9;
/// Central finite-difference step for entropy derivatives.
pub const FD_STEP: f64 = 1e-5;
/// Tolerance on the finite-difference de Bruijn check.
pub const FD_TOL: f64 = 1e-6;
/// Minimum improvement that counts as a fresh LSI candidate.
pub const LSI_REFINE: f64 = 1e-6;
/// Agreement of two independent eigen-solvers.
pub const SOLVER_AGREEMENT: f64 = 1e-8;
/// Ratio identity of the LSI certificate.
pub const LSI_CERTIFICATE: f64 = 1e-8;

/// `lhs <= rhs` up to a relative slack; magnitudes below one get the same
/// slack as an absolute tolerance.
pub fn le_rel(lhs: f64, rhs: f64, rel: f64) -> bool {
    lhs <= rhs + rel * lhs.abs().max(rhs.abs()).max(1.0)
}
