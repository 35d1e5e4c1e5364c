//! Error type shared across the crate.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Error, Debug)]
pub enum Error {
    /// Renormalization of a vector with norm below the representable threshold.
    #[error("cannot renormalize: |v| = {norm:.3e} below threshold 1e-8")]
    NearZeroVector { norm: f64 },

    /// Geodesic interpolation between (numerically) antipodal points is ambiguous.
    #[error("antipodal endpoints: <p,q> = {inner:.12} admits no unique minimizing geodesic")]
    AntipodalPair { inner: f64 },

    /// A sampled plane curve turns by >= pi/2 between neighbouring samples,
    /// so its winding number cannot be resolved from the samples.
    #[error("curve under-resolved at sample {index}: angular jump {jump:.4} >= pi/2")]
    UnresolvedCurve { index: usize, jump: f64 },

    /// The sphere constraint left the trust region (or state became non-finite).
    #[error("blow-up at t = {t:.6}: max ||phi|-1| = {violation:.3e}")]
    BlowUp { t: f64, violation: f64 },

    /// Damping profile fails a(x) >= 1 on the observation core.
    #[error("damping profile too weak: min over omega0 is {min_on_core:.3e} < 1")]
    ProfileTooWeak { min_on_core: f64 },

    /// A decay probe produced energies unusable for rate estimation.
    #[error("degenerate decay probe (seed {seed}): {reason}")]
    DegenerateProbe { seed: u64, reason: String },

    /// Control Gramian condition number beyond the trustable range.
    #[error("gramian ill-conditioned: cond = {cond:.3e} > 1e14 (n_max too large for omega/T)")]
    GramianIllConditioned { cond: f64 },

    /// Zero-mode (spatial mean) bookkeeping failed during control synthesis.
    #[error("zero-mode steering inconsistent: residual {residual:.3e} vs tolerance {tol:.3e}")]
    TargetUnreachableZeroMode { residual: f64, tol: f64 },

    /// The control iteration stopped contracting.
    #[error(
        "no contraction at iterate {iterate}: ratios {prev_ratio:.3} then {ratio:.3} exceed 0.9"
    )]
    NoContraction {
        iterate: usize,
        prev_ratio: f64,
        ratio: f64,
    },

    /// Replaying a stored control missed its target beyond tolerance.
    #[error("replay mismatch: terminal error {error:.3e} exceeds tolerance {tol:.3e}")]
    ReplayMismatch { error: f64, tol: f64 },

    /// Damped energy stopped decreasing while above target (harmonic-map obstruction).
    #[error(
        "stall at t = {t:.3}: relative energy decrease {decrease:.3e} over a 32pi window \
         with E = {energy:.6} still above target {target:.6}"
    )]
    StallDetected { t: f64, decrease: f64, energy: f64, target: f64 },

    /// A geodesic-chain hop failed to converge during the global sweep.
    #[error("chain hop {hop} failed: {reason}")]
    ChainHopFailed { hop: usize, reason: String },

    /// Endpoint states lie in different homotopy classes (k=1 only).
    #[error("winding mismatch: u0 winds {w0}, u1 winds {w1}; degree is conserved")]
    WindingMismatch { w0: i64, w1: i64 },

    /// A diagnostic window is not covered by the recorded trajectory.
    #[error("window [{t0:.3}, {t1:.3}] not covered by trajectory [{have0:.3}, {have1:.3}]")]
    WindowNotCovered { t0: f64, t1: f64, have0: f64, have1: f64 },

    /// Exponential fit requested on a series with non-positive values.
    #[error("non-positive energy in decay fit at t = {t:.6}: E = {energy:.3e}")]
    NonPositiveEnergy { t: f64, energy: f64 },

    /// Malformed configuration or argument.
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("malformed data file: {0}")]
    MalformedFile(String),
}
