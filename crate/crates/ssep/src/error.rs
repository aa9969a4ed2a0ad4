//! Crate-wide error type.
//!
//! Variants are grouped by the module that raises them; the CLI maps every
//! variant to a process exit code (precondition violations exit 3,
//! acceptance-band failures exit 2).

use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

/// All failure modes of the library.
#[derive(Debug, Error)]
pub enum Error {
    // ---- kernel ----
    /// Jump law has a displacement without its mirror, or mirrored rates differ.
    #[error("asymmetric kernel: {0}")]
    AsymmetricKernel(String),
    /// Support rates do not sum to 1 within 1e-12.
    #[error("kernel rates sum to {0}, not 1")]
    NotNormalized(f64),
    /// Support does not generate Z^d as a group.
    #[error("decomposable kernel: support generates a proper sublattice")]
    Decomposable,
    /// Zero displacement in the support.
    #[error("zero displacement in kernel support")]
    ZeroDisplacement,
    /// Rate outside (0, 1], duplicate displacement, or dimension mismatch.
    #[error("invalid kernel support: {0}")]
    InvalidSupport(String),
    /// Uniformization series would need more terms than the configured cap.
    #[error("truncation budget exceeded: {0}")]
    TruncationBudgetExceeded(String),

    // ---- graphical ----
    /// Expected event count exceeds the memory budget.
    #[error("horizon too large: expected {expected:.3e} events exceeds budget {budget:.3e}")]
    HorizonTooLarge { expected: f64, budget: f64 },
    /// Requested stirring window is not contained in the realized horizon.
    #[error("window out of range: [{s}, {end}] not within [0, {horizon}]")]
    WindowOutOfRange { s: f64, end: f64, horizon: f64 },
    /// Configuration and clock stream live on different tori.
    #[error("domain mismatch: {0}")]
    DomainMismatch(String),
    /// Dual walk start sites are not pairwise distinct.
    #[error("duplicate sites in dual walk request")]
    DuplicateSites,
    /// Torus side too small for the kernel support (self-pairs possible).
    #[error("torus side {l} must exceed twice the support radius {radius}")]
    TorusTooSmall { l: usize, radius: i64 },

    // ---- dual ----
    /// Density-profile time grid too coarse for the requested accuracy.
    #[error("rho grid too coarse: interpolation error {err:.3e} exceeds 10% of stderr {stderr:.3e}")]
    RhoGridTooCoarse { err: f64, stderr: f64 },

    // ---- exact ----
    /// n-subset state space exceeds the configured cap.
    #[error("state space too large: {states} states exceeds cap {cap}")]
    StateSpaceTooLarge { states: u64, cap: u64 },
    /// Adaptive quadrature failed to converge within the doubling budget.
    #[error("quadrature not converged: last change {change:.3e} vs target {target:.3e}")]
    QuadratureNotConverged { change: f64, target: f64 },

    // ---- measures ----
    /// Cylinder-probability window enumeration too large.
    #[error("window too large: {bits} dependency bits exceeds cap {cap}")]
    WindowTooLarge { bits: usize, cap: usize },

    // ---- experiments ----
    /// Every row of a rate table failed the stderr admissibility rule.
    #[error("signal below noise: no admissible rows for the rate fit")]
    SignalBelowNoise,
    /// Fewer than 4 admissible rows for a rate fit.
    #[error("too few points for rate fit: {0} admissible rows, need at least 4")]
    TooFewPoints(usize),
    /// Observable with a single site has an exactly-zero target.
    #[error("single-site observable: the estimated difference is identically zero under a translation-invariant measure; use at least two sites")]
    SingleSiteObservable,
    /// Config file missing a field or holding an unusable value.
    #[error("invalid experiment config: {0}")]
    InvalidConfig(String),

    // ---- plumbing ----
    /// I/O failure reading configs or writing reports.
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    /// Malformed JSON config.
    #[error("config parse error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit code for the CLI: 2 for acceptance-band failures
    /// (reported by the binary itself), 3 for every library error
    /// (precondition violations and environmental failures).
    #[must_use]
    pub fn exit_code(&self) -> i32 {
        3
    }
}
