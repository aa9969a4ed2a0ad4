//! Simulator and verification suite for the symmetric simple exclusion
//! process (SSEP) on `Z^d` and on finite tori.
//!
//! The crate realizes the process three independent ways and checks them
//! against each other:
//!
//! - [`graphical`]: the Harris construction on a torus — Poisson clocks on
//!   site pairs, stirring bijections, forward evolution, and dual walks read
//!   backward through the same clocks. Forward/backward agreement here is
//!   exact bit equality, not statistical.
//! - [`dual`]: event-driven n-particle dynamics on the unbounded lattice —
//!   labeled exclusion walks, the coupled independent walks driven by shared
//!   and auxiliary marks, collision bookkeeping, and Monte Carlo estimators
//!   for the correlation identity.
//! - [`exact`]: certified finite-state oracles — n-particle semigroups on
//!   small tori by uniformization with Poisson-tail error control, exact
//!   density profiles, and exact evaluation of both sides of the correlation
//!   identity by independent code paths.
//!
//! [`kernel`] defines the jump laws and single-walk transition distributions,
//! [`measures`] the initial configurations and product/finite-range initial
//! measures with closed-form cylinder probabilities, and [`experiments`] the
//! decay-rate experiments (log-log slope fits over time grids) and the
//! machine-readable reports behind the `ssep` command-line tool.
//!
//! Everything downstream of a seed is deterministic: replica-level
//! parallelism uses per-replica counter-derived streams ([`rng`]) and
//! order-fixed reductions, so a (config, seed) pair fixes every output byte.

pub mod dual;
pub mod error;
pub mod exact;
pub mod experiments;
pub mod graphical;
pub mod kernel;
pub mod measures;
pub mod oracle;
pub mod rng;

pub use error::{Error, Result};
