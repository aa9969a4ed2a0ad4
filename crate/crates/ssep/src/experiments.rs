//! Decay-rate experiments over the exclusion dynamics.
//!
//! An [`ExperimentSpec`] (usually parsed from JSON) names a jump kernel, an
//! initial measure or configuration, an observable site set, a time grid, and
//! a replica budget. Running it produces one or more [`RateTable`]s — rows of
//! `(t, value, stderr)` — plus a weighted log-log [`RateFit`] of the decay
//! exponent, bundled into a [`RunOutcome`] that can be written as CSV files
//! with a JSON summary sidecar.
//!
//! Pipelines:
//!
//! - `weak_convergence`: Monte Carlo over dual exclusion walks on the full
//!   lattice; each replica scores the initial measure's exact cylinder
//!   probability at the walk endpoints, so the only noise is the walk law.
//! - `lp_convergence`: outer Monte Carlo over initial configurations drawn
//!   from the measure on a torus; the inner correlation is computed exactly
//!   per sample by the finite-state semigroup, so `|.|^p` has no inner-noise
//!   bias.
//! - `vfunction_sup` / `vfunction_Xphi`: fully exact single-configuration
//!   tables of the correlation defect for a step or periodic witness.
//! - `vfunction_averaged`: outer Monte Carlo over configurations with exact
//!   inner defects, averaged before taking the magnitude.
//! - `gradient_sums`: exact absolute and squared gradient sums of the
//!   single-walk transition density.
//! - `basic_identity_sweep`: the exact two-sided correlation-identity sweep
//!   plus Monte Carlo estimates of both sides with z-score agreement checks.
//!
//! Everything downstream of `(config, seed)` is deterministic: replica and
//! sample fan-out uses counter-derived streams and order-fixed reductions, so
//! reruns reproduce every output byte.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dual::{estimate_basic_lhs, estimate_basic_rhs, mean_and_stderr, simulate_dual_exclusion, Estimate};
use crate::error::{Error, Result};
use crate::exact::{exact_basic_identity, exact_rho, NParticleGenerator};
use crate::kernel::{Domain, Kernel, TorusGeometry};
use crate::measures::{make_measure, InitialMeasure, LatticeConfiguration, MeasureSpec};
use crate::rng::stream;

/// Two-sided 95% normal quantile used for fit half-widths.
const Z95: f64 = 1.959_963_984_540_054;

/// Relative-stderr floor for fit weights: exact rows (stderr 0) get this
/// instead of an infinite weight, which reduces to an unweighted fit when
/// every row is exact.
const REL_FLOOR: f64 = 1e-12;

/// Monte Carlo kinds refuse replica budgets below this.
const MIN_REPLICAS: usize = 1000;

// ---------------------------------------------------------------------------
// serialized experiment descriptions
// ---------------------------------------------------------------------------

/// Serialized jump-law description: dimension plus optional explicit support.
///
/// ```json
/// {"d": 1, "support": [[[1], 0.5], [[-1], 0.5]]}
/// ```
///
/// Omitting `support` selects the nearest-neighbor kernel in dimension `d`.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct KernelSpec {
    /// Lattice dimension.
    pub d: usize,
    /// `(displacement, rate)` pairs; `None` means nearest neighbor.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub support: Option<Vec<(Vec<i64>, f64)>>,
}

impl KernelSpec {
    /// Build and validate the kernel.
    ///
    /// # Errors
    /// Kernel validation errors propagate.
    pub fn build(&self) -> Result<Kernel> {
        match &self.support {
            Some(support) => Kernel::new(self.d, support),
            None => Ok(Kernel::nearest_neighbor(self.d)),
        }
    }
}

/// Observable site set `A` (lattice coordinates, one vector per site).
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ObservableSpec {
    /// Sites whose joint occupation is observed.
    pub sites: Vec<Vec<i64>>,
}

/// Which experiment pipeline to run.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    /// Dual-walk Monte Carlo of the measure-averaged correlation defect.
    WeakConvergence,
    /// Outer-sample `L^p` moments of the exact per-configuration defect.
    LpConvergence,
    /// Exact defect table for a fixed worst-case-style witness configuration.
    VfunctionSup,
    /// Exact defect table for a profile-regular (periodic) configuration.
    #[serde(rename = "vfunction_Xphi")]
    VfunctionXphi,
    /// Measure-averaged defect with exact inner values.
    VfunctionAveraged,
    /// Exact gradient sums of the single-walk transition density.
    GradientSums,
    /// Exact identity sweep plus Monte Carlo agreement legs.
    BasicIdentitySweep,
}

impl ExperimentKind {
    /// The serialized kind string.
    #[must_use]
    pub fn as_str(self) -> &'static str {
        match self {
            Self::WeakConvergence => "weak_convergence",
            Self::LpConvergence => "lp_convergence",
            Self::VfunctionSup => "vfunction_sup",
            Self::VfunctionXphi => "vfunction_Xphi",
            Self::VfunctionAveraged => "vfunction_averaged",
            Self::GradientSums => "gradient_sums",
            Self::BasicIdentitySweep => "basic_identity_sweep",
        }
    }

    fn is_monte_carlo(self) -> bool {
        matches!(
            self,
            Self::WeakConvergence
                | Self::LpConvergence
                | Self::VfunctionAveraged
                | Self::BasicIdentitySweep
        )
    }

    fn needs_torus(self) -> bool {
        matches!(
            self,
            Self::LpConvergence | Self::VfunctionSup | Self::VfunctionXphi | Self::VfunctionAveraged
        )
    }
}

/// A complete experiment description.
///
/// ```json
/// {
///   "kind": "weak_convergence",
///   "kernel": {"d": 1},
///   "measure": {"type": "local_rule", "rule": "majority3", "range": 1},
///   "observable": {"sites": [[0], [1]]},
///   "times": [4, 8, 16, 32, 64, 128],
///   "replicas": 100000,
///   "seed": 7,
///   "out": "weak.csv"
/// }
/// ```
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    /// Pipeline selector.
    pub kind: ExperimentKind,
    /// Jump law.
    pub kernel: KernelSpec,
    /// Moment order for `lp_convergence` (rejected elsewhere).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p: Option<f64>,
    /// Initial measure or configuration (required by every kind except
    /// `gradient_sums` and `basic_identity_sweep`).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub measure: Option<MeasureSpec>,
    /// Observable sites (required by the correlation kinds).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub observable: Option<ObservableSpec>,
    /// Strictly increasing time grid.
    pub times: Vec<f64>,
    /// Replica / outer-sample budget (Monte Carlo kinds only).
    #[serde(default)]
    pub replicas: usize,
    /// Master seed; every stream the run uses derives from it.
    pub seed: u64,
    /// Torus side for the exact-inner kinds.
    #[serde(rename = "torus_L", default, skip_serializing_if = "Option::is_none")]
    pub torus_l: Option<usize>,
    /// Output CSV path (the JSON summary lands next to it).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<String>,
    /// Optional acceptance band `[lo, hi]` for the primary fitted slope.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub band: Option<[f64; 2]>,
}

impl ExperimentSpec {
    /// Check the structural invariants shared by all pipelines.
    ///
    /// # Errors
    /// [`Error::InvalidConfig`] on an empty or non-increasing time grid, a
    /// Monte Carlo kind with fewer than 1000 replicas, a missing or
    /// out-of-range moment order, a missing torus side, a torus too small
    /// for the diffusive range of the time grid, or a malformed band.
    pub fn validate(&self) -> Result<()> {
        if self.times.is_empty() {
            return Err(Error::InvalidConfig("empty time grid".into()));
        }
        if self.times.iter().any(|t| !t.is_finite() || *t < 0.0) {
            return Err(Error::InvalidConfig("times must be finite and nonnegative".into()));
        }
        if self.times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidConfig("times must be strictly increasing".into()));
        }
        if self.kind.is_monte_carlo() && self.replicas < MIN_REPLICAS {
            return Err(Error::InvalidConfig(format!(
                "{} needs at least {MIN_REPLICAS} replicas, got {}",
                self.kind.as_str(),
                self.replicas
            )));
        }
        match self.kind {
            ExperimentKind::LpConvergence => {
                let p = self
                    .p
                    .ok_or_else(|| Error::InvalidConfig("lp_convergence needs a moment order p".into()))?;
                if !(p.is_finite() && p >= 1.0) {
                    return Err(Error::InvalidConfig(format!("moment order p = {p} outside [1, inf)")));
                }
            }
            _ => {
                if self.p.is_some() {
                    return Err(Error::InvalidConfig(format!(
                        "moment order p only applies to lp_convergence, not {}",
                        self.kind.as_str()
                    )));
                }
            }
        }
        if self.kind.needs_torus() {
            let l = self
                .torus_l
                .ok_or_else(|| Error::InvalidConfig(format!("{} needs torus_L", self.kind.as_str())))?;
            let t_max = *self.times.last().expect("nonempty grid");
            // diffusive containment: walks must not feel the wrap over the grid
            if ((l * l) as f64) < 16.0 * t_max {
                return Err(Error::InvalidConfig(format!(
                    "torus_L = {l} too small for t_max = {t_max}: need L^2 >= 16 t_max"
                )));
            }
        }
        if let Some([lo, hi]) = self.band {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return Err(Error::InvalidConfig(format!("malformed band [{lo}, {hi}]")));
            }
        }
        Ok(())
    }

    /// The observable sites, validated against the kernel dimension and for
    /// pairwise distinctness.
    fn observable_sites(&self, d: usize) -> Result<Vec<Vec<i64>>> {
        let obs = self
            .observable
            .as_ref()
            .ok_or_else(|| Error::InvalidConfig(format!("{} needs an observable", self.kind.as_str())))?;
        if obs.sites.is_empty() {
            return Err(Error::InvalidConfig("observable has no sites".into()));
        }
        for s in &obs.sites {
            if s.len() != d {
                return Err(Error::InvalidConfig(format!(
                    "observable site {s:?} has dimension {}, kernel has {d}",
                    s.len()
                )));
            }
        }
        for i in 0..obs.sites.len() {
            for j in i + 1..obs.sites.len() {
                if obs.sites[i] == obs.sites[j] {
                    return Err(Error::DuplicateSites);
                }
            }
        }
        Ok(obs.sites.clone())
    }

    fn measure(&self) -> Result<InitialMeasure> {
        let spec = self
            .measure
            .as_ref()
            .ok_or_else(|| Error::InvalidConfig(format!("{} needs a measure", self.kind.as_str())))?;
        make_measure(spec)
    }
}

// ---------------------------------------------------------------------------
// rate tables and slope fits
// ---------------------------------------------------------------------------

/// One measurement: time, magnitude, and its standard error (0 when exact).
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct RateRow {
    /// Evolution time.
    pub t: f64,
    /// Measured magnitude at `t`.
    pub value: f64,
    /// Standard error of `value` (0 for exact pipelines).
    pub stderr: f64,
}

/// A `(t, value, stderr)` table over a time grid.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Default)]
pub struct RateTable {
    /// Rows in time order.
    pub rows: Vec<RateRow>,
}

impl RateTable {
    /// Render as CSV with the header `t,value,stderr`. Values use shortest
    /// round-trip scientific notation, so the bytes are reproducible and the
    /// numbers parse back exactly.
    #[must_use]
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,value,stderr\n");
        for r in &self.rows {
            writeln!(out, "{},{:e},{:e}", r.t, r.value, r.stderr).expect("string write");
        }
        out
    }

    /// Parse the CSV form produced by [`Self::to_csv`].
    ///
    /// # Errors
    /// [`Error::InvalidConfig`] on a bad header, field count, or number.
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        match lines.next() {
            Some("t,value,stderr") => {}
            other => {
                return Err(Error::InvalidConfig(format!(
                    "rate table header must be 't,value,stderr', got {other:?}"
                )))
            }
        }
        let mut rows = Vec::new();
        for (i, line) in lines.enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 3 {
                return Err(Error::InvalidConfig(format!(
                    "rate table row {} has {} fields, expected 3",
                    i + 2,
                    fields.len()
                )));
            }
            let parse = |s: &str| -> Result<f64> {
                s.trim()
                    .parse::<f64>()
                    .map_err(|e| Error::InvalidConfig(format!("rate table row {}: {e}", i + 2)))
            };
            rows.push(RateRow { t: parse(fields[0])?, value: parse(fields[1])?, stderr: parse(fields[2])? });
        }
        Ok(Self { rows })
    }
}

/// Weighted least-squares fit of `ln(value)` against `ln(1 + t)`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct RateFit {
    /// Fitted decay exponent (slope in the log-log plane).
    pub slope: f64,
    /// Fitted intercept.
    pub intercept: f64,
    /// 95% half-width of the slope under the per-row noise model.
    pub half_width: f64,
    /// `(t_first, t_last)` over the rows that entered the fit.
    pub window: (f64, f64),
    /// Number of rows that entered the fit.
    pub points: usize,
}

fn row_is_admissible(r: &RateRow) -> bool {
    r.t.is_finite()
        && r.t >= 0.0
        && r.value.is_finite()
        && r.value > 0.0
        && r.stderr.is_finite()
        && r.stderr >= 0.0
        && r.stderr < r.value / 3.0
}

/// Fit a decay exponent: regress `ln(value)` on `ln(1 + t)` with weights
/// `1 / max(stderr / value, 1e-12)^2`, over the admissible rows (positive
/// value with `stderr < value / 3`). Rows that fail admissibility are noise,
/// not signal, and are excluded rather than allowed to bend the fit.
///
/// # Errors
/// [`Error::TooFewPoints`] with the admissible count when fewer than 4 rows
/// qualify; [`Error::InvalidConfig`] when the admissible times are
/// degenerate.
pub fn fit_rate(table: &RateTable) -> Result<RateFit> {
    let rows: Vec<&RateRow> = table.rows.iter().filter(|r| row_is_admissible(r)).collect();
    if rows.len() < 4 {
        return Err(Error::TooFewPoints(rows.len()));
    }
    let pts: Vec<(f64, f64, f64)> = rows
        .iter()
        .map(|r| {
            let rel = (r.stderr / r.value).max(REL_FLOOR);
            (r.t.ln_1p(), r.value.ln(), 1.0 / (rel * rel))
        })
        .collect();
    let sw: f64 = pts.iter().map(|p| p.2).sum();
    let xbar = pts.iter().map(|p| p.0 * p.2).sum::<f64>() / sw;
    let ybar = pts.iter().map(|p| p.1 * p.2).sum::<f64>() / sw;
    let sxx: f64 = pts.iter().map(|p| p.2 * (p.0 - xbar) * (p.0 - xbar)).sum();
    let sxy: f64 = pts.iter().map(|p| p.2 * (p.0 - xbar) * (p.1 - ybar)).sum();
    if sxx <= 0.0 {
        return Err(Error::InvalidConfig("degenerate time grid for the rate fit".into()));
    }
    let slope = sxy / sxx;
    Ok(RateFit {
        slope,
        intercept: ybar - slope * xbar,
        half_width: Z95 / sxx.sqrt(),
        window: (rows[0].t, rows[rows.len() - 1].t),
        points: rows.len(),
    })
}

// ---------------------------------------------------------------------------
// run reports
// ---------------------------------------------------------------------------

/// One named rate table with its fit attempt.
#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct SeriesReport {
    /// Series name (used for extra CSV files and the summary JSON).
    pub name: String,
    /// The measured table.
    pub table: RateTable,
    /// The fit, when one succeeded.
    pub fit: Option<RateFit>,
    /// Why the fit was not produced (e.g. no admissible rows).
    pub fit_error: Option<String>,
    /// Secondary exponent: slope of `ln(value * sqrt(1 + t))` against
    /// `ln(ln(1 + t))`, which measures a logarithmic correction on top of a
    /// square-root decay (reported for the witness-configuration table).
    pub aux_slope: Option<f64>,
    /// Moment-order regime note for `lp_convergence`.
    pub regime: Option<String>,
}

impl SeriesReport {
    fn new(name: &str, table: RateTable) -> Self {
        let mut s = Self {
            name: name.to_owned(),
            table,
            fit: None,
            fit_error: None,
            aux_slope: None,
            regime: None,
        };
        match fit_rate(&s.table) {
            Ok(fit) => s.fit = Some(fit),
            Err(Error::TooFewPoints(0)) => s.fit_error = Some(Error::SignalBelowNoise.to_string()),
            Err(e) => s.fit_error = Some(e.to_string()),
        }
        s
    }
}

/// One exact identity evaluation inside the sweep.
#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct IdentityCase {
    /// Torus side, walker count, time, and configuration name.
    pub label: String,
    /// Exact correlation defect (left side).
    pub lhs: f64,
    /// Exact integrated-gradient side (right side).
    pub rhs: f64,
    /// `|lhs - rhs|`.
    pub gap: f64,
    /// Certified numerical budget for the gap.
    pub budget: f64,
}

/// One Monte Carlo agreement leg of the identity sweep.
#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct McLeg {
    /// Which side the leg estimates.
    pub name: String,
    /// Monte Carlo estimate.
    pub value: f64,
    /// Its standard error.
    pub stderr: f64,
    /// Exact reference value.
    pub exact: f64,
    /// `(value - exact) / stderr`.
    pub z: f64,
}

impl McLeg {
    fn new(name: &str, est: Estimate, exact: f64) -> Self {
        let diff = est.value - exact;
        let z = if est.stderr > 0.0 {
            diff / est.stderr
        } else if diff.abs() <= 1e-12 {
            0.0
        } else {
            f64::INFINITY
        };
        Self { name: name.to_owned(), value: est.value, stderr: est.stderr, exact, z }
    }
}

/// Outcome of the exact identity sweep and its Monte Carlo legs.
#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct IdentitySweepReport {
    /// Every exact case evaluated.
    pub cases: Vec<IdentityCase>,
    /// Largest `|lhs - rhs|` over the sweep.
    pub max_gap: f64,
    /// Monte Carlo agreement legs.
    pub legs: Vec<McLeg>,
    /// Largest `|z|` over the legs.
    pub max_z: f64,
    /// `max_gap <= 1e-6` and `max_z <= 4`.
    pub pass: bool,
}

/// Everything a run produced.
#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct RunOutcome {
    /// Pipeline that ran.
    pub kind: ExperimentKind,
    /// Named rate tables (empty for the identity sweep).
    pub series: Vec<SeriesReport>,
    /// Identity sweep report (identity kind only).
    pub identity: Option<IdentitySweepReport>,
    /// Acceptance band copied from the spec.
    pub band: Option<[f64; 2]>,
    /// Whether the primary slope landed in the band (identity kind: the
    /// sweep's own pass flag). `None` when no check was requested.
    pub band_pass: Option<bool>,
}

impl RunOutcome {
    fn with_series(kind: ExperimentKind, series: Vec<SeriesReport>) -> Self {
        Self { kind, series, identity: None, band: None, band_pass: None }
    }
}

// ---------------------------------------------------------------------------
// pipelines
// ---------------------------------------------------------------------------

/// Run the experiment a spec describes.
///
/// # Errors
/// Config validation, kernel/measure construction, state-space, and
/// simulation errors propagate; see the per-pipeline functions.
pub fn run(spec: &ExperimentSpec) -> Result<RunOutcome> {
    spec.validate()?;
    let mut outcome = match spec.kind {
        ExperimentKind::WeakConvergence => run_weak_convergence(spec)?,
        ExperimentKind::LpConvergence => run_lp_convergence(spec)?,
        ExperimentKind::VfunctionSup | ExperimentKind::VfunctionXphi | ExperimentKind::VfunctionAveraged => {
            run_vfunction(spec)?
        }
        ExperimentKind::GradientSums => run_gradient_sums(spec)?,
        ExperimentKind::BasicIdentitySweep => run_basic_identity_sweep(spec)?,
    };
    outcome.band = spec.band;
    outcome.band_pass = match (&outcome.identity, spec.band) {
        (Some(report), _) => Some(report.pass),
        (None, Some([lo, hi])) => {
            Some(outcome.series[0].fit.is_some_and(|f| lo <= f.slope && f.slope <= hi))
        }
        (None, None) => None,
    };
    Ok(outcome)
}

/// Dual-walk Monte Carlo of `|E_mu prod_{x in A} eta_t(x) - rho^{|A|}|`:
/// per replica the `|A|` dual exclusion walks run on the full lattice and the
/// replica scores the measure's exact cylinder probability at their
/// endpoints, so the measure average carries no sampling noise.
///
/// # Errors
/// [`Error::SingleSiteObservable`] when `|A| < 2` (the estimator is
/// identically zero for translation-invariant measures);
/// [`Error::InvalidConfig`] when the measure has no density.
fn run_weak_convergence(spec: &ExperimentSpec) -> Result<RunOutcome> {
    let kernel = spec.kernel.build()?;
    let sites = spec.observable_sites(kernel.d())?;
    if sites.len() < 2 {
        return Err(Error::SingleSiteObservable);
    }
    let measure = spec.measure()?;
    let rho = measure.density().ok_or_else(|| {
        Error::InvalidConfig("weak_convergence needs a measure with a translation-invariant density".into())
    })?;
    let target = rho.powi(i32::try_from(sites.len()).expect("small observable"));
    let mut rows = Vec::with_capacity(spec.times.len());
    for &t in &spec.times {
        let values: Result<Vec<f64>> = (0..spec.replicas)
            .into_par_iter()
            .map(|r| {
                let run = simulate_dual_exclusion(&kernel, &sites, t, spec.seed, r as u64, false)?;
                measure.cylinder_prob(&run.finals)
            })
            .collect();
        let (mean, stderr) = mean_and_stderr(&values?);
        rows.push(RateRow { t, value: (mean - target).abs(), stderr });
    }
    Ok(RunOutcome::with_series(
        spec.kind,
        vec![SeriesReport::new("weak_convergence", RateTable { rows })],
    ))
}

/// Flatten observable sites onto the torus and reject collisions after the
/// wrap.
fn flat_sites(torus: &TorusGeometry, sites: &[Vec<i64>]) -> Result<Vec<usize>> {
    let flat: Vec<usize> = sites.iter().map(|s| torus.wrap_coords(s)).collect();
    for i in 0..flat.len() {
        for j in i + 1..flat.len() {
            if flat[i] == flat[j] {
                return Err(Error::DuplicateSites);
            }
        }
    }
    Ok(flat)
}

/// Per-state occupied-site lists, flattened to `states * n` entries.
fn state_site_table(gen: &NParticleGenerator) -> Vec<usize> {
    let n = gen.n();
    let mut occ = vec![0usize; gen.states() * n];
    let mut buf = vec![0usize; n];
    for s in 0..gen.states() {
        gen.unrank(s, &mut buf);
        occ[s * n..(s + 1) * n].copy_from_slice(&buf);
    }
    occ
}

/// `E_eta prod_{x in A} eta_t(x)` for an explicit bit vector, given the
/// current walker distribution `mu` and the per-state site table.
fn correlation_against_bits(mu: &[f64], occ: &[usize], n: usize, bits: &[u8]) -> f64 {
    let mut acc = 0.0;
    'state: for (s, &m) in mu.iter().enumerate() {
        if m == 0.0 {
            continue;
        }
        for &y in &occ[s * n..(s + 1) * n] {
            if bits[y] == 0 {
                continue 'state;
            }
        }
        acc += m;
    }
    acc
}

/// Draw `count` torus configurations from the measure, one independent
/// stream per sample index.
fn draw_samples(
    measure: &InitialMeasure,
    d: usize,
    l: usize,
    count: usize,
    seed: u64,
) -> Vec<Vec<u8>> {
    (0..count)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream(seed, "outer-sample", i as u64);
            match measure.sample_configuration(d, l, &mut rng) {
                LatticeConfiguration::Explicit { bits, .. } => bits,
                _ => unreachable!("sampling always yields explicit bits"),
            }
        })
        .collect()
}

/// Outer Monte Carlo over configurations with exact inner correlations:
/// `E_mu |E_eta prod_{x in A} eta_t(x) - rho^{|A|}|^p`. The inner expectation
/// is the finite-state walker distribution integrated against the sampled
/// bits, so the `p`-th power sees no inner-noise bias.
///
/// # Errors
/// Missing density, torus, or state-space errors propagate.
fn run_lp_convergence(spec: &ExperimentSpec) -> Result<RunOutcome> {
    let kernel = spec.kernel.build()?;
    let sites = spec.observable_sites(kernel.d())?;
    let p = spec.p.expect("validated");
    let l = spec.torus_l.expect("validated");
    let measure = spec.measure()?;
    let rho = measure.density().ok_or_else(|| {
        Error::InvalidConfig("lp_convergence needs a measure with a translation-invariant density".into())
    })?;
    let n = sites.len();
    let target = rho.powi(i32::try_from(n).expect("small observable"));
    let torus = TorusGeometry::new(kernel.d(), l);
    let flat = flat_sites(&torus, &sites)?;
    let gen = NParticleGenerator::new(&kernel, l, n)?;
    let occ = state_site_table(&gen);
    let mut kry = gen.krylov(gen.point_mass(&flat)?);
    let samples = draw_samples(&measure, kernel.d(), l, spec.replicas, spec.seed);
    let mut rows = Vec::with_capacity(spec.times.len());
    for &t in &spec.times {
        let (mu, _) = kry.at_time(t, 1e-12)?;
        let moments: Vec<f64> = samples
            .par_iter()
            .map(|bits| (correlation_against_bits(&mu, &occ, n, bits) - target).abs().powf(p))
            .collect();
        let (mean, stderr) = mean_and_stderr(&moments);
        rows.push(RateRow { t, value: mean, stderr });
    }
    let mut series = SeriesReport::new("lp", RateTable { rows });
    series.regime = Some(format!(
        "p = {p}, {} the regime boundary p = 2",
        if p <= 2.0 { "at or below" } else { "above" }
    ));
    Ok(RunOutcome::with_series(spec.kind, vec![series]))
}

/// Unweighted slope of `ln(value * sqrt(1 + t))` against `ln(ln(1 + t))`,
/// measuring a logarithmic correction riding on a square-root decay.
fn log_correction_slope(rows: &[RateRow]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = rows
        .iter()
        .filter(|r| r.value > 0.0 && r.t.ln_1p() > 1.0)
        .map(|r| (r.t.ln_1p().ln(), (r.value * r.t.ln_1p().exp().sqrt()).ln()))
        .collect();
    if pts.len() < 3 {
        return None;
    }
    let m = pts.len() as f64;
    let xbar = pts.iter().map(|p| p.0).sum::<f64>() / m;
    let ybar = pts.iter().map(|p| p.1).sum::<f64>() / m;
    let sxx: f64 = pts.iter().map(|p| (p.0 - xbar) * (p.0 - xbar)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - xbar) * (p.1 - ybar)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

/// Correlation-defect tables `|E prod_{x in A} eta_t(x) - prod rho_t(x)|`.
///
/// The witness modes take the spec's point-mass configuration and evaluate
/// the defect exactly; the averaged mode draws configurations from the
/// measure, evaluates the defect exactly per sample, and averages before
/// taking the magnitude.
///
/// # Errors
/// [`Error::SingleSiteObservable`] when `|A| < 2`;
/// [`Error::InvalidConfig`] when a witness mode is given a non-configuration
/// measure; state-space errors propagate.
fn run_vfunction(spec: &ExperimentSpec) -> Result<RunOutcome> {
    let kernel = spec.kernel.build()?;
    let d = kernel.d();
    let sites = spec.observable_sites(d)?;
    if sites.len() < 2 {
        return Err(Error::SingleSiteObservable);
    }
    let l = spec.torus_l.expect("validated");
    let n = sites.len();
    let torus = TorusGeometry::new(d, l);
    let flat = flat_sites(&torus, &sites)?;
    let gen = NParticleGenerator::new(&kernel, l, n)?;
    let occ = state_site_table(&gen);
    let mut kry = gen.krylov(gen.point_mass(&flat)?);
    let measure = spec.measure()?;
    let mut rows = Vec::with_capacity(spec.times.len());

    if spec.kind == ExperimentKind::VfunctionAveraged {
        let samples = draw_samples(&measure, d, l, spec.replicas, spec.seed);
        let mut disp = vec![0i64; d];
        for &t in &spec.times {
            let (mu, _) = kry.at_time(t, 1e-12)?;
            // exact single-walk rows p_t(x_i, .) on the torus
            let dist = kernel.transition(t, Domain::Torus { l })?;
            let mut walk_rows = vec![vec![0.0f64; torus.len()]; n];
            for (i, row) in walk_rows.iter_mut().enumerate() {
                for (y, slot) in row.iter_mut().enumerate() {
                    torus.min_image(flat[i], y, &mut disp);
                    *slot = dist.prob(&disp);
                }
            }
            let defects: Vec<f64> = samples
                .par_iter()
                .map(|bits| {
                    let joint = correlation_against_bits(&mu, &occ, n, bits);
                    let profile: f64 = walk_rows
                        .iter()
                        .map(|row| {
                            row.iter()
                                .zip(bits)
                                .map(|(&p, &b)| p * f64::from(b))
                                .sum::<f64>()
                        })
                        .product();
                    joint - profile
                })
                .collect();
            let (mean, stderr) = mean_and_stderr(&defects);
            rows.push(RateRow { t, value: mean.abs(), stderr });
        }
        return Ok(RunOutcome::with_series(
            spec.kind,
            vec![SeriesReport::new("vfunction", RateTable { rows })],
        ));
    }

    // witness modes: one fixed configuration, fully exact
    let InitialMeasure::PointMass { config } = &measure else {
        return Err(Error::InvalidConfig(format!(
            "{} needs a fixed configuration measure (type \"config\")",
            spec.kind.as_str()
        )));
    };
    let eta = config.restrict_to_torus(d, l);
    let LatticeConfiguration::Explicit { bits, .. } = &eta else {
        unreachable!("restriction yields explicit bits")
    };
    for &t in &spec.times {
        let (mu, _) = kry.at_time(t, 1e-12)?;
        let joint = correlation_against_bits(&mu, &occ, n, bits);
        let profile_vec = exact_rho(&kernel, &eta, t, 1e-12)?;
        let profile: f64 = flat.iter().map(|&x| profile_vec[x]).product();
        rows.push(RateRow { t, value: (joint - profile).abs(), stderr: 0.0 });
    }
    let mut series = SeriesReport::new("vfunction", RateTable { rows });
    if spec.kind == ExperimentKind::VfunctionSup {
        series.aux_slope = log_correction_slope(&series.table.rows);
    }
    Ok(RunOutcome::with_series(spec.kind, vec![series]))
}

/// Exact axis-0 gradient sums of the single-walk transition density:
/// series `s1` holds `sum_x |p_t(x + e) - p_t(x)|`, series `s2` the squared
/// version.
///
/// # Errors
/// Transition-distribution errors propagate.
fn run_gradient_sums(spec: &ExperimentSpec) -> Result<RunOutcome> {
    let kernel = spec.kernel.build()?;
    let mut rows_s1 = Vec::with_capacity(spec.times.len());
    let mut rows_s2 = Vec::with_capacity(spec.times.len());
    for &t in &spec.times {
        let gs = kernel.gradient_sums(t, 0)?;
        rows_s1.push(RateRow { t, value: gs.s1, stderr: 0.0 });
        rows_s2.push(RateRow { t, value: gs.s2, stderr: 0.0 });
    }
    Ok(RunOutcome::with_series(
        spec.kind,
        vec![
            SeriesReport::new("grad_s1", RateTable { rows: rows_s1 }),
            SeriesReport::new("grad_s2", RateTable { rows: rows_s2 }),
        ],
    ))
}

/// The exact two-sided identity sweep plus Monte Carlo agreement legs.
///
/// Exact leg: both identity sides on tori of side 6 and 8, for 2 and 3
/// walkers, over the spec's time grid, against a step, an all-ones, and 12
/// seeded random configurations each. Monte Carlo leg: both sides estimated
/// on a side-64 step configuration at `t = 1` and compared to the exact
/// values as z-scores.
///
/// # Errors
/// [`Error::InvalidConfig`] outside dimension 1; exact-oracle and estimator
/// errors propagate.
fn run_basic_identity_sweep(spec: &ExperimentSpec) -> Result<RunOutcome> {
    let kernel = spec.kernel.build()?;
    if kernel.d() != 1 {
        return Err(Error::InvalidConfig("the identity sweep runs in dimension 1".into()));
    }
    let mut cases = Vec::new();
    let mut max_gap = 0.0f64;
    for l in [6usize, 8] {
        let mut configs: Vec<(String, LatticeConfiguration)> = vec![
            ("step".into(), LatticeConfiguration::Step { threshold: 1 }.restrict_to_torus(1, l)),
            ("ones".into(), LatticeConfiguration::Constant { value: 1 }.restrict_to_torus(1, l)),
        ];
        for k in 0..12u64 {
            let mut rng = stream(spec.seed, "identity-sweep-config", ((l as u64) << 32) | k);
            let bits = (0..l).map(|_| u8::from(rng.random::<bool>())).collect();
            configs.push((format!("random-{k:02}"), LatticeConfiguration::Explicit { d: 1, l, bits }));
        }
        for n in [2usize, 3] {
            let sites: Vec<usize> =
                if n == 2 { vec![0, l / 2] } else { vec![0, l / 2, l - 1] };
            for &t in &spec.times {
                for (name, cfg) in &configs {
                    let rep = exact_basic_identity(&kernel, cfg, &sites, t, 1e-7)?;
                    max_gap = max_gap.max(rep.gap);
                    cases.push(IdentityCase {
                        label: format!("L={l} n={n} t={t} eta={name}"),
                        lhs: rep.lhs,
                        rhs: rep.rhs,
                        gap: rep.gap,
                        budget: rep.error_budget,
                    });
                }
            }
        }
    }
    let eta = LatticeConfiguration::Step { threshold: 1 }.restrict_to_torus(1, 64);
    let mc_sites = vec![vec![0i64], vec![1i64]];
    let t_mc = 1.0;
    let exact = exact_basic_identity(&kernel, &eta, &[0, 1], t_mc, 1e-9)?;
    let legs = vec![
        McLeg::new("lhs", estimate_basic_lhs(&kernel, &eta, &mc_sites, t_mc, spec.replicas, spec.seed)?, exact.lhs),
        McLeg::new("rhs", estimate_basic_rhs(&kernel, &eta, &mc_sites, t_mc, spec.replicas, spec.seed)?, exact.rhs),
    ];
    let max_z = legs.iter().map(|m| m.z.abs()).fold(0.0, f64::max);
    let pass = max_gap <= 1e-6 && max_z <= 4.0;
    Ok(RunOutcome {
        kind: spec.kind,
        series: Vec::new(),
        identity: Some(IdentitySweepReport { cases, max_gap, legs, max_z, pass }),
        band: None,
        band_pass: None,
    })
}

// ---------------------------------------------------------------------------
// output files
// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct Provenance {
    seed: u64,
    replicas: usize,
    versions: BTreeMap<&'static str, &'static str>,
}

#[derive(Serialize)]
struct Sidecar<'a> {
    spec_hash: String,
    kind: &'static str,
    fit: Option<&'a RateFit>,
    fits: BTreeMap<&'a str, Option<&'a RateFit>>,
    fit_errors: BTreeMap<&'a str, &'a str>,
    aux_slope: Option<f64>,
    regime: Option<&'a str>,
    band: Option<[f64; 2]>,
    band_pass: Option<bool>,
    identity: Option<&'a IdentitySweepReport>,
    provenance: Provenance,
}

/// Hex SHA-256 of the canonical (re-serialized) spec. The output path is
/// cleared first: where results land is not part of the experiment's
/// identity, so relocating outputs keeps the recorded hash.
///
/// # Errors
/// Serialization errors propagate.
pub fn spec_hash(spec: &ExperimentSpec) -> Result<String> {
    let mut canonical_spec = spec.clone();
    canonical_spec.out = None;
    let canonical = serde_json::to_string(&canonical_spec)?;
    Ok(hex::encode(Sha256::digest(canonical.as_bytes())))
}

/// Write the outcome: the primary series as CSV at `out`, additional series
/// as `stem_name.csv` next to it, and the JSON summary at `stem.json`.
/// Returns the written paths. Output bytes are a pure function of
/// `(spec, outcome)`.
///
/// # Errors
/// I/O and serialization errors propagate.
pub fn write_outputs(spec: &ExperimentSpec, outcome: &RunOutcome, out: &Path) -> Result<Vec<PathBuf>> {
    if let Some(parent) = out.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    let ext = out.extension().map_or_else(|| "csv".into(), |e| e.to_string_lossy().into_owned());
    let stem = out.with_extension("");
    let mut written = Vec::new();
    for (k, series) in outcome.series.iter().enumerate() {
        let path = if k == 0 {
            out.to_path_buf()
        } else {
            let mut name = stem.file_name().map_or_else(String::new, |s| s.to_string_lossy().into_owned());
            name.push('_');
            name.push_str(&series.name);
            name.push('.');
            name.push_str(&ext);
            stem.with_file_name(name)
        };
        std::fs::write(&path, series.table.to_csv())?;
        written.push(path);
    }
    let mut fits = BTreeMap::new();
    let mut fit_errors = BTreeMap::new();
    for s in &outcome.series {
        fits.insert(s.name.as_str(), s.fit.as_ref());
        if let Some(err) = &s.fit_error {
            fit_errors.insert(s.name.as_str(), err.as_str());
        }
    }
    let primary = outcome.series.first();
    let mut versions = BTreeMap::new();
    versions.insert("ssep", env!("CARGO_PKG_VERSION"));
    let sidecar = Sidecar {
        spec_hash: spec_hash(spec)?,
        kind: outcome.kind.as_str(),
        fit: primary.and_then(|s| s.fit.as_ref()),
        fits,
        fit_errors,
        aux_slope: primary.and_then(|s| s.aux_slope),
        regime: primary.and_then(|s| s.regime.as_deref()),
        band: outcome.band,
        band_pass: outcome.band_pass,
        identity: outcome.identity.as_ref(),
        provenance: Provenance { seed: spec.seed, replicas: spec.replicas, versions },
    };
    let sidecar_path = out.with_extension("json");
    let mut text = serde_json::to_string_pretty(&sidecar)?;
    text.push('\n');
    std::fs::write(&sidecar_path, text)?;
    written.push(sidecar_path);
    Ok(written)
}
