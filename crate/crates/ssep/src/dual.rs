//! Event-driven n-walk dynamics on the unbounded lattice.
//!
//! Two simulators live here. [`simulate_dual_exclusion`] runs n labeled
//! exclusion walks (a proposed jump onto an occupied site swaps the two
//! labels, so the occupied set follows the exclusion dynamics) — the cheap
//! engine behind the Monte Carlo estimators. [`simulate_coupled`] runs the
//! joint construction of n exclusion walks X and n independent walks Y on a
//! shared family of edge clocks: every edge carries a primary clock and, on
//! demand, auxiliary copies; X responds only to primary marks (a mark swaps
//! the X contents of the edge), while each Y concerned with an edge listens
//! to the copy ranked by its label among the concerned Y walks, so each Y is
//! marginally a free walk and X_i = Y_i holds until the first collision. A
//! collision is a primary or first-auxiliary mark on an edge whose two
//! endpoints are both occupied by X walks; its mark bit records which copy
//! fired, a fair coin.
//!
//! On top of the simulators sit the Monte Carlo estimators for both sides of
//! the occupation-correlation identity ([`estimate_basic_lhs`],
//! [`estimate_basic_rhs`]) and the Poisson-compensator check for collision
//! counts ([`collision_rate_check`]), each validated against the certified
//! finite-state oracles.

use crate::error::{Error, Result};
use crate::exact::{exact_rho, expected_pair_rate_integral, NParticleGenerator};
use crate::kernel::{Kernel, TorusGeometry};
use crate::measures::LatticeConfiguration;
use crate::rng::{exponential, stream, Stream};
use rand::Rng;
use rayon::prelude::*;
use std::collections::BTreeSet;

/// Compact lattice point: the first `d` coordinates are live, the rest stay
/// zero so ordering and equality are dimension-agnostic.
type Pos = [i64; 8];

/// Order-4 Gauss-Legendre nodes (positive half) and weights on [-1, 1];
/// exact for polynomial integrands up to degree 7, which covers the
/// piecewise-polynomial path integrand for up to 7 walks.
const GL4_NODES: [f64; 2] = [0.339_981_043_584_856_3, 0.861_136_311_594_052_6];
const GL4_WEIGHTS: [f64; 2] = [0.652_145_154_862_546_1, 0.347_854_845_137_453_8];

fn to_pos(site: &[i64]) -> Pos {
    let mut p = [0i64; 8];
    p[..site.len()].copy_from_slice(site);
    p
}

fn from_pos(p: &Pos, d: usize) -> Vec<i64> {
    p[..d].to_vec()
}

fn pos_add(p: &Pos, z: &[i64]) -> Pos {
    let mut q = *p;
    for (slot, &dz) in q.iter_mut().zip(z) {
        *slot += dz;
    }
    q
}

fn validate_sites(kernel: &Kernel, sites: &[Vec<i64>]) -> Result<Vec<Pos>> {
    if sites.is_empty() {
        return Err(Error::InvalidConfig("at least one walk is required".into()));
    }
    for s in sites {
        if s.len() != kernel.d() {
            return Err(Error::DomainMismatch(format!(
                "site of dimension {} vs kernel dimension {}",
                s.len(),
                kernel.d()
            )));
        }
    }
    let positions: Vec<Pos> = sites.iter().map(|s| to_pos(s)).collect();
    let mut sorted = positions.clone();
    sorted.sort_unstable();
    if sorted.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::DuplicateSites);
    }
    Ok(positions)
}

/// One jump in an exclusion-walk trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct ExclusionJump {
    /// Event time.
    pub time: f64,
    /// Label of the walk that initiated the jump.
    pub particle: usize,
    /// Position before the jump.
    pub from: Vec<i64>,
    /// Position after the jump.
    pub to: Vec<i64>,
    /// When the target was occupied, the label that was pushed back to
    /// `from` (a label swap; the occupied set is preserved).
    pub swapped_with: Option<usize>,
}

/// Outcome of one exclusion-walk simulation.
#[derive(Debug, Clone, PartialEq)]
pub struct ExclusionRun {
    /// Final positions by label.
    pub finals: Vec<Vec<i64>>,
    /// Time-ordered jump list when recording was requested.
    pub path: Option<Vec<ExclusionJump>>,
}

fn simulate_exclusion_with(
    kernel: &Kernel,
    start: &[Pos],
    t: f64,
    rng: &mut Stream,
    record_path: bool,
) -> (Vec<Pos>, Vec<(f64, usize, Pos, Pos, Option<usize>)>) {
    let n = start.len();
    let d = kernel.d();
    let mut pos = start.to_vec();
    let mut jumps = Vec::new();
    let mut time = 0.0f64;
    loop {
        time += exponential(rng, n as f64);
        if time > t {
            break;
        }
        let i = ((rng.random::<f64>() * n as f64) as usize).min(n - 1);
        let z = kernel.sample_increment(rng).to_vec();
        let target = pos_add(&pos[i], &z[..d]);
        let occupant = pos.iter().position(|p| *p == target);
        if record_path {
            jumps.push((time, i, pos[i], target, occupant));
        }
        match occupant {
            Some(j) => {
                pos[j] = pos[i];
                pos[i] = target;
            }
            None => pos[i] = target,
        }
    }
    (pos, jumps)
}

/// Run `sites.len()` labeled exclusion walks from `sites` up to time `t`.
///
/// Each walk proposes jumps at rate one with kernel-distributed increments;
/// a proposal onto an occupied site exchanges the two labels, so positions
/// stay pairwise distinct and the occupied set evolves as the exclusion
/// dynamics. Deterministic for a fixed `(seed, replica)`.
///
/// # Errors
/// Rejects duplicate or dimension-mismatched sites.
pub fn simulate_dual_exclusion(
    kernel: &Kernel,
    sites: &[Vec<i64>],
    t: f64,
    seed: u64,
    replica: u64,
    record_path: bool,
) -> Result<ExclusionRun> {
    let start = validate_sites(kernel, sites)?;
    let mut rng = stream(seed, "dual-walks", replica);
    let (finals, jumps) = simulate_exclusion_with(kernel, &start, t, &mut rng, record_path);
    let d = kernel.d();
    Ok(ExclusionRun {
        finals: finals.iter().map(|p| from_pos(p, d)).collect(),
        path: record_path.then(|| {
            jumps
                .into_iter()
                .map(|(time, particle, from, to, swapped_with)| ExclusionJump {
                    time,
                    particle,
                    from: from_pos(&from, d),
                    to: from_pos(&to, d),
                    swapped_with,
                })
                .collect()
        }),
    })
}

/// Joint state of the coupled walk systems.
#[derive(Debug, Clone)]
pub struct ParticleSystemState {
    x: Vec<Pos>,
    y: Vec<Pos>,
    elapsed: f64,
    /// `coincident[pair_index(i, j)]` flags `Y_i == Y_j`.
    coincident: Vec<bool>,
}

fn pair_index(n: usize, i: usize, j: usize) -> usize {
    debug_assert!(i < j && j < n);
    // row-wise upper triangle
    i * n - i * (i + 1) / 2 + (j - i - 1)
}

impl ParticleSystemState {
    fn new(start: &[Pos]) -> Self {
        let n = start.len();
        let mut state = Self {
            x: start.to_vec(),
            y: start.to_vec(),
            elapsed: 0.0,
            coincident: vec![false; n * (n - 1) / 2],
        };
        state.refresh_coincidence();
        state
    }

    fn refresh_coincidence(&mut self) {
        let n = self.y.len();
        for i in 0..n {
            for j in i + 1..n {
                self.coincident[pair_index(n, i, j)] = self.y[i] == self.y[j];
            }
        }
    }

    /// Exclusion-walk positions by label.
    #[must_use]
    pub fn x_positions(&self, d: usize) -> Vec<Vec<i64>> {
        self.x.iter().map(|p| from_pos(p, d)).collect()
    }

    /// Independent-walk positions by label.
    #[must_use]
    pub fn y_positions(&self, d: usize) -> Vec<Vec<i64>> {
        self.y.iter().map(|p| from_pos(p, d)).collect()
    }

    /// Elapsed simulation time.
    #[must_use]
    pub fn elapsed(&self) -> f64 {
        self.elapsed
    }

    /// Whether the independent walks `i` and `j` currently share a site.
    #[must_use]
    pub fn y_coincident(&self, i: usize, j: usize) -> bool {
        let n = self.y.len();
        self.coincident[pair_index(n, i.min(j), i.max(j))]
    }
}

/// One recorded collision: a primary or first-auxiliary mark on an edge
/// whose endpoints are both occupied by exclusion walks.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Collision {
    /// Event time.
    pub time: f64,
    /// The two exclusion-walk labels involved, lower first.
    pub pair: (usize, usize),
    /// `true` when the primary clock fired (the copy that also moves X),
    /// `false` for the auxiliary copy; a fair coin either way.
    pub primary_mark: bool,
}

/// One row of the debug trace: a particle movement (or a stationary
/// collision witness) attributed to a clock rank.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    /// Event time.
    pub time: f64,
    /// `'X'` or `'Y'`.
    pub family: char,
    /// Walk label within the family.
    pub particle: usize,
    /// Position before the event.
    pub from: Vec<i64>,
    /// Position after the event (equal to `from` for a stationary collision
    /// witness).
    pub to: Vec<i64>,
    /// Clock rank that fired: 0 is the primary copy.
    pub rank: usize,
    /// Whether this event was recorded as a collision.
    pub collision: bool,
}

/// Full record of one coupled trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct CouplingRecord {
    /// Starting sites (shared by X and Y).
    pub sites: Vec<Vec<i64>>,
    /// Horizon.
    pub t: f64,
    /// Time-ordered collisions.
    pub collisions: Vec<Collision>,
    /// Collision count per unordered label pair, indexed row-wise over the
    /// upper triangle.
    pub pair_counts: Vec<u64>,
    /// Final exclusion-walk positions by label.
    pub final_x: Vec<Vec<i64>>,
    /// Final independent-walk positions by label.
    pub final_y: Vec<Vec<i64>>,
    /// Debug trace when requested.
    pub trace: Option<Vec<TraceRow>>,
}

impl CouplingRecord {
    /// Collision count of the unordered pair `(i, j)`.
    ///
    /// # Panics
    /// If `i == j` or a label is out of range.
    #[must_use]
    pub fn pair_count(&self, i: usize, j: usize) -> u64 {
        let n = self.sites.len();
        assert!(i != j && i < n && j < n);
        self.pair_counts[pair_index(n, i.min(j), i.max(j))]
    }

    /// Total number of collisions.
    #[must_use]
    pub fn total_collisions(&self) -> u64 {
        self.collisions.len() as u64
    }

    /// Debug trace as CSV with header
    /// `time,family,particle,from,to,rank,collision`; positions are
    /// `;`-joined coordinates. Empty when no trace was recorded.
    #[must_use]
    pub fn trace_csv(&self) -> String {
        let mut out = String::from("time,family,particle,from,to,rank,collision\n");
        let join = |v: &[i64]| {
            v.iter().map(|c| c.to_string()).collect::<Vec<_>>().join(";")
        };
        for row in self.trace.iter().flatten() {
            out.push_str(&format!(
                "{:.17e},{},{},{},{},{},{}\n",
                row.time,
                row.family,
                row.particle,
                join(&row.from),
                join(&row.to),
                row.rank,
                u8::from(row.collision)
            ));
        }
        out
    }
}

struct ActiveClock {
    a: Pos,
    b: Pos,
    rate: f64,
    rank: usize,
}

fn rebuild_clocks(kernel: &Kernel, x: &[Pos], y: &[Pos], clocks: &mut Vec<ActiveClock>) {
    let d = kernel.d();
    let mut edges: BTreeSet<(Pos, Pos)> = BTreeSet::new();
    for q in x.iter().chain(y.iter()) {
        for (z, _) in kernel.support() {
            let r = pos_add(q, z);
            edges.insert(if *q < r { (*q, r) } else { (r, *q) });
        }
    }
    clocks.clear();
    let mut disp = [0i64; 8];
    for (a, b) in edges {
        for k in 0..d {
            disp[k] = b[k] - a[k];
        }
        let rate = kernel.rate(&disp[..d]);
        debug_assert!(rate > 0.0);
        let nx = x.iter().filter(|p| **p == a || **p == b).count();
        let ny = y.iter().filter(|p| **p == a || **p == b).count();
        // the primary copy always runs; the first auxiliary runs when the
        // edge is X-doubled (collision bookkeeping) or a second Y listens;
        // further copies serve additional coincident Y walks
        let ranks = ny.max(if nx == 2 { 2 } else { 1 });
        for rank in 0..ranks {
            clocks.push(ActiveClock { a, b, rate, rank });
        }
    }
}

fn simulate_coupled_with(
    kernel: &Kernel,
    start: &[Pos],
    t: f64,
    rng: &mut Stream,
    record_trace: bool,
) -> (ParticleSystemState, Vec<Collision>, Vec<u64>, Vec<TraceRow>) {
    let d = kernel.d();
    let n = start.len();
    let mut state = ParticleSystemState::new(start);
    let mut collisions = Vec::new();
    let mut pair_counts = vec![0u64; n * (n - 1) / 2];
    let mut trace = Vec::new();
    let mut clocks = Vec::new();
    loop {
        rebuild_clocks(kernel, &state.x, &state.y, &mut clocks);
        let total: f64 = clocks.iter().map(|c| c.rate).sum();
        state.elapsed += exponential(rng, total);
        if state.elapsed > t {
            state.elapsed = t;
            break;
        }
        let mut u: f64 = rng.random::<f64>() * total;
        let mut chosen = clocks.len() - 1;
        for (k, c) in clocks.iter().enumerate() {
            if u < c.rate {
                chosen = k;
                break;
            }
            u -= c.rate;
        }
        let ActiveClock { a, b, rank, .. } = clocks[chosen];
        let time = state.elapsed;
        let ia = state.x.iter().position(|p| *p == a);
        let ib = state.x.iter().position(|p| *p == b);
        let mut y_concerned: Vec<usize> = (0..n)
            .filter(|&j| state.y[j] == a || state.y[j] == b)
            .collect();
        y_concerned.sort_unstable();
        let is_collision = rank <= 1 && ia.is_some() && ib.is_some();
        if let (Some(i), Some(j), true) = (ia, ib, is_collision) {
            let pair = (i.min(j), i.max(j));
            collisions.push(Collision { time, pair, primary_mark: rank == 0 });
            pair_counts[pair_index(n, pair.0, pair.1)] += 1;
        }
        if rank == 0 {
            // primary mark: swap the X contents of the edge
            match (ia, ib) {
                (Some(i), Some(j)) => {
                    if record_trace {
                        trace.push(TraceRow {
                            time,
                            family: 'X',
                            particle: i,
                            from: from_pos(&a, d),
                            to: from_pos(&b, d),
                            rank,
                            collision: true,
                        });
                        trace.push(TraceRow {
                            time,
                            family: 'X',
                            particle: j,
                            from: from_pos(&b, d),
                            to: from_pos(&a, d),
                            rank,
                            collision: true,
                        });
                    }
                    state.x[i] = b;
                    state.x[j] = a;
                }
                (Some(i), None) => {
                    if record_trace {
                        trace.push(TraceRow {
                            time,
                            family: 'X',
                            particle: i,
                            from: from_pos(&a, d),
                            to: from_pos(&b, d),
                            rank,
                            collision: false,
                        });
                    }
                    state.x[i] = b;
                }
                (None, Some(j)) => {
                    if record_trace {
                        trace.push(TraceRow {
                            time,
                            family: 'X',
                            particle: j,
                            from: from_pos(&b, d),
                            to: from_pos(&a, d),
                            rank,
                            collision: false,
                        });
                    }
                    state.x[j] = a;
                }
                (None, None) => {}
            }
        } else if is_collision && record_trace && y_concerned.len() <= rank {
            // stationary witness row so pure collisions stay visible
            for label in [ia.expect("checked"), ib.expect("checked")] {
                let at = from_pos(&state.x[label], d);
                trace.push(TraceRow {
                    time,
                    family: 'X',
                    particle: label,
                    from: at.clone(),
                    to: at,
                    rank,
                    collision: true,
                });
            }
        }
        if let Some(&j) = y_concerned.get(rank) {
            let from = state.y[j];
            let to = if from == a { b } else { a };
            if record_trace {
                trace.push(TraceRow {
                    time,
                    family: 'Y',
                    particle: j,
                    from: from_pos(&from, d),
                    to: from_pos(&to, d),
                    rank,
                    collision: is_collision,
                });
            }
            state.y[j] = to;
        }
        state.refresh_coincidence();
    }
    (state, collisions, pair_counts, trace)
}

/// Run the coupled construction from `sites` up to time `t`.
///
/// The X family follows the exclusion dynamics, the Y family consists of
/// independent kernel walks, `X_i = Y_i` holds until the first collision,
/// and every collision is logged with its fair mark bit. Deterministic for
/// a fixed `(seed, replica)`.
///
/// # Errors
/// Rejects duplicate or dimension-mismatched sites.
pub fn simulate_coupled(
    kernel: &Kernel,
    sites: &[Vec<i64>],
    t: f64,
    seed: u64,
    replica: u64,
    record_trace: bool,
) -> Result<CouplingRecord> {
    let start = validate_sites(kernel, sites)?;
    let mut rng = stream(seed, "coupled-walks", replica);
    let (state, collisions, pair_counts, trace) =
        simulate_coupled_with(kernel, &start, t, &mut rng, record_trace);
    let d = kernel.d();
    Ok(CouplingRecord {
        sites: sites.to_vec(),
        t,
        collisions,
        pair_counts,
        final_x: state.x_positions(d),
        final_y: state.y_positions(d),
        trace: record_trace.then_some(trace),
    })
}

/// A Monte Carlo estimate with its CLT standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    /// Point estimate.
    pub value: f64,
    /// Standard error of the mean (0 for deterministic outcomes).
    pub stderr: f64,
}

pub(crate) fn mean_and_stderr(values: &[f64]) -> (f64, f64) {
    let r = values.len();
    if r == 0 {
        return (0.0, 0.0);
    }
    let mean = values.iter().sum::<f64>() / r as f64;
    if r == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (r - 1) as f64;
    (mean, (var / r as f64).sqrt())
}

/// Result of comparing empirical collision counts against the exact
/// accumulated pair-rate compensator.
#[derive(Debug, Clone, Copy)]
pub struct CollisionRateReport {
    /// Mean collision count over replicas.
    pub empirical_mean: f64,
    /// Standard error of the mean.
    pub stderr: f64,
    /// `2 * int_0^t E p(X_1(s) - X_2(s)) ds` from the finite-state oracle.
    pub compensator: f64,
    /// `(empirical_mean - compensator) / stderr` (0 when both sides vanish).
    pub z_score: f64,
    /// `|z_score| <= 4`.
    pub ok: bool,
}

/// Poisson quantile-style bound: events of a rate-`lambda * horizon` count
/// exceed the returned value with probability well below 1e-12.
fn event_count_bound(lambda_t: f64) -> f64 {
    lambda_t + 12.0 * lambda_t.sqrt() + 40.0
}

/// Torus side large enough that walks started within `span` of the origin
/// stay clear of the wrap, with a certified-tiny exception probability.
fn evaluation_side(kernel: &Kernel, sites: &[Pos], t: f64) -> Result<usize> {
    let n = sites.len();
    let reach = kernel.radius() as f64 * event_count_bound(n as f64 * t);
    let span = sites
        .iter()
        .flat_map(|p| p[..kernel.d()].iter())
        .fold(0i64, |m, &c| m.max(c.abs())) as f64
        + reach;
    let l = (2.0 * span + 3.0).ceil() as usize;
    let l = l.max(2 * kernel.radius() as usize + 2);
    let states = (l as u128).checked_pow(kernel.d() as u32);
    if states.is_none_or(|s| s > 200_000) {
        return Err(Error::InvalidConfig(format!(
            "horizon {t} needs a side-{l} evaluation torus, too large in dimension {}",
            kernel.d()
        )));
    }
    Ok(l)
}

/// Compare the mean collision count of a coupled pair against twice the
/// exact accumulated pair rate (the Poisson compensator at the horizon).
///
/// # Errors
/// Requires exactly two distinct sites; oracle errors propagate.
pub fn collision_rate_check(
    kernel: &Kernel,
    sites: &[Vec<i64>],
    t: f64,
    replicas: usize,
    seed: u64,
) -> Result<CollisionRateReport> {
    let start = validate_sites(kernel, sites)?;
    if start.len() != 2 {
        return Err(Error::InvalidConfig("the pairwise check takes exactly two sites".into()));
    }
    let counts: Vec<f64> = (0..replicas)
        .into_par_iter()
        .map(|r| {
            let mut rng = stream(seed, "coupled-walks", r as u64);
            let (_, collisions, _, _) = simulate_coupled_with(kernel, &start, t, &mut rng, false);
            collisions.len() as f64
        })
        .collect();
    let (empirical_mean, stderr) = mean_and_stderr(&counts);
    let l = evaluation_side(kernel, &start, t)?;
    let torus = TorusGeometry::new(kernel.d(), l);
    let pair = (
        torus.wrap_coords(&start[0][..kernel.d()]),
        torus.wrap_coords(&start[1][..kernel.d()]),
    );
    let compensator = 2.0 * expected_pair_rate_integral(kernel, l, pair, t, 1e-9)?;
    let diff = empirical_mean - compensator;
    let z_score = if stderr > 0.0 {
        diff / stderr
    } else if diff == 0.0 {
        0.0
    } else {
        f64::INFINITY
    };
    Ok(CollisionRateReport { empirical_mean, stderr, compensator, z_score, ok: z_score.abs() <= 4.0 })
}

/// Resolve the torus that exact profile oracles run on: explicit
/// configurations bring their own; rule-based ones are restricted to a side
/// wide enough that the walks cannot feel the wrap.
fn evaluation_torus(
    kernel: &Kernel,
    eta: &LatticeConfiguration,
    sites: &[Pos],
    t: f64,
) -> Result<(usize, LatticeConfiguration)> {
    if let LatticeConfiguration::Explicit { l, .. } = eta {
        return Ok((*l, eta.clone()));
    }
    let l = evaluation_side(kernel, sites, t)?;
    Ok((l, eta.restrict_to_torus(kernel.d(), l)))
}

/// Monte Carlo estimate of the identity's left side,
/// `E prod_i eta_t(x_i) - prod_i rho_t(x_i)`: the product of `eta` over
/// dual-walk endpoints, averaged over replicas, minus the exact profile
/// product.
///
/// # Errors
/// Site validation and oracle errors propagate.
pub fn estimate_basic_lhs(
    kernel: &Kernel,
    eta: &LatticeConfiguration,
    sites: &[Vec<i64>],
    t: f64,
    replicas: usize,
    seed: u64,
) -> Result<Estimate> {
    let start = validate_sites(kernel, sites)?;
    let (l, eta_torus) = evaluation_torus(kernel, eta, &start, t)?;
    let rho = exact_rho(kernel, &eta_torus, t, 1e-12)?;
    let torus = TorusGeometry::new(kernel.d(), l);
    let product: f64 = start
        .iter()
        .map(|p| rho[torus.wrap_coords(&p[..kernel.d()])])
        .product();
    let d = kernel.d();
    let values: Vec<f64> = (0..replicas)
        .into_par_iter()
        .map(|r| {
            let mut rng = stream(seed, "identity-left", r as u64);
            let (finals, _) = simulate_exclusion_with(kernel, &start, t, &mut rng, false);
            finals.iter().map(|p| f64::from(eta.eval(&p[..d]))).product()
        })
        .collect();
    let (mean, stderr) = mean_and_stderr(&values);
    Ok(Estimate { value: mean - product, stderr })
}

/// Piecewise-linear-in-time table of the exact occupation profile, built by
/// interval doubling until the measured midpoint interpolation defect is
/// below `target` (an empirical certificate for the linear interpolant).
pub(crate) struct RhoEvaluator {
    torus: TorusGeometry,
    times: Vec<f64>,
    values: Vec<Vec<f64>>,
    defect: f64,
}

impl RhoEvaluator {
    const MAX_INTERVALS: usize = 8192;

    pub(crate) fn new(
        kernel: &Kernel,
        eta_torus: &LatticeConfiguration,
        t: f64,
        target: f64,
    ) -> Result<Self> {
        let LatticeConfiguration::Explicit { d, l, bits } = eta_torus else {
            return Err(Error::DomainMismatch("profile tables need an explicit torus".into()));
        };
        let torus = TorusGeometry::new(*d, *l);
        let gen = NParticleGenerator::new(kernel, *l, 1)?;
        let mut kry = gen.krylov(bits.iter().map(|&b| f64::from(b)).collect());
        let mut at = |u: f64| -> Result<Vec<f64>> { Ok(kry.at_time(u, 1e-12)?.0) };
        if t == 0.0 {
            let values = vec![at(0.0)?];
            return Ok(Self { torus, times: vec![0.0], values, defect: 0.0 });
        }
        let mut intervals = 16usize;
        let mut times: Vec<f64> = (0..=intervals).map(|m| t * m as f64 / intervals as f64).collect();
        let mut values: Vec<Vec<f64>> = times.iter().map(|&u| at(u)).collect::<Result<_>>()?;
        loop {
            // measure the defect at midpoints, then adopt the refined grid
            let mids: Vec<f64> = times.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect();
            let mut defect = 0.0f64;
            let mut merged_t = Vec::with_capacity(2 * times.len() - 1);
            let mut merged_v = Vec::with_capacity(2 * times.len() - 1);
            for (m, &mid) in mids.iter().enumerate() {
                let exact = at(mid)?;
                for (x, &e) in exact.iter().enumerate() {
                    defect = defect.max((e - 0.5 * (values[m][x] + values[m + 1][x])).abs());
                }
                merged_t.push(times[m]);
                merged_v.push(std::mem::take(&mut values[m]));
                merged_t.push(mid);
                merged_v.push(exact);
            }
            merged_t.push(*times.last().expect("nonempty"));
            merged_v.push(std::mem::take(values.last_mut().expect("nonempty")));
            times = merged_t;
            values = merged_v;
            intervals *= 2;
            if defect <= target {
                return Ok(Self { torus, times, values, defect });
            }
            if intervals >= Self::MAX_INTERVALS {
                return Err(Error::RhoGridTooCoarse { err: defect, stderr: target });
            }
        }
    }

    pub(crate) fn defect(&self) -> f64 {
        self.defect
    }

    /// Interpolated profile at time `u` and the wrapped position `p`.
    fn eval(&self, u: f64, p: &[i64]) -> f64 {
        let x = self.torus.wrap_coords(p);
        let hi = self.times.partition_point(|&v| v < u).min(self.times.len() - 1);
        if hi == 0 {
            return self.values[0][x];
        }
        let lo = hi - 1;
        let span = self.times[hi] - self.times[lo];
        let w = if span > 0.0 { (u - self.times[lo]) / span } else { 0.0 };
        (1.0 - w) * self.values[lo][x] + w * self.values[hi][x]
    }
}

/// Monte Carlo estimate of the identity's right side as a pathwise
/// compensator: along each simulated exclusion trajectory, integrate the
/// kernel-weighted squared profile gradient over the walk pairs (with the
/// profile product over spectators), negate, and average.
///
/// # Errors
/// [`Error::RhoGridTooCoarse`] when the profile table cannot certify an
/// interpolation bias below 10% of the standard error; site validation and
/// oracle errors propagate.
pub fn estimate_basic_rhs(
    kernel: &Kernel,
    eta: &LatticeConfiguration,
    sites: &[Vec<i64>],
    t: f64,
    replicas: usize,
    seed: u64,
) -> Result<Estimate> {
    let start = validate_sites(kernel, sites)?;
    let n = start.len();
    if n == 1 {
        // the pair sum is empty
        return Ok(Estimate { value: 0.0, stderr: 0.0 });
    }
    let (_, eta_torus) = evaluation_torus(kernel, eta, &start, t)?;
    let run_block = |evaluator: &RhoEvaluator, count: usize| -> Vec<f64> {
        (0..count)
            .into_par_iter()
            .map(|r| {
                let mut rng = stream(seed, "identity-right", r as u64);
                let (_, jumps) = simulate_exclusion_with(kernel, &start, t, &mut rng, true);
                path_compensator(kernel, evaluator, &start, &jumps, t)
            })
            .collect()
    };
    // a pilot block predicts the final noise floor, which sets how fine the
    // profile table must be for its interpolation bias to stay negligible
    let bias_per_defect = t * (n * n) as f64 / 2.0;
    let coarse = RhoEvaluator::new(kernel, &eta_torus, t, 1e-5)?;
    let pilot_count = replicas.min(2_000);
    let (_, pilot_stderr) = mean_and_stderr(&run_block(&coarse, pilot_count));
    let predicted_stderr = pilot_stderr * (pilot_count as f64 / replicas.max(1) as f64).sqrt();
    let required_defect = 0.05 * predicted_stderr / bias_per_defect;
    let evaluator = if predicted_stderr > 0.0 && coarse.defect() > required_defect {
        RhoEvaluator::new(kernel, &eta_torus, t, required_defect)?
    } else {
        coarse
    };
    let integrals = run_block(&evaluator, replicas);
    let (mean, stderr) = mean_and_stderr(&integrals);
    // certified interpolation bias must stay well under the noise floor;
    // an absolute floor keeps rounding-level defects from tripping the
    // guard on deterministic outcomes
    let bias_bound = evaluator.defect() * bias_per_defect;
    if bias_bound > (0.1 * stderr).max(1e-12) {
        return Err(Error::RhoGridTooCoarse { err: bias_bound, stderr });
    }
    Ok(Estimate { value: -mean, stderr })
}

/// Integral over `[0, t]` of
/// `sum_{i<j} p(X_i - X_j) (rho_{t-s}(X_i) - rho_{t-s}(X_j))^2
///  prod_{k != i,j} rho_{t-s}(X_k)` along one trajectory. Positions are
/// constant between jumps; within a segment the integrand is split at the
/// profile-table breakpoints, where it is polynomial and the quadrature is
/// exact.
fn path_compensator(
    kernel: &Kernel,
    evaluator: &RhoEvaluator,
    start: &[Pos],
    jumps: &[(f64, usize, Pos, Pos, Option<usize>)],
    t: f64,
) -> f64 {
    let d = kernel.d();
    let n = start.len();
    let mut pos = start.to_vec();
    let mut acc = 0.0f64;
    let mut disp = [0i64; 8];
    let mut segment_start = 0.0f64;
    // grid times u map to path times s = t - u; ascending in s
    let breaks: Vec<f64> = evaluator.times.iter().rev().map(|&u| t - u).collect();
    let mut integrate_segment = |pos: &[Pos], sa: f64, sb: f64, acc: &mut f64| {
        if sb <= sa {
            return;
        }
        // active pairs for this segment
        let mut pairs = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                for k in 0..d {
                    disp[k] = pos[i][k] - pos[j][k];
                }
                let q = kernel.rate(&disp[..d]);
                if q > 0.0 {
                    pairs.push((i, j, q));
                }
            }
        }
        if pairs.is_empty() {
            return;
        }
        let lo = breaks.partition_point(|&s| s <= sa);
        let hi = breaks.partition_point(|&s| s < sb);
        let mut pieces = Vec::with_capacity(hi - lo + 2);
        pieces.push(sa);
        pieces.extend_from_slice(&breaks[lo..hi]);
        pieces.push(sb);
        for w in pieces.windows(2) {
            let (p0, p1) = (w[0], w[1]);
            if p1 <= p0 {
                continue;
            }
            let half = 0.5 * (p1 - p0);
            let mid = 0.5 * (p0 + p1);
            for (node, weight) in GL4_NODES.iter().zip(&GL4_WEIGHTS) {
                for s in [mid - half * node, mid + half * node] {
                    let u = t - s;
                    let mut value = 0.0;
                    for &(i, j, q) in &pairs {
                        let ri = evaluator.eval(u, &pos[i][..d]);
                        let rj = evaluator.eval(u, &pos[j][..d]);
                        let mut rest = 1.0;
                        for (k, p) in pos.iter().enumerate() {
                            if k != i && k != j {
                                rest *= evaluator.eval(u, &p[..d]);
                            }
                        }
                        value += q * (ri - rj) * (ri - rj) * rest;
                    }
                    *acc += weight * half * value;
                }
            }
        }
    };
    for &(time, particle, from, to, swapped) in jumps {
        integrate_segment(&pos, segment_start, time, &mut acc);
        debug_assert_eq!(pos[particle], from);
        match swapped {
            Some(j) => {
                pos[j] = from;
                pos[particle] = to;
            }
            None => pos[particle] = to,
        }
        segment_start = time;
    }
    integrate_segment(&pos, segment_start, t, &mut acc);
    acc
}
