//! Poisson clock streams, stirring maps, forward evolution, and dual walks
//! on a finite torus.
//!
//! A [`ClockStream`] is one realization of independent Poisson clocks, one
//! per unordered interacting site pair. A [`StirringMap`] is the random
//! site permutation accumulated over a time window: each event swaps the
//! images at its two sites, so the update convention is composition with an
//! argument-side transposition. Under this convention the maps compose
//! exactly across adjacent windows (cocycle identity), the occupation
//! process `eta_t(x) = eta(xi_t(x))` is the exclusion dynamics, and walks
//! read off the same events in decreasing time are its duals: for every
//! realization, `eta(X_t)` at the dual endpoint equals the forward
//! occupation bit exactly.

use crate::error::{Error, Result};
use crate::kernel::{Kernel, TorusGeometry};
use crate::measures::LatticeConfiguration;
use crate::rng::{self, Stream};
use rand::Rng;
use std::fmt::Write as _;

/// Memory guard: refuse realizations whose expected event count exceeds this.
const EVENT_BUDGET: f64 = 2e7;

/// Which independent clock family an event belongs to.
///
/// Primary clocks drive the exclusion swaps; secondary clocks are an extra
/// independent family of the same rates, present only when requested, used
/// by couplings that need a second clock per pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Tag {
    /// The swap-driving clock family.
    Primary,
    /// The auxiliary coupling clock family.
    Secondary,
}

/// One clock ring: a time, an unordered site pair, and its family tag.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Event {
    /// Ring time in `(0, horizon]`.
    pub time: f64,
    /// Smaller site index of the pair.
    pub x: u32,
    /// Larger site index of the pair.
    pub y: u32,
    /// Clock family.
    pub tag: Tag,
}

/// A realization of all pair clocks on the torus up to a horizon.
///
/// Events are materialized time-sorted (ties, which have probability zero,
/// keep generation order) so that one realization serves both forward
/// evolution and dual-walk extraction.
#[derive(Debug, Clone)]
pub struct ClockStream {
    d: usize,
    l: usize,
    horizon: f64,
    events: Vec<Event>,
}

impl ClockStream {
    /// Sample a realization on the torus of side `l` up to time `horizon`.
    ///
    /// Each unordered pair `{x, x+z}` (one per site and per half-support
    /// displacement, rates added if wraps collide) carries an independent
    /// Poisson clock of rate `p(z)`; with `with_secondary` an independent
    /// second family of the same rates is sampled too. Implemented as a
    /// single superposition: exponential gaps at the total rate, the pair
    /// chosen by rate-proportional inversion, the family by a fair coin.
    ///
    /// # Errors
    /// [`Error::TorusTooSmall`] unless `l > 2 * kernel.radius()`;
    /// [`Error::HorizonTooLarge`] when the expected event count exceeds the
    /// memory budget.
    pub fn sample(
        kernel: &Kernel,
        l: usize,
        horizon: f64,
        with_secondary: bool,
        rng: &mut Stream,
    ) -> Result<Self> {
        let d = kernel.d();
        if (l as i64) <= 2 * kernel.radius() {
            return Err(Error::TorusTooSmall { l, radius: kernel.radius() });
        }
        let edges = crate::kernel::torus_pair_rates(kernel, l);
        let edge_total: f64 = edges.iter().map(|&(_, _, r)| r).sum();
        let total = edge_total * if with_secondary { 2.0 } else { 1.0 };
        let expected = total * horizon;
        if expected > EVENT_BUDGET {
            return Err(Error::HorizonTooLarge { expected, budget: EVENT_BUDGET });
        }
        let mut cum = Vec::with_capacity(edges.len());
        let mut acc = 0.0;
        for &(_, _, r) in &edges {
            acc += r;
            cum.push(acc);
        }
        let mut events = Vec::with_capacity((expected * 1.1) as usize + 16);
        let mut t = 0.0;
        loop {
            t += rng::exponential(rng, total);
            if t > horizon {
                break;
            }
            let u: f64 = rng.random::<f64>() * edge_total;
            let idx = cum.partition_point(|&c| c <= u).min(edges.len() - 1);
            let (x, y, _) = edges[idx];
            let tag = if with_secondary && rng.random::<bool>() {
                Tag::Secondary
            } else {
                Tag::Primary
            };
            events.push(Event { time: t, x, y, tag });
        }
        Ok(Self { d, l, horizon, events })
    }

    /// Build a stream from a prescribed event list (stably sorted by time).
    /// Used by deterministic evolution examples and trace-replay tests.
    #[cfg(test)]
    pub(crate) fn from_events(d: usize, l: usize, horizon: f64, mut events: Vec<Event>) -> Self {
        events.sort_by(|a, b| a.time.partial_cmp(&b.time).expect("finite times"));
        Self { d, l, horizon, events }
    }

    /// Lattice dimension.
    #[must_use]
    pub fn d(&self) -> usize {
        self.d
    }

    /// Torus side.
    #[must_use]
    pub fn l(&self) -> usize {
        self.l
    }

    /// Sampling horizon.
    #[must_use]
    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    /// Time-sorted events.
    #[must_use]
    pub fn events(&self) -> &[Event] {
        &self.events
    }

    /// CSV dump `time,x,y,tag` (tag 0 = primary, 1 = secondary), used by
    /// golden-trace regression tests.
    #[must_use]
    pub fn trace_csv(&self) -> String {
        let mut out = String::from("time,x,y,tag\n");
        for e in &self.events {
            let tag = match e.tag {
                Tag::Primary => 0,
                Tag::Secondary => 1,
            };
            let _ = writeln!(out, "{:.17e},{},{},{}", e.time, e.x, e.y, tag);
        }
        out
    }
}

/// The site permutation accumulated by the events of a time window.
#[derive(Debug, Clone)]
pub struct StirringMap {
    forward: Vec<u32>,
    inverse: Vec<u32>,
    event_count: usize,
}

impl StirringMap {
    /// Image of site `x` under the map.
    #[must_use]
    pub fn forward(&self, x: usize) -> usize {
        self.forward[x] as usize
    }

    /// Preimage of site `x` under the map.
    #[must_use]
    pub fn inverse(&self, x: usize) -> usize {
        self.inverse[x] as usize
    }

    /// Full forward image table.
    #[must_use]
    pub fn forward_table(&self) -> &[u32] {
        &self.forward
    }

    /// Number of events consumed by the window.
    #[must_use]
    pub fn event_count(&self) -> usize {
        self.event_count
    }

    /// Permutation sign: `+1` for even, `-1` for odd; equals
    /// `(-1)^event_count` because every event is a transposition.
    #[must_use]
    pub fn sign(&self) -> i8 {
        if self.event_count % 2 == 0 {
            1
        } else {
            -1
        }
    }
}

/// Accumulate the stirring map of the window `(s, s+t]`: scan its primary
/// events in increasing time, each swapping the images at its two sites.
///
/// # Errors
/// [`Error::WindowOutOfRange`] unless `0 <= s` and `s + t <= horizon`.
pub fn stirring_map(c: &ClockStream, s: f64, t: f64) -> Result<StirringMap> {
    let end = s + t;
    if !(s >= 0.0 && t >= 0.0 && end <= c.horizon) {
        return Err(Error::WindowOutOfRange { s, end, horizon: c.horizon });
    }
    let n = TorusGeometry::new(c.d, c.l).len();
    let mut forward: Vec<u32> = (0..n as u32).collect();
    let mut event_count = 0usize;
    let start = c.events.partition_point(|e| e.time <= s);
    for e in &c.events[start..] {
        if e.time > end {
            break;
        }
        if e.tag == Tag::Primary {
            forward.swap(e.x as usize, e.y as usize);
            event_count += 1;
        }
    }
    let mut inverse = vec![0u32; n];
    for (u, &img) in forward.iter().enumerate() {
        inverse[img as usize] = u as u32;
    }
    #[cfg(debug_assertions)]
    {
        let mut seen = vec![false; n];
        for &img in &forward {
            assert!(!seen[img as usize], "image table is not a bijection");
            seen[img as usize] = true;
        }
    }
    Ok(StirringMap { forward, inverse, event_count })
}

/// Forward exclusion evolution: returns the configuration
/// `x -> eta(xi_t(x))` where `xi_t` is the stirring map of `(0, t]`.
/// The particle count is preserved exactly (the table is a bijection).
///
/// # Errors
/// [`Error::DomainMismatch`] unless `eta` is explicit on the stream's torus;
/// window errors propagate.
pub fn evolve_configuration(
    eta: &LatticeConfiguration,
    c: &ClockStream,
    t: f64,
) -> Result<LatticeConfiguration> {
    let LatticeConfiguration::Explicit { d, l, bits } = eta else {
        return Err(Error::DomainMismatch(
            "forward evolution needs an explicit torus configuration".into(),
        ));
    };
    if *d != c.d || *l != c.l {
        return Err(Error::DomainMismatch(format!(
            "configuration on side {l} dim {d}, stream on side {} dim {}",
            c.l, c.d
        )));
    }
    let map = stirring_map(c, 0.0, t)?;
    let out = (0..bits.len()).map(|x| bits[map.forward(x)]).collect();
    Ok(LatticeConfiguration::Explicit { d: *d, l: *l, bits: out })
}

/// One dual walk: piecewise-constant path over backward time `s in [0, t]`.
#[derive(Debug, Clone)]
pub struct DualPath {
    /// Position at `s = 0` (the forward-time site the walk is dual to).
    pub start: u32,
    /// Jumps `(s, new_position)` in increasing `s`.
    pub jumps: Vec<(f64, u32)>,
}

impl DualPath {
    /// Position at backward time `s`.
    #[must_use]
    pub fn position_at(&self, s: f64) -> usize {
        let k = self.jumps.partition_point(|&(js, _)| js <= s);
        if k == 0 {
            self.start as usize
        } else {
            self.jumps[k - 1].1 as usize
        }
    }

    /// Final position (at `s = t`).
    #[must_use]
    pub fn endpoint(&self) -> usize {
        self.jumps.last().map_or(self.start as usize, |&(_, p)| p as usize)
    }
}

/// Extract the dual walks started at `sites`, read off the same realization:
/// scan the primary events of `(0, t]` in decreasing time; an event at
/// `{a, b}` (forward time `u`, backward time `s = t - u`) moves a walker at
/// `a` to `b` and vice versa. The walkers exclude by construction — they
/// occupy distinct sites at every `s` — and the endpoint of the walk from
/// `x` is exactly the forward image `xi_t(x)`.
///
/// # Errors
/// [`Error::DuplicateSites`] when the start sites are not distinct;
/// [`Error::WindowOutOfRange`] when `t` exceeds the horizon.
pub fn dual_walks(c: &ClockStream, t: f64, sites: &[usize]) -> Result<Vec<DualPath>> {
    if !(t >= 0.0 && t <= c.horizon) {
        return Err(Error::WindowOutOfRange { s: 0.0, end: t, horizon: c.horizon });
    }
    let n = TorusGeometry::new(c.d, c.l).len();
    let mut occupant = vec![u32::MAX; n];
    for (i, &x) in sites.iter().enumerate() {
        if occupant[x] != u32::MAX {
            return Err(Error::DuplicateSites);
        }
        occupant[x] = i as u32;
    }
    let mut paths: Vec<DualPath> =
        sites.iter().map(|&x| DualPath { start: x as u32, jumps: Vec::new() }).collect();
    let upto = c.events.partition_point(|e| e.time <= t);
    for e in c.events[..upto].iter().rev() {
        if e.tag != Tag::Primary {
            continue;
        }
        let s = t - e.time;
        let (a, b) = (e.x as usize, e.y as usize);
        let wa = occupant[a];
        let wb = occupant[b];
        if wa != u32::MAX {
            paths[wa as usize].jumps.push((s, e.y));
        }
        if wb != u32::MAX {
            paths[wb as usize].jumps.push((s, e.x));
        }
        occupant.swap(a, b);
    }
    Ok(paths)
}
