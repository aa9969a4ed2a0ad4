//! Jump kernels and single-walk transition distributions.
//!
//! A [`Kernel`] is a symmetric, normalized, finite-support jump law on `Z^d`
//! whose support generates the full lattice. [`Kernel::transition`] computes
//! the time-`t` law of a single rate-1 walk by uniformization — Poisson-
//! weighted powers of the embedded jump chain — either wrapped on a torus or
//! truncated on `Z^d` with a certified tail bound. [`Kernel::gradient_sums`]
//! evaluates the absolute and squared sums of the discrete gradient
//! `p_t(0, x + e_i) - p_t(0, x)`, the quantities whose decay in `t` the rate
//! experiments track.

use crate::error::{Error, Result};
use crate::rng::Stream;
use rand::Rng;

/// Default Poisson-tail tolerance for torus-mode transition distributions.
pub const TORUS_TOL: f64 = 1e-13;

/// Hard cap on uniformization series length.
const MAX_TERMS: usize = 200_000;

/// Largest Poisson mean for which `e^{-lambda}` stays representable with
/// headroom; beyond this the weight recurrence would underflow to zero.
const MAX_LAMBDA: f64 = 700.0;

/// A validated symmetric finite-support jump law on `Z^d`.
///
/// Invariants enforced at construction:
/// - `p(z) = p(-z)` for every support element;
/// - rates strictly positive, each at most 1, summing to 1 within 1e-12;
/// - the zero displacement is absent;
/// - the support generates `Z^d` as a group.
#[derive(Debug, Clone)]
pub struct Kernel {
    d: usize,
    /// Sorted lexicographically by displacement; order is part of the
    /// determinism contract for sampling.
    support: Vec<(Vec<i64>, f64)>,
    second_moment: f64,
    radius: i64,
    /// Cumulative rates aligned with `support`, for inversion sampling.
    cdf: Vec<f64>,
}

impl Kernel {
    /// Validate and build a kernel from `(displacement, rate)` pairs.
    ///
    /// # Errors
    /// [`Error::ZeroDisplacement`], [`Error::AsymmetricKernel`],
    /// [`Error::NotNormalized`], [`Error::Decomposable`], or
    /// [`Error::InvalidSupport`] when the corresponding invariant fails.
    pub fn new(d: usize, support: &[(Vec<i64>, f64)]) -> Result<Self> {
        if d == 0 || d > 8 {
            return Err(Error::InvalidSupport(format!("dimension {d} outside 1..=8")));
        }
        if support.is_empty() {
            return Err(Error::InvalidSupport("empty support".into()));
        }
        let mut entries: Vec<(Vec<i64>, f64)> = Vec::with_capacity(support.len());
        for (z, rate) in support {
            if z.len() != d {
                return Err(Error::InvalidSupport(format!(
                    "displacement {z:?} has length {}, expected {d}",
                    z.len()
                )));
            }
            if z.iter().all(|&c| c == 0) {
                return Err(Error::ZeroDisplacement);
            }
            if !rate.is_finite() || *rate <= 0.0 || *rate > 1.0 {
                return Err(Error::InvalidSupport(format!(
                    "rate {rate} for {z:?} outside (0, 1]"
                )));
            }
            if entries.iter().any(|(w, _)| w == z) {
                return Err(Error::InvalidSupport(format!("duplicate displacement {z:?}")));
            }
            entries.push((z.clone(), *rate));
        }
        // symmetry: the mirrored displacement must carry the same rate
        for (z, rate) in &entries {
            let neg: Vec<i64> = z.iter().map(|c| -c).collect();
            match entries.iter().find(|(w, _)| *w == neg) {
                None => {
                    return Err(Error::AsymmetricKernel(format!("missing mirror of {z:?}")))
                }
                Some((_, mirror_rate)) => {
                    if (rate - mirror_rate).abs() > 1e-12 {
                        return Err(Error::AsymmetricKernel(format!(
                            "rate {rate} at {z:?} vs {mirror_rate} at mirror"
                        )));
                    }
                }
            }
        }
        let total: f64 = entries.iter().map(|(_, r)| r).sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::NotNormalized(total));
        }
        let vectors: Vec<Vec<i64>> = entries.iter().map(|(z, _)| z.clone()).collect();
        if lattice_index(d, &vectors) != Some(1) {
            return Err(Error::Decomposable);
        }
        entries.sort_by(|a, b| a.0.cmp(&b.0));
        let second_moment = entries
            .iter()
            .map(|(z, r)| r * z.iter().map(|&c| (c * c) as f64).sum::<f64>())
            .sum();
        let radius = entries
            .iter()
            .flat_map(|(z, _)| z.iter().map(|c| c.abs()))
            .max()
            .expect("nonempty support");
        let mut cdf = Vec::with_capacity(entries.len());
        let mut acc = 0.0;
        for (_, r) in &entries {
            acc += r;
            cdf.push(acc);
        }
        if let Some(last) = cdf.last_mut() {
            *last = 1.0; // close the inversion interval exactly
        }
        Ok(Self { d, support: entries, second_moment, radius, cdf })
    }

    /// Nearest-neighbor kernel in dimension `d`: rate `1/(2d)` per unit step.
    ///
    /// # Panics
    /// Never; the construction is valid for every `d >= 1`.
    #[must_use]
    pub fn nearest_neighbor(d: usize) -> Self {
        let rate = 1.0 / (2 * d) as f64;
        let mut support = Vec::new();
        for axis in 0..d {
            for sign in [-1i64, 1] {
                let mut z = vec![0i64; d];
                z[axis] = sign;
                support.push((z, rate));
            }
        }
        Self::new(d, &support).expect("nearest-neighbor kernel is valid")
    }

    /// Lattice dimension.
    #[must_use]
    pub fn d(&self) -> usize {
        self.d
    }

    /// Support as sorted `(displacement, rate)` pairs.
    #[must_use]
    pub fn support(&self) -> &[(Vec<i64>, f64)] {
        &self.support
    }

    /// Cached `sum_z |z|^2 p(z)`.
    #[must_use]
    pub fn second_moment(&self) -> f64 {
        self.second_moment
    }

    /// Largest coordinate magnitude over the support.
    #[must_use]
    pub fn radius(&self) -> i64 {
        self.radius
    }

    /// Jump rate toward displacement `z` (0 when `z` is off the support).
    #[must_use]
    pub fn rate(&self, z: &[i64]) -> f64 {
        self.support
            .iter()
            .find(|(w, _)| w.as_slice() == z)
            .map_or(0.0, |(_, r)| *r)
    }

    /// The lexicographically positive half of the support, one displacement
    /// per `{z, -z}` class. Enumerating `{x, x + z}` over sites and this
    /// half-support lists every unordered interacting pair exactly once.
    #[must_use]
    pub fn half_support(&self) -> Vec<(Vec<i64>, f64)> {
        self.support
            .iter()
            .filter(|(z, _)| z.iter().find(|&&c| c != 0).is_some_and(|&c| c > 0))
            .cloned()
            .collect()
    }

    /// Draw one jump displacement distributed as the kernel law.
    pub fn sample_increment<'a>(&'a self, rng: &mut Stream) -> &'a [i64] {
        let u: f64 = rng.random();
        let idx = self.cdf.partition_point(|&c| c <= u).min(self.support.len() - 1);
        &self.support[idx].0
    }

    /// Time-`t` law of the rate-1 walk started at the origin.
    ///
    /// `Domain::Torus` wraps on side `L` (the series is summed until the
    /// Poisson tail drops below [`TORUS_TOL`]); `Domain::Truncated` works on
    /// `Z^d` over a box certified to carry all but `tol` of the mass.
    ///
    /// # Errors
    /// [`Error::TruncationBudgetExceeded`] when the series needs more than
    /// the configured maximum term count (or the Poisson mean is too large
    /// for the weight recurrence), [`Error::InvalidSupport`] on bad domain
    /// parameters.
    pub fn transition(&self, t: f64, domain: Domain) -> Result<TransitionDistribution> {
        if !(t.is_finite() && t >= 0.0) {
            return Err(Error::InvalidSupport(format!("time {t} must be nonnegative")));
        }
        match domain {
            Domain::Torus { l } => {
                if l < 3 {
                    return Err(Error::InvalidSupport(format!("torus side {l} < 3")));
                }
                self.transition_torus(t, l, TORUS_TOL)
            }
            Domain::Truncated { tol } => {
                if !(tol > 0.0 && tol <= 1e-6) {
                    return Err(Error::InvalidSupport(format!(
                        "truncation tol {tol} outside (0, 1e-6]"
                    )));
                }
                self.transition_truncated(t, tol)
            }
        }
    }

    fn transition_torus(&self, t: f64, l: usize, tol: f64) -> Result<TransitionDistribution> {
        let weights = poisson_weights(t, tol)?;
        let n = l.pow(self.d as u32);
        let torus = TorusGeometry::new(self.d, l);
        // precompute neighbor index offsets per support displacement
        let mut cur = vec![0.0f64; n];
        cur[0] = 1.0;
        let mut out = vec![0.0f64; n];
        let mut next = vec![0.0f64; n];
        for (k, &w) in weights.terms.iter().enumerate() {
            for (slot, &v) in out.iter_mut().zip(cur.iter()) {
                *slot += w * v;
            }
            if k + 1 == weights.terms.len() {
                break;
            }
            next.iter_mut().for_each(|v| *v = 0.0);
            for (site, &mass) in cur.iter().enumerate() {
                if mass == 0.0 {
                    continue;
                }
                for (z, r) in &self.support {
                    next[torus.neighbor(site, z)] += r * mass;
                }
            }
            std::mem::swap(&mut cur, &mut next);
        }
        Ok(TransitionDistribution {
            t,
            tail_bound: weights.tail,
            repr: Repr::Torus { d: self.d, l, probs: out },
        })
    }

    fn transition_truncated(&self, t: f64, tol: f64) -> Result<TransitionDistribution> {
        let weights = poisson_weights(t, tol)?;
        let steps = weights.terms.len() - 1;
        let radius = (steps as i64) * self.radius;
        let grid = BoxGrid::new(self.d, radius);
        let mut cur = vec![0.0f64; grid.len()];
        let mut out = vec![0.0f64; grid.len()];
        let mut next = vec![0.0f64; grid.len()];
        cur[grid.origin()] = 1.0;
        // the walk support after k steps sits inside radius k * self.radius,
        // so convolve over a growing sub-box
        for (k, &w) in weights.terms.iter().enumerate() {
            for (slot, &v) in out.iter_mut().zip(cur.iter()) {
                *slot += w * v;
            }
            if k == steps {
                break;
            }
            let active = ((k as i64) + 1) * self.radius;
            next.iter_mut().for_each(|v| *v = 0.0);
            grid.for_each_in_radius(active - self.radius, |idx, coords| {
                let mass = cur[idx];
                if mass != 0.0 {
                    for (z, r) in &self.support {
                        next[grid.offset(coords, z)] += r * mass;
                    }
                }
            });
            std::mem::swap(&mut cur, &mut next);
        }
        Ok(TransitionDistribution {
            t,
            tail_bound: weights.tail,
            repr: Repr::TruncatedBox { d: self.d, radius, values: out },
        })
    }

    /// Absolute and squared sums of the axis-`axis` discrete gradient of
    /// `p_t`: `S1 = sum_x |p_t(0, x + e) - p_t(0, x)|` and `S2` its squared
    /// counterpart, over all of `Z^d`, with the truncation contribution
    /// bounded by `err = 4 * tail_bound`.
    ///
    /// # Errors
    /// Propagates transition-distribution failures.
    pub fn gradient_sums(&self, t: f64, axis: usize) -> Result<GradientSums> {
        if axis >= self.d {
            return Err(Error::InvalidSupport(format!(
                "axis {axis} out of range for d={}",
                self.d
            )));
        }
        let dist = self.transition(t, Domain::Truncated { tol: 1e-12 })?;
        let (d, radius, values) = match &dist.repr {
            Repr::TruncatedBox { d, radius, values } => (*d, *radius, values),
            Repr::Torus { .. } => unreachable!("truncated domain requested"),
        };
        let grid = BoxGrid::new(d, radius + 1);
        let inner = BoxGrid::new(d, radius);
        let lookup = |coords: &[i64]| -> f64 {
            if coords.iter().all(|c| c.abs() <= radius) {
                values[inner.index(coords)]
            } else {
                0.0
            }
        };
        let mut s1 = 0.0;
        let mut s2 = 0.0;
        let mut shifted = vec![0i64; d];
        grid.for_each_in_radius(radius + 1, |_, coords| {
            shifted.copy_from_slice(coords);
            shifted[axis] += 1;
            let diff = lookup(&shifted) - lookup(coords);
            s1 += diff.abs();
            s2 += diff * diff;
        });
        Ok(GradientSums { s1, s2, err: 4.0 * dist.tail_bound })
    }
}

/// Domain request for [`Kernel::transition`].
#[derive(Debug, Clone, Copy)]
pub enum Domain {
    /// Wrap on the torus of side `l` (exact up to the Poisson tail).
    Torus { l: usize },
    /// Truncate on `Z^d` with certified tail mass at most `tol`.
    Truncated { tol: f64 },
}

/// Gradient sums with the truncation error folded into `err`.
#[derive(Debug, Clone, Copy)]
pub struct GradientSums {
    /// `sum_x |p_t(0, x + e) - p_t(0, x)|`.
    pub s1: f64,
    /// `sum_x (p_t(0, x + e) - p_t(0, x))^2`.
    pub s2: f64,
    /// Bound on the mass excluded by truncation, `4 * tail_bound`.
    pub err: f64,
}

/// Time-`t` law of the single walk, with a certified tail bound.
#[derive(Debug, Clone)]
pub struct TransitionDistribution {
    t: f64,
    tail_bound: f64,
    repr: Repr,
}

#[derive(Debug, Clone)]
enum Repr {
    Torus { d: usize, l: usize, probs: Vec<f64> },
    TruncatedBox { d: usize, radius: i64, values: Vec<f64> },
}

impl TransitionDistribution {
    /// Time the law was computed at.
    #[must_use]
    pub fn t(&self) -> f64 {
        self.t
    }

    /// Residual probability outside the stored support.
    #[must_use]
    pub fn tail_bound(&self) -> f64 {
        self.tail_bound
    }

    /// Probability of displacement `x` (wrapped on the torus; zero outside
    /// the certified box in truncated mode).
    ///
    /// # Panics
    /// Panics if the coordinate count does not match the dimension.
    #[must_use]
    pub fn prob(&self, x: &[i64]) -> f64 {
        match &self.repr {
            Repr::Torus { d, l, probs } => {
                assert_eq!(x.len(), *d);
                let torus = TorusGeometry::new(*d, *l);
                probs[torus.wrap_coords(x)]
            }
            Repr::TruncatedBox { d, radius, values } => {
                assert_eq!(x.len(), *d);
                if x.iter().any(|c| c.abs() > *radius) {
                    0.0
                } else {
                    values[BoxGrid::new(*d, *radius).index(x)]
                }
            }
        }
    }

    /// Total stored probability mass.
    #[must_use]
    pub fn stored_mass(&self) -> f64 {
        match &self.repr {
            Repr::Torus { probs, .. } => probs.iter().sum(),
            Repr::TruncatedBox { values, .. } => values.iter().sum(),
        }
    }

    /// Visit every stored `(displacement, probability)` pair. On the torus
    /// the displacement is the centered representative of each site.
    pub fn for_each(&self, mut f: impl FnMut(&[i64], f64)) {
        match &self.repr {
            Repr::Torus { d, l, probs } => {
                let torus = TorusGeometry::new(*d, *l);
                let mut coords = vec![0i64; *d];
                for (site, &p) in probs.iter().enumerate() {
                    torus.centered_coords(site, &mut coords);
                    f(&coords, p);
                }
            }
            Repr::TruncatedBox { d, radius, values } => {
                let grid = BoxGrid::new(*d, *radius);
                grid.for_each_in_radius(*radius, |idx, coords| f(coords, values[idx]));
            }
        }
    }

    /// Largest stored displacement magnitude per axis.
    #[must_use]
    pub fn radius(&self) -> i64 {
        match &self.repr {
            Repr::Torus { l, .. } => (*l / 2) as i64,
            Repr::TruncatedBox { radius, .. } => *radius,
        }
    }
}

/// Poisson weights `e^{-lambda} lambda^k / k!` up to the index where the
/// remaining tail is at most `tol`.
pub(crate) struct PoissonWeights {
    pub(crate) terms: Vec<f64>,
    pub(crate) tail: f64,
}

pub(crate) fn poisson_weights(lambda: f64, tol: f64) -> Result<PoissonWeights> {
    if lambda > MAX_LAMBDA {
        return Err(Error::TruncationBudgetExceeded(format!(
            "poisson mean {lambda} exceeds representable limit {MAX_LAMBDA}"
        )));
    }
    if lambda == 0.0 {
        return Ok(PoissonWeights { terms: vec![1.0], tail: 0.0 });
    }
    let mut terms = Vec::new();
    let mut w = (-lambda).exp();
    let mut cum = 0.0;
    for k in 0..MAX_TERMS {
        terms.push(w);
        cum += w;
        if 1.0 - cum <= tol && k as f64 >= lambda {
            return Ok(PoissonWeights { terms, tail: (1.0 - cum).max(0.0) });
        }
        w *= lambda / (k + 1) as f64;
    }
    Err(Error::TruncationBudgetExceeded(format!(
        "poisson series for mean {lambda} not below {tol} within {MAX_TERMS} terms"
    )))
}

/// Unordered interacting pairs `(x, y, rate)` on the torus, `x < y`: one
/// pair per site and half-support displacement, with rates added when two
/// displacements wrap onto the same pair (impossible once `l` exceeds twice
/// the support radius, but merged defensively).
pub(crate) fn torus_pair_rates(kernel: &Kernel, l: usize) -> Vec<(u32, u32, f64)> {
    let torus = TorusGeometry::new(kernel.d(), l);
    let mut map = std::collections::BTreeMap::<(u32, u32), f64>::new();
    for site in 0..torus.len() {
        for (z, rate) in kernel.half_support() {
            let other = torus.neighbor(site, &z);
            debug_assert_ne!(site, other, "self-pair forbidden by the size guard");
            let key = (site.min(other) as u32, site.max(other) as u32);
            *map.entry(key).or_insert(0.0) += rate;
        }
    }
    map.into_iter().map(|((x, y), r)| (x, y, r)).collect()
}

/// Row-major site indexing on the d-dimensional torus of side `l`, with
/// helpers to wrap displacements and recover centered coordinates.
#[derive(Debug, Clone, Copy)]
pub struct TorusGeometry {
    d: usize,
    l: usize,
}

impl TorusGeometry {
    /// Geometry for side `l` in dimension `d`.
    #[must_use]
    pub fn new(d: usize, l: usize) -> Self {
        Self { d, l }
    }

    /// Number of sites.
    #[must_use]
    pub fn len(&self) -> usize {
        self.l.pow(self.d as u32)
    }

    /// True when the torus has no sites (never for valid sides).
    #[must_use]
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Site index of wrapped integer coordinates.
    #[must_use]
    pub fn wrap_coords(&self, coords: &[i64]) -> usize {
        let l = self.l as i64;
        let mut idx = 0usize;
        for &c in coords {
            idx = idx * self.l + (c.rem_euclid(l)) as usize;
        }
        idx
    }

    /// Site index after moving `site` by displacement `z` with wrap-around.
    #[must_use]
    pub fn neighbor(&self, site: usize, z: &[i64]) -> usize {
        let l = self.l as i64;
        let mut rem = site;
        let mut idx = 0usize;
        // decompose row-major digits from the most significant axis
        let mut digits = [0usize; 8];
        for axis in (0..self.d).rev() {
            digits[axis] = rem % self.l;
            rem /= self.l;
        }
        for axis in 0..self.d {
            let c = (digits[axis] as i64 + z[axis]).rem_euclid(l) as usize;
            idx = idx * self.l + c;
        }
        idx
    }

    /// Centered coordinates of a site: each in `(-l/2, l/2]`.
    pub fn centered_coords(&self, site: usize, out: &mut [i64]) {
        let mut rem = site;
        for axis in (0..self.d).rev() {
            let digit = (rem % self.l) as i64;
            rem /= self.l;
            out[axis] = if digit <= (self.l / 2) as i64 { digit } else { digit - self.l as i64 };
        }
    }

    /// Minimum-image displacement between two sites, per axis in
    /// `(-l/2, l/2]`.
    pub fn min_image(&self, from: usize, to: usize, out: &mut [i64]) {
        let l = self.l as i64;
        let mut rf = from;
        let mut rt = to;
        for axis in (0..self.d).rev() {
            let df = (rf % self.l) as i64;
            let dt = (rt % self.l) as i64;
            rf /= self.l;
            rt /= self.l;
            let mut delta = (dt - df).rem_euclid(l);
            if delta > l / 2 {
                delta -= l;
            }
            out[axis] = delta;
        }
    }
}

/// Dense box `[-radius, radius]^d`, row-major.
#[derive(Debug, Clone, Copy)]
pub struct BoxGrid {
    d: usize,
    radius: i64,
    side: usize,
}

impl BoxGrid {
    /// Box of the given radius in dimension `d`.
    #[must_use]
    pub fn new(d: usize, radius: i64) -> Self {
        Self { d, radius, side: (2 * radius + 1) as usize }
    }

    /// Total cell count.
    #[must_use]
    pub fn len(&self) -> usize {
        self.side.pow(self.d as u32)
    }

    /// True when the box is degenerate (never: radius >= 0 gives >= 1 cell).
    #[must_use]
    pub fn is_empty(&self) -> bool {
        false
    }

    /// Index of the origin cell.
    #[must_use]
    pub fn origin(&self) -> usize {
        self.index(&vec![0; self.d])
    }

    /// Row-major index of in-box coordinates.
    ///
    /// # Panics
    /// Debug-asserts the coordinates lie inside the box.
    #[must_use]
    pub fn index(&self, coords: &[i64]) -> usize {
        let mut idx = 0usize;
        for &c in coords {
            debug_assert!(c.abs() <= self.radius);
            idx = idx * self.side + (c + self.radius) as usize;
        }
        idx
    }

    /// Index of `coords + z`, which must stay inside the box.
    #[must_use]
    pub fn offset(&self, coords: &[i64], z: &[i64]) -> usize {
        let mut idx = 0usize;
        for (c, dz) in coords.iter().zip(z) {
            let v = c + dz;
            debug_assert!(v.abs() <= self.radius);
            idx = idx * self.side + (v + self.radius) as usize;
        }
        idx
    }

    /// Visit every cell with max-norm at most `within` (clamped to the box),
    /// passing the cell index and its coordinates.
    pub fn for_each_in_radius(&self, within: i64, mut f: impl FnMut(usize, &[i64])) {
        let within = within.min(self.radius);
        let mut coords = vec![-within; self.d];
        loop {
            f(self.index(&coords), &coords);
            // odometer increment over the sub-box
            let mut axis = self.d;
            loop {
                if axis == 0 {
                    return;
                }
                axis -= 1;
                if coords[axis] < within {
                    coords[axis] += 1;
                    for c in &mut coords[axis + 1..] {
                        *c = -within;
                    }
                    break;
                }
            }
        }
    }
}

/// Index of the sublattice generated by `vectors` in `Z^d`: `Some(1)` means
/// the support generates the full lattice; `None` means rank-deficient.
/// Computed by integer row reduction (Hermite form) with exact arithmetic.
fn lattice_index(d: usize, vectors: &[Vec<i64>]) -> Option<u128> {
    let mut rows: Vec<Vec<i128>> =
        vectors.iter().map(|v| v.iter().map(|&c| i128::from(c)).collect()).collect();
    let mut pivot_row = 0usize;
    let mut det: u128 = 1;
    for col in 0..d {
        // gcd-combine all rows below pivot_row into one pivot in this column
        loop {
            let mut best: Option<usize> = None;
            for (i, row) in rows.iter().enumerate().skip(pivot_row) {
                if row[col] != 0 {
                    best = match best {
                        None => Some(i),
                        Some(j) if rows[i][col].abs() < rows[j][col].abs() => Some(i),
                        keep => keep,
                    };
                }
            }
            let Some(b) = best else { return None };
            rows.swap(pivot_row, b);
            let p = rows[pivot_row][col];
            let mut reduced_all = true;
            for i in pivot_row + 1..rows.len() {
                if rows[i][col] != 0 {
                    let q = rows[i][col].div_euclid(p);
                    for c in col..d {
                        let sub = q * rows[pivot_row][c];
                        rows[i][c] -= sub;
                    }
                    if rows[i][col] != 0 {
                        reduced_all = false;
                    }
                }
            }
            if reduced_all {
                break;
            }
        }
        det = det.saturating_mul(rows[pivot_row][col].unsigned_abs());
        pivot_row += 1;
    }
    Some(det)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle;
    use crate::rng;
    use proptest::prelude::*;

    fn nn1() -> Kernel {
        Kernel::nearest_neighbor(1)
    }

    #[test]
    fn nearest_neighbor_kernels_validate() {
        let k = nn1();
        assert_eq!(k.d(), 1);
        assert!((k.second_moment() - 1.0).abs() < 1e-15);
        let k2 = Kernel::nearest_neighbor(2);
        assert!((k2.second_moment() - 1.0).abs() < 1e-15);
        assert_eq!(k2.half_support().len(), 2);
    }

    #[test]
    fn even_support_is_decomposable() {
        let err = Kernel::new(1, &[(vec![2], 0.5), (vec![-2], 0.5)]).unwrap_err();
        assert!(matches!(err, Error::Decomposable), "got {err:?}");
    }

    #[test]
    fn diagonal_support_in_2d_is_decomposable() {
        // {(1,1), (1,-1)} and mirrors generate the even checkerboard sublattice
        let err = Kernel::new(
            2,
            &[
                (vec![1, 1], 0.25),
                (vec![-1, -1], 0.25),
                (vec![1, -1], 0.25),
                (vec![-1, 1], 0.25),
            ],
        )
        .unwrap_err();
        assert!(matches!(err, Error::Decomposable), "got {err:?}");
    }

    #[test]
    fn invalid_kernels_are_rejected() {
        assert!(matches!(
            Kernel::new(1, &[(vec![0], 1.0)]).unwrap_err(),
            Error::ZeroDisplacement
        ));
        assert!(matches!(
            Kernel::new(1, &[(vec![1], 0.6), (vec![-1], 0.4)]).unwrap_err(),
            Error::AsymmetricKernel(_)
        ));
        assert!(matches!(
            Kernel::new(1, &[(vec![1], 0.4), (vec![-1], 0.4)]).unwrap_err(),
            Error::NotNormalized(_)
        ));
        assert!(matches!(
            Kernel::new(1, &[(vec![1], 1.5), (vec![-1], 1.5)]).unwrap_err(),
            Error::InvalidSupport(_)
        ));
    }

    #[test]
    fn time_zero_is_a_point_mass() {
        let dist = nn1().transition(0.0, Domain::Truncated { tol: 1e-10 }).unwrap();
        assert_eq!(dist.prob(&[0]), 1.0);
        assert_eq!(dist.tail_bound(), 0.0);
        assert_eq!(dist.prob(&[1]), 0.0);
    }

    #[test]
    fn one_dimensional_law_matches_bessel_reference() {
        // the frozen anchors first
        let dist = nn1().transition(1.0, Domain::Truncated { tol: 1e-12 }).unwrap();
        assert!((dist.prob(&[0]) - 0.465_759_607_593_640_43).abs() < 1e-12);
        assert!((dist.prob(&[1]) - 0.207_910_415_349_708_44).abs() < 1e-12);
        assert!((dist.prob(&[1]) - dist.prob(&[-1])).abs() < 1e-15);
        // then whole-law duels across times
        for &t in &[0.5, 2.0, 8.0, 32.0] {
            let dist = nn1().transition(t, Domain::Truncated { tol: 1e-13 }).unwrap();
            let radius = dist.radius() as usize;
            let reference = oracle::nn1d_distribution(t, radius);
            let mut worst = 0.0f64;
            dist.for_each(|x, p| {
                let r = reference[(x[0] + radius as i64) as usize];
                worst = worst.max((p - r).abs());
            });
            assert!(worst < 2e-12, "t={t}: max deviation {worst}");
        }
    }

    #[test]
    fn two_dimensional_law_matches_product_reference() {
        let k = Kernel::nearest_neighbor(2);
        for &t in &[1.0, 4.0] {
            let dist = k.transition(t, Domain::Truncated { tol: 1e-12 }).unwrap();
            for (x, y) in [(0, 0), (1, 0), (0, 1), (2, 1), (-3, 2), (4, -4)] {
                let got = dist.prob(&[x, y]);
                let want = oracle::nn2d_prob(t, x, y);
                assert!(
                    (got - want).abs() < 1e-11,
                    "t={t} ({x},{y}): {got} vs {want}"
                );
            }
        }
    }

    #[test]
    fn torus_law_matches_wrapped_line_law() {
        let k = nn1();
        let l = 16usize;
        let t = 2.5;
        let torus = k.transition(t, Domain::Torus { l }).unwrap();
        let line = k.transition(t, Domain::Truncated { tol: 1e-13 }).unwrap();
        for site in 0..l as i64 {
            // fold the line law onto the torus
            let mut want = 0.0;
            let radius = line.radius();
            let mut image = site;
            while image > radius {
                image -= l as i64;
            }
            let mut x = image;
            while x >= -radius {
                want += line.prob(&[x]);
                x -= l as i64;
            }
            let got = torus.prob(&[site]);
            assert!((got - want).abs() < 1e-12, "site {site}: {got} vs {want}");
        }
    }

    #[test]
    fn chapman_kolmogorov_on_torus() {
        let k = nn1();
        let l = 16usize;
        let (s, t) = (0.7, 1.3);
        let ps = k.transition(s, Domain::Torus { l }).unwrap();
        let pt = k.transition(t, Domain::Torus { l }).unwrap();
        let pst = k.transition(s + t, Domain::Torus { l }).unwrap();
        let budget = 10.0 * (ps.tail_bound() + pt.tail_bound() + pst.tail_bound());
        let mut worst = 0.0f64;
        for x in 0..l as i64 {
            let mut conv = 0.0;
            for y in 0..l as i64 {
                conv += ps.prob(&[y]) * pt.prob(&[x - y]);
            }
            worst = worst.max((conv - pst.prob(&[x])).abs());
        }
        assert!(worst <= budget, "residual {worst} over budget {budget}");
    }

    #[test]
    fn mass_certificate_and_symmetry() {
        for &t in &[0.5, 4.0, 64.0] {
            let dist = nn1().transition(t, Domain::Truncated { tol: 1e-10 }).unwrap();
            let mass = dist.stored_mass();
            assert!(
                (mass + dist.tail_bound() - 1.0).abs() <= 1e-12,
                "t={t}: mass {mass} + tail {}",
                dist.tail_bound()
            );
            dist.for_each(|x, p| {
                let mirror: Vec<i64> = x.iter().map(|c| -c).collect();
                assert!((p - dist.prob(&mirror)).abs() < 1e-12);
            });
        }
    }

    #[test]
    fn peak_probability_decays_at_the_diffusive_rate() {
        // max_x p_t is nonincreasing on a doubling grid and its log-log slope
        // beats -d/2 within 0.1
        for d in [1usize, 2] {
            let k = Kernel::nearest_neighbor(d);
            let mut rows = Vec::new();
            let mut prev = f64::INFINITY;
            for e in 0..=8 {
                let t = f64::from(1 << e);
                if (t * 1.0) > 300.0 {
                    break;
                }
                let dist = k.transition(t, Domain::Truncated { tol: 1e-10 }).unwrap();
                let mut peak = 0.0f64;
                dist.for_each(|_, p| peak = peak.max(p));
                assert!(
                    peak <= prev + 1e-12,
                    "d={d}: peak rose from {prev} to {peak} at t={t}"
                );
                prev = peak;
                rows.push((t, peak));
            }
            // unweighted least squares of ln(peak) on ln(t)
            let n = rows.len() as f64;
            let xs: Vec<f64> = rows.iter().map(|(t, _)| t.ln()).collect();
            let ys: Vec<f64> = rows.iter().map(|(_, p)| p.ln()).collect();
            let xm = xs.iter().sum::<f64>() / n;
            let ym = ys.iter().sum::<f64>() / n;
            let slope = xs
                .iter()
                .zip(&ys)
                .map(|(x, y)| (x - xm) * (y - ym))
                .sum::<f64>()
                / xs.iter().map(|x| (x - xm) * (x - xm)).sum::<f64>();
            assert!(
                slope <= -(d as f64) / 2.0 + 0.1,
                "d={d}: peak slope {slope}"
            );
        }
    }

    #[test]
    fn gradient_sums_at_time_zero_are_two_each() {
        for d in [1usize, 2] {
            let g = Kernel::nearest_neighbor(d).gradient_sums(0.0, 0).unwrap();
            assert!((g.s1 - 2.0).abs() < 1e-15);
            assert!((g.s2 - 2.0).abs() < 1e-15);
        }
    }

    #[test]
    fn gradient_sums_match_bessel_telescoping() {
        // independent evaluation of S1, S2 from the Bessel law at t=1
        let t = 1.0;
        let radius = 40usize;
        let b = oracle::nn1d_distribution(t, radius + 1);
        let p = |x: i64| -> f64 {
            let idx = x + radius as i64 + 1;
            if (0..b.len() as i64).contains(&idx) {
                b[idx as usize]
            } else {
                0.0
            }
        };
        let mut s1 = 0.0;
        let mut s2 = 0.0;
        for x in -(radius as i64 + 1)..=(radius as i64 + 1) {
            let diff = p(x + 1) - p(x);
            s1 += diff.abs();
            s2 += diff * diff;
        }
        let g = nn1().gradient_sums(t, 0).unwrap();
        assert!((g.s1 - s1).abs() < 1e-10, "{} vs {s1}", g.s1);
        assert!((g.s2 - s2).abs() < 1e-12, "{} vs {s2}", g.s2);
        assert!(g.err <= 4e-12);
    }

    #[test]
    fn squared_gradient_slope_beats_minus_one_in_1d() {
        let k = nn1();
        let ts = [16.0, 64.0, 256.0];
        let vals: Vec<f64> = ts.iter().map(|&t| k.gradient_sums(t, 0).unwrap().s2).collect();
        let n = ts.len() as f64;
        let xs: Vec<f64> = ts.iter().map(|t| t.ln()).collect();
        let ys: Vec<f64> = vals.iter().map(|v| v.ln()).collect();
        let xm = xs.iter().sum::<f64>() / n;
        let ym = ys.iter().sum::<f64>() / n;
        let slope = xs.iter().zip(&ys).map(|(x, y)| (x - xm) * (y - ym)).sum::<f64>()
            / xs.iter().map(|x| (x - xm) * (x - xm)).sum::<f64>();
        assert!(slope <= -1.0 + 0.1, "S2 slope {slope}");
    }

    #[test]
    fn sampling_statistics_and_determinism() {
        let k = nn1();
        let n = 1_000_000usize;
        let mut rng = rng::stream(5, "kernel-sample", 0);
        let mut sum = 0i64;
        let mut plus = 0usize;
        for _ in 0..n {
            let z = k.sample_increment(&mut rng);
            sum += z[0];
            if z[0] == 1 {
                plus += 1;
            }
        }
        // mean: sd of a +-1 step is 1, so 4 sigma of the mean is 4/sqrt(n)
        let mean = sum as f64 / n as f64;
        assert!(mean.abs() < 4.0 / (n as f64).sqrt(), "mean {mean}");
        // frequency of +1: sd = 0.5/sqrt(n)
        let freq = plus as f64 / n as f64;
        assert!((freq - 0.5).abs() < 4.0 * 0.5 / (n as f64).sqrt(), "freq {freq}");
        // determinism
        let a: Vec<i64> = {
            let mut r = rng::stream(9, "kernel-sample", 1);
            (0..64).map(|_| k.sample_increment(&mut r)[0]).collect()
        };
        let b: Vec<i64> = {
            let mut r = rng::stream(9, "kernel-sample", 1);
            (0..64).map(|_| k.sample_increment(&mut r)[0]).collect()
        };
        assert_eq!(a, b);
    }

    /// Random symmetric normalized kernels in d=1 or d=2 with a unit step
    /// included (so the lattice test passes).
    fn arb_kernel() -> impl Strategy<Value = Kernel> {
        (1usize..=2, 1usize..=3, 0.05f64..0.45)
            .prop_flat_map(|(d, extra, unit_rate)| {
                let extras = proptest::collection::vec(
                    (proptest::collection::vec(-3i64..=3, d), 0.01f64..1.0),
                    extra,
                );
                (Just(d), Just(unit_rate), extras)
            })
            .prop_map(|(d, unit_rate, extras)| {
                let mut half: Vec<(Vec<i64>, f64)> = Vec::new();
                let mut e1 = vec![0i64; d];
                e1[0] = 1;
                half.push((e1, unit_rate));
                if d == 2 {
                    let mut e2 = vec![0i64; d];
                    e2[1] = 1;
                    half.push((e2, unit_rate));
                }
                for (z, w) in extras {
                    if z.iter().all(|&c| c == 0) {
                        continue;
                    }
                    let zneg: Vec<i64> = z.iter().map(|c| -c).collect();
                    if half.iter().any(|(h, _)| *h == z || *h == zneg) {
                        continue;
                    }
                    half.push((z, w));
                }
                let total: f64 = 2.0 * half.iter().map(|(_, w)| w).sum::<f64>();
                let mut support = Vec::new();
                for (z, w) in half {
                    let zneg: Vec<i64> = z.iter().map(|c| -c).collect();
                    support.push((z, w / total));
                    support.push((zneg, w / total));
                }
                Kernel::new(d, &support).expect("constructed kernel is valid")
            })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn random_kernels_have_certified_symmetric_laws(
            k in arb_kernel(),
            t in 0.1f64..6.0,
        ) {
            let dist = k.transition(t, Domain::Truncated { tol: 1e-8 }).unwrap();
            prop_assert!((dist.stored_mass() + dist.tail_bound() - 1.0).abs() <= 1e-12);
            let mut worst = 0.0f64;
            dist.for_each(|x, p| {
                let mirror: Vec<i64> = x.iter().map(|c| -c).collect();
                worst = worst.max((p - dist.prob(&mirror)).abs());
            });
            prop_assert!(worst < 1e-12);
            prop_assert!(
                (k.second_moment()
                    - k.support()
                        .iter()
                        .map(|(z, r)| r * z.iter().map(|&c| (c * c) as f64).sum::<f64>())
                        .sum::<f64>())
                .abs()
                    < 1e-15
            );
        }
    }
}
