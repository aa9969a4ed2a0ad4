//! Certified finite-state oracles on small tori.
//!
//! [`NParticleGenerator`] enumerates the n-subsets of torus sites and builds
//! the sparse symmetric jump-rate matrix of the n-walk exclusion dynamics.
//! Time-`t` distributions come from uniformization — Poisson-weighted powers
//! of the embedded jump chain, with the weights renormalized so the
//! discretized semigroup is exactly stochastic and the truncation error is
//! certified by the Poisson tail. A [`Krylov`] cache stores the chain powers
//! applied to one start vector so that many times (e.g. quadrature nodes)
//! reuse the same matrix-vector products.
//!
//! On top of the generator sit the oracles the experiments and tests duel
//! against: exact occupation profiles, exact multi-site occupation
//! correlations, both sides of the occupation-correlation identity (the
//! time-integrated squared-gradient form) evaluated by independent code
//! paths, exact pair-weight sums over dual endpoints, and the
//! exclusion-vs-independent correlation inequality check.

use crate::error::{Error, Result};
use crate::kernel::{poisson_weights, torus_pair_rates, Kernel, TorusGeometry};
use crate::measures::LatticeConfiguration;
use nalgebra::DMatrix;

/// Largest allowed n-subset state-space size.
pub const STATE_SPACE_CAP: u64 = 200_000;

/// Dense matrices are reserved for small oracle duels.
const DENSE_CAP: usize = 500;

/// Order-8 Gauss-Legendre nodes (positive half) and weights on [-1, 1].
const GL8_NODES: [f64; 4] =
    [0.183_434_642_495_649_8, 0.525_532_409_916_329_0, 0.796_666_477_413_626_7, 0.960_289_856_497_536_3];
const GL8_WEIGHTS: [f64; 4] =
    [0.362_683_783_378_362_0, 0.313_706_645_877_887_3, 0.222_381_034_453_374_5, 0.101_228_536_290_376_3];

/// The n-walk exclusion dynamics on the torus as an explicit finite-state
/// chain over n-subsets of sites.
#[derive(Debug, Clone)]
pub struct NParticleGenerator {
    d: usize,
    l: usize,
    n: usize,
    sites: usize,
    states: usize,
    /// `binom[j][s] = C(s, j)` for `j in 0..=n`, `s in 0..=sites`.
    binom: Vec<Vec<u64>>,
    /// CSR rows of off-diagonal jump rates.
    row_offsets: Vec<usize>,
    cols: Vec<u32>,
    rates: Vec<f64>,
    /// Total exit rate per state.
    exit: Vec<f64>,
    /// Uniformization constant: max exit rate.
    lambda: f64,
}

impl NParticleGenerator {
    /// Build the generator for `n` walks on the side-`l` torus.
    ///
    /// # Errors
    /// [`Error::TorusTooSmall`] unless `l > 2 * kernel.radius()`;
    /// [`Error::StateSpaceTooLarge`] when `C(l^d, n)` exceeds the cap;
    /// [`Error::InvalidConfig`] for `n` outside `1 ..= l^d`.
    pub fn new(kernel: &Kernel, l: usize, n: usize) -> Result<Self> {
        if (l as i64) <= 2 * kernel.radius() {
            return Err(Error::TorusTooSmall { l, radius: kernel.radius() });
        }
        let d = kernel.d();
        let sites = TorusGeometry::new(d, l).len();
        if n == 0 || n > sites {
            return Err(Error::InvalidConfig(format!("{n} walks on {sites} sites")));
        }
        let states_exact = binomial_u128(sites as u128, n as u128);
        if states_exact > u128::from(STATE_SPACE_CAP) {
            return Err(Error::StateSpaceTooLarge {
                states: states_exact.min(u128::from(u64::MAX)) as u64,
                cap: STATE_SPACE_CAP,
            });
        }
        let states = states_exact as usize;
        // Pascal table, enough for colex ranking
        let mut binom = vec![vec![0u64; sites + 1]; n + 1];
        binom[0].fill(1);
        for j in 1..=n {
            for s in 1..=sites {
                binom[j][s] = binom[j][s - 1] + binom[j - 1][s - 1];
            }
        }
        let pairs = torus_pair_rates(kernel, l);
        // adjacency list of (neighbor site, rate) per site
        let mut adj: Vec<Vec<(u32, f64)>> = vec![Vec::new(); sites];
        for &(x, y, r) in &pairs {
            adj[x as usize].push((y, r));
            adj[y as usize].push((x, r));
        }
        let mut tmp = Self {
            d,
            l,
            n,
            sites,
            states,
            binom,
            row_offsets: Vec::new(),
            cols: Vec::new(),
            rates: Vec::new(),
            exit: Vec::new(),
            lambda: 0.0,
        };
        let mut row_offsets = Vec::with_capacity(states + 1);
        let mut cols = Vec::new();
        let mut rates = Vec::new();
        let mut exit = vec![0.0f64; states];
        let mut current = vec![0usize; n];
        let mut occupied = vec![false; sites];
        let mut moved = vec![0usize; n];
        row_offsets.push(0);
        for state in 0..states {
            tmp.unrank(state, &mut current);
            for &s in &current {
                occupied[s] = true;
            }
            for (slot, &a) in current.iter().enumerate() {
                for &(b, r) in &adj[a] {
                    if occupied[b as usize] {
                        continue; // swap inside the set: no state change
                    }
                    moved.copy_from_slice(&current);
                    moved[slot] = b as usize;
                    moved.sort_unstable();
                    cols.push(tmp.rank(&moved) as u32);
                    rates.push(r);
                    exit[state] += r;
                }
            }
            for &s in &current {
                occupied[s] = false;
            }
            row_offsets.push(cols.len());
        }
        tmp.row_offsets = row_offsets;
        tmp.cols = cols;
        tmp.rates = rates;
        tmp.exit = exit;
        tmp.lambda = tmp.exit.iter().fold(0.0f64, |m, &e| m.max(e));
        Ok(tmp)
    }

    /// Number of states `C(l^d, n)`.
    #[must_use]
    pub fn states(&self) -> usize {
        self.states
    }

    /// Number of walks.
    #[must_use]
    pub fn n(&self) -> usize {
        self.n
    }

    /// Torus side.
    #[must_use]
    pub fn l(&self) -> usize {
        self.l
    }

    /// Lattice dimension.
    #[must_use]
    pub fn d(&self) -> usize {
        self.d
    }

    /// Uniformization constant (maximal exit rate over states).
    #[must_use]
    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// Colex rank of a strictly increasing site tuple.
    ///
    /// # Panics
    /// Debug-asserts sortedness and range.
    #[must_use]
    pub fn rank(&self, sorted_sites: &[usize]) -> usize {
        debug_assert_eq!(sorted_sites.len(), self.n);
        let mut r = 0u64;
        for (i, &s) in sorted_sites.iter().enumerate() {
            debug_assert!(s < self.sites);
            debug_assert!(i == 0 || sorted_sites[i - 1] < s);
            r += self.binom[i + 1][s];
        }
        r as usize
    }

    /// Inverse of [`Self::rank`]: writes the strictly increasing site tuple.
    pub fn unrank(&self, index: usize, out: &mut [usize]) {
        debug_assert_eq!(out.len(), self.n);
        let mut r = index as u64;
        for i in (0..self.n).rev() {
            // largest s with C(s, i+1) <= r
            let row = &self.binom[i + 1];
            let mut lo = i; // need at least i+1 sites below
            let mut hi = self.sites - 1;
            while lo < hi {
                let mid = (lo + hi).div_ceil(2);
                if row[mid] <= r {
                    lo = mid;
                } else {
                    hi = mid - 1;
                }
            }
            out[i] = lo;
            r -= row[lo];
        }
    }

    /// Point-mass start vector on the given (unsorted, distinct) sites.
    ///
    /// # Errors
    /// [`Error::DuplicateSites`] if the sites are not distinct.
    pub fn point_mass(&self, sites: &[usize]) -> Result<Vec<f64>> {
        let mut sorted = sites.to_vec();
        sorted.sort_unstable();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::DuplicateSites);
        }
        let mut v = vec![0.0; self.states];
        v[self.rank(&sorted)] = 1.0;
        Ok(v)
    }

    /// One application of the embedded jump chain `P = I + Q/lambda`
    /// (row-stochastic; the identity when `lambda = 0`), in the difference
    /// form `v + (1/lambda) sum_k rate_k (v_k - v)` so constant vectors are
    /// preserved bit-exactly.
    fn apply_chain(&self, v: &[f64], out: &mut [f64]) {
        if self.lambda == 0.0 {
            out.copy_from_slice(v);
            return;
        }
        let inv = 1.0 / self.lambda;
        for (state, slot) in out.iter_mut().enumerate() {
            let here = v[state];
            let mut flux = 0.0;
            for k in self.row_offsets[state]..self.row_offsets[state + 1] {
                flux += self.rates[k] * (v[self.cols[k] as usize] - here);
            }
            *slot = here + inv * flux;
        }
    }

    /// Start a power cache from an arbitrary initial vector.
    #[must_use]
    pub fn krylov(&self, start: Vec<f64>) -> Krylov<'_> {
        assert_eq!(start.len(), self.states);
        Krylov { generator: self, powers: vec![start] }
    }

    /// Dense generator matrix (off-diagonal rates, diagonal minus exit),
    /// reserved for small oracle duels.
    ///
    /// # Errors
    /// [`Error::StateSpaceTooLarge`] beyond the dense cap.
    pub fn dense_generator(&self) -> Result<DMatrix<f64>> {
        if self.states > DENSE_CAP {
            return Err(Error::StateSpaceTooLarge {
                states: self.states as u64,
                cap: DENSE_CAP as u64,
            });
        }
        let mut q = DMatrix::zeros(self.states, self.states);
        for state in 0..self.states {
            q[(state, state)] = -self.exit[state];
            for k in self.row_offsets[state]..self.row_offsets[state + 1] {
                q[(state, self.cols[k] as usize)] += self.rates[k];
            }
        }
        Ok(q)
    }
}

fn binomial_u128(n: u128, k: u128) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) / (i + 1);
    }
    acc
}

/// Cache of jump-chain powers applied to one start vector; evaluating the
/// semigroup at any time reuses the stored products.
pub struct Krylov<'a> {
    generator: &'a NParticleGenerator,
    powers: Vec<Vec<f64>>,
}

impl Krylov<'_> {
    /// Time-`t` image of the start vector under the semigroup, with the
    /// certified truncation tail. The Poisson weights are renormalized to
    /// sum to one, so constants are preserved exactly and distributions stay
    /// exactly normalized; the renormalization shifts the result by at most
    /// the tail.
    ///
    /// # Errors
    /// [`Error::TruncationBudgetExceeded`] when `lambda * t` is too large
    /// for the weight recurrence.
    pub fn at_time(&mut self, t: f64, tol: f64) -> Result<(Vec<f64>, f64)> {
        let weights = poisson_weights(self.generator.lambda * t, tol)?;
        while self.powers.len() < weights.terms.len() {
            let last = self.powers.last().expect("nonempty cache");
            let mut next = vec![0.0; last.len()];
            self.generator.apply_chain(last, &mut next);
            self.powers.push(next);
        }
        // accumulate unnormalized, then divide by the identically ordered
        // weight sum: a constant vector comes back bit-exact (x / x = 1)
        let mut out = vec![0.0; self.powers[0].len()];
        let mut weight_sum = 0.0;
        for (k, &w) in weights.terms.iter().enumerate() {
            weight_sum += w;
            for (slot, &v) in out.iter_mut().zip(&self.powers[k]) {
                *slot += w * v;
            }
        }
        for slot in &mut out {
            *slot /= weight_sum;
        }
        Ok((out, weights.tail))
    }
}

fn explicit_bits<'a>(eta: &'a LatticeConfiguration, kernel: &Kernel) -> Result<(usize, &'a [u8])> {
    let LatticeConfiguration::Explicit { d, l, bits } = eta else {
        return Err(Error::DomainMismatch("expected an explicit torus configuration".into()));
    };
    if *d != kernel.d() {
        return Err(Error::DomainMismatch(format!(
            "configuration dimension {d} vs kernel dimension {}",
            kernel.d()
        )));
    }
    Ok((*l, bits))
}

/// Exact occupation profile at time `t`: `rho_t(x) = sum_y p_t(x, y) eta(y)`
/// for every torus site, certified within `tol`.
///
/// # Errors
/// Domain mismatch, torus-size, and truncation errors propagate.
pub fn exact_rho(
    kernel: &Kernel,
    eta: &LatticeConfiguration,
    t: f64,
    tol: f64,
) -> Result<Vec<f64>> {
    let (l, bits) = explicit_bits(eta, kernel)?;
    let gen = NParticleGenerator::new(kernel, l, 1)?;
    let start: Vec<f64> = bits.iter().map(|&b| f64::from(b)).collect();
    let (rho, _) = gen.krylov(start).at_time(t, tol)?;
    Ok(rho)
}

/// Exact multi-site occupation correlation `E prod_{x in A} eta_t(x)`,
/// evaluated through the backward walk representation: the time-`t`
/// distribution of `|A|` exclusion walks started on `A`, integrated against
/// `prod eta`.
///
/// # Errors
/// State-space, duplicate-site, and truncation errors propagate.
pub fn exact_correlation(
    kernel: &Kernel,
    eta: &LatticeConfiguration,
    sites: &[usize],
    t: f64,
    tol: f64,
) -> Result<f64> {
    let (l, bits) = explicit_bits(eta, kernel)?;
    let gen = NParticleGenerator::new(kernel, l, sites.len())?;
    let (mu, _) = gen.krylov(gen.point_mass(sites)?).at_time(t, tol)?;
    let mut buf = vec![0usize; sites.len()];
    let mut acc = 0.0;
    for (state, &m) in mu.iter().enumerate() {
        if m == 0.0 {
            continue;
        }
        gen.unrank(state, &mut buf);
        if buf.iter().all(|&y| bits[y] == 1) {
            acc += m;
        }
    }
    Ok(acc)
}

/// Both sides of the occupation-correlation identity, computed by
/// independent code paths, with their absolute gap and error budget.
#[derive(Debug, Clone, Copy)]
pub struct IdentityReport {
    /// `E prod_{x in A} eta_t(x) - prod_{x in A} rho_t(x)`.
    pub lhs: f64,
    /// `-integral_0^t` of the expected squared-gradient pair sum.
    pub rhs: f64,
    /// `|lhs - rhs|`.
    pub gap: f64,
    /// Certified error budget (truncation tails plus quadrature change).
    pub error_budget: f64,
}

/// Evaluate the identity: the correlation defect of `A` at time `t` equals
/// minus the time integral of the expected kernel-weighted squared gradient
/// of the occupation profile over the current walk positions,
///
/// `lhs = E prod eta_t - prod rho_t`,
/// `rhs = -int_0^t sum_B mu_s(B) sum_{pairs {u,v} in B} q(u,v)
///        (rho_{t-s}(u) - rho_{t-s}(v))^2 prod_{w in B minus {u,v}}
///        rho_{t-s}(w) ds`,
///
/// where `mu_s` is the exclusion-walk distribution started on `A` and `q`
/// the torus pair rate. The integrand is nonnegative, so `rhs <= 0`.
///
/// # Errors
/// [`Error::QuadratureNotConverged`] when panel doubling stalls; state-space
/// and truncation errors propagate.
pub fn exact_basic_identity(
    kernel: &Kernel,
    eta: &LatticeConfiguration,
    sites: &[usize],
    t: f64,
    tol: f64,
) -> Result<IdentityReport> {
    let (l, bits) = explicit_bits(eta, kernel)?;
    let n = sites.len();
    let utol = (tol * 1e-3).min(1e-12);
    let gen_n = NParticleGenerator::new(kernel, l, n)?;
    let gen_1 = NParticleGenerator::new(kernel, l, 1)?;
    let mut kry_a = gen_n.krylov(gen_n.point_mass(sites)?);
    let start_rho: Vec<f64> = bits.iter().map(|&b| f64::from(b)).collect();
    let mut kry_rho = gen_1.krylov(start_rho);

    // left side: correlation minus product of profiles
    let (mu_t, tail_corr) = kry_a.at_time(t, utol)?;
    let mut buf = vec![0usize; n];
    let mut corr = 0.0;
    for (state, &m) in mu_t.iter().enumerate() {
        if m == 0.0 {
            continue;
        }
        gen_n.unrank(state, &mut buf);
        if buf.iter().all(|&y| bits[y] == 1) {
            corr += m;
        }
    }
    let (rho_t, tail_rho) = kry_rho.at_time(t, utol)?;
    let prod: f64 = sites.iter().map(|&x| rho_t[x]).product();
    let lhs = corr - prod;

    // right side: adaptive panel-doubled Gauss-Legendre in s
    let pair_rates = torus_pair_rates(kernel, l);
    let mut rate_of = std::collections::HashMap::new();
    for &(x, y, r) in &pair_rates {
        rate_of.insert((x, y), r);
    }
    let mut tails = tail_corr + f64::from(n as u32) * tail_rho;
    let mut integrand = |s: f64| -> Result<f64> {
        let (mu_s, tail_mu) = kry_a.at_time(s, utol)?;
        let (rho, tail_r) = kry_rho.at_time(t - s, utol)?;
        tails = tails.max(tail_mu + tail_r); // bookkeeping only
        let mut sum = 0.0;
        let mut state_sites = vec![0usize; n];
        for (state, &m) in mu_s.iter().enumerate() {
            if m == 0.0 {
                continue;
            }
            gen_n.unrank(state, &mut state_sites);
            for i in 0..n {
                for j in i + 1..n {
                    let (u, v) = (state_sites[i], state_sites[j]);
                    let key = (u.min(v) as u32, u.max(v) as u32);
                    let Some(&q) = rate_of.get(&key) else { continue };
                    let diff = rho[u] - rho[v];
                    let mut rest = 1.0;
                    for (k, &w) in state_sites.iter().enumerate() {
                        if k != i && k != j {
                            rest *= rho[w];
                        }
                    }
                    sum += m * q * diff * diff * rest;
                }
            }
        }
        Ok(sum)
    };
    let (integral, quad_change) = adaptive_gauss_legendre(&mut integrand, 0.0, t, tol / 2.0)?;
    let rhs = -integral;
    Ok(IdentityReport {
        lhs,
        rhs,
        gap: (lhs - rhs).abs(),
        error_budget: tails * (1.0 + t) + quad_change,
    })
}

/// Panel-doubling order-8 Gauss-Legendre on `[a, b]` until two successive
/// refinements differ by less than `target`. Returns the integral and the
/// last change.
fn adaptive_gauss_legendre(
    f: &mut impl FnMut(f64) -> Result<f64>,
    a: f64,
    b: f64,
    target: f64,
) -> Result<(f64, f64)> {
    if b <= a {
        return Ok((0.0, 0.0));
    }
    let mut previous: Option<f64> = None;
    let mut panels = 1usize;
    let mut change = f64::INFINITY;
    while panels <= 1024 {
        let h = (b - a) / panels as f64;
        let mut total = 0.0;
        for p in 0..panels {
            let mid = a + (p as f64 + 0.5) * h;
            for (node, weight) in GL8_NODES.iter().zip(&GL8_WEIGHTS) {
                total += weight * 0.5 * h * (f(mid + 0.5 * h * node)? + f(mid - 0.5 * h * node)?);
            }
        }
        if let Some(prev) = previous {
            change = (total - prev).abs();
            if change < target {
                return Ok((total, change));
            }
        }
        previous = Some(total);
        panels *= 2;
    }
    Err(Error::QuadratureNotConverged { change, target })
}

/// Summable pair-weight rule evaluated at displacements.
#[derive(Debug, Clone, Copy)]
pub enum WeightRule {
    /// `Phi(z) = p(z) |z|^2` (kernel-weighted squared displacement).
    KernelWeightedSquare,
    /// `Phi(z) = |z|^{-alpha}` (never evaluated at `z = 0`).
    InversePower {
        /// Decay exponent.
        alpha: f64,
    },
}

impl WeightRule {
    fn eval(&self, kernel: &Kernel, z: &[i64]) -> f64 {
        let norm2: f64 = z.iter().map(|&c| (c * c) as f64).sum();
        match self {
            Self::KernelWeightedSquare => kernel.rate(z) * norm2,
            Self::InversePower { alpha } => norm2.powf(-alpha / 2.0),
        }
    }
}

/// Exact value of `sum_{j != k} E Phi(X_j(t) - X_k(t))` for exclusion walks
/// started at `sites`, via the pairwise reduction: each ordered pair's term
/// comes from the exact 2-walk distribution (the pair marginal of the full
/// stirring dynamics), with displacements taken as torus minimum images.
///
/// # Errors
/// State-space, duplicate-site, and truncation errors propagate.
pub fn pair_weight_sum(
    kernel: &Kernel,
    l: usize,
    rule: WeightRule,
    sites: &[usize],
    t: f64,
) -> Result<f64> {
    let gen = NParticleGenerator::new(kernel, l, 2)?;
    let torus = TorusGeometry::new(kernel.d(), l);
    let mut total = 0.0;
    let mut buf = [0usize; 2];
    let mut disp = vec![0i64; kernel.d()];
    for i in 0..sites.len() {
        for j in i + 1..sites.len() {
            let (mu, _) = gen
                .krylov(gen.point_mass(&[sites[i], sites[j]])?)
                .at_time(t, 1e-12)?;
            for (state, &m) in mu.iter().enumerate() {
                if m == 0.0 {
                    continue;
                }
                gen.unrank(state, &mut buf);
                torus.min_image(buf[0], buf[1], &mut disp);
                total += m * rule.eval(kernel, &disp);
                disp.iter_mut().for_each(|c| *c = -*c);
                total += m * rule.eval(kernel, &disp);
            }
        }
    }
    Ok(total)
}

/// Result of one exclusion-vs-independent correlation-inequality check.
#[derive(Debug, Clone, Copy)]
pub struct InequalityCheck {
    /// `P[{X_a(t), X_b(t)} = {y_j, y_k}]` under exclusion.
    pub exclusion_prob: f64,
    /// `(p_t(y_j-x_a)+p_t(y_k-x_a)) * (p_t(y_j-x_b)+p_t(y_k-x_b))` from
    /// independent walks.
    pub product_bound: f64,
    /// Whether `exclusion_prob <= product_bound + 1e-10`.
    pub ok: bool,
}

/// Check that the exclusion pair hits a target set no more often than the
/// independent-walk product bound allows.
///
/// # Errors
/// State-space and truncation errors propagate.
pub fn correlation_inequality_check(
    kernel: &Kernel,
    l: usize,
    sites: (usize, usize),
    targets: (usize, usize),
    t: f64,
) -> Result<InequalityCheck> {
    if sites.0 == sites.1 || targets.0 == targets.1 {
        return Err(Error::DuplicateSites);
    }
    let gen = NParticleGenerator::new(kernel, l, 2)?;
    let (mu, _) = gen.krylov(gen.point_mass(&[sites.0, sites.1])?).at_time(t, 1e-12)?;
    let target_state = [targets.0.min(targets.1), targets.0.max(targets.1)];
    let exclusion_prob = mu[gen.rank(&target_state)];
    let single = kernel.transition(t, crate::kernel::Domain::Torus { l })?;
    let torus = TorusGeometry::new(kernel.d(), l);
    let mut disp = vec![0i64; kernel.d()];
    let mut p = |from: usize, to: usize| -> f64 {
        torus.min_image(from, to, &mut disp);
        single.prob(&disp)
    };
    let product_bound = (p(sites.0, targets.0) + p(sites.0, targets.1))
        * (p(sites.1, targets.0) + p(sites.1, targets.1));
    Ok(InequalityCheck {
        exclusion_prob,
        product_bound,
        ok: exclusion_prob <= product_bound + 1e-10,
    })
}

/// `int_0^t E q(X_a(s), X_b(s)) ds` for the exclusion pair started at
/// `(a, b)`: the expected accumulated pair rate, which calibrates collision
/// counters in the walk couplings.
///
/// # Errors
/// Quadrature, state-space, and truncation errors propagate.
pub fn expected_pair_rate_integral(
    kernel: &Kernel,
    l: usize,
    pair: (usize, usize),
    t: f64,
    tol: f64,
) -> Result<f64> {
    let gen = NParticleGenerator::new(kernel, l, 2)?;
    let mut kry = gen.krylov(gen.point_mass(&[pair.0, pair.1])?);
    let pair_rates = torus_pair_rates(kernel, l);
    // expected pair rate as a state functional
    let mut weight = vec![0.0f64; gen.states()];
    for &(x, y, r) in &pair_rates {
        weight[gen.rank(&[x.min(y) as usize, x.max(y) as usize])] = r;
    }
    let mut integrand = |s: f64| -> Result<f64> {
        let (mu, _) = kry.at_time(s, 1e-12)?;
        Ok(mu.iter().zip(&weight).map(|(&m, &w)| m * w).sum())
    };
    let (integral, _) = adaptive_gauss_legendre(&mut integrand, 0.0, t, tol)?;
    Ok(integral)
}
