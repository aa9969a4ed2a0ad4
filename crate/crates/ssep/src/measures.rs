//! Initial configurations and initial measures.
//!
//! Configurations are total functions `Z^d -> {0,1}` given either by an
//! explicit torus array or by a rule (step, periodic, constant). Measures are
//! Bernoulli products, local-rule fields (a boolean rule of fixed range
//! applied to an i.i.d. fair-bit field — finite-range dependence, so
//! correlations vanish exactly beyond twice the range), or point masses at a
//! configuration. All cylinder probabilities are closed-form or obtained by
//! exact enumeration of the underlying bits, which is what the dual-walk
//! Monte Carlo estimators integrate against.
//!
//! The module also certifies envelope membership: whether the exact
//! occupation profile `rho_t(x)` of a configuration under a given kernel
//! satisfies `(rho_t(x) - rho_t(y))^2 <= |x-y|^2 phi(t)` on a declared grid
//! of site pairs and times.

use crate::error::{Error, Result};
use crate::kernel::{Domain, Kernel, TorusGeometry};
use crate::rng::Stream;
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Cap on the number of underlying bits enumerated for exact cylinder
/// probabilities of local-rule fields.
const WINDOW_BITS_CAP: usize = 24;

/// A deterministic occupation pattern, total on `Z^d`.
#[derive(Debug, Clone, PartialEq)]
pub enum LatticeConfiguration {
    /// Explicit torus array (row-major, side `l`, dimension `d`); evaluation
    /// off the fundamental window wraps.
    Explicit {
        /// Lattice dimension.
        d: usize,
        /// Torus side.
        l: usize,
        /// Row-major occupation bits, length `l^d`.
        bits: Vec<u8>,
    },
    /// Occupied exactly where the first coordinate is at least the threshold.
    Step {
        /// Occupation threshold (occupied iff `x[0] >= threshold`).
        threshold: i64,
    },
    /// Pattern repeated along axis 0: occupied iff
    /// `pattern[x[0] mod pattern.len()] = 1`.
    Periodic {
        /// Occupation pattern, entries in `{0,1}`.
        pattern: Vec<u8>,
    },
    /// The same value everywhere.
    Constant {
        /// Occupation value, 0 or 1.
        value: u8,
    },
}

impl LatticeConfiguration {
    /// Occupation at site `x`.
    #[must_use]
    pub fn eval(&self, x: &[i64]) -> u8 {
        match self {
            Self::Explicit { d, l, bits } => {
                debug_assert_eq!(x.len(), *d);
                bits[TorusGeometry::new(*d, *l).wrap_coords(x)]
            }
            Self::Step { threshold } => u8::from(x[0] >= *threshold),
            Self::Periodic { pattern } => {
                pattern[x[0].rem_euclid(pattern.len() as i64) as usize]
            }
            Self::Constant { value } => *value,
        }
    }

    /// Restrict to the torus window of side `l` using centered coordinates
    /// (each coordinate in `(-l/2, l/2]`), returning an explicit array.
    #[must_use]
    pub fn restrict_to_torus(&self, d: usize, l: usize) -> Self {
        let torus = TorusGeometry::new(d, l);
        let mut coords = vec![0i64; d];
        let bits = (0..torus.len())
            .map(|site| {
                torus.centered_coords(site, &mut coords);
                self.eval(&coords)
            })
            .collect();
        Self::Explicit { d, l, bits }
    }

    /// Mean occupation, when the pattern has one: explicit and periodic
    /// average their cells, constants return their value; the step pattern
    /// has no translation-invariant density.
    #[must_use]
    pub fn mean_occupation(&self) -> Option<f64> {
        match self {
            Self::Explicit { bits, .. } => {
                Some(bits.iter().map(|&b| f64::from(b)).sum::<f64>() / bits.len() as f64)
            }
            Self::Step { .. } => None,
            Self::Periodic { pattern } => Some(
                pattern.iter().map(|&b| f64::from(b)).sum::<f64>() / pattern.len() as f64,
            ),
            Self::Constant { value } => Some(f64::from(*value)),
        }
    }
}

/// Local boolean rule applied to an i.i.d. fair-bit field.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LocalRule {
    /// Pass the underlying bit through (range 0; reproduces fair Bernoulli).
    Identity,
    /// Majority of the three bits at `x - e0, x, x + e0` (range 1).
    Majority3,
}

impl LocalRule {
    /// Dependency range of the rule along axis 0.
    #[must_use]
    pub fn range(&self) -> usize {
        match self {
            Self::Identity => 0,
            Self::Majority3 => 1,
        }
    }

    /// Evaluate the rule at the origin offset given a bit lookup.
    fn apply(&self, mut bit: impl FnMut(i64) -> u8) -> u8 {
        match self {
            Self::Identity => bit(0),
            Self::Majority3 => u8::from(bit(-1) + bit(0) + bit(1) >= 2),
        }
    }
}

/// A probability law on configurations with exact cylinder probabilities.
#[derive(Debug, Clone, PartialEq)]
pub enum InitialMeasure {
    /// Independent occupation with probability `rho` per site.
    Bernoulli {
        /// Occupation probability.
        rho: f64,
    },
    /// A local rule of the underlying i.i.d. fair-bit field; correlations
    /// vanish exactly beyond twice the rule's range.
    LocalRuleField {
        /// The rule applied at every site.
        rule: LocalRule,
    },
    /// Deterministic: all mass on one configuration.
    PointMass {
        /// The configuration carrying the mass.
        config: LatticeConfiguration,
    },
}

impl InitialMeasure {
    /// Single-site occupation probability, when translation-invariant.
    #[must_use]
    pub fn density(&self) -> Option<f64> {
        match self {
            Self::Bernoulli { rho } => Some(*rho),
            Self::LocalRuleField { .. } => {
                Some(self.cylinder_prob(&[vec![0]]).expect("single site fits the cap"))
            }
            Self::PointMass { config } => match config {
                LatticeConfiguration::Periodic { .. } | LatticeConfiguration::Constant { .. } => {
                    config.mean_occupation()
                }
                _ => None,
            },
        }
    }

    /// Draw one configuration on the torus of side `l` in dimension `d`.
    /// Local-rule fields draw the underlying field on the same torus and
    /// apply the rule with wrap-around.
    #[must_use]
    pub fn sample_configuration(
        &self,
        d: usize,
        l: usize,
        rng: &mut Stream,
    ) -> LatticeConfiguration {
        let torus = TorusGeometry::new(d, l);
        let n = torus.len();
        match self {
            Self::Bernoulli { rho } => {
                let bits = (0..n).map(|_| u8::from(rng.random::<f64>() < *rho)).collect();
                LatticeConfiguration::Explicit { d, l, bits }
            }
            Self::LocalRuleField { rule } => {
                let field: Vec<u8> = (0..n).map(|_| u8::from(rng.random::<bool>())).collect();
                let mut z = vec![0i64; d];
                let bits = (0..n)
                    .map(|site| {
                        rule.apply(|offset| {
                            z.iter_mut().for_each(|c| *c = 0);
                            z[0] = offset;
                            field[torus.neighbor(site, &z)]
                        })
                    })
                    .collect();
                LatticeConfiguration::Explicit { d, l, bits }
            }
            Self::PointMass { config } => config.restrict_to_torus(d, l),
        }
    }

    /// Exact probability that every listed site is occupied. Duplicate sites
    /// are collapsed (occupation is idempotent).
    ///
    /// # Errors
    /// [`Error::WindowTooLarge`] when a local-rule field would need more
    /// underlying bits than the enumeration cap.
    pub fn cylinder_prob(&self, sites: &[Vec<i64>]) -> Result<f64> {
        let mut unique: Vec<&Vec<i64>> = Vec::new();
        for s in sites {
            if !unique.contains(&s) {
                unique.push(s);
            }
        }
        match self {
            Self::Bernoulli { rho } => Ok(rho.powi(unique.len() as i32)),
            Self::LocalRuleField { rule } => {
                let r = rule.range() as i64;
                // union of per-site dependency windows along axis 0
                let mut window: Vec<Vec<i64>> = Vec::new();
                for s in &unique {
                    for offset in -r..=r {
                        let mut w = (*s).clone();
                        w[0] += offset;
                        if !window.contains(&w) {
                            window.push(w);
                        }
                    }
                }
                window.sort();
                if window.len() > WINDOW_BITS_CAP {
                    return Err(Error::WindowTooLarge {
                        bits: window.len(),
                        cap: WINDOW_BITS_CAP,
                    });
                }
                let bit_index = |x: &[i64]| -> usize {
                    window
                        .binary_search_by(|w| w.as_slice().cmp(x))
                        .expect("window contains every dependency site")
                };
                let mut favorable = 0u64;
                for mask in 0u64..(1u64 << window.len()) {
                    let all = unique.iter().all(|s| {
                        rule.apply(|offset| {
                            let mut w = (*s).clone();
                            w[0] += offset;
                            ((mask >> bit_index(&w)) & 1) as u8
                        }) == 1
                    });
                    favorable += u64::from(all);
                }
                Ok(favorable as f64 / (1u64 << window.len()) as f64)
            }
            Self::PointMass { config } => {
                Ok(f64::from(unique.iter().all(|s| config.eval(s) == 1)))
            }
        }
    }

    /// Covariances `cov(eta(0), eta(k e0))` for `k = 0 ..= max_distance`.
    ///
    /// # Errors
    /// Propagates [`Self::cylinder_prob`] failures.
    pub fn correlation_table(&self, d: usize, max_distance: i64) -> Result<Vec<(i64, f64)>> {
        let origin = vec![0i64; d];
        let p0 = self.cylinder_prob(&[origin.clone()])?;
        let mut table = Vec::new();
        for k in 0..=max_distance {
            let mut x = vec![0i64; d];
            x[0] = k;
            let pk = self.cylinder_prob(&[x.clone()])?;
            let joint = self.cylinder_prob(&[origin.clone(), x])?;
            table.push((k, joint - p0 * pk));
        }
        Ok(table)
    }
}

/// Nonincreasing power-law envelope `phi(t) = scale * (1 + t)^{-exponent}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundProfile {
    scale: f64,
    exponent: f64,
}

impl BoundProfile {
    /// Build the profile, checking positivity and monotonicity.
    ///
    /// # Errors
    /// [`Error::InvalidConfig`] when `scale <= 0` or `exponent < 0`.
    pub fn power(scale: f64, exponent: f64) -> Result<Self> {
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::InvalidConfig(format!("envelope scale {scale} must be positive")));
        }
        if !(exponent >= 0.0 && exponent.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "envelope exponent {exponent} must be nonnegative"
            )));
        }
        Ok(Self { scale, exponent })
    }

    /// Envelope value at time `t >= 0`.
    #[must_use]
    pub fn value(&self, t: f64) -> f64 {
        self.scale * (1.0 + t).powf(-self.exponent)
    }

    /// Smallest constant `c` with `phi(t) <= c (1+t)^{-(d+2)/2}` over the
    /// grid — the admissibility certificate for dimension `d`.
    #[must_use]
    pub fn envelope_constant(&self, d: usize, grid: &[f64]) -> f64 {
        grid.iter()
            .map(|&t| self.value(t) * (1.0 + t).powf((d as f64 + 2.0) / 2.0))
            .fold(0.0, f64::max)
    }
}

/// Outcome of an envelope-membership check on a declared grid.
#[derive(Debug, Clone)]
pub struct MembershipReport {
    /// Largest ratio `(rho_t(x)-rho_t(y))^2 / (|x-y|^2 phi(t))` attained.
    pub max_ratio: f64,
    /// Pair and time where the maximum occurred.
    pub worst: (Vec<i64>, Vec<i64>, f64),
    /// Whether every grid point satisfied the inequality (ratio <= 1).
    pub pass: bool,
    /// Number of (pair, time) grid points checked.
    pub grid_points: usize,
}

/// Exact occupation profile `rho_t(x) = sum_z p_t(z) eta(x+z)` of a
/// configuration evolved by the single-walk semigroup of `kernel`, evaluated
/// at the given sites. Exact up to the certified transition tail (at most
/// 1e-12 per site).
///
/// # Errors
/// Propagates transition-distribution failures.
pub fn occupation_profile(
    config: &LatticeConfiguration,
    kernel: &Kernel,
    t: f64,
    sites: &[Vec<i64>],
) -> Result<Vec<f64>> {
    let dist = kernel.transition(t, Domain::Truncated { tol: 1e-12 })?;
    let mut out = Vec::with_capacity(sites.len());
    let mut shifted = vec![0i64; kernel.d()];
    for site in sites {
        let mut rho = 0.0;
        dist.for_each(|z, p| {
            if p != 0.0 {
                for (s, (c, dz)) in shifted.iter_mut().zip(site.iter().zip(z)) {
                    *s = c + dz;
                }
                rho += p * f64::from(config.eval(&shifted));
            }
        });
        out.push(rho.clamp(0.0, 1.0));
    }
    Ok(out)
}

/// Check `(rho_t(x) - rho_t(y))^2 <= |x-y|^2 phi(t)` for every pair in
/// `pairs` and every time in `times`, using the exact occupation profile.
/// This is a sampled certificate on the declared grid, not a proof over all
/// sites and times.
///
/// # Errors
/// [`Error::InvalidConfig`] on an empty grid or a coincident pair;
/// propagates profile failures.
pub fn check_envelope_membership(
    config: &LatticeConfiguration,
    kernel: &Kernel,
    profile: &BoundProfile,
    pairs: &[(Vec<i64>, Vec<i64>)],
    times: &[f64],
) -> Result<MembershipReport> {
    if pairs.is_empty() || times.is_empty() {
        return Err(Error::InvalidConfig("empty membership grid".into()));
    }
    let mut max_ratio = f64::NEG_INFINITY;
    let mut worst = (pairs[0].0.clone(), pairs[0].1.clone(), times[0]);
    let mut grid_points = 0usize;
    for &t in times {
        // one transition distribution per time, shared across pairs
        let sites: Vec<Vec<i64>> = pairs
            .iter()
            .flat_map(|(x, y)| [x.clone(), y.clone()])
            .collect();
        let rho = occupation_profile(config, kernel, t, &sites)?;
        for (i, (x, y)) in pairs.iter().enumerate() {
            let dist2: f64 = x
                .iter()
                .zip(y)
                .map(|(a, b)| {
                    let diff = (a - b) as f64;
                    diff * diff
                })
                .sum();
            if dist2 == 0.0 {
                return Err(Error::InvalidConfig(format!("coincident pair {x:?}")));
            }
            let diff = rho[2 * i] - rho[2 * i + 1];
            let ratio = diff * diff / (dist2 * profile.value(t));
            grid_points += 1;
            if ratio > max_ratio {
                max_ratio = ratio;
                worst = (x.clone(), y.clone(), t);
            }
        }
    }
    Ok(MembershipReport { max_ratio, worst, pass: max_ratio <= 1.0, grid_points })
}

/// Serialized measure description used inside experiment configs.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum MeasureSpec {
    /// `{"type":"bernoulli","rho":0.5}`
    Bernoulli {
        /// Occupation probability.
        rho: f64,
    },
    /// `{"type":"local_rule","rule":"majority3","range":1}`
    LocalRule {
        /// Rule name: `identity` or `majority3`.
        rule: String,
        /// Declared dependency range; must match the rule.
        range: usize,
    },
    /// `{"type":"config","rule":"step"}` or
    /// `{"type":"config","rule":"periodic","pattern":[0,1]}`
    Config {
        /// Pattern name: `step` or `periodic`.
        rule: String,
        /// Repeating pattern for `periodic` (ignored for `step`).
        #[serde(default)]
        pattern: Vec<u8>,
    },
}

/// Build a validated measure from its serialized description.
///
/// # Errors
/// [`Error::InvalidConfig`] on an unknown rule name, a density outside
/// `[0,1]`, a mismatched declared range, or a bad pattern.
pub fn make_measure(spec: &MeasureSpec) -> Result<InitialMeasure> {
    match spec {
        MeasureSpec::Bernoulli { rho } => {
            if !(*rho >= 0.0 && *rho <= 1.0) {
                return Err(Error::InvalidConfig(format!("density {rho} outside [0,1]")));
            }
            Ok(InitialMeasure::Bernoulli { rho: *rho })
        }
        MeasureSpec::LocalRule { rule, range } => {
            let rule = match rule.as_str() {
                "identity" => LocalRule::Identity,
                "majority3" => LocalRule::Majority3,
                other => {
                    return Err(Error::InvalidConfig(format!("unknown local rule {other:?}")))
                }
            };
            if *range != rule.range() {
                return Err(Error::InvalidConfig(format!(
                    "declared range {range} does not match rule range {}",
                    rule.range()
                )));
            }
            Ok(InitialMeasure::LocalRuleField { rule })
        }
        MeasureSpec::Config { rule, pattern } => match rule.as_str() {
            "step" => Ok(InitialMeasure::PointMass {
                config: LatticeConfiguration::Step { threshold: 1 },
            }),
            "periodic" => {
                if pattern.is_empty() {
                    return Err(Error::InvalidConfig("periodic pattern is empty".into()));
                }
                if pattern.iter().any(|&b| b > 1) {
                    return Err(Error::InvalidConfig("pattern entries must be 0 or 1".into()));
                }
                Ok(InitialMeasure::PointMass {
                    config: LatticeConfiguration::Periodic { pattern: pattern.clone() },
                })
            }
            other => Err(Error::InvalidConfig(format!("unknown config rule {other:?}"))),
        },
    }
}
