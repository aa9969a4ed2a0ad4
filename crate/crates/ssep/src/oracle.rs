//! Independent reference computations used to cross-validate the main code
//! paths.
//!
//! Nothing here shares algorithms with the modules under test: transition
//! probabilities come from a modified-Bessel series instead of semigroup
//! iteration, two-dimensional walks from an exact product form, and
//! finite-state semigroups from a dense eigendecomposition instead of
//! uniformization. Test suites freeze concrete values produced by these
//! routines and demand agreement from the production code, so a regression
//! in either side breaks the duel.

use nalgebra::DMatrix;

/// Scaled modified Bessel values `e^{-t} I_k(t)` for `k = 0..=k_max`.
///
/// For the rate-1 nearest-neighbor walk on `Z`, `e^{-t} I_x(t)` is exactly
/// the probability of being at `x` at time `t`, so this doubles as an exact
/// single-walk transition law.
///
/// Computed by Miller's backward recurrence `I_{k-1} = I_{k+1} + (2k/t) I_k`
/// from a trial value at high order, normalized with
/// `I_0 + 2 sum_{k>=1} I_k = e^t`. The start order exceeds both `k_max` and
/// `t` by a margin that pushes the relative contamination of the trial value
/// below 1e-18.
///
/// # Panics
/// Panics if `t` is negative or not finite.
#[must_use]
pub fn scaled_bessel(t: f64, k_max: usize) -> Vec<f64> {
    assert!(t.is_finite() && t >= 0.0, "time must be finite and nonnegative");
    if t == 0.0 {
        let mut out = vec![0.0; k_max + 1];
        out[0] = 1.0;
        return out;
    }
    let start = k_max.max(t.ceil() as usize) + 60;
    let mut stored = vec![0.0_f64; k_max + 1];
    // trial values at orders start+1 and start
    let mut above = 0.0_f64;
    let mut cur = 1e-300_f64;
    let mut sum_pos = 0.0_f64; // sum of trial values over k >= 1
    let mut k = start;
    if k <= k_max {
        stored[k] = cur;
    }
    sum_pos += cur;
    while k >= 1 {
        let below = above + (2.0 * k as f64 / t) * cur;
        above = cur;
        cur = below;
        k -= 1;
        if k >= 1 {
            sum_pos += cur;
        }
        if k <= k_max {
            stored[k] = cur;
        }
        if cur > 1e250 {
            // rescale to dodge overflow; ratios are all that matter
            above *= 1e-250;
            cur *= 1e-250;
            sum_pos *= 1e-250;
            for v in &mut stored {
                *v *= 1e-250;
            }
        }
    }
    // cur now holds the k=0 trial value
    let norm = cur + 2.0 * sum_pos;
    debug_assert!(norm > 0.0);
    for v in &mut stored {
        *v /= norm;
    }
    stored
}

/// Exact distribution of the rate-1 nearest-neighbor walk on `Z` at time
/// `t`, over `x in [-radius, radius]`, indexed by `x + radius`.
#[must_use]
pub fn nn1d_distribution(t: f64, radius: usize) -> Vec<f64> {
    let b = scaled_bessel(t, radius);
    let mut out = vec![0.0; 2 * radius + 1];
    for (x, slot) in out.iter_mut().enumerate() {
        let k = (x as i64 - radius as i64).unsigned_abs() as usize;
        *slot = b[k];
    }
    out
}

/// Exact transition probability of the rate-1 nearest-neighbor walk on
/// `Z^2` (rate 1/4 per direction) at time `t`, by the product form: the two
/// coordinates are independent rate-1/2 one-dimensional walks, so
/// `p_t(x, y) = q_{t/2}(x) q_{t/2}(y)` with `q` the rate-1 1-D law.
#[must_use]
pub fn nn2d_prob(t: f64, x: i64, y: i64) -> f64 {
    let k_max = x.unsigned_abs().max(y.unsigned_abs()) as usize;
    let b = scaled_bessel(t / 2.0, k_max);
    b[x.unsigned_abs() as usize] * b[y.unsigned_abs() as usize]
}

/// Symmetric eigendecomposition by cyclic Jacobi rotations: returns the
/// eigenvalues and the orthogonal matrix whose columns are the matching
/// eigenvectors. Jacobi is slower than tridiagonalization-based solvers but
/// keeps the backward error `|V D V^T - A|` at rounding level even when the
/// spectrum carries exact degeneracies — which generators on highly
/// symmetric graphs do.
///
/// # Panics
/// Panics if `a` is not square or the sweep budget is exhausted (which a
/// symmetric input cannot trigger at these sizes).
#[must_use]
pub fn jacobi_eigen(a: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    assert_eq!(a.nrows(), a.ncols(), "matrix must be square");
    let n = a.nrows();
    let mut m = a.clone();
    let mut v = DMatrix::<f64>::identity(n, n);
    let frob: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let target = frob * 1e-15;
    for _sweep in 0..40 {
        let off: f64 = (0..n)
            .flat_map(|p| ((p + 1)..n).map(move |q| (p, q)))
            .map(|(p, q)| m[(p, q)] * m[(p, q)])
            .sum::<f64>()
            .sqrt();
        if off <= target {
            return ((0..n).map(|i| m[(i, i)]).collect(), v);
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let tau = (m[(q, q)] - m[(p, p)]) / (2.0 * apq);
                let t = tau.signum() / (tau.abs() + (1.0 + tau * tau).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                let (app, aqq) = (m[(p, p)], m[(q, q)]);
                m[(p, p)] = app - t * apq;
                m[(q, q)] = aqq + t * apq;
                m[(p, q)] = 0.0;
                m[(q, p)] = 0.0;
                for r in 0..n {
                    if r != p && r != q {
                        let (arp, arq) = (m[(r, p)], m[(r, q)]);
                        m[(r, p)] = c * arp - s * arq;
                        m[(p, r)] = m[(r, p)];
                        m[(r, q)] = s * arp + c * arq;
                        m[(q, r)] = m[(r, q)];
                    }
                    let (vrp, vrq) = (v[(r, p)], v[(r, q)]);
                    v[(r, p)] = c * vrp - s * vrq;
                    v[(r, q)] = s * vrp + c * vrq;
                }
            }
        }
    }
    panic!("Jacobi sweeps did not converge; is the input symmetric?");
}

/// Dense matrix exponential `exp(t Q)` of a symmetric generator, by the
/// Jacobi eigendecomposition. Reserved for small state spaces (a few
/// hundred states) where a full dense solve is cheap and trustworthy.
///
/// # Panics
/// Panics if `q` is not square.
#[must_use]
pub fn dense_transition(q: &DMatrix<f64>, t: f64) -> DMatrix<f64> {
    assert_eq!(q.nrows(), q.ncols(), "generator must be square");
    let (eigenvalues, vectors) = jacobi_eigen(q);
    let exped = DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(
        eigenvalues.len(),
        eigenvalues.iter().map(|l| (t * l).exp()),
    ));
    &vectors * exped * vectors.transpose()
}
