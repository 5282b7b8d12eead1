//! Discrete Epanechnikov smoothing of degree counts, least-squares
//! cross-validated bandwidth, and the diagonal covariance proxy
//! `Ĉ = diag(N*_smooth) + δ I`.
//!
//! Kernel mass that falls outside `0..=M` is reflected back about the
//! half-integer boundaries `-1/2` and `M + 1/2`. The resulting smoothing matrix
//! is symmetric with unit row and column sums, so smoothing preserves total
//! mass and leaves constant vectors unchanged, and every output entry only
//! draws on inputs within `h` of it.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::scalar::Scalar;

/// Floor for `δ` relative to the largest smoothed count.
pub const DELTA_FLOOR: f64 = 1e-6;

/// Condition number of `Ĉ` used by the simulation harness.
pub const DEFAULT_TARGET_CONDITION: f64 = 20.0;

/// Normalized weights for offsets `-h..=h`, proportional to
/// `1 - (d / (h + 1))^2`.
fn kernel_weights(h: usize) -> Vec<f64> {
    let scale = (h + 1) as f64;
    let raw: Vec<f64> = (0..=2 * h)
        .map(|i| {
            let d = i as f64 - h as f64;
            1.0 - (d / scale).powi(2)
        })
        .collect();
    let z: f64 = raw.iter().sum();
    raw.into_iter().map(|w| w / z).collect()
}

/// Folds an integer position into `0..len` by reflection about `-1/2` and
/// `len - 1/2`.
fn reflect(pos: i64, len: usize) -> usize {
    let len = len as i64;
    let period = 2 * len;
    let r = pos.rem_euclid(period);
    (if r < len { r } else { period - 1 - r }) as usize
}

/// Smoothing matrix entry for a single source is spread by scattering; the
/// diagonal is needed for leave-one-out scores.
fn self_weights(len: usize, h: usize) -> Vec<f64> {
    let w = kernel_weights(h);
    let mut diag = vec![0.0; len];
    for (k, slot) in diag.iter_mut().enumerate() {
        for (i, &wi) in w.iter().enumerate() {
            if reflect(k as i64 + i as i64 - h as i64, len) == k {
                *slot += wi;
            }
        }
    }
    diag
}

/// Smooths counts with bandwidth `h`. `h = 0` is the identity.
pub fn smooth_counts<T: Scalar>(n_star: &[T], h: usize) -> Vec<T> {
    let len = n_star.len();
    let w: Vec<T> = kernel_weights(h).into_iter().map(T::of).collect();
    let mut out = vec![T::zero(); len];
    for (j, &mass) in n_star.iter().enumerate() {
        if mass == T::zero() {
            continue;
        }
        for (i, &wi) in w.iter().enumerate() {
            out[reflect(j as i64 + i as i64 - h as i64, len)] += wi * mass;
        }
    }
    out
}

/// Least-squares cross-validation score of bandwidth `h`:
/// `Σ_k f̂(k)² - (2/n) Σ_k N*_k f̂^(-k)(k)`, with `f̂` the smoothed relative
/// frequencies and `f̂^(-k)` the estimate with one observation at `k` removed.
pub fn cv_score<T: Scalar>(n_star: &[T], h: usize) -> T {
    let n = n_star.iter().fold(T::zero(), |a, &b| a + b);
    let smoothed = smooth_counts(n_star, h);
    let diag = self_weights(n_star.len(), h);
    let fit = smoothed.iter().fold(T::zero(), |a, &s| a + (s / n) * (s / n));
    let loo = n_star
        .iter()
        .zip(&smoothed)
        .zip(&diag)
        .fold(T::zero(), |a, ((&c, &s), &d)| a + c * (s - T::of(d)) / (n - T::one()));
    fit - T::of(2.0) * loo / n
}

/// Default upper end of the bandwidth grid, `ceil((M + 1) / 4)`.
pub fn default_max_bandwidth(len: usize) -> usize {
    len.div_ceil(4)
}

/// Bandwidth in `0..=h_max` minimizing [`cv_score`]; ties go to the smaller
/// bandwidth. Inputs with fewer than two observations or a single occupied
/// cell select 0.
pub fn select_bandwidth<T: Scalar>(n_star: &[T], h_max: usize) -> usize {
    let n = n_star.iter().fold(T::zero(), |a, &b| a + b);
    let occupied = n_star.iter().filter(|&&c| c > T::zero()).count();
    if n < T::of(2.0) || occupied < 2 {
        return 0;
    }
    let mut best_h = 0;
    let mut best = cv_score(n_star, 0);
    for h in 1..=h_max {
        let score = cv_score(n_star, h);
        let slack = T::of(1e-12) * best.abs().max(T::one());
        if score < best - slack {
            best = score;
            best_h = h;
        }
    }
    best_h
}

/// Diagonal proxy `Ĉ = diag(N*_smooth) + δ I` for the covariance of `N*`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Serialize", deserialize = "T: Deserialize<'de>"))]
pub struct CovarianceApprox<T> {
    pub diagonal: Vec<T>,
    pub delta: T,
    pub bandwidth: usize,
}

impl<T: Scalar> CovarianceApprox<T> {
    /// Identity proxy, handy for tests and unweighted fits.
    pub fn identity(len: usize) -> Self {
        Self {
            diagonal: vec![T::one(); len],
            delta: T::zero(),
            bandwidth: 0,
        }
    }

    pub fn from_diagonal(diagonal: Vec<T>) -> Result<Self> {
        if diagonal.is_empty() || diagonal.iter().any(|&d| !(d > T::zero())) {
            return invalid("covariance diagonal must be non-empty and positive");
        }
        Ok(Self {
            diagonal,
            delta: T::zero(),
            bandwidth: 0,
        })
    }

    pub fn len(&self) -> usize {
        self.diagonal.len()
    }

    pub fn is_empty(&self) -> bool {
        self.diagonal.is_empty()
    }

    pub fn condition_number(&self) -> T {
        let hi = self.diagonal.iter().copied().fold(T::zero(), |a, b| a.max(b));
        let lo = self.diagonal.iter().copied().fold(hi, |a, b| a.min(b));
        hi / lo
    }

    /// `Ĉ⁻¹ x` through the stored diagonal.
    pub fn solve(&self, x: &[T]) -> Vec<T> {
        x.iter().zip(&self.diagonal).map(|(&a, &d)| a / d).collect()
    }
}

/// Builds `Ĉ` with the cross-validated bandwidth over the default grid.
pub fn build_covariance<T: Scalar>(n_star: &[T], target_condition: T) -> Result<CovarianceApprox<T>> {
    build_covariance_with(n_star, target_condition, default_max_bandwidth(n_star.len()))
}

/// Builds `Ĉ`, choosing `δ` so that the extreme diagonal entries have ratio
/// `target_condition`. When that would need `δ <= 0` the floor
/// `DELTA_FLOOR · max(N*_smooth)` is used instead.
pub fn build_covariance_with<T: Scalar>(
    n_star: &[T],
    target_condition: T,
    h_max: usize,
) -> Result<CovarianceApprox<T>> {
    if !(target_condition > T::one()) {
        return invalid("target condition number must exceed 1");
    }
    if n_star.iter().any(|&c| !(c >= T::zero())) {
        return invalid("observed counts must be non-negative");
    }
    if !n_star.iter().any(|&c| c > T::zero()) {
        return invalid("observed counts are all zero");
    }
    let bandwidth = select_bandwidth(n_star, h_max);
    let smoothed = smooth_counts(n_star, bandwidth);
    let hi = smoothed.iter().copied().fold(T::zero(), |a, b| a.max(b));
    let lo = smoothed.iter().copied().fold(hi, |a, b| a.min(b));
    let solved = (hi - target_condition * lo) / (target_condition - T::one());
    let delta = solved.max(T::of(DELTA_FLOOR) * hi);
    Ok(CovarianceApprox {
        diagonal: smoothed.iter().map(|&s| s + delta).collect(),
        delta,
        bandwidth,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_distr::{Distribution, Poisson};

    #[test]
    fn zero_bandwidth_is_identity() {
        let x = [1.0, 4.0, 0.0, 2.5];
        assert_eq!(smooth_counts(&x, 0), x.to_vec());
    }

    #[test]
    fn three_point_stencil() {
        // weights 1 - (d/2)^2 over d = -1, 0, 1 -> (0.75, 1, 0.75) / 2.5
        let s = smooth_counts(&[0.0, 10.0, 0.0], 1);
        assert_relative_eq!(s[0], 3.0, epsilon = 1e-12);
        assert_relative_eq!(s[1], 4.0, epsilon = 1e-12);
        assert_relative_eq!(s[2], 3.0, epsilon = 1e-12);
        // boundary: the d = -1 share of a mass at 0 folds back onto 0
        let s = smooth_counts(&[10.0, 0.0, 0.0], 1);
        assert_relative_eq!(s[0], 7.0, epsilon = 1e-12);
        assert_relative_eq!(s[1], 3.0, epsilon = 1e-12);
        assert_eq!(s[2], 0.0);
    }

    #[test]
    fn constants_are_fixed_points() {
        for h in 0..12 {
            let s = smooth_counts(&[2.0; 7], h);
            for v in s {
                assert_relative_eq!(v, 2.0, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn point_mass_selects_zero() {
        assert_eq!(select_bandwidth(&[0.0, 0.0, 50.0, 0.0, 0.0], 3), 0);
        // a spread would strictly raise the score
        let x = [0.0, 0.0, 50.0, 0.0, 0.0];
        assert!(cv_score(&x, 1) > cv_score(&x, 0));
        assert_eq!(select_bandwidth(&[3.0, 4.0, 1.0], 0), 0);
    }

    #[test]
    fn selection_is_stable_on_poisson_counts() {
        let mut picks = vec![0usize; 8];
        for seed in 0..100u64 {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let pois = Poisson::new(6.0).unwrap();
            let mut counts = vec![0.0f64; 25];
            for _ in 0..2000 {
                let d = (pois.sample(&mut rng) as usize).min(24);
                counts[d] += 1.0;
            }
            picks[select_bandwidth(&counts, 7)] += 1;
        }
        let mode = *picks.iter().max().unwrap();
        assert!(mode >= 50, "{picks:?}");
    }

    #[test]
    fn covariance_hits_target_condition() {
        let mut counts = vec![1.0; 10];
        counts[3] = 100.0;
        // h_max 0 keeps the smoothed vector equal to the input
        let c = build_covariance_with(&counts, 20.0, 0).unwrap();
        assert_relative_eq!(c.condition_number(), 20.0, max_relative = 1e-12);
        assert_relative_eq!(c.delta, (100.0 - 20.0) / 19.0, max_relative = 1e-12);
        let total: f64 = counts.iter().sum();
        assert_relative_eq!(
            c.diagonal.iter().sum::<f64>(),
            total + 10.0 * c.delta,
            max_relative = 1e-12
        );
    }

    #[test]
    fn covariance_constant_input_uses_floor() {
        let c = build_covariance(&[5.0; 6], 20.0).unwrap();
        assert_relative_eq!(c.delta, 5.0 * DELTA_FLOOR);
        assert_relative_eq!(c.condition_number(), 1.0);
    }

    #[test]
    fn covariance_rejects_bad_input() {
        assert!(build_covariance(&[0.0, 0.0], 20.0).is_err());
        assert!(build_covariance(&[1.0, 2.0], 1.0).is_err());
        assert!(build_covariance(&[1.0, -2.0], 20.0).is_err());
    }

    #[test]
    fn single_precision_smoothing() {
        let s = smooth_counts(&[0.0f32, 10.0, 0.0], 1);
        assert!((s.iter().sum::<f32>() - 10.0).abs() < 1e-5);
    }

    proptest! {
        #[test]
        fn mass_preserved_and_nonnegative(
            counts in prop::collection::vec(0.0f64..1000.0, 1..40),
            h in 0usize..60,
        ) {
            let s = smooth_counts(&counts, h);
            let before: f64 = counts.iter().sum();
            let after: f64 = s.iter().sum();
            prop_assert!((before - after).abs() <= 1e-10 * before.max(1.0));
            prop_assert!(s.iter().all(|&v| v >= 0.0));
        }

        #[test]
        fn smoothing_is_linear(
            pair in prop::collection::vec((0.0f64..100.0, 0.0f64..100.0), 1..30),
            a in -3.0f64..3.0,
            b in -3.0f64..3.0,
            h in 0usize..10,
        ) {
            let x: Vec<f64> = pair.iter().map(|p| p.0).collect();
            let y: Vec<f64> = pair.iter().map(|p| p.1).collect();
            let combo: Vec<f64> = x.iter().zip(&y).map(|(u, v)| a * u + b * v).collect();
            let lhs = smooth_counts(&combo, h);
            let (sx, sy) = (smooth_counts(&x, h), smooth_counts(&y, h));
            for i in 0..x.len() {
                prop_assert!((lhs[i] - (a * sx[i] + b * sy[i])).abs() <= 1e-9);
            }
        }

        #[test]
        fn covariance_condition_bounded(
            counts in prop::collection::vec(0.0f64..500.0, 2..30),
            target in 1.5f64..100.0,
        ) {
            prop_assume!(counts.iter().any(|&c| c > 0.0));
            let c = build_covariance(&counts, target).unwrap();
            prop_assert!(c.diagonal.iter().all(|&d| d >= c.delta && d > 0.0));
            prop_assert!(c.condition_number() <= target + 1e-6);
            let total: f64 = counts.iter().sum();
            let diag: f64 = c.diagonal.iter().sum();
            prop_assert!((diag - (total + counts.len() as f64 * c.delta)).abs() <= 1e-8 * diag);
        }
    }
}
