//! Sampling operators `P`, with `E[N*] = P N`, and their spectral diagnostics.
//!
//! Rows and columns are indexed by degree `0..=M`: entry `(i, j)` is the
//! probability that a vertex of true degree `j` is included and observed with
//! degree `i`.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{invalid, Error, Result};
use crate::sampling::{check_rate, Design};
use crate::scalar::{infinity, Scalar};

/// Entries below this are flushed to zero after exponentiation.
const FLUSH: f64 = 1e-300;

/// Relative cutoff of the pseudo-inverse used by [`naive_estimate`].
pub const NAIVE_CUTOFF: f64 = 1e-12;

/// Parameters an operator is built from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OperatorParams {
    /// Bernoulli rate for ego, snowball, induced and incident designs.
    Rate(f64),
    /// Edge counts of the true graph and of the walk sample.
    Walk { n_e: usize, sampled_edges: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SamplingOperator<T: Scalar> {
    matrix: DMatrix<T>,
    design: Design,
    params: OperatorParams,
}

pub(crate) fn ln_choose(n: usize, k: usize) -> f64 {
    if k > n {
        return f64::NEG_INFINITY;
    }
    if k == 0 || k == n {
        return 0.0;
    }
    ln_gamma(n as f64 + 1.0) - ln_gamma(k as f64 + 1.0) - ln_gamma((n - k) as f64 + 1.0)
}

/// `exponent * ln(base)` with the convention `0 * ln(0) = 0`.
fn ln_pow(ln_base: f64, exponent: usize) -> f64 {
    if exponent == 0 {
        0.0
    } else {
        exponent as f64 * ln_base
    }
}

fn flushed_exp(x: f64) -> f64 {
    let v = x.exp();
    if v < FLUSH {
        0.0
    } else {
        v
    }
}

/// `C(j, i) p^a q^b` evaluated in log space.
fn binomial_term(j: usize, i: usize, ln_p: f64, a: usize, ln_q: f64, b: usize) -> f64 {
    flushed_exp(ln_choose(j, i) + ln_pow(ln_p, a) + ln_pow(ln_q, b))
}

fn build_entries(design: Design, params: OperatorParams, m: usize) -> Result<DMatrix<f64>> {
    let n = m + 1;
    let mut mat = DMatrix::<f64>::zeros(n, n);
    match (design, params) {
        (Design::Ego, OperatorParams::Rate(p)) => {
            check_rate(p)?;
            mat.fill_diagonal(p);
        }
        (Design::Snowball, OperatorParams::Rate(p)) => {
            check_rate(p)?;
            let q = 1.0 - p;
            for i in 0..n {
                mat[(i, i)] = 1.0 - q.powi(i as i32 + 1);
            }
        }
        (Design::Induced, OperatorParams::Rate(p)) => {
            check_rate(p)?;
            let (ln_p, ln_q) = (p.ln(), (1.0 - p).ln());
            for j in 0..n {
                for i in 0..=j {
                    mat[(i, j)] = binomial_term(j, i, ln_p, i + 1, ln_q, j - i);
                }
            }
        }
        (Design::Incident, OperatorParams::Rate(p)) => {
            check_rate(p)?;
            let (ln_p, ln_q) = (p.ln(), (1.0 - p).ln());
            for j in 1..n {
                for i in 1..=j {
                    mat[(i, j)] = binomial_term(j, i, ln_p, i, ln_q, j - i);
                }
            }
        }
        (Design::RandomWalk, OperatorParams::Walk { n_e, sampled_edges }) => {
            if sampled_edges == 0 || sampled_edges > n_e {
                return invalid(format!("sampled edge count {sampled_edges} outside [1, {n_e}]"));
            }
            let ln_total = ln_choose(n_e, sampled_edges);
            for j in 1..n.min(n_e + 1) {
                for i in 1..=j.min(sampled_edges) {
                    let rest = ln_choose(n_e - j, sampled_edges - i);
                    if rest.is_finite() {
                        mat[(i, j)] = flushed_exp(ln_choose(j, i) + rest - ln_total);
                    }
                }
            }
        }
        (d, p) => return invalid(format!("operator parameters {p:?} do not apply to design {d}")),
    }
    Ok(mat)
}

impl<T: Scalar> SamplingOperator<T> {
    /// Builds the operator of `design` on degrees `0..=max_degree`.
    pub fn build(design: Design, params: OperatorParams, max_degree: usize) -> Result<Self> {
        let entries = build_entries(design, params, max_degree)?;
        Ok(Self {
            matrix: entries.map(T::of),
            design,
            params,
        })
    }

    /// Wraps an arbitrary square matrix, e.g. for tests with identity inputs.
    /// Entries must lie in `[0, 1]`.
    pub fn from_matrix(matrix: DMatrix<T>, design: Design, params: OperatorParams) -> Result<Self> {
        if !matrix.is_square() || matrix.nrows() == 0 {
            return invalid("operator matrix must be square and non-empty");
        }
        if matrix.iter().any(|&x| !(x >= T::zero() && x <= T::one())) {
            return invalid("operator entries must lie in [0, 1]");
        }
        Ok(Self { matrix, design, params })
    }

    #[inline]
    pub fn matrix(&self) -> &DMatrix<T> {
        &self.matrix
    }

    #[inline]
    pub fn design(&self) -> Design {
        self.design
    }

    #[inline]
    pub fn params(&self) -> OperatorParams {
        self.params
    }

    #[inline]
    pub fn max_degree(&self) -> usize {
        self.matrix.nrows() - 1
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn column_sums(&self) -> Vec<T> {
        self.matrix.column_iter().map(|c| c.sum()).collect()
    }

    /// `P x`.
    pub fn apply(&self, x: &[T]) -> Result<Vec<T>> {
        self.check_dim(x.len())?;
        let v = &self.matrix * DVector::from_column_slice(x);
        Ok(v.as_slice().to_vec())
    }

    /// `Pᵀ x`.
    pub fn apply_transpose(&self, x: &[T]) -> Result<Vec<T>> {
        self.check_dim(x.len())?;
        let v = self.matrix.tr_mul(&DVector::from_column_slice(x));
        Ok(v.as_slice().to_vec())
    }

    pub(crate) fn check_dim(&self, len: usize) -> Result<()> {
        if len != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: len,
            });
        }
        Ok(())
    }

    pub fn is_upper_triangular(&self) -> bool {
        let n = self.dim();
        (0..n).all(|j| (j + 1..n).all(|i| self.matrix[(i, j)] == T::zero()))
    }

    /// Dense CSV: header `observed_degree,0,..,M`, one row per observed degree.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let n = self.dim();
        let mut header = vec!["observed_degree".to_string()];
        header.extend((0..n).map(|j| j.to_string()));
        w.write_record(&header)?;
        for i in 0..n {
            let mut row = vec![i.to_string()];
            row.extend((0..n).map(|j| self.matrix[(i, j)].to_string()));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Full SVD `P = U D Vᵀ` with singular values sorted nonincreasing.
#[derive(Debug, Clone)]
pub struct SpectralDiagnostics<T: Scalar> {
    pub singular_values: Vec<T>,
    /// Left singular vectors as columns.
    pub left_vectors: DMatrix<T>,
    /// Right singular vectors as columns.
    pub right_vectors: DMatrix<T>,
    /// `d_max / d_min`; infinite when `d_min` is zero to working precision
    /// (below `(M+1) · eps · d_max`).
    pub condition_number: T,
    pub numerical_rank: usize,
    /// For triangular operators the eigenvalues are the diagonal; this is the
    /// ratio of the largest to the smallest eigenvalue modulus.
    pub eigenvalue_ratio: Option<T>,
}

/// Singular value decomposition and conditioning of `P`.
pub fn spectral<T: Scalar>(op: &SamplingOperator<T>) -> SpectralDiagnostics<T> {
    let n = op.dim();
    let svd = op.matrix.clone().svd(true, true);
    let u = svd.u.expect("requested U");
    let v_t = svd.v_t.expect("requested Vᵀ");
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        svd.singular_values[b]
            .partial_cmp(&svd.singular_values[a])
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let singular_values: Vec<T> = order.iter().map(|&i| svd.singular_values[i]).collect();
    let left_vectors = DMatrix::from_fn(n, n, |r, c| u[(r, order[c])]);
    let right_vectors = DMatrix::from_fn(n, n, |r, c| v_t[(order[c], r)]);

    let d_max = singular_values[0];
    let d_min = singular_values[n - 1];
    let tol = d_max * T::epsilon() * T::of_usize(n);
    let numerical_rank = singular_values.iter().filter(|&&d| d > tol).count();
    let condition_number = if d_max == T::zero() || d_min <= tol {
        infinity()
    } else {
        d_max / d_min
    };

    let eigenvalue_ratio = op.is_upper_triangular().then(|| {
        let diag: Vec<T> = (0..n).map(|i| op.matrix[(i, i)].abs()).collect();
        let hi = diag.iter().copied().fold(T::zero(), |a, b| a.max(b));
        let lo = diag.iter().copied().fold(infinity::<T>(), |a, b| a.min(b));
        if lo == T::zero() {
            infinity()
        } else {
            hi / lo
        }
    });

    SpectralDiagnostics {
        singular_values,
        left_vectors,
        right_vectors,
        condition_number,
        numerical_rank,
        eigenvalue_ratio,
    }
}

impl<T: Scalar> SpectralDiagnostics<T> {
    /// `U D Vᵀ`.
    pub fn reconstruct(&self) -> DMatrix<T> {
        let d = DMatrix::from_diagonal(&DVector::from_column_slice(&self.singular_values));
        &self.left_vectors * d * self.right_vectors.transpose()
    }

    /// CSV with columns `index,singular_value`.
    pub fn write_spectrum_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["index", "singular_value"])?;
        for (i, d) in self.singular_values.iter().enumerate() {
            w.write_record([i.to_string(), d.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Number of sign changes along right singular vector `i`, ignoring
    /// entries below `tol` in magnitude.
    pub fn sign_changes(&self, i: usize, tol: T) -> usize {
        let mut last: Option<bool> = None;
        let mut changes = 0;
        for r in 0..self.right_vectors.nrows() {
            let x = self.right_vectors[(r, i)];
            if x.abs() <= tol {
                continue;
            }
            let positive = x > T::zero();
            if last.is_some_and(|s| s != positive) {
                changes += 1;
            }
            last = Some(positive);
        }
        changes
    }
}

/// Pseudo-inverse estimate `Σ (u_iᵀ N* / d_i) v_i` over singular values above
/// `NAIVE_CUTOFF · d_max`. Entries may be negative.
pub fn naive_estimate<T: Scalar>(op: &SamplingOperator<T>, n_star: &[T]) -> Result<Vec<T>> {
    op.check_dim(n_star.len())?;
    let diag = spectral(op);
    Ok(naive_from_spectrum(&diag, n_star))
}

pub(crate) fn naive_from_spectrum<T: Scalar>(diag: &SpectralDiagnostics<T>, n_star: &[T]) -> Vec<T> {
    let n = n_star.len();
    let y = DVector::from_column_slice(n_star);
    let cutoff = diag.singular_values[0] * T::of(NAIVE_CUTOFF);
    let mut out = DVector::<T>::zeros(n);
    for (i, &d) in diag.singular_values.iter().enumerate() {
        if d <= cutoff || d == T::zero() {
            continue;
        }
        let coef = diag.left_vectors.column(i).dot(&y) / d;
        out.axpy(coef, &diag.right_vectors.column(i), T::one());
    }
    out.as_slice().to_vec()
}

/// Closed-form eigen-decomposition of the induced-subgraph operator.
///
/// Column `c` (0-based) of the returned matrix is the eigenvector with
/// eigenvalue `p^(c+1)`: entry `r` is `(-1)^(c-r) C(c, r)` for `r <= c`, zero
/// below. These are the 1-based `λ_k = p^k`, `ũ_k(j) = (-1)^(k-j) C(k-1, j-1)`
/// shifted to degree indexing.
pub fn eigen_induced_closed_form<T: Scalar>(p: f64, max_degree: usize) -> Result<(Vec<T>, DMatrix<T>)> {
    check_rate(p)?;
    let n = max_degree + 1;
    let eigenvalues = (0..n).map(|c| T::of(p.powi(c as i32 + 1))).collect();
    let vectors = DMatrix::from_fn(n, n, |r, c| {
        if r > c {
            T::zero()
        } else {
            let mag = ln_choose(c, r).exp().round();
            T::of(if (c - r) % 2 == 0 { mag } else { -mag })
        }
    });
    Ok((eigenvalues, vectors))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn op(design: Design, p: f64, m: usize) -> SamplingOperator<f64> {
        SamplingOperator::build(design, OperatorParams::Rate(p), m).unwrap()
    }

    #[test]
    fn ego_is_scaled_identity() {
        let p = op(Design::Ego, 0.3, 2);
        assert_eq!(p.matrix(), &(DMatrix::identity(3, 3) * 0.3));
    }

    #[test]
    fn snowball_diagonal() {
        let p = op(Design::Snowball, 0.5, 1);
        assert_eq!(p.matrix()[(0, 0)], 0.5);
        assert_eq!(p.matrix()[(1, 1)], 0.75);
        assert_eq!(p.matrix()[(0, 1)], 0.0);
    }

    #[test]
    fn induced_column_two() {
        let p = op(Design::Induced, 0.5, 2);
        let col: Vec<f64> = p.matrix().column(2).iter().copied().collect();
        assert_relative_eq!(col[0], 0.125, epsilon = 1e-15);
        assert_relative_eq!(col[1], 0.25, epsilon = 1e-15);
        assert_relative_eq!(col[2], 0.125, epsilon = 1e-15);
        assert_relative_eq!(p.column_sums()[2], 0.5, epsilon = 1e-15);
    }

    #[test]
    fn incident_column_two() {
        let p = op(Design::Incident, 0.5, 2);
        let col: Vec<f64> = p.matrix().column(2).iter().copied().collect();
        assert_eq!(col[0], 0.0);
        assert_relative_eq!(col[1], 0.5, max_relative = 1e-13);
        assert_relative_eq!(col[2], 0.25, max_relative = 1e-13);
        assert_relative_eq!(p.column_sums()[2], 0.75, max_relative = 1e-13);
        assert_eq!(p.column_sums()[0], 0.0);
    }

    #[test]
    fn full_rate_is_exact() {
        // p = 1: induced keeps every degree, incident too (except degree 0)
        let p = op(Design::Induced, 1.0, 4);
        assert_eq!(p.matrix(), &DMatrix::identity(5, 5));
        let p = op(Design::Incident, 1.0, 3);
        assert_eq!(p.matrix()[(0, 0)], 0.0);
        assert_eq!(p.matrix()[(3, 3)], 1.0);
    }

    #[test]
    fn random_walk_matches_hypergeometric() {
        // n_e = 5, n*_e = 2, j = 2: P(X = i) = C(2,i) C(3,2-i) / C(5,2)
        let p = SamplingOperator::<f64>::build(
            Design::RandomWalk,
            OperatorParams::Walk {
                n_e: 5,
                sampled_edges: 2,
            },
            3,
        )
        .unwrap();
        assert_relative_eq!(p.matrix()[(1, 2)], 6.0 / 10.0, epsilon = 1e-14);
        assert_relative_eq!(p.matrix()[(2, 2)], 1.0 / 10.0, epsilon = 1e-14);
        assert_eq!(p.matrix()[(3, 3)], 0.0);
        assert_eq!(p.matrix()[(0, 1)], 0.0);
    }

    #[test]
    fn invalid_inputs_rejected() {
        assert!(SamplingOperator::<f64>::build(Design::Ego, OperatorParams::Rate(0.0), 2).is_err());
        assert!(SamplingOperator::<f64>::build(Design::Ego, OperatorParams::Rate(1.2), 2).is_err());
        assert!(SamplingOperator::<f64>::build(
            Design::Ego,
            OperatorParams::Walk {
                n_e: 4,
                sampled_edges: 2
            },
            2
        )
        .is_err());
        assert!(SamplingOperator::<f64>::build(
            Design::RandomWalk,
            OperatorParams::Walk {
                n_e: 4,
                sampled_edges: 5
            },
            2
        )
        .is_err());
    }

    #[test]
    fn large_degree_bound_does_not_overflow() {
        let p = op(Design::Induced, 0.1, 600);
        assert!(p.matrix().iter().all(|x| x.is_finite() && *x >= 0.0 && *x <= 1.0));
        for s in p.column_sums() {
            assert_relative_eq!(s, 0.1, epsilon = 1e-10);
        }
    }

    #[test]
    fn ego_condition_is_one() {
        for p in [0.05, 0.5, 1.0] {
            let d = spectral(&op(Design::Ego, p, 6));
            assert_relative_eq!(d.condition_number, 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn snowball_condition_closed_form() {
        let d = spectral(&op(Design::Snowball, 0.5, 1));
        assert_relative_eq!(d.condition_number, 1.5, epsilon = 1e-12);
        for m in [1usize, 5, 40, 200] {
            let p = 0.2;
            let d = spectral(&op(Design::Snowball, p, m));
            let closed = (1.0 - (1.0 - p).powi(m as i32 + 1)) / p;
            assert_relative_eq!(d.condition_number, closed, max_relative = 1e-12);
            assert!(d.condition_number <= (1.0 + 1e-12) / p);
        }
    }

    #[test]
    fn induced_condition_matches_high_precision_svd() {
        // 80-digit SVD of the same matrix
        let d = spectral(&op(Design::Induced, 0.5, 3));
        assert_relative_eq!(d.condition_number, 20.49418588381169, max_relative = 1e-10);
        assert_relative_eq!(d.eigenvalue_ratio.unwrap(), 8.0, max_relative = 1e-14);
        let d = spectral(&op(Design::Induced, 0.95, 15));
        assert_relative_eq!(d.condition_number, 3.746495632457696, max_relative = 1e-10);
    }

    #[test]
    fn hopeless_conditioning_reported_infinite() {
        let d = spectral(&op(Design::Induced, 0.05, 15));
        assert!(d.condition_number.is_infinite());
        assert!(d.numerical_rank < 16);
        let d = spectral(&op(Design::Incident, 0.5, 4));
        assert!(d.condition_number.is_infinite());
        assert!(d.eigenvalue_ratio.unwrap().is_infinite());
    }

    #[test]
    fn svd_reconstructs() {
        for design in [Design::Induced, Design::Incident, Design::Snowball] {
            let p = op(design, 0.3, 20);
            let d = spectral(&p);
            let err = (d.reconstruct() - p.matrix()).norm() / p.matrix().norm();
            assert!(err < 1e-10, "{design}: {err}");
            let eye = DMatrix::<f64>::identity(21, 21);
            assert!((d.left_vectors.transpose() * &d.left_vectors - &eye).norm() < 1e-10);
            assert!((d.right_vectors.transpose() * &d.right_vectors - &eye).norm() < 1e-10);
            assert!(d.singular_values.windows(2).all(|w| w[0] >= w[1]));
            assert!(d.singular_values.iter().all(|&s| s >= 0.0));
        }
    }

    #[test]
    fn right_vectors_oscillate_more_with_index() {
        let p = op(Design::Induced, 0.5, 10);
        let d = spectral(&p);
        let changes: Vec<usize> = (0..11).map(|i| d.sign_changes(i, 1e-12)).collect();
        assert!(changes.windows(2).all(|w| w[0] <= w[1]), "{changes:?}");
        assert!(changes[10] > changes[0]);
    }

    #[test]
    fn naive_inverts_ego_and_identity() {
        let n_star = [3.0, 6.0, 9.0];
        let est = naive_estimate(&op(Design::Ego, 0.3, 2), &n_star).unwrap();
        for (e, n) in est.iter().zip(n_star) {
            assert_relative_eq!(*e, n / 0.3, max_relative = 1e-12);
        }
        let eye = SamplingOperator::from_matrix(DMatrix::<f64>::identity(3, 3), Design::Ego, OperatorParams::Rate(1.0))
            .unwrap();
        let est = naive_estimate(&eye, &n_star).unwrap();
        for (e, n) in est.iter().zip(n_star) {
            assert_relative_eq!(*e, n, max_relative = 1e-12);
        }
        assert!(naive_estimate(&eye, &[1.0]).is_err());
    }

    #[test]
    fn closed_form_eigenpairs() {
        let p = 0.3;
        let (vals, vecs) = eigen_induced_closed_form::<f64>(p, 5).unwrap();
        assert_relative_eq!(vals[0], p);
        assert_eq!(vecs.column(0).as_slice(), &[1.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        assert_relative_eq!(vals[1], p * p);
        assert_eq!(vecs.column(1).as_slice(), &[-1.0, 1.0, 0.0, 0.0, 0.0, 0.0]);
        assert_relative_eq!(vals[2], p * p * p);
        assert_eq!(vecs.column(2).as_slice(), &[1.0, -2.0, 1.0, 0.0, 0.0, 0.0]);
        let pm = op(Design::Induced, p, 5);
        for k in 0..6 {
            let u = vecs.column(k);
            let r = pm.matrix() * u - u * vals[k];
            assert!(r.norm() <= 1e-9);
        }
    }

    #[test]
    fn single_precision_operator() {
        let p = SamplingOperator::<f32>::build(Design::Induced, OperatorParams::Rate(0.5), 2).unwrap();
        assert!((p.column_sums()[2] - 0.5).abs() < 1e-6);
        let d = spectral(&p);
        assert!((d.eigenvalue_ratio.unwrap() - 4.0).abs() < 1e-4);
    }

    #[test]
    fn csv_export_shape() {
        let mut buf = Vec::new();
        op(Design::Ego, 0.5, 1).write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text, "observed_degree,0,1\n0,0.5,0\n1,0,0.5\n");
    }
}
