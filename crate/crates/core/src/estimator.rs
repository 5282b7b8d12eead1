//! Penalized weighted least squares for the true degree counts:
//!
//! ```text
//! minimize (P N - N*)ᵀ Ĉ⁻¹ (P N - N*) + λ ‖D N‖²
//! subject to N >= 0, 1ᵀ N = n_v
//! ```
//!
//! with `D` the second-difference operator. The solver is a primal active-set
//! method; it is deterministic and can be warm-started from a previous
//! solution. Dropping the sign constraints gives a linear estimator that is
//! solved in closed form.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, LU};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::operator::SamplingOperator;
use crate::scalar::Scalar;
use crate::smoothing::CovarianceApprox;

/// Second-difference operator on `0..=M`, of shape `(M - 1) × (M + 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PenaltyMatrix<T: Scalar> {
    matrix: DMatrix<T>,
}

impl<T: Scalar> PenaltyMatrix<T> {
    pub fn matrix(&self) -> &DMatrix<T> {
        &self.matrix
    }

    /// `Ω = Dᵀ D`.
    pub fn omega(&self) -> DMatrix<T> {
        self.matrix.tr_mul(&self.matrix)
    }

    /// `‖D x‖²`.
    pub fn penalty(&self, x: &[T]) -> T {
        (&self.matrix * DVector::from_column_slice(x)).norm_squared()
    }
}

pub fn build_penalty<T: Scalar>(max_degree: usize) -> Result<PenaltyMatrix<T>> {
    if max_degree < 2 {
        return invalid("second differences need a degree bound of at least 2");
    }
    let mut matrix = DMatrix::zeros(max_degree - 1, max_degree + 1);
    for r in 0..max_degree - 1 {
        matrix[(r, r)] = T::one();
        matrix[(r, r + 1)] = T::of(-2.0);
        matrix[(r, r + 2)] = T::one();
    }
    Ok(PenaltyMatrix { matrix })
}

/// Solver tolerances.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    /// Relative KKT residual accepted at termination.
    pub tolerance: f64,
    /// Iteration cap; `None` means `50 (M + 1)`.
    pub max_iterations: Option<usize>,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tolerance: 1e-8,
            max_iterations: None,
        }
    }
}

/// Entries in `[-NEGATIVE_CLAMP, 0)` are zeroed after a solve.
pub const NEGATIVE_CLAMP: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Serialize", deserialize = "T: Deserialize<'de>"))]
pub struct QPSolution<T> {
    pub n_hat: Vec<T>,
    pub lambda: T,
    /// Fit plus `λ` times penalty.
    pub objective: T,
    /// `(P N̂ - N*)ᵀ Ĉ⁻¹ (P N̂ - N*)`.
    pub fit: T,
    /// `‖D N̂‖²`.
    pub penalty: T,
    /// Indices held at zero.
    pub active_set: Vec<usize>,
    pub iterations: usize,
    pub converged: bool,
    pub kkt_residual: T,
}

impl<T: Scalar + Serialize> QPSolution<T> {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// The data of the weighted fit, fixed across `λ` and across observations.
#[derive(Debug, Clone)]
pub struct PwlsProblem<T: Scalar> {
    operator: DMatrix<T>,
    /// Diagonal of `Ĉ⁻¹`.
    weights: Vec<T>,
    /// `Pᵀ Ĉ⁻¹ P`.
    gram: DMatrix<T>,
    penalty: Option<PenaltyMatrix<T>>,
    omega: DMatrix<T>,
    n_v: T,
    options: SolverOptions,
}

impl<T: Scalar> PwlsProblem<T> {
    pub fn new(op: &SamplingOperator<T>, c_hat: &CovarianceApprox<T>, n_v: T, options: SolverOptions) -> Result<Self> {
        let dim = op.dim();
        if c_hat.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: c_hat.len(),
            });
        }
        if !(n_v > T::zero()) {
            return invalid("vertex count must be positive");
        }
        if !(options.tolerance > 0.0) {
            return invalid("solver tolerance must be positive");
        }
        let weights: Vec<T> = c_hat.diagonal.iter().map(|&c| T::one() / c).collect();
        let weighted = DMatrix::from_fn(dim, dim, |i, j| weights[i] * op.matrix()[(i, j)]);
        let gram = op.matrix().tr_mul(&weighted);
        let penalty = if op.max_degree() >= 2 {
            Some(build_penalty(op.max_degree())?)
        } else {
            None
        };
        let omega = penalty.as_ref().map_or_else(|| DMatrix::zeros(dim, dim), |d| d.omega());
        Ok(Self {
            operator: op.matrix().clone(),
            weights,
            gram,
            penalty,
            omega,
            n_v,
            options,
        })
    }

    pub fn dim(&self) -> usize {
        self.operator.nrows()
    }

    pub fn n_v(&self) -> T {
        self.n_v
    }

    pub fn operator(&self) -> &DMatrix<T> {
        &self.operator
    }

    fn check(&self, n_star: &[T], lambda: T) -> Result<()> {
        if n_star.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: n_star.len(),
            });
        }
        if !(lambda >= T::zero()) {
            return invalid("penalty weight must be non-negative");
        }
        Ok(())
    }

    /// `Pᵀ Ĉ⁻¹ N*`.
    fn target(&self, n_star: &[T]) -> DVector<T> {
        let w = DVector::from_iterator(self.dim(), n_star.iter().zip(&self.weights).map(|(&y, &w)| y * w));
        self.operator.tr_mul(&w)
    }

    fn hessian(&self, lambda: T) -> DMatrix<T> {
        &self.gram + &self.omega * lambda
    }

    /// Returns `(fit, penalty)` at `x`.
    pub fn terms(&self, x: &[T], n_star: &[T]) -> (T, T) {
        let px = &self.operator * DVector::from_column_slice(x);
        let fit = px
            .iter()
            .zip(n_star)
            .zip(&self.weights)
            .fold(T::zero(), |a, ((&u, &y), &w)| a + w * (u - y) * (u - y));
        let pen = self.penalty.as_ref().map_or(T::zero(), |d| d.penalty(x));
        (fit, pen)
    }

    pub fn objective(&self, x: &[T], n_star: &[T], lambda: T) -> T {
        let (fit, pen) = self.terms(x, n_star);
        fit + lambda * pen
    }

    /// Solves the constrained problem, optionally starting from `warm`, which
    /// must be feasible for the same `n_v`.
    pub fn solve(&self, n_star: &[T], lambda: T, warm: Option<&[T]>) -> Result<QPSolution<T>> {
        self.check(n_star, lambda)?;
        let dim = self.dim();
        let h = self.solver_hessian(lambda);
        let g = -self.target(n_star);
        let tol = T::of(self.options.tolerance);
        let cap = self.options.max_iterations.unwrap_or(50 * dim);

        let mut x = match warm {
            Some(w) if self.is_feasible(w) => w.to_vec(),
            _ => vec![self.n_v / T::of_usize(dim); dim],
        };
        let mut fixed: Vec<bool> = x.iter().map(|&v| v == T::zero()).collect();
        let mut converged = false;
        let mut iterations = 0;
        let mut nu = T::zero();

        while iterations < cap {
            iterations += 1;
            let free: Vec<usize> = (0..dim).filter(|&i| !fixed[i]).collect();
            let (target, multiplier) = self.reduced_solve(&h, &g, &free)?;
            nu = multiplier;
            let step: Vec<T> = free.iter().zip(&target).map(|(&i, &t)| t - x[i]).collect();
            let size = x.iter().fold(T::one(), |a, &b| a.max(b.abs()));
            let step_norm = step.iter().fold(T::zero(), |a, &b| a.max(b.abs()));

            if step_norm <= T::epsilon() * T::of(100.0) * size {
                let grad = &h * DVector::from_column_slice(&x) + &g;
                let scale = grad_scale(&h, &g, &x);
                let worst = (0..dim)
                    .filter(|&i| fixed[i])
                    .map(|i| (i, grad[i] + nu))
                    .min_by(|a, b| a.1.partial_cmp(&b.1).unwrap_or(std::cmp::Ordering::Equal));
                match worst {
                    Some((i, mu)) if mu < -tol * scale => fixed[i] = false,
                    _ => {
                        converged = true;
                        break;
                    }
                }
                continue;
            }

            let mut alpha = T::one();
            let mut blocking = None;
            for (k, &i) in free.iter().enumerate() {
                if step[k] < T::zero() {
                    let ratio = -x[i] / step[k];
                    if ratio < alpha {
                        alpha = ratio;
                        blocking = Some(i);
                    }
                }
            }
            for (k, &i) in free.iter().enumerate() {
                x[i] += alpha * step[k];
            }
            if let Some(i) = blocking {
                x[i] = T::zero();
                fixed[i] = true;
            }
        }

        self.finish(x, fixed, nu, n_star, lambda, &h, &g, iterations, converged)
    }

    fn solver_hessian(&self, lambda: T) -> DMatrix<T> {
        let mut h = self.hessian(lambda);
        if Cholesky::new(h.clone()).is_none() {
            // semidefinite Hessian: a tiny ridge keeps every reduced system
            // nonsingular
            let scale = h.diagonal().iter().fold(T::zero(), |a, &b| a.max(b)).max(T::one());
            for i in 0..h.nrows() {
                h[(i, i)] += scale * T::of(1e-10);
            }
        }
        h
    }

    /// Prepares repeated solves near `base`, a solution of this problem.
    pub fn local(&self, base: &QPSolution<T>) -> Result<LocalSolver<'_, T>> {
        if base.n_hat.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: base.n_hat.len(),
            });
        }
        let h = self.solver_hessian(base.lambda);
        let mut fixed = vec![false; self.dim()];
        base.active_set.iter().for_each(|&i| fixed[i] = true);
        let free: Vec<usize> = (0..self.dim()).filter(|&i| !fixed[i]).collect();
        let factor = ReducedFactor::new(&h, &free);
        Ok(LocalSolver {
            problem: self,
            base: base.n_hat.clone(),
            lambda: base.lambda,
            h,
            fixed,
            factor,
        })
    }

    fn is_feasible(&self, x: &[T]) -> bool {
        x.len() == self.dim()
            && x.iter().all(|&v| v >= T::zero())
            && (x.iter().fold(T::zero(), |a, &b| a + b) - self.n_v).abs() <= T::of(1e-9) * self.n_v
    }

    /// Minimizes over the free coordinates with the others at zero, subject
    /// to the mass constraint. Returns the free values and the multiplier of
    /// the mass constraint.
    fn reduced_solve(&self, h: &DMatrix<T>, g: &DVector<T>, free: &[usize]) -> Result<(Vec<T>, T)> {
        ReducedFactor::new(h, free).solve(g, free, self.n_v)
    }

    #[allow(clippy::too_many_arguments)]
    fn finish(
        &self,
        mut x: Vec<T>,
        fixed: Vec<bool>,
        nu: T,
        n_star: &[T],
        lambda: T,
        h: &DMatrix<T>,
        g: &DVector<T>,
        iterations: usize,
        converged: bool,
    ) -> Result<QPSolution<T>> {
        let clamp = T::of(NEGATIVE_CLAMP);
        for v in x.iter_mut() {
            if *v < T::zero() && *v >= -clamp {
                *v = T::zero();
            }
        }
        let total = x.iter().fold(T::zero(), |a, &b| a + b);
        if total > T::zero() && total != self.n_v {
            let s = self.n_v / total;
            x.iter_mut().for_each(|v| *v *= s);
        }
        let kkt_residual = kkt_residual(h, g, &x, &fixed, nu, self.n_v);
        let (fit, penalty) = self.terms(&x, n_star);
        Ok(QPSolution {
            active_set: (0..x.len()).filter(|&i| fixed[i]).collect(),
            objective: fit + lambda * penalty,
            n_hat: x,
            lambda,
            fit,
            penalty,
            iterations,
            converged,
            kkt_residual,
        })
    }

    /// Closed-form minimizer with only the mass constraint. Entries may be
    /// negative.
    pub fn solve_equality_only(&self, n_star: &[T], lambda: T) -> Result<Vec<T>> {
        self.check(n_star, lambda)?;
        let dim = self.dim();
        let mut rhs = DVector::zeros(dim + 1);
        rhs.rows_mut(0, dim).copy_from(&self.target(n_star));
        rhs[dim] = self.n_v;
        let sol = self
            .bordered(lambda)
            .lu()
            .solve(&rhs)
            .filter(|s| s.iter().all(|v| v.is_finite()));
        let sol = sol.ok_or_else(|| Error::Singular("bordered system of the equality-only estimator".into()))?;
        Ok(sol.rows(0, dim).iter().copied().collect())
    }

    /// `B = [[PᵀĈ⁻¹P + λΩ, ½·1], [1ᵀ, 0]]`. Stationarity of
    /// `fit + λ pen + α (1ᵀN - n_v)` reads `2(PᵀĈ⁻¹P + λΩ) N - 2PᵀĈ⁻¹N* + α 1 = 0`,
    /// so `B [N; α] = [PᵀĈ⁻¹N*; n_v]`.
    fn bordered(&self, lambda: T) -> DMatrix<T> {
        let dim = self.dim();
        let h = self.hessian(lambda);
        DMatrix::from_fn(dim + 1, dim + 1, |i, j| match (i < dim, j < dim) {
            (true, true) => h[(i, j)],
            (true, false) => T::of(0.5),
            (false, true) => T::one(),
            (false, false) => T::zero(),
        })
    }

    /// The equality-only estimator as `N̂ = A N* + c`.
    pub fn estimator_map(&self, lambda: T) -> Result<EstimatorMap<T>> {
        if !(lambda >= T::zero()) {
            return invalid("penalty weight must be non-negative");
        }
        let dim = self.dim();
        let inverse = self
            .bordered(lambda)
            .try_inverse()
            .filter(|m| m.iter().all(|v| v.is_finite()))
            .ok_or_else(|| Error::Singular("bordered system of the equality-only estimator".into()))?;
        let top = inverse.view((0, 0), (dim, dim));
        let weighted_t = DMatrix::from_fn(dim, dim, |i, j| self.operator[(j, i)] * self.weights[j]);
        let matrix = top * weighted_t;
        let offset = inverse.view((0, dim), (dim, 1)).iter().map(|&v| v * self.n_v).collect();
        Ok(EstimatorMap { matrix, offset })
    }
}

/// Factorization of the reduced system `[[H_FF, 1], [1ᵀ, 0]]`. `H_FF` is
/// positive definite, so the border is eliminated through `H_FF⁻¹ 1`; LU on
/// the bordered matrix covers the case where Cholesky breaks down in
/// floating point.
#[derive(Debug)]
enum ReducedFactor<T: Scalar> {
    Cholesky {
        chol: Cholesky<T, Dyn>,
        h_inv_one: DVector<T>,
        one_h_inv_one: T,
    },
    Lu(LU<T, Dyn, Dyn>),
}

impl<T: Scalar> ReducedFactor<T> {
    fn new(h: &DMatrix<T>, free: &[usize]) -> Self {
        let f = free.len();
        let h_ff = DMatrix::from_fn(f, f, |a, b| h[(free[a], free[b])]);
        if let Some(chol) = Cholesky::new(h_ff) {
            let h_inv_one = chol.solve(&DVector::from_element(f, T::one()));
            let one_h_inv_one = h_inv_one.sum();
            if one_h_inv_one > T::zero() && one_h_inv_one.is_finite() {
                return Self::Cholesky {
                    chol,
                    h_inv_one,
                    one_h_inv_one,
                };
            }
        }
        let mut kkt = DMatrix::zeros(f + 1, f + 1);
        for (a, &i) in free.iter().enumerate() {
            for (b, &j) in free.iter().enumerate() {
                kkt[(a, b)] = h[(i, j)];
            }
            kkt[(a, f)] = T::one();
            kkt[(f, a)] = T::one();
        }
        Self::Lu(kkt.lu())
    }

    /// Free values and mass multiplier `ν` of `H_FF x + ν 1 = -g_F`,
    /// `1ᵀ x = n_v`.
    fn solve(&self, g: &DVector<T>, free: &[usize], n_v: T) -> Result<(Vec<T>, T)> {
        let f = free.len();
        let out = match self {
            Self::Cholesky {
                chol,
                h_inv_one,
                one_h_inv_one,
            } => {
                let y = chol.solve(&DVector::from_iterator(f, free.iter().map(|&i| -g[i])));
                let nu = (y.sum() - n_v) / *one_h_inv_one;
                Some((y - h_inv_one * nu).iter().copied().collect::<Vec<T>>()).map(|x| (x, nu))
            }
            Self::Lu(lu) => {
                let mut rhs = DVector::zeros(f + 1);
                for (a, &i) in free.iter().enumerate() {
                    rhs[a] = -g[i];
                }
                rhs[f] = n_v;
                lu.solve(&rhs)
                    .map(|sol| (sol.rows(0, f).iter().copied().collect(), sol[f]))
            }
        };
        out.filter(|(x, nu)| nu.is_finite() && x.iter().all(|v| v.is_finite()))
            .ok_or_else(|| Error::Singular("reduced KKT system".into()))
    }
}

/// Primal-dual active-set sweeps tried by [`LocalSolver`] before it falls
/// back to the primal method.
const LOCAL_SWEEPS: usize = 10;

/// Solver for observations near a base solution. It runs primal-dual
/// active-set sweeps starting from the base active set, whose factorization
/// is kept; within that set the minimizer is affine in `N*`, so small
/// perturbations usually finish in one sweep. Sweeps that cycle fall back to
/// a warm-started [`PwlsProblem::solve`].
#[derive(Debug)]
pub struct LocalSolver<'a, T: Scalar> {
    problem: &'a PwlsProblem<T>,
    base: Vec<T>,
    lambda: T,
    h: DMatrix<T>,
    fixed: Vec<bool>,
    factor: ReducedFactor<T>,
}

impl<T: Scalar> LocalSolver<'_, T> {
    pub fn solve(&self, n_star: &[T]) -> Result<QPSolution<T>> {
        let p = self.problem;
        p.check(n_star, self.lambda)?;
        let g = -p.target(n_star);
        let dim = p.dim();
        let tol = T::of(p.options.tolerance);
        let mut fixed = self.fixed.clone();
        let mut fresh: Option<ReducedFactor<T>> = None;
        for sweep in 1..=LOCAL_SWEEPS {
            let free: Vec<usize> = (0..dim).filter(|&i| !fixed[i]).collect();
            if free.is_empty() {
                break;
            }
            let factor = fresh.as_ref().unwrap_or(&self.factor);
            let Ok((values, nu)) = factor.solve(&g, &free, p.n_v) else {
                break;
            };
            let mut x = vec![T::zero(); dim];
            for (&i, &v) in free.iter().zip(&values) {
                x[i] = v;
            }
            let grad = &self.h * DVector::from_column_slice(&x) + &g;
            let bound = -tol * grad_scale(&self.h, &g, &x);
            let next: Vec<bool> = (0..dim)
                .map(|i| {
                    if fixed[i] {
                        grad[i] + nu >= bound
                    } else {
                        x[i] < T::zero()
                    }
                })
                .collect();
            if next == fixed {
                return p.finish(x, fixed, nu, n_star, self.lambda, &self.h, &g, sweep, true);
            }
            fixed = next;
            let free: Vec<usize> = (0..dim).filter(|&i| !fixed[i]).collect();
            fresh = Some(ReducedFactor::new(&self.h, &free));
        }
        p.solve(n_star, self.lambda, Some(&self.base))
    }
}

fn grad_scale<T: Scalar>(h: &DMatrix<T>, g: &DVector<T>, x: &[T]) -> T {
    let hx = h * DVector::from_column_slice(x);
    let a = hx.iter().fold(T::zero(), |a, &b| a.max(b.abs()));
    let b = g.iter().fold(T::zero(), |a, &b| a.max(b.abs()));
    a.max(b).max(T::of(f32::MIN_POSITIVE as f64))
}

/// Relative KKT residual: stationarity on free coordinates, sign of the bound
/// multipliers, primal feasibility.
fn kkt_residual<T: Scalar>(h: &DMatrix<T>, g: &DVector<T>, x: &[T], fixed: &[bool], nu: T, n_v: T) -> T {
    let grad = h * DVector::from_column_slice(x) + g;
    let scale = grad_scale(h, g, x);
    let mut worst = T::zero();
    for i in 0..x.len() {
        let r = grad[i] + nu;
        let v = if fixed[i] { (-r).max(T::zero()) } else { r.abs() };
        worst = worst.max(v / scale);
        worst = worst.max((-x[i]).max(T::zero()) / n_v);
    }
    let total = x.iter().fold(T::zero(), |a, &b| a + b);
    worst.max((total - n_v).abs() / n_v)
}

/// Affine description `N̂ = A N* + c` of the equality-only estimator.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorMap<T: Scalar> {
    pub matrix: DMatrix<T>,
    pub offset: Vec<T>,
}

impl<T: Scalar> EstimatorMap<T> {
    pub fn apply(&self, n_star: &[T]) -> Vec<T> {
        let v = &self.matrix * DVector::from_column_slice(n_star);
        v.iter().zip(&self.offset).map(|(&a, &c)| a + c).collect()
    }

    /// `Trace(P A)`.
    pub fn divergence(&self, op: &DMatrix<T>) -> T {
        (op * &self.matrix).trace()
    }
}

/// One-shot wrapper around [`PwlsProblem::solve`].
pub fn solve_pwls<T: Scalar>(
    op: &SamplingOperator<T>,
    n_star: &[T],
    c_hat: &CovarianceApprox<T>,
    lambda: T,
    n_v: T,
    options: SolverOptions,
) -> Result<QPSolution<T>> {
    PwlsProblem::new(op, c_hat, n_v, options)?.solve(n_star, lambda, None)
}

pub fn solve_equality_only<T: Scalar>(
    op: &SamplingOperator<T>,
    n_star: &[T],
    c_hat: &CovarianceApprox<T>,
    lambda: T,
    n_v: T,
) -> Result<Vec<T>> {
    PwlsProblem::new(op, c_hat, n_v, SolverOptions::default())?.solve_equality_only(n_star, lambda)
}

pub fn estimator_map<T: Scalar>(
    op: &SamplingOperator<T>,
    c_hat: &CovarianceApprox<T>,
    lambda: T,
    n_v: T,
) -> Result<EstimatorMap<T>> {
    PwlsProblem::new(op, c_hat, n_v, SolverOptions::default())?.estimator_map(lambda)
}
