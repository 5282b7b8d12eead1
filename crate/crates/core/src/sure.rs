//! Choice of the penalty weight by minimizing a generalized Stein unbiased
//! risk estimate of the weighted error `(P N̂ - P N)ᵀ Ĉ⁻¹ (P N̂ - P N)`.
//!
//! With `Cov(N*) ≈ Ĉ`, Stein's identity turns the cross term
//! `E[(P N̂)ᵀ Ĉ⁻¹ (N* - P N)]` into `E[Trace(P ∂N̂/∂N*)]`: the weight `Ĉ⁻¹`
//! cancels against the covariance, so the divergence carries no weighting.
//! The divergence is estimated by Monte Carlo finite differences along
//! Gaussian probes, reusing the same probes for every `λ`.

use std::io::Write;

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::estimator::{PwlsProblem, QPSolution};
use crate::operator::SamplingOperator;
use crate::rng::{derive_seed, rng_from_seed, streams};
use crate::scalar::{dot, Scalar};
use crate::smoothing::CovarianceApprox;

pub const DEFAULT_EPSILON: f64 = 0.1;
pub const DEFAULT_REPLICATES: usize = 100;
pub const DEFAULT_GRID_POINTS: usize = 13;
pub const DEFAULT_GRID_DECADES: f64 = 6.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SureConfig {
    /// Finite-difference step `ε`.
    pub epsilon: f64,
    /// Number of probes `K`.
    pub replicates: usize,
    /// Strictly increasing positive grid; `None` uses [`default_grid`].
    pub lambda_grid: Option<Vec<f64>>,
    pub seed: u64,
}

impl Default for SureConfig {
    fn default() -> Self {
        Self {
            epsilon: DEFAULT_EPSILON,
            replicates: DEFAULT_REPLICATES,
            lambda_grid: None,
            seed: 0,
        }
    }
}

impl SureConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return invalid("epsilon must be positive");
        }
        if self.replicates == 0 {
            return invalid("at least one Monte Carlo replicate is required");
        }
        if let Some(grid) = &self.lambda_grid {
            check_grid(grid)?;
        }
        Ok(())
    }
}

fn check_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return invalid("lambda grid is empty");
    }
    if grid.iter().any(|&l| !(l > 0.0 && l.is_finite())) {
        return invalid("lambda grid values must be positive and finite");
    }
    if grid.windows(2).any(|w| w[0] >= w[1]) {
        return invalid("lambda grid must be strictly increasing");
    }
    Ok(())
}

/// Pilot scale `Trace(Pᵀ Ĉ⁻¹ P) / Trace(Ω)`, which balances the two
/// quadratic terms of the objective.
pub fn pilot_lambda<T: Scalar>(op: &SamplingOperator<T>, c_hat: &CovarianceApprox<T>) -> f64 {
    let fit: f64 = op
        .matrix()
        .row_iter()
        .zip(&c_hat.diagonal)
        .map(|(row, &c)| row.norm_squared().as_f64() / c.as_f64())
        .sum();
    // Trace(DᵀD) is the squared norm of D: M - 1 rows of (1, -2, 1)
    let m = op.max_degree();
    let omega = if m >= 2 { 6.0 * (m - 1) as f64 } else { 0.0 };
    if omega > 0.0 && fit > 0.0 {
        fit / omega
    } else {
        1.0
    }
}

/// `points` values log-spaced over `decades` decades, centered on `center`.
pub fn log_grid(center: f64, decades: f64, points: usize) -> Vec<f64> {
    if points == 1 {
        return vec![center];
    }
    let lo = center.log10() - decades / 2.0;
    let step = decades / (points - 1) as f64;
    (0..points).map(|i| 10f64.powf(lo + step * i as f64)).collect()
}

pub fn default_grid<T: Scalar>(op: &SamplingOperator<T>, c_hat: &CovarianceApprox<T>) -> Vec<f64> {
    log_grid(pilot_lambda(op, c_hat), DEFAULT_GRID_DECADES, DEFAULT_GRID_POINTS)
}

/// Standard normal probe vectors `b_1..b_K`, reproducible from `seed`.
pub fn probes<T: Scalar>(dim: usize, replicates: usize, seed: u64) -> Vec<Vec<T>> {
    (0..replicates)
        .map(|i| {
            let mut rng = rng_from_seed(derive_seed(seed, streams::SURE_PROBES, i as u64));
            (0..dim).map(|_| T::of(StandardNormal.sample(&mut rng))).collect()
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Divergence {
    pub value: f64,
    pub std_error: f64,
}

/// Monte Carlo estimate of `Trace(P ∂f/∂N*)` at `n_star`:
/// the mean over probes of `b_iᵀ P (f(N* + ε b_i) - f(N*)) / ε`.
pub fn mc_divergence<T, F>(estimate: F, op: &SamplingOperator<T>, n_star: &[T], cfg: &SureConfig) -> Result<Divergence>
where
    T: Scalar,
    F: Fn(&[T]) -> Result<Vec<T>> + Sync,
{
    cfg.validate()?;
    op.check_dim(n_star.len())?;
    let base = estimate(n_star)?;
    let probes = probes::<T>(op.dim(), cfg.replicates, cfg.seed);
    let terms = probes
        .par_iter()
        .map(|b| probe_term(&estimate, op, n_star, &base, b, cfg.epsilon))
        .collect::<Result<Vec<f64>>>()?;
    Ok(summarize(&terms))
}

fn probe_term<T: Scalar, F>(
    estimate: &F,
    op: &SamplingOperator<T>,
    n_star: &[T],
    base: &[T],
    b: &[T],
    eps: f64,
) -> Result<f64>
where
    F: Fn(&[T]) -> Result<Vec<T>>,
{
    let e = T::of(eps);
    let shifted: Vec<T> = n_star.iter().zip(b).map(|(&y, &bi)| y + e * bi).collect();
    let moved = estimate(&shifted)?;
    let diff: Vec<T> = moved.iter().zip(base).map(|(&a, &c)| a - c).collect();
    Ok(dot(b, &op.apply(&diff)?).as_f64() / eps)
}

fn summarize(terms: &[f64]) -> Divergence {
    let k = terms.len() as f64;
    let mean = terms.iter().sum::<f64>() / k;
    let std_error = if terms.len() > 1 {
        let var = terms.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / (k - 1.0);
        (var / k).sqrt()
    } else {
        0.0
    };
    Divergence { value: mean, std_error }
}

/// The `λ`-dependent part of the risk estimate,
/// `(P N̂)ᵀ Ĉ⁻¹ P N̂ + 2 div - 2 (P N̂)ᵀ Ĉ⁻¹ N*`.
pub fn wmse_hat<T: Scalar>(
    op: &SamplingOperator<T>,
    n_star: &[T],
    c_hat: &CovarianceApprox<T>,
    n_hat: &[T],
    div: f64,
) -> Result<f64> {
    op.check_dim(n_star.len())?;
    op.check_dim(c_hat.len())?;
    let fitted = op.apply(n_hat)?;
    let weighted = c_hat.solve(&fitted);
    Ok(dot(&weighted, &fitted).as_f64() + 2.0 * div - 2.0 * dot(&weighted, n_star).as_f64())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SureRecord {
    pub lambda: f64,
    pub wmse_hat: f64,
    pub divergence: f64,
    pub std_error: f64,
    /// False when the solve at this point or at one of its probes did not
    /// converge; such points are skipped by the argmin.
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SureCurve {
    pub records: Vec<SureRecord>,
    pub argmin_index: usize,
    pub argmin_lambda: f64,
}

impl SureCurve {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["lambda", "wmse_hat", "divergence", "std_error", "converged"])?;
        for r in &self.records {
            w.write_record([
                r.lambda.to_string(),
                r.wmse_hat.to_string(),
                r.divergence.to_string(),
                r.std_error.to_string(),
                r.converged.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Result of a sweep: the curve and the constrained solution at the selected
/// `λ`.
#[derive(Debug, Clone)]
pub struct SureSelection<T: Scalar> {
    pub curve: SureCurve,
    pub solution: QPSolution<T>,
}

struct GridPoint<T: Scalar> {
    record: SureRecord,
    solution: Option<QPSolution<T>>,
}

/// Evaluates the risk estimate over the grid and returns the minimizer.
pub fn select_lambda<T: Scalar>(
    problem: &PwlsProblem<T>,
    op: &SamplingOperator<T>,
    n_star: &[T],
    c_hat: &CovarianceApprox<T>,
    cfg: &SureConfig,
) -> Result<SureSelection<T>> {
    cfg.validate()?;
    let grid = match &cfg.lambda_grid {
        Some(g) => g.clone(),
        None => default_grid(op, c_hat),
    };
    check_grid(&grid)?;
    let probes = probes::<T>(op.dim(), cfg.replicates, cfg.seed);
    // base solutions along the grid, each warm-started from its neighbour
    let mut bases = Vec::with_capacity(grid.len());
    let mut warm: Option<Vec<T>> = None;
    for &lambda in &grid {
        let base = problem.solve(n_star, T::of(lambda), warm.as_deref());
        if let Ok(b) = &base {
            warm = Some(b.n_hat.clone());
        }
        bases.push(base.ok());
    }
    let points: Vec<GridPoint<T>> = grid
        .par_iter()
        .zip(bases)
        .map(|(&lambda, base)| evaluate_point(problem, op, n_star, c_hat, &probes, cfg.epsilon, lambda, base))
        .collect();

    let best = points
        .iter()
        .enumerate()
        .filter(|(_, p)| p.record.converged && p.record.wmse_hat.is_finite())
        .min_by(|a, b| a.1.record.wmse_hat.total_cmp(&b.1.record.wmse_hat))
        .map(|(i, _)| i)
        .ok_or(Error::NotConverged { iterations: 0 })?;
    let records: Vec<SureRecord> = points.iter().map(|p| p.record.clone()).collect();
    let solution = points
        .into_iter()
        .nth(best)
        .and_then(|p| p.solution)
        .expect("selected grid point has a solution");
    Ok(SureSelection {
        curve: SureCurve {
            argmin_index: best,
            argmin_lambda: records[best].lambda,
            records,
        },
        solution,
    })
}

#[allow(clippy::too_many_arguments)]
fn evaluate_point<T: Scalar>(
    problem: &PwlsProblem<T>,
    op: &SamplingOperator<T>,
    n_star: &[T],
    c_hat: &CovarianceApprox<T>,
    probes: &[Vec<T>],
    eps: f64,
    lambda: f64,
    base: Option<QPSolution<T>>,
) -> GridPoint<T> {
    let failed = || GridPoint {
        record: SureRecord {
            lambda,
            wmse_hat: f64::NAN,
            divergence: f64::NAN,
            std_error: f64::NAN,
            converged: false,
        },
        solution: None,
    };
    let Some(base) = base else {
        return failed();
    };
    let Ok(local) = problem.local(&base) else {
        return failed();
    };
    let all_converged = std::sync::atomic::AtomicBool::new(base.converged);
    let estimate = |y: &[T]| -> Result<Vec<T>> {
        let s = local.solve(y)?;
        if !s.converged {
            all_converged.store(false, std::sync::atomic::Ordering::Relaxed);
        }
        Ok(s.n_hat)
    };
    let terms: Result<Vec<f64>> = probes
        .par_iter()
        .map(|b| probe_term(&estimate, op, n_star, &base.n_hat, b, eps))
        .collect();
    let Ok(terms) = terms else {
        return failed();
    };
    let div = summarize(&terms);
    let Ok(wmse) = wmse_hat(op, n_star, c_hat, &base.n_hat, div.value) else {
        return failed();
    };
    GridPoint {
        record: SureRecord {
            lambda,
            wmse_hat: wmse,
            divergence: div.value,
            std_error: div.std_error,
            converged: all_converged.into_inner(),
        },
        solution: Some(base),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimator::{estimator_map, SolverOptions};
    use crate::operator::OperatorParams;
    use crate::sampling::Design;
    use approx::assert_relative_eq;
    use nalgebra::DMatrix;

    fn identity_op(dim: usize) -> SamplingOperator<f64> {
        SamplingOperator::from_matrix(DMatrix::identity(dim, dim), Design::Ego, OperatorParams::Rate(1.0)).unwrap()
    }

    #[test]
    fn identity_map_divergence_is_dimension() {
        let op = identity_op(12);
        let y = vec![3.0; 12];
        let cfg = SureConfig {
            replicates: 400,
            ..Default::default()
        };
        let d = mc_divergence(|x: &[f64]| Ok(x.to_vec()), &op, &y, &cfg).unwrap();
        assert!((d.value - 12.0).abs() < 3.0 * d.std_error + 1e-9, "{d:?}");
    }

    #[test]
    fn linear_map_is_step_invariant() {
        let op: SamplingOperator<f64> = SamplingOperator::build(Design::Induced, OperatorParams::Rate(0.4), 9).unwrap();
        let c = CovarianceApprox::from_diagonal((0..10).map(|i| 2.0 + i as f64).collect()).unwrap();
        let map = estimator_map(&op, &c, 0.5, 60.0).unwrap();
        let y: Vec<f64> = (0..10).map(|i| (10 - i) as f64).collect();
        let f = |x: &[f64]| Ok(map.apply(x));
        let small = mc_divergence(f, &op, &y, &SureConfig::default()).unwrap();
        let large = mc_divergence(
            f,
            &op,
            &y,
            &SureConfig {
                epsilon: 0.2,
                ..Default::default()
            },
        )
        .unwrap();
        assert_relative_eq!(small.value, large.value, max_relative = 1e-8);
    }

    #[test]
    fn wmse_by_substitution() {
        let op = identity_op(3);
        let c = CovarianceApprox::identity(3);
        let y = [1.0, 2.0, 3.0];
        assert_eq!(wmse_hat(&op, &y, &c, &[0.0; 3], 0.0).unwrap(), 0.0);
        assert_relative_eq!(wmse_hat(&op, &y, &c, &y, 2.5).unwrap(), 5.0 - 14.0);
    }

    #[test]
    fn grid_helpers() {
        let g = log_grid(1.0, 6.0, 13);
        assert_eq!(g.len(), 13);
        assert_relative_eq!(g[0], 1e-3, max_relative = 1e-12);
        assert_relative_eq!(g[6], 1.0, max_relative = 1e-12);
        assert_relative_eq!(g[12], 1e3, max_relative = 1e-12);
        assert!(check_grid(&[1.0, 1.0]).is_err());
        assert!(check_grid(&[]).is_err());
        assert!(check_grid(&[-1.0]).is_err());
        let op = identity_op(5);
        let omega_trace = crate::estimator::build_penalty::<f64>(4).unwrap().omega().trace();
        assert_relative_eq!(pilot_lambda(&op, &CovarianceApprox::identity(5)), 5.0 / omega_trace);
    }

    #[test]
    fn singleton_grid_and_determinism() {
        let op: SamplingOperator<f64> = SamplingOperator::build(Design::Induced, OperatorParams::Rate(0.5), 8).unwrap();
        let truth: Vec<f64> = (0..9).map(|k| 30.0 - 3.0 * k as f64).collect();
        let y = op.apply(&truth).unwrap();
        let c = CovarianceApprox::from_diagonal(y.iter().map(|v| v + 1.0).collect()).unwrap();
        let problem = PwlsProblem::new(&op, &c, truth.iter().sum(), SolverOptions::default()).unwrap();
        let cfg = SureConfig {
            lambda_grid: Some(vec![0.3]),
            replicates: 20,
            ..Default::default()
        };
        let sel = select_lambda(&problem, &op, &y, &c, &cfg).unwrap();
        assert_eq!(sel.curve.argmin_lambda, 0.3);
        let cfg = SureConfig {
            replicates: 20,
            seed: 9,
            ..Default::default()
        };
        let a = select_lambda(&problem, &op, &y, &c, &cfg).unwrap();
        let b = select_lambda(&problem, &op, &y, &c, &cfg).unwrap();
        assert_eq!(a.curve, b.curve);
        assert_eq!(a.curve.records.len(), DEFAULT_GRID_POINTS);
        let mut buf = Vec::new();
        a.curve.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("lambda,wmse_hat,divergence,std_error,converged\n"));
        assert_eq!(text.lines().count(), DEFAULT_GRID_POINTS + 1);
    }

    #[test]
    fn config_validation() {
        let bad = SureConfig {
            epsilon: 0.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = SureConfig {
            replicates: 0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }
}
