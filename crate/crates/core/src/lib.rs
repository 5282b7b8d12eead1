//! Estimating the degree distribution of a network from a sample of it.
//!
//! A sampling design maps the true degree counts `N` to expected observed
//! counts `P N`. Inverting `P` directly is unstable, so the estimate solves a
//! penalized weighted least-squares problem over nonnegative counts summing
//! to the number of vertices, with the penalty weight chosen by a Monte Carlo
//! Stein unbiased risk estimate.
//!
//! The numerical core is generic over [`Scalar`] (`f32` or `f64`); the
//! aliases below fix it to `f64` or `f32`.
//!
//! ```
//! use netdeg::{graph, sampling, Design, DesignParams};
//!
//! let g = graph::generate_er(200, 600, 1).unwrap();
//! let s = sampling::sample(Design::Induced, &g, DesignParams::Rate(0.3), 2).unwrap();
//! let n_v = g.vertex_count() as f64;
//! let op = netdeg::Operator::build(Design::Induced, netdeg::OperatorParams::Rate(0.3), 30).unwrap();
//! let n_star: Vec<f64> = (0..=30).map(|k| *s.observed_counts.get(k).unwrap_or(&0) as f64).collect();
//! let c_hat = netdeg::smoothing::build_covariance(&n_star, 20.0).unwrap();
//! let problem = netdeg::Problem::new(&op, &c_hat, n_v, Default::default()).unwrap();
//! let fit = problem.solve(&n_star, 1.0, None).unwrap();
//! assert!((fit.n_hat.iter().sum::<f64>() - n_v).abs() < 1e-6 * n_v);
//! ```

// negated comparisons reject NaN along with out-of-range values
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod estimator;
pub mod graph;
pub mod metrics;
pub mod operator;
pub mod pipeline;
pub mod rng;
pub mod sampling;
pub mod scalar;
pub mod smoothing;
pub mod sure;
pub mod variance;

pub use error::{Error, Result};
pub use graph::{EdgeList, Graph};
pub use operator::OperatorParams;
pub use sampling::{Design, DesignParams};
pub use scalar::Scalar;

pub type Operator = operator::SamplingOperator<f64>;
pub type Covariance = smoothing::CovarianceApprox<f64>;
pub type Problem = estimator::PwlsProblem<f64>;
pub type Solution = estimator::QPSolution<f64>;
pub type Selection = sure::SureSelection<f64>;

pub type Operator32 = operator::SamplingOperator<f32>;
pub type Covariance32 = smoothing::CovarianceApprox<f32>;
pub type Problem32 = estimator::PwlsProblem<f32>;
pub type Solution32 = estimator::QPSolution<f32>;
pub type Selection32 = sure::SureSelection<f32>;
