mod common;

use common::*;
use netdeg::estimator::{PwlsProblem, SolverOptions};

#[test]
fn matches_support_enumeration() {
    for seed in 0..50 {
        let inst = random_instance(seed, 6);
        let problem = PwlsProblem::new(&inst.op, &inst.c_hat, inst.n_v, SolverOptions::default()).unwrap();
        let sol = problem.solve(&inst.n_star, inst.lambda, None).unwrap();
        assert!(sol.converged, "seed {seed}");
        let oracle = brute_force_qp(&inst);
        let err = max_abs_diff(&sol.n_hat, &oracle) / inst.n_v;
        assert!(err <= 1e-6, "seed {seed}: relative error {err:e}");
    }
}

#[test]
fn matches_equality_only_oracle_when_nonnegative() {
    let mut checked = 0;
    for seed in 100..300 {
        let inst = random_instance(seed, 8);
        let oracle = equality_only_oracle(&inst);
        let problem = PwlsProblem::new(&inst.op, &inst.c_hat, inst.n_v, SolverOptions::default()).unwrap();
        let closed = problem.solve_equality_only(&inst.n_star, inst.lambda).unwrap();
        assert!(max_abs_diff(&closed, &oracle) / inst.n_v <= 1e-8, "seed {seed}");
        if oracle.iter().all(|&v| v > 0.0) {
            let sol = problem.solve(&inst.n_star, inst.lambda, None).unwrap();
            assert!(max_abs_diff(&sol.n_hat, &oracle) / inst.n_v <= 1e-6, "seed {seed}");
            checked += 1;
        }
    }
    assert!(checked >= 10, "only {checked} interior instances");
}

#[test]
fn warm_start_reaches_the_same_minimizer() {
    for seed in 300..320 {
        let inst = random_instance(seed, 6);
        let problem = PwlsProblem::new(&inst.op, &inst.c_hat, inst.n_v, SolverOptions::default()).unwrap();
        let cold = problem.solve(&inst.n_star, inst.lambda, None).unwrap();
        let other = problem.solve(&inst.n_star, inst.lambda * 10.0, None).unwrap();
        let warm = problem.solve(&inst.n_star, inst.lambda, Some(&other.n_hat)).unwrap();
        assert!(max_abs_diff(&cold.n_hat, &warm.n_hat) / inst.n_v <= 1e-7, "seed {seed}");
    }
}
