use netdeg::estimator::{PwlsProblem, SolverOptions};
use netdeg::smoothing::build_covariance;
use netdeg::sure::{mc_divergence, pilot_lambda, SureConfig};
use netdeg::{Design, OperatorParams};

fn twenty_dim(design: Design, p: f64) -> (netdeg::Operator, Vec<f64>, netdeg::Covariance) {
    let op = netdeg::Operator::build(design, OperatorParams::Rate(p), 19).unwrap();
    let truth: Vec<f64> = (0..20)
        .map(|k| 400.0 * (-((k as f64 - 8.0) / 4.0).powi(2)).exp())
        .collect();
    let n_star = op.apply(&truth).unwrap();
    let c_hat = build_covariance(&n_star, 20.0).unwrap();
    (op, n_star, c_hat)
}

#[test]
fn linear_estimator_divergence_matches_trace() {
    for (design, p) in [
        (Design::Ego, 0.2),
        (Design::Snowball, 0.3),
        (Design::Induced, 0.5),
        (Design::Incident, 0.4),
    ] {
        let (op, n_star, c_hat) = twenty_dim(design, p);
        let n_v: f64 = 5000.0;
        let problem = PwlsProblem::new(&op, &c_hat, n_v, SolverOptions::default()).unwrap();
        let lambda = pilot_lambda(&op, &c_hat);
        let map = problem.estimator_map(lambda).unwrap();
        let exact = map.divergence(op.matrix());
        let estimate = |y: &[f64]| Ok(map.apply(y));
        let mean: f64 = (0..10)
            .map(|seed| {
                let cfg = SureConfig {
                    seed,
                    ..SureConfig::default()
                };
                mc_divergence(estimate, &op, &n_star, &cfg).unwrap().value
            })
            .sum::<f64>()
            / 10.0;
        assert!(
            (mean - exact).abs() <= 0.05 * exact.abs(),
            "{design}: {mean} vs {exact}"
        );
    }
}

#[test]
fn exact_divergence_is_the_finite_difference_of_the_map() {
    let (op, n_star, c_hat) = twenty_dim(Design::Induced, 0.3);
    let problem = PwlsProblem::new(&op, &c_hat, 1000.0, SolverOptions::default()).unwrap();
    let map = problem.estimator_map(1.0).unwrap();
    // Trace(P A) column by column from the closed-form solve
    let base = problem.solve_equality_only(&n_star, 1.0).unwrap();
    let mut trace = 0.0;
    for i in 0..n_star.len() {
        let mut y = n_star.clone();
        y[i] += 1.0;
        let moved = problem.solve_equality_only(&y, 1.0).unwrap();
        let diff: Vec<f64> = moved.iter().zip(&base).map(|(a, b)| a - b).collect();
        trace += op.apply(&diff).unwrap()[i];
    }
    let exact = map.divergence(op.matrix());
    assert!((trace - exact).abs() <= 1e-8 * exact.abs().max(1.0));
}
