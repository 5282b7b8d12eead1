use nalgebra::DVector;
use netdeg::graph::generate_er;
use netdeg::operator::{eigen_induced_closed_form, spectral};
use netdeg::sampling::empirical_inclusion_check;
use netdeg::{Design, DesignParams, OperatorParams};
use statrs::distribution::{Discrete, Hypergeometric};

fn rates() -> impl Iterator<Item = f64> {
    (1..=19).map(|i| i as f64 * 0.05)
}

/// Column sums from the design definitions, not from the operator.
fn expected_column_sum(design: Design, p: f64, j: usize) -> f64 {
    let q = 1.0 - p;
    match design {
        Design::Ego | Design::Induced => p,
        Design::Snowball => 1.0 - q.powi(j as i32 + 1),
        Design::Incident => 1.0 - q.powi(j as i32),
        Design::RandomWalk => unreachable!(),
    }
}

#[test]
fn column_sums_hold_for_every_rate_design() {
    for design in [Design::Ego, Design::Snowball, Design::Induced, Design::Incident] {
        for p in rates() {
            for m in [1, 2, 7, 20, 50] {
                let op = netdeg::Operator::build(design, OperatorParams::Rate(p), m).unwrap();
                for (j, s) in op.column_sums().iter().enumerate() {
                    let want = expected_column_sum(design, p, j);
                    assert!((s - want).abs() <= 1e-12, "{design} p={p} M={m} j={j}: {s} vs {want}");
                }
            }
        }
    }
}

#[test]
fn random_walk_columns_follow_the_hypergeometric_law() {
    for (n_e, drawn) in [(100u64, 10u64), (500, 250), (60, 59)] {
        let op = netdeg::Operator::build(
            Design::RandomWalk,
            OperatorParams::Walk {
                n_e: n_e as usize,
                sampled_edges: drawn as usize,
            },
            30,
        )
        .unwrap();
        for (j, s) in op.column_sums().iter().enumerate() {
            let h = Hypergeometric::new(n_e, j as u64, drawn).unwrap();
            let want = 1.0 - h.pmf(0);
            assert!((s - want).abs() <= 1e-12, "n_e={n_e} j={j}");
            for i in 1..=j {
                assert!((op.matrix()[(i, j)] - h.pmf(i as u64)).abs() <= 1e-12);
            }
        }
    }
}

#[test]
fn induced_eigenvectors_match_closed_form() {
    for p in [0.2, 0.5, 0.8] {
        for m in 1..=15 {
            let op = netdeg::Operator::build(Design::Induced, OperatorParams::Rate(p), m).unwrap();
            let (values, vectors) = eigen_induced_closed_form::<f64>(p, m).unwrap();
            for k in 0..=m {
                let u = DVector::from_iterator(m + 1, vectors.column(k).iter().copied());
                let residual = (op.matrix() * &u - &u * values[k]).norm();
                assert!(residual <= 1e-9, "p={p} M={m} k={k}: {residual:e}");
            }
        }
    }
}

#[test]
fn induced_eigenvalue_ratio_is_p_to_minus_m() {
    for p in [0.2, 0.5, 0.8] {
        for m in 1..=15 {
            let op = netdeg::Operator::build(Design::Induced, OperatorParams::Rate(p), m).unwrap();
            let ratio = spectral(&op).eigenvalue_ratio.unwrap();
            let want = p.powi(-(m as i32));
            assert!((ratio - want).abs() <= 1e-9 * want);
        }
    }
}

#[test]
fn operator_columns_match_simulated_inclusion() {
    let g = generate_er(300, 1200, 5).unwrap();
    let k = 8;
    for design in [Design::Ego, Design::Snowball, Design::Induced, Design::Incident] {
        let p = 0.3;
        let op = netdeg::Operator::build(design, OperatorParams::Rate(p), k).unwrap();
        let emp = empirical_inclusion_check(design, &g, DesignParams::Rate(p), k, 4000, 9).unwrap();
        let class = g.degrees().iter().filter(|&&d| d == k).count() as f64;
        for i in 0..=k {
            let want = op.matrix()[(i, k)];
            // binomial standard error of the pooled frequency, ignoring
            // within-trial dependence
            let se = (want * (1.0 - want) / (4000.0 * class)).sqrt().max(1e-4);
            assert!(
                (emp[i] - want).abs() <= 6.0 * se,
                "{design} i={i}: {} vs {want}",
                emp[i]
            );
        }
    }
}
