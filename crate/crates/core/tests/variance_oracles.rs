mod common;

use common::mc_covariance;
use netdeg::graph::{generate_er, generate_gnp, Graph};
use netdeg::sampling::sample;
use netdeg::variance::{enumerate_moments, induced_var, snowball_cov};
use netdeg::{Design, DesignParams};
use rayon::prelude::*;

fn small_graphs() -> Vec<Graph> {
    let mut gs = vec![
        Graph::complete(5),
        Graph::star(7),
        Graph::path(6),
        Graph::cycle(8).unwrap(),
    ];
    for seed in 0..6 {
        gs.push(generate_gnp(10 + seed as usize % 3, 0.35, seed).unwrap());
    }
    gs
}

fn close(got: f64, want: f64, scale: f64) -> bool {
    (got - want).abs() <= 1e-10 * (want.abs() + scale)
}

#[test]
fn snowball_covariance_matches_enumeration() {
    for g in small_graphs() {
        for p in [0.15, 0.5, 0.8] {
            let m = enumerate_moments(&g, Design::Snowball, p).unwrap();
            for k in 0..m.mean.len() {
                for l in 0..m.mean.len() {
                    let got = snowball_cov(&g, p, k, l).unwrap();
                    let want = m.covariance[k][l];
                    assert!(
                        close(got, want, m.mean[k] * m.mean[l]),
                        "k={k} l={l} p={p}: {got} vs {want}"
                    );
                }
            }
        }
    }
}

#[test]
fn induced_variance_matches_enumeration() {
    for g in small_graphs() {
        for p in [0.15, 0.5, 0.8] {
            let m = enumerate_moments(&g, Design::Induced, p).unwrap();
            for k in 0..m.mean.len() {
                let got = induced_var(&g, p, k).unwrap();
                let want = m.covariance[k][k];
                assert!(close(got, want, m.mean[k] * m.mean[k]), "k={k} p={p}: {got} vs {want}");
            }
        }
    }
}

/// Count series `N*_k` over Monte Carlo samples.
fn draws(g: &Graph, design: Design, p: f64, samples: usize, seed: u64) -> Vec<Vec<f64>> {
    let dim = g.max_degree() + 1;
    let rows: Vec<Vec<usize>> = (0..samples as u64)
        .into_par_iter()
        .map(|t| {
            sample(design, g, DesignParams::Rate(p), seed.wrapping_mul(1_000_003) + t)
                .unwrap()
                .observed_counts
        })
        .collect();
    (0..dim)
        .map(|k| rows.iter().map(|r| r.get(k).copied().unwrap_or(0) as f64).collect())
        .collect()
}

#[test]
fn formulas_agree_with_monte_carlo() {
    let g = generate_er(25, 60, 3).unwrap();
    let p = 0.3;
    let snow = draws(&g, Design::Snowball, p, 20_000, 1);
    let mut misses = 0;
    let mut total = 0;
    for k in 0..snow.len() {
        for l in k..snow.len() {
            let (mc, se) = mc_covariance(&snow[k], &snow[l]);
            let exact = snowball_cov(&g, p, k, l).unwrap();
            total += 1;
            if (mc - exact).abs() > 3.0 * se + 1e-12 {
                misses += 1;
            }
        }
    }
    let ind = draws(&g, Design::Induced, p, 20_000, 2);
    for (k, series) in ind.iter().enumerate() {
        let (mc, se) = mc_covariance(series, series);
        let exact = induced_var(&g, p, k).unwrap();
        total += 1;
        if (mc - exact).abs() > 3.0 * se + 1e-12 {
            misses += 1;
        }
    }
    // a 3-SE band misses about 0.3% of the time per comparison
    assert!(misses * 50 <= total, "{misses} of {total} outside 3 SE");
}
