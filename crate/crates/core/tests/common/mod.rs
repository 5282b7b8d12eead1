#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use netdeg::estimator::build_penalty;
use netdeg::smoothing::{build_covariance, CovarianceApprox};
use netdeg::{Design, OperatorParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const RATE_DESIGNS: [Design; 4] = [Design::Ego, Design::Snowball, Design::Induced, Design::Incident];

/// A random small problem: operator, observation, covariance, `λ`, `n_v`.
pub struct Instance {
    pub op: netdeg::Operator,
    pub n_star: Vec<f64>,
    pub c_hat: CovarianceApprox<f64>,
    pub lambda: f64,
    pub n_v: f64,
}

pub fn random_instance(seed: u64, max_dim: usize) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let design = RATE_DESIGNS[rng.random_range(0..RATE_DESIGNS.len())];
    let p = rng.random_range(0.1..0.9);
    let m = rng.random_range(2..max_dim);
    let op = netdeg::Operator::build(design, OperatorParams::Rate(p), m).unwrap();
    let truth: Vec<f64> = (0..=m).map(|_| rng.random_range(0.0..50.0f64).floor()).collect();
    let n_v = truth.iter().sum::<f64>().max(1.0);
    // perturbed expectation, kept nonnegative
    let n_star: Vec<f64> = op
        .apply(&truth)
        .unwrap()
        .into_iter()
        .map(|v| (v + rng.random_range(-3.0..3.0f64)).max(0.0))
        .collect();
    let n_star = if n_star.iter().sum::<f64>() > 0.0 {
        n_star
    } else {
        vec![1.0; m + 1]
    };
    let c_hat = build_covariance(&n_star, 20.0).unwrap();
    let lambda = 10f64.powf(rng.random_range(-3.0..2.0));
    Instance {
        op,
        n_star,
        c_hat,
        lambda,
        n_v,
    }
}

/// `(P N - y)ᵀ W (P N - y) + λ ‖D N‖²`.
pub fn objective(inst: &Instance, n: &[f64]) -> f64 {
    let r: Vec<f64> = inst
        .op
        .apply(n)
        .unwrap()
        .iter()
        .zip(&inst.n_star)
        .map(|(a, b)| a - b)
        .collect();
    let fit: f64 = r.iter().zip(&inst.c_hat.diagonal).map(|(r, c)| r * r / c).sum();
    let d = build_penalty::<f64>(inst.op.max_degree()).unwrap();
    let dn = d.matrix() * DVector::from_column_slice(n);
    fit + inst.lambda * dn.norm_squared()
}

fn hessian_and_linear(inst: &Instance) -> (DMatrix<f64>, DVector<f64>) {
    let p = inst.op.matrix();
    let w = DMatrix::from_diagonal(&DVector::from_iterator(
        inst.c_hat.len(),
        inst.c_hat.diagonal.iter().map(|c| 1.0 / c),
    ));
    let d = build_penalty::<f64>(inst.op.max_degree()).unwrap();
    let h = p.transpose() * &w * p + d.omega() * inst.lambda;
    let g = -(p.transpose() * &w * DVector::from_column_slice(&inst.n_star));
    (h, g)
}

/// Global minimizer by enumerating every support set: solve the
/// equality-constrained problem on each support and keep the best
/// nonnegative candidate.
pub fn brute_force_qp(inst: &Instance) -> Vec<f64> {
    let (h, g) = hessian_and_linear(inst);
    let n = h.nrows();
    let mut best: Option<(f64, Vec<f64>)> = None;
    for mask in 1u32..(1 << n) {
        let free: Vec<usize> = (0..n).filter(|&i| mask >> i & 1 == 1).collect();
        let f = free.len();
        let mut kkt = DMatrix::zeros(f + 1, f + 1);
        let mut rhs = DVector::zeros(f + 1);
        for (a, &i) in free.iter().enumerate() {
            for (b, &j) in free.iter().enumerate() {
                kkt[(a, b)] = h[(i, j)];
            }
            kkt[(a, f)] = 1.0;
            kkt[(f, a)] = 1.0;
            rhs[a] = -g[i];
        }
        rhs[f] = inst.n_v;
        let Some(sol) = kkt.full_piv_lu().solve(&rhs) else {
            continue;
        };
        let mut x = vec![0.0; n];
        for (a, &i) in free.iter().enumerate() {
            x[i] = sol[a];
        }
        if x.iter().any(|&v| v < -1e-9 * inst.n_v) {
            continue;
        }
        let obj = objective(inst, &x);
        if best.as_ref().is_none_or(|(b, _)| obj < *b) {
            best = Some((obj, x));
        }
    }
    best.expect("the simplex is nonempty").1
}

/// Equality-only minimizer from the stationarity conditions of the
/// Lagrangian, solved without the library.
pub fn equality_only_oracle(inst: &Instance) -> Vec<f64> {
    let (h, g) = hessian_and_linear(inst);
    let n = h.nrows();
    let mut kkt = DMatrix::zeros(n + 1, n + 1);
    let mut rhs = DVector::zeros(n + 1);
    kkt.view_mut((0, 0), (n, n)).copy_from(&h);
    for i in 0..n {
        kkt[(i, n)] = 1.0;
        kkt[(n, i)] = 1.0;
        rhs[i] = -g[i];
    }
    rhs[n] = inst.n_v;
    let sol = kkt.full_piv_lu().solve(&rhs).unwrap();
    sol.rows(0, n).iter().copied().collect()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Centered cross products and their standard error: the Monte Carlo
/// covariance of two count series.
pub fn mc_covariance(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let z: Vec<f64> = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).collect();
    let mean = z.iter().sum::<f64>() / n * n / (n - 1.0);
    let var = z.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Every file of a run directory, by name.
pub fn dir_contents(dir: &std::path::Path) -> std::collections::BTreeMap<String, Vec<u8>> {
    std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (
                e.file_name().to_string_lossy().into_owned(),
                std::fs::read(e.path()).unwrap(),
            )
        })
        .collect()
}

pub fn write_complete_graph(path: &std::path::Path, n: usize) {
    let mut text = String::from("# complete graph\n");
    for u in 0..n {
        for v in u + 1..n {
            text.push_str(&format!("{} {}\n", 100 + u, 100 + v));
        }
    }
    std::fs::write(path, text).unwrap();
}
