//! Exact second moments of the observed degree counts on small graphs, and
//! Poisson-approximation diagnostics for induced subgraph sampling.
//!
//! The closed forms here are written in terms of the common-neighbor tensor
//! and are checked in tests against exhaustive enumeration over every vertex
//! subset. They are meant for graphs with at most a few hundred vertices.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{invalid, Result};
use crate::graph::Graph;
use crate::operator::ln_choose;
use crate::rng::{derive_seed, streams};
use crate::sampling::{check_rate, sample, Design, DesignParams};

/// Counts of ordered pairs `(u, v)` of distinct vertices, keyed by
/// `(deg u, deg v, common neighbors)`, split by whether `u` and `v` are
/// adjacent.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CommonNeighborTensor {
    nonadjacent: BTreeMap<(usize, usize, usize), u64>,
    adjacent: BTreeMap<(usize, usize, usize), u64>,
    degree_counts: Vec<u64>,
}

impl CommonNeighborTensor {
    pub fn n0(&self, k: usize, l: usize, t: usize) -> u64 {
        self.nonadjacent.get(&(k, l, t)).copied().unwrap_or(0)
    }

    pub fn n1(&self, k: usize, l: usize, t: usize) -> u64 {
        self.adjacent.get(&(k, l, t)).copied().unwrap_or(0)
    }

    /// Nonzero nonadjacent entries as `((k, l, t), count)`.
    pub fn nonadjacent(&self) -> impl Iterator<Item = ((usize, usize, usize), u64)> + '_ {
        self.nonadjacent.iter().map(|(&key, &c)| (key, c))
    }

    /// Nonzero adjacent entries as `((k, l, t), count)`.
    pub fn adjacent(&self) -> impl Iterator<Item = ((usize, usize, usize), u64)> + '_ {
        self.adjacent.iter().map(|(&key, &c)| (key, c))
    }

    /// Number of vertices of degree `k`.
    pub fn degree_count(&self, k: usize) -> u64 {
        self.degree_counts.get(k).copied().unwrap_or(0)
    }

    pub fn total_pairs(&self) -> u64 {
        self.nonadjacent.values().chain(self.adjacent.values()).sum()
    }
}

pub fn common_neighbor_tensor(g: &Graph) -> CommonNeighborTensor {
    let n = g.vertex_count();
    let degrees = g.degrees();
    let mut tensor = CommonNeighborTensor {
        degree_counts: vec![0; g.max_degree() + 1],
        ..Default::default()
    };
    for &d in &degrees {
        tensor.degree_counts[d] += 1;
    }
    for u in 0..n {
        for v in (u + 1)..n {
            let t = g.common_neighbors(u, v);
            let map = if g.has_edge(u, v) {
                &mut tensor.adjacent
            } else {
                &mut tensor.nonadjacent
            };
            *map.entry((degrees[u], degrees[v], t)).or_insert(0) += 1;
            *map.entry((degrees[v], degrees[u], t)).or_insert(0) += 1;
        }
    }
    tensor
}

/// `Cov(N*_k, N*_l)` under one-wave snowball sampling with seed rate `p`.
///
/// A vertex of degree `k` is missed when none of its `k + 1` closed-neighborhood
/// vertices is a seed. For `k = l` the diagonal part gives
/// `N_k P(k,k) - N_k [1 - 2 q^{k+1}]` together with `-N_k² q^{2k+2}`.
pub fn snowball_cov(g: &Graph, p: f64, k: usize, l: usize) -> Result<f64> {
    snowball_cov_from(&common_neighbor_tensor(g), p, k, l)
}

pub fn snowball_cov_from(tensor: &CommonNeighborTensor, p: f64, k: usize, l: usize) -> Result<f64> {
    let p = check_open_rate(p)?;
    let q = 1.0 - p;
    let (nk, nl) = (tensor.degree_count(k) as f64, tensor.degree_count(l) as f64);
    let mut total = 0.0;
    for t in 0..=k.min(l) {
        let n1 = tensor.n1(k, l, t) as f64;
        if n1 > 0.0 {
            total += n1 * q.powi((k + l - t) as i32);
        }
        let n0 = tensor.n0(k, l, t) as f64;
        if n0 > 0.0 {
            total += n0 * q.powi((k + l - t + 2) as i32);
        }
    }
    let miss_both = q.powi((k + l + 2) as i32);
    if k == l {
        let included = 1.0 - q.powi(k as i32 + 1);
        total += nk * included - nk * nk * miss_both - nk * (1.0 - 2.0 * q.powi(k as i32 + 1));
    } else {
        total -= nk * nl * miss_both;
    }
    Ok(total)
}

/// `Var(N*_k)` under induced subgraph sampling with rate `p`.
///
/// Written as `Σ_i N_i P(k,i) + Σ_{u≠v} P(both observed with degree k) -
/// (Σ_i N_i P(k,i))²`. For a nonadjacent pair with degrees `(r, s)` and `t`
/// common neighbors, of which `m` are sampled, the joint probability carries
/// `p^{2k-m+2} q^{(r+s-t)-(2k-m)}`; for an adjacent pair the shared edge
/// supplies one observed neighbor to each and the power of `p` is `2k-m`.
pub fn induced_var(g: &Graph, p: f64, k: usize) -> Result<f64> {
    induced_var_from(&common_neighbor_tensor(g), p, k)
}

pub fn induced_var_from(tensor: &CommonNeighborTensor, p: f64, k: usize) -> Result<f64> {
    let p = check_open_rate(p)?;
    let (lp, lq) = (p.ln(), (1.0 - p).ln());
    let term = |ln_binoms: f64, p_pow: usize, q_pow: usize| (ln_binoms + p_pow as f64 * lp + q_pow as f64 * lq).exp();

    let mut mean = 0.0;
    for (i, &count) in tensor.degree_counts.iter().enumerate() {
        if i >= k && count > 0 {
            mean += count as f64 * term(ln_choose(i, k), k + 1, i - k);
        }
    }

    let mut joint = 0.0;
    for ((r, s, t), count) in tensor.nonadjacent() {
        let mut sum = 0.0;
        for m in 0..=t.min(k) {
            let (a, b) = (r - t, s - t);
            if k - m > a || k - m > b {
                continue;
            }
            let binoms = ln_choose(t, m) + ln_choose(a, k - m) + ln_choose(b, k - m);
            sum += term(binoms, 2 * k - m + 2, (r + s - t) - (2 * k - m));
        }
        joint += count as f64 * sum;
    }
    if k >= 1 {
        for ((r, s, t), count) in tensor.adjacent() {
            let mut sum = 0.0;
            for m in 0..=t.min(k - 1) {
                let (a, b) = (r - t - 1, s - t - 1);
                if k - m - 1 > a || k - m - 1 > b {
                    continue;
                }
                let binoms = ln_choose(t, m) + ln_choose(a, k - m - 1) + ln_choose(b, k - m - 1);
                sum += term(binoms, 2 * k - m, (r + s - t) - (2 * k - m));
            }
            joint += count as f64 * sum;
        }
    }
    Ok(mean + joint - mean * mean)
}

fn check_open_rate(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return invalid(format!("rate must lie strictly between 0 and 1, got {p}"));
    }
    Ok(p)
}

/// Mean vector and covariance matrix of the observed counts `N*_0..=N*_M`.
#[derive(Debug, Clone, PartialEq)]
pub struct CountMoments {
    pub mean: Vec<f64>,
    pub covariance: Vec<Vec<f64>>,
}

/// Largest graph accepted by [`enumerate_moments`].
pub const ENUMERATION_LIMIT: usize = 20;

/// Exact moments of `N*` for vertex-based Bernoulli designs by summing over
/// all `2^{n_v}` seed sets. Supports ego, snowball and induced sampling.
pub fn enumerate_moments(g: &Graph, design: Design, p: f64) -> Result<CountMoments> {
    let n = g.vertex_count();
    if n > ENUMERATION_LIMIT {
        return invalid(format!("enumeration is limited to {ENUMERATION_LIMIT} vertices"));
    }
    if !matches!(design, Design::Ego | Design::Snowball | Design::Induced) {
        return invalid(format!("enumeration does not cover {design} sampling"));
    }
    let p = check_rate(p)?;
    let dim = g.max_degree() + 1;
    let mut first = vec![0.0; dim];
    let mut second = vec![vec![0.0; dim]; dim];
    let mut counts = vec![0usize; dim];
    for mask in 0u64..(1u64 << n) {
        let size = mask.count_ones() as i32;
        let weight = p.powi(size) * (1.0 - p).powi(n as i32 - size);
        if weight == 0.0 {
            continue;
        }
        counts.iter_mut().for_each(|c| *c = 0);
        let seeded = |v: usize| mask >> v & 1 == 1;
        for v in 0..n {
            match design {
                Design::Ego if seeded(v) => counts[g.degree(v)] += 1,
                Design::Snowball if seeded(v) || g.neighbors(v).iter().any(|&w| seeded(w)) => counts[g.degree(v)] += 1,
                Design::Induced if seeded(v) => counts[g.neighbors(v).iter().filter(|&&w| seeded(w)).count()] += 1,
                _ => {}
            }
        }
        for i in 0..dim {
            if counts[i] == 0 {
                continue;
            }
            let ci = counts[i] as f64;
            first[i] += weight * ci;
            for j in 0..dim {
                second[i][j] += weight * ci * counts[j] as f64;
            }
        }
    }
    let covariance = (0..dim)
        .map(|i| (0..dim).map(|j| second[i][j] - first[i] * first[j]).collect())
        .collect();
    Ok(CountMoments {
        mean: first,
        covariance,
    })
}

/// `P(Bin(n, p) >= k)`.
pub fn binomial_upper_tail(n: usize, p: f64, k: usize) -> f64 {
    if k == 0 {
        return 1.0;
    }
    if k > n || p <= 0.0 {
        return 0.0;
    }
    if p >= 1.0 {
        return 1.0;
    }
    let (lp, lq) = (p.ln(), (1.0 - p).ln());
    (k..=n)
        .map(|j| (ln_choose(n, j) + j as f64 * lp + (n - j) as f64 * lq).exp())
        .sum::<f64>()
        .min(1.0)
}

/// Poisson pmf at `x` with mean `lambda`.
pub fn poisson_pmf(lambda: f64, x: usize) -> f64 {
    if lambda <= 0.0 {
        return if x == 0 { 1.0 } else { 0.0 };
    }
    (x as f64 * lambda.ln() - lambda - ln_gamma(x as f64 + 1.0)).exp()
}

/// Total-variation distance between the empirical law of `samples` and
/// Poisson(`lambda`).
pub fn empirical_poisson_tv(samples: &[usize], lambda: f64) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    let hi = samples.iter().copied().max().unwrap_or(0);
    let mut hist = vec![0usize; hi + 1];
    for &s in samples {
        hist[s] += 1;
    }
    let n = samples.len() as f64;
    let mut tv = 0.0;
    let mut covered = 0.0;
    for (x, &c) in hist.iter().enumerate() {
        let pmf = poisson_pmf(lambda, x);
        covered += pmf;
        tv += (c as f64 / n - pmf).abs();
    }
    // Poisson mass above the largest observation
    tv += (1.0 - covered).max(0.0);
    0.5 * tv
}

/// Smallest `x` with Poisson(`lambda`) CDF at least `prob`.
pub fn poisson_quantile(lambda: f64, prob: f64) -> usize {
    let mut cdf = 0.0;
    let mut x = 0;
    loop {
        cdf += poisson_pmf(lambda, x);
        if cdf >= prob || x > 10_000 + (lambda * 10.0) as usize {
            return x;
        }
        x += 1;
    }
}

/// Empirical against Poisson quantiles at levels `0.01, 0.02, ..., 0.99`.
pub fn poisson_qq(samples: &[usize], lambda: f64) -> Vec<(f64, f64)> {
    if samples.is_empty() {
        return Vec::new();
    }
    let mut sorted = samples.to_vec();
    sorted.sort_unstable();
    let n = sorted.len();
    (1..100)
        .map(|j| {
            let prob = j as f64 / 100.0;
            let idx = ((prob * n as f64).ceil() as usize).clamp(1, n) - 1;
            (poisson_quantile(lambda, prob) as f64, sorted[idx] as f64)
        })
        .collect()
}

/// Comparison of Monte Carlo draws of one count against a Poisson law.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoissonFit {
    pub poisson_mean: f64,
    pub sample_mean: f64,
    pub sample_variance: f64,
    pub tv_distance: f64,
    /// `(poisson quantile, empirical quantile)` pairs.
    pub qq: Vec<(f64, f64)>,
}

pub fn poisson_fit(samples: &[usize], lambda: f64) -> PoissonFit {
    let n = samples.len() as f64;
    let mean = samples.iter().map(|&s| s as f64).sum::<f64>() / n;
    let var = if samples.len() > 1 {
        samples.iter().map(|&s| (s as f64 - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    PoissonFit {
        poisson_mean: lambda,
        sample_mean: mean,
        sample_variance: var,
        tv_distance: empirical_poisson_tv(samples, lambda),
        qq: poisson_qq(samples, lambda),
    }
}

/// Chen–Stein diagnostics for the cumulative count `Ñ*_k`, the number of
/// sampled vertices with observed degree at least `k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoissonDiagnostics {
    pub k: usize,
    pub p: f64,
    pub trials: usize,
    pub seed: u64,
    /// `λ_k = Σ_v π_{k,v}`.
    pub lambda: f64,
    /// `Σ_v π_{k,v}²`.
    pub sum_pi_squared: f64,
    /// Monte Carlo mean of `Ñ*_k`.
    pub mean_estimate: f64,
    /// Monte Carlo variance of `Ñ*_k`.
    pub variance_estimate: f64,
    /// `(1 - e^{-λ})/λ · [Var - λ + 2 Σ π²]`.
    pub bound: f64,
    pub tv_distance: f64,
    pub qq: Vec<(f64, f64)>,
}

/// Minimum number of Monte Carlo trials for [`poisson_diagnostics`].
pub const MIN_POISSON_TRIALS: usize = 1000;

pub fn poisson_diagnostics(g: &Graph, p: f64, k: usize, trials: usize, seed: u64) -> Result<PoissonDiagnostics> {
    let p = check_rate(p)?;
    if trials < MIN_POISSON_TRIALS {
        return invalid(format!("at least {MIN_POISSON_TRIALS} trials are required"));
    }
    let pis: Vec<f64> = g
        .degrees()
        .into_iter()
        .filter(|&d| d >= k)
        .map(|d| p * binomial_upper_tail(d, p, k))
        .collect();
    let lambda: f64 = pis.iter().sum();
    let sum_pi_squared: f64 = pis.iter().map(|x| x * x).sum();
    let empty = PoissonDiagnostics {
        k,
        p,
        trials,
        seed,
        lambda,
        sum_pi_squared,
        mean_estimate: 0.0,
        variance_estimate: 0.0,
        bound: 0.0,
        tv_distance: 0.0,
        qq: Vec::new(),
    };
    if lambda == 0.0 {
        return Ok(empty);
    }
    let draws = induced_draws(g, p, trials, seed, |observed| {
        observed.iter().filter(|&&d| d >= k).count()
    })?;
    let fit = poisson_fit(&draws, lambda);
    let bound = (1.0 - (-lambda).exp()) / lambda * (fit.sample_variance - lambda + 2.0 * sum_pi_squared);
    Ok(PoissonDiagnostics {
        mean_estimate: fit.sample_mean,
        variance_estimate: fit.sample_variance,
        bound,
        tv_distance: fit.tv_distance,
        qq: fit.qq,
        ..empty
    })
}

/// Draws of the observed count vector under induced sampling, one per trial,
/// truncated or padded to length `max_degree + 1`.
pub fn induced_count_draws(g: &Graph, p: f64, max_degree: usize, trials: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    induced_draws(g, p, trials, seed, |observed| {
        let mut counts = vec![0usize; max_degree + 1];
        for &d in observed {
            if d <= max_degree {
                counts[d] += 1;
            }
        }
        counts
    })
}

fn induced_draws<R: Send>(
    g: &Graph,
    p: f64,
    trials: usize,
    seed: u64,
    summary: impl Fn(&[usize]) -> R + Sync,
) -> Result<Vec<R>> {
    (0..trials)
        .into_par_iter()
        .map(|t| {
            let s = sample(
                Design::Induced,
                g,
                DesignParams::Rate(p),
                derive_seed(seed, streams::POISSON_TRIALS, t as u64),
            )?;
            Ok(summary(&s.observed_degrees))
        })
        .collect()
}
