//! The five network sampling designs and the Monte Carlo harness that checks
//! operator columns against them.

use std::fmt;
use std::str::FromStr;

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::graph::{bernoulli_indices, DegreeCounts, Graph};
use crate::rng::{derive_seed, rng_from_seed, streams};
use crate::scalar::Scalar;

/// Network sampling design.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Design {
    /// Bernoulli seeds, all incident edges observed.
    Ego,
    /// Ego seeds plus one wave of neighbors, all incident edges observed.
    #[serde(rename = "snowball1")]
    Snowball,
    /// Bernoulli vertices, edges among them observed.
    Induced,
    /// Bernoulli edges, their endpoints observed.
    Incident,
    /// Simple random walk until an edge budget is met.
    RandomWalk,
}

impl Design {
    pub const ALL: [Design; 5] = [
        Design::Ego,
        Design::Snowball,
        Design::Induced,
        Design::Incident,
        Design::RandomWalk,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Design::Ego => "ego",
            Design::Snowball => "snowball1",
            Design::Induced => "induced",
            Design::Incident => "incident",
            Design::RandomWalk => "random_walk",
        }
    }

    /// Designs whose sample never contains isolated vertices.
    pub fn observes_edges_only(self) -> bool {
        matches!(self, Design::Incident | Design::RandomWalk)
    }
}

impl fmt::Display for Design {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Design {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ego" => Ok(Design::Ego),
            "snowball" | "snowball1" => Ok(Design::Snowball),
            "induced" => Ok(Design::Induced),
            "incident" => Ok(Design::Incident),
            "random_walk" | "random-walk" | "rw" => Ok(Design::RandomWalk),
            other => invalid(format!("unknown design '{other}'")),
        }
    }
}

/// Design parameters: a Bernoulli rate, or the distinct-edge budget of a
/// random walk.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DesignParams {
    Rate(f64),
    EdgeBudget(usize),
}

impl DesignParams {
    pub fn rate(self) -> Option<f64> {
        match self {
            DesignParams::Rate(p) => Some(p),
            DesignParams::EdgeBudget(_) => None,
        }
    }
}

pub(crate) fn check_rate(p: f64) -> Result<f64> {
    if p > 0.0 && p <= 1.0 {
        Ok(p)
    } else {
        invalid(format!("sampling rate {p} outside (0, 1]"))
    }
}

/// Observed subgraph `G* = (V*, E*)` and its degree counts.
#[derive(Debug, Clone)]
pub struct SampleResult {
    pub design: Design,
    pub params: DesignParams,
    pub seed: u64,
    /// `E*` on the original vertex indices.
    pub sampled_graph: Graph,
    /// `V*`, sorted.
    pub included_vertices: Vec<usize>,
    /// Observed degree of each vertex in `included_vertices`.
    pub observed_degrees: Vec<usize>,
    /// `N*_0..N*_m` where `m` is the largest observed degree.
    pub observed_counts: Vec<usize>,
}

/// Persisted form of a [`SampleResult`] (the sampled edges go to a separate
/// edge-list file).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub design: Design,
    pub params: DesignParams,
    pub seed: u64,
    pub n_v: usize,
    pub n_star_v: usize,
    pub n_star_e: usize,
    /// Edge count of the true graph, needed by the random-walk operator.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_e: Option<usize>,
    pub observed_counts: Vec<usize>,
}

impl SampleResult {
    pub fn n_star_v(&self) -> usize {
        self.included_vertices.len()
    }

    pub fn n_star_e(&self) -> usize {
        self.sampled_graph.edge_count()
    }

    pub fn max_observed_degree(&self) -> usize {
        self.observed_counts.len() - 1
    }

    /// Observed counts padded to bound `max_degree`.
    pub fn counts<T: Scalar>(&self, max_degree: usize) -> Result<DegreeCounts<T>> {
        DegreeCounts::from_usize(&self.observed_counts)?.resized(max_degree)
    }

    pub fn record(&self, true_graph: &Graph) -> SampleRecord {
        SampleRecord {
            design: self.design,
            params: self.params,
            seed: self.seed,
            n_v: true_graph.vertex_count(),
            n_star_v: self.n_star_v(),
            n_star_e: self.n_star_e(),
            n_e: Some(true_graph.edge_count()),
            observed_counts: self.observed_counts.clone(),
        }
    }
}

fn histogram(values: &[usize]) -> Vec<usize> {
    let top = values.iter().copied().max().unwrap_or(0);
    let mut counts = vec![0; top + 1];
    for &v in values {
        counts[v] += 1;
    }
    counts
}

fn edges_touching(g: &Graph, mask: &[bool]) -> Vec<(usize, usize)> {
    g.edges().iter().copied().filter(|&(u, v)| mask[u] || mask[v]).collect()
}

fn finish(
    design: Design,
    params: DesignParams,
    seed: u64,
    n: usize,
    sampled_edges: Vec<(usize, usize)>,
    included: Vec<usize>,
    observed_degree: impl Fn(&Graph, usize) -> usize,
) -> Result<SampleResult> {
    let sampled_graph = Graph::from_edges(n, sampled_edges)?;
    let observed_degrees: Vec<usize> = included.iter().map(|&v| observed_degree(&sampled_graph, v)).collect();
    let observed_counts = histogram(&observed_degrees);
    Ok(SampleResult {
        design,
        params,
        seed,
        sampled_graph,
        included_vertices: included,
        observed_degrees,
        observed_counts,
    })
}

/// Draws one sample of `g` under `design`.
///
/// Bernoulli designs take [`DesignParams::Rate`]; the random walk takes
/// [`DesignParams::EdgeBudget`] and requires a connected, non-bipartite graph.
/// The walk starts from a degree-proportional vertex (its stationary law) and
/// stops once the budget of distinct edges has been traversed.
pub fn sample(design: Design, g: &Graph, params: DesignParams, seed: u64) -> Result<SampleResult> {
    let n = g.vertex_count();
    let mut rng = rng_from_seed(seed);
    match (design, params) {
        (Design::Ego | Design::Snowball | Design::Induced, DesignParams::Rate(p)) => {
            check_rate(p)?;
            let seeds = bernoulli_indices(&mut rng, n as u64, p);
            let mut selected = vec![false; n];
            for &s in &seeds {
                selected[s as usize] = true;
            }
            match design {
                Design::Ego => {
                    let included = seeds.iter().map(|&s| s as usize).collect();
                    finish(
                        design,
                        params,
                        seed,
                        n,
                        edges_touching(g, &selected),
                        included,
                        |_, v| g.degree(v),
                    )
                }
                Design::Snowball => {
                    let mut member = selected.clone();
                    for &s in &seeds {
                        for &w in g.neighbors(s as usize) {
                            member[w] = true;
                        }
                    }
                    let included = (0..n).filter(|&v| member[v]).collect();
                    finish(design, params, seed, n, edges_touching(g, &member), included, |_, v| {
                        g.degree(v)
                    })
                }
                _ => {
                    let edges = g
                        .edges()
                        .iter()
                        .copied()
                        .filter(|&(u, v)| selected[u] && selected[v])
                        .collect();
                    let included = seeds.iter().map(|&s| s as usize).collect();
                    finish(design, params, seed, n, edges, included, |gs, v| gs.degree(v))
                }
            }
        }
        (Design::Incident, DesignParams::Rate(p)) => {
            check_rate(p)?;
            let chosen = bernoulli_indices(&mut rng, g.edge_count() as u64, p);
            let edges: Vec<(usize, usize)> = chosen.iter().map(|&i| g.edges()[i as usize]).collect();
            let mut member = vec![false; n];
            for &(u, v) in &edges {
                member[u] = true;
                member[v] = true;
            }
            let included = (0..n).filter(|&v| member[v]).collect();
            finish(design, params, seed, n, edges, included, |gs, v| gs.degree(v))
        }
        (Design::RandomWalk, DesignParams::EdgeBudget(budget)) => {
            if budget == 0 || budget > g.edge_count() {
                return invalid(format!("edge budget {budget} outside [1, {}]", g.edge_count()));
            }
            if !g.is_connected() {
                return Err(Error::GraphPrecondition(
                    "random walk sampling needs a connected graph".into(),
                ));
            }
            if g.is_bipartite() {
                return Err(Error::GraphPrecondition(
                    "random walk sampling needs a non-bipartite graph".into(),
                ));
            }
            let edges = g.edges();
            let (a, b) = edges[rng.random_range(0..edges.len())];
            let mut current = if rng.random::<bool>() { a } else { b };
            let mut visited = vec![false; edges.len()];
            let mut collected = Vec::with_capacity(budget);
            while collected.len() < budget {
                let nbrs = g.neighbors(current);
                let next = nbrs[rng.random_range(0..nbrs.len())];
                let key = (current.min(next), current.max(next));
                let id = edges.binary_search(&key).expect("walk follows graph edges");
                if !visited[id] {
                    visited[id] = true;
                    collected.push(key);
                }
                current = next;
            }
            let mut member = vec![false; n];
            for &(u, v) in &collected {
                member[u] = true;
                member[v] = true;
            }
            let included = (0..n).filter(|&v| member[v]).collect();
            finish(design, params, seed, n, collected, included, |gs, v| gs.degree(v))
        }
        (d, p) => invalid(format!("parameters {p:?} do not apply to design {d}")),
    }
}

/// Empirical law of the observed degree of the true-degree-`k` vertices.
///
/// Entry `i` is the fraction of (trial, vertex) pairs, over all vertices of
/// true degree `k`, in which the vertex was included and observed with degree
/// `i`. This estimates column `k` of the sampling operator. Trials use derived
/// seeds and run in parallel.
pub fn empirical_inclusion_check(
    design: Design,
    g: &Graph,
    params: DesignParams,
    k: usize,
    trials: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    if trials == 0 {
        return invalid("at least one trial is required");
    }
    let class: Vec<usize> = (0..g.vertex_count()).filter(|&v| g.degree(v) == k).collect();
    if class.is_empty() {
        return invalid(format!("graph has no vertex of degree {k}"));
    }
    let mut in_class = vec![false; g.vertex_count()];
    for &v in &class {
        in_class[v] = true;
    }
    let totals = (0..trials)
        .into_par_iter()
        .map(|t| -> Result<Vec<u64>> {
            let s = sample(
                design,
                g,
                params,
                derive_seed(seed, streams::INCLUSION_TRIALS, t as u64),
            )?;
            let mut counts = vec![0u64; k + 1];
            for (&v, &d) in s.included_vertices.iter().zip(&s.observed_degrees) {
                if in_class[v] {
                    counts[d] += 1;
                }
            }
            Ok(counts)
        })
        .try_reduce(
            || vec![0u64; k + 1],
            |mut a, b| {
                a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
                Ok(a)
            },
        )?;
    let denom = (trials * class.len()) as f64;
    Ok(totals.into_iter().map(|c| c as f64 / denom).collect())
}

/// Expected fraction of vertices included by one-wave snowball sampling with
/// seed rate `p`.
pub fn snowball_expected_fraction(g: &Graph, p: f64) -> f64 {
    let n = g.vertex_count();
    if n == 0 {
        return 0.0;
    }
    let q = 1.0 - p;
    let sum: f64 = (0..n).map(|v| 1.0 - q.powi(g.degree(v) as i32 + 1)).sum();
    sum / n as f64
}

/// Seed rate whose expected snowball coverage `E|V*| / n_v` equals `fraction`
/// (bisection; coverage is increasing in the rate).
pub fn snowball_rate_for_fraction(g: &Graph, fraction: f64) -> Result<f64> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return invalid(format!("target fraction {fraction} outside (0, 1]"));
    }
    if g.vertex_count() == 0 {
        return invalid("empty graph");
    }
    if fraction >= 1.0 {
        return Ok(1.0);
    }
    let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if snowball_expected_fraction(g, mid) < fraction {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-15 {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}
