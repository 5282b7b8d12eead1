//! Undirected simple graphs, degree accounting and the random graph models
//! used by the simulation harness.

use std::collections::{HashMap, VecDeque};
use std::io::{BufRead, Write};

use rand::seq::index;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::rng::rng_from_seed;
use crate::scalar::Scalar;

/// Undirected simple graph on vertices `0..vertex_count`.
///
/// Edges are stored once as `(u, v)` with `u < v`, sorted. Adjacency lists are
/// kept sorted as well so that every traversal is deterministic.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Graph {
    vertex_count: usize,
    edges: Vec<(usize, usize)>,
    adjacency: Vec<Vec<usize>>,
}

impl Graph {
    /// Empty graph with `n` isolated vertices.
    pub fn empty(n: usize) -> Self {
        Self {
            vertex_count: n,
            edges: Vec::new(),
            adjacency: vec![Vec::new(); n],
        }
    }

    /// Builds a graph, rejecting self-loops, duplicate edges and out of range
    /// endpoints.
    pub fn from_edges(n: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        let mut list: Vec<(usize, usize)> = Vec::new();
        for (u, v) in edges {
            if u >= n || v >= n {
                return invalid(format!("edge ({u}, {v}) has an endpoint outside 0..{n}"));
            }
            if u == v {
                return invalid(format!("self-loop at vertex {u}"));
            }
            list.push((u.min(v), u.max(v)));
        }
        list.sort_unstable();
        if let Some(w) = list.windows(2).find(|w| w[0] == w[1]) {
            return invalid(format!("duplicate edge ({}, {})", w[0].0, w[0].1));
        }
        Ok(Self::from_sorted_unique(n, list))
    }

    fn from_sorted_unique(n: usize, edges: Vec<(usize, usize)>) -> Self {
        let mut adjacency = vec![Vec::new(); n];
        for &(u, v) in &edges {
            adjacency[u].push(v);
            adjacency[v].push(u);
        }
        for list in &mut adjacency {
            list.sort_unstable();
        }
        Self {
            vertex_count: n,
            edges,
            adjacency,
        }
    }

    pub fn complete(n: usize) -> Self {
        let edges = (0..n).flat_map(|u| (u + 1..n).map(move |v| (u, v))).collect();
        Self::from_sorted_unique(n, edges)
    }

    /// Star with center 0 and leaves `1..n`.
    pub fn star(n: usize) -> Self {
        Self::from_sorted_unique(n, (1..n).map(|v| (0, v)).collect())
    }

    pub fn path(n: usize) -> Self {
        Self::from_sorted_unique(n, (1..n).map(|v| (v - 1, v)).collect())
    }

    pub fn cycle(n: usize) -> Result<Self> {
        if n < 3 {
            return invalid("a cycle needs at least 3 vertices");
        }
        Self::from_edges(n, (0..n).map(|v| (v, (v + 1) % n)))
    }

    #[inline]
    pub fn vertex_count(&self) -> usize {
        self.vertex_count
    }

    #[inline]
    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    #[inline]
    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    #[inline]
    pub fn neighbors(&self, v: usize) -> &[usize] {
        &self.adjacency[v]
    }

    #[inline]
    pub fn degree(&self, v: usize) -> usize {
        self.adjacency[v].len()
    }

    pub fn degrees(&self) -> Vec<usize> {
        self.adjacency.iter().map(Vec::len).collect()
    }

    pub fn max_degree(&self) -> usize {
        self.adjacency.iter().map(Vec::len).max().unwrap_or(0)
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        self.adjacency.get(u).is_some_and(|list| list.binary_search(&v).is_ok())
    }

    /// Number of common neighbors of `u` and `v` (sorted-list merge).
    pub fn common_neighbors(&self, u: usize, v: usize) -> usize {
        let (a, b) = (&self.adjacency[u], &self.adjacency[v]);
        let (mut i, mut j, mut count) = (0, 0, 0);
        while i < a.len() && j < b.len() {
            match a[i].cmp(&b[j]) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => {
                    count += 1;
                    i += 1;
                    j += 1;
                }
            }
        }
        count
    }

    pub fn is_connected(&self) -> bool {
        if self.vertex_count == 0 {
            return true;
        }
        self.bfs_colors(0).iter().all(Option::is_some)
    }

    /// True when the graph admits a proper 2-coloring (every component).
    pub fn is_bipartite(&self) -> bool {
        let mut color: Vec<Option<bool>> = vec![None; self.vertex_count];
        for start in 0..self.vertex_count {
            if color[start].is_some() {
                continue;
            }
            color[start] = Some(false);
            let mut queue = VecDeque::from([start]);
            while let Some(u) = queue.pop_front() {
                let cu = color[u].unwrap();
                for &w in &self.adjacency[u] {
                    match color[w] {
                        None => {
                            color[w] = Some(!cu);
                            queue.push_back(w);
                        }
                        Some(cw) if cw == cu => return false,
                        Some(_) => {}
                    }
                }
            }
        }
        true
    }

    fn bfs_colors(&self, start: usize) -> Vec<Option<bool>> {
        let mut color = vec![None; self.vertex_count];
        color[start] = Some(false);
        let mut queue = VecDeque::from([start]);
        while let Some(u) = queue.pop_front() {
            let cu = color[u].unwrap();
            for &w in &self.adjacency[u] {
                if color[w].is_none() {
                    color[w] = Some(!cu);
                    queue.push_back(w);
                }
            }
        }
        color
    }

    /// Writes the edge list with dense indices. The header line records the
    /// vertex count so isolated vertices survive a round trip.
    pub fn write_edge_list<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "{VERTEX_HEADER}{}", self.vertex_count)?;
        for &(u, v) in &self.edges {
            writeln!(out, "{u} {v}")?;
        }
        Ok(())
    }

    pub fn to_edge_list_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_edge_list(&mut buf).expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("edge list is ASCII")
    }
}

const VERTEX_HEADER: &str = "# vertices: ";

/// Result of parsing an edge-list file.
#[derive(Debug, Clone)]
pub struct EdgeList {
    pub graph: Graph,
    /// Original label of each dense vertex index.
    pub labels: Vec<String>,
    pub skipped_self_loops: usize,
    pub duplicate_edges: usize,
}

impl EdgeList {
    /// Writes the `index,label` map persisted next to a remapped graph.
    pub fn write_vertex_map<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut writer = csv::Writer::from_writer(out);
        writer.write_record(["index", "label"])?;
        for (i, label) in self.labels.iter().enumerate() {
            writer.write_record([i.to_string(), label.clone()])?;
        }
        writer.flush()?;
        Ok(())
    }
}

/// Parses a whitespace separated edge list (`u v` per line, `#` comments).
///
/// Vertex tokens are remapped to dense indices in order of first appearance.
/// A `# vertices: N` header (as written by [`Graph::write_edge_list`]) instead
/// declares integer labels `0..N` and keeps them verbatim. Self-loops are
/// dropped and repeated edges (including reversed duplicates, common in
/// SNAP-style files) are merged; both are counted in the result.
pub fn parse_edge_list<R: BufRead>(input: R) -> Result<EdgeList> {
    let mut declared: Option<usize> = None;
    let mut index_of: HashMap<String, usize> = HashMap::new();
    let mut labels: Vec<String> = Vec::new();
    let mut edges: Vec<(usize, usize)> = Vec::new();
    let mut skipped_self_loops = 0;

    for (lineno, line) in input.lines().enumerate() {
        let line = line?;
        let trimmed = line.trim();
        if let Some(rest) = trimmed.strip_prefix(VERTEX_HEADER.trim_end()) {
            let n = rest.trim().parse::<usize>().map_err(|e| Error::Parse {
                line: lineno + 1,
                message: format!("bad vertex count: {e}"),
            })?;
            if !labels.is_empty() {
                return Err(Error::Parse {
                    line: lineno + 1,
                    message: "vertex header must precede edges".into(),
                });
            }
            declared = Some(n);
            labels = (0..n).map(|i| i.to_string()).collect();
            continue;
        }
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let mut tokens = trimmed.split_whitespace();
        let (a, b) = match (tokens.next(), tokens.next()) {
            (Some(a), Some(b)) => (a, b),
            _ => {
                return Err(Error::Parse {
                    line: lineno + 1,
                    message: "expected two vertex tokens".into(),
                })
            }
        };
        let mut resolve = |tok: &str| -> Result<usize> {
            match declared {
                Some(n) => {
                    let idx = tok.parse::<usize>().map_err(|_| Error::Parse {
                        line: lineno + 1,
                        message: format!("vertex '{tok}' is not an integer index"),
                    })?;
                    if idx >= n {
                        return Err(Error::Parse {
                            line: lineno + 1,
                            message: format!("vertex {idx} outside declared range 0..{n}"),
                        });
                    }
                    Ok(idx)
                }
                None => {
                    let next = labels.len();
                    Ok(*index_of.entry(tok.to_string()).or_insert_with(|| {
                        labels.push(tok.to_string());
                        next
                    }))
                }
            }
        };
        let u = resolve(a)?;
        let v = resolve(b)?;
        if u == v {
            skipped_self_loops += 1;
            continue;
        }
        edges.push((u.min(v), u.max(v)));
    }

    let before = edges.len();
    edges.sort_unstable();
    edges.dedup();
    let duplicate_edges = before - edges.len();
    let n = labels.len();
    Ok(EdgeList {
        graph: Graph::from_sorted_unique(n, edges),
        labels,
        skipped_self_loops,
        duplicate_edges,
    })
}

pub fn read_edge_list_file(path: &std::path::Path) -> Result<EdgeList> {
    let file = std::fs::File::open(path)?;
    parse_edge_list(std::io::BufReader::new(file))
}

/// Degree counts `N_0..N_M`, integer valued when observed and real valued
/// when estimated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Serialize", deserialize = "T: Deserialize<'de>"))]
pub struct DegreeCounts<T> {
    counts: Vec<T>,
}

impl<T: Scalar> DegreeCounts<T> {
    /// Wraps a count vector; entries must be non-negative and the vector
    /// non-empty.
    pub fn new(counts: Vec<T>) -> Result<Self> {
        if counts.is_empty() {
            return invalid("degree count vector must have at least one entry");
        }
        if let Some(i) = counts.iter().position(|c| !(*c >= T::zero())) {
            return invalid(format!("degree count at index {i} is negative or NaN"));
        }
        Ok(Self { counts })
    }

    pub fn zeros(max_degree: usize) -> Self {
        Self {
            counts: vec![T::zero(); max_degree + 1],
        }
    }

    pub fn from_usize(counts: &[usize]) -> Result<Self> {
        Self::new(counts.iter().map(|&c| T::of_usize(c)).collect())
    }

    /// Bound `M`; the vector has `M + 1` entries.
    #[inline]
    pub fn max_degree(&self) -> usize {
        self.counts.len() - 1
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.counts.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        false
    }

    #[inline]
    pub fn as_slice(&self) -> &[T] {
        &self.counts
    }

    pub fn into_vec(self) -> Vec<T> {
        self.counts
    }

    pub fn total(&self) -> T {
        self.counts.iter().fold(T::zero(), |a, &b| a + b)
    }

    /// Largest index with a positive count.
    pub fn support_max(&self) -> Option<usize> {
        self.counts.iter().rposition(|&c| c > T::zero())
    }

    /// Re-indexes to bound `max_degree`, padding with zeros. Truncation is only
    /// allowed over zero entries.
    pub fn resized(&self, max_degree: usize) -> Result<Self> {
        if let Some(top) = self.support_max() {
            if top > max_degree {
                return Err(Error::DegreeExceedsBound {
                    degree: top,
                    bound: max_degree,
                });
            }
        }
        let mut counts = self.counts.clone();
        counts.resize(max_degree + 1, T::zero());
        Ok(Self { counts })
    }

    /// Relative frequencies. Fails on an all-zero vector.
    pub fn distribution(&self) -> Result<Vec<T>> {
        let total = self.total();
        if !(total > T::zero()) {
            return invalid("cannot normalize an all-zero count vector");
        }
        Ok(self.counts.iter().map(|&c| c / total).collect())
    }
}

/// Counts vertices of each degree, `0..=max_degree`.
pub fn degree_counts<T: Scalar>(g: &Graph, max_degree: usize) -> Result<DegreeCounts<T>> {
    let mut counts = vec![0usize; max_degree + 1];
    for v in 0..g.vertex_count() {
        let d = g.degree(v);
        if d > max_degree {
            return Err(Error::DegreeExceedsBound {
                degree: d,
                bound: max_degree,
            });
        }
        counts[d] += 1;
    }
    DegreeCounts::from_usize(&counts)
}

fn pair_count(n: usize) -> u64 {
    let n = n as u64;
    n * n.saturating_sub(1) / 2
}

/// Inverse of the row-major enumeration of pairs `u < v`.
fn pair_from_index(n: usize, idx: u64) -> (usize, usize) {
    let n64 = n as u64;
    // Row u starts at offset u*(2n-u-1)/2.
    let offset = |u: u64| u * (2 * n64 - u - 1) / 2;
    let disc = ((2 * n64 - 1) as f64).powi(2) - 8.0 * idx as f64;
    let mut u = (((2 * n64 - 1) as f64 - disc.max(0.0).sqrt()) / 2.0).floor() as u64;
    u = u.min(n64.saturating_sub(2));
    while u > 0 && offset(u) > idx {
        u -= 1;
    }
    while u + 1 < n64 && offset(u + 1) <= idx {
        u += 1;
    }
    let v = idx - offset(u) + u + 1;
    (u as usize, v as usize)
}

/// Uniform random simple graph with exactly `n_e` edges (G(n, m)).
pub fn generate_er(n_v: usize, n_e: usize, seed: u64) -> Result<Graph> {
    let pairs = pair_count(n_v);
    if n_e as u64 > pairs {
        return invalid(format!(
            "{n_e} edges requested but only {pairs} vertex pairs exist on {n_v} vertices"
        ));
    }
    let mut rng = rng_from_seed(seed);
    let chosen = index::sample(&mut rng, pairs as usize, n_e);
    let mut edges: Vec<(usize, usize)> = chosen.into_iter().map(|i| pair_from_index(n_v, i as u64)).collect();
    edges.sort_unstable();
    Ok(Graph::from_sorted_unique(n_v, edges))
}

/// Indices in `0..len` kept by independent Bernoulli(`p`) trials, using
/// geometric skips so the cost scales with the number of successes.
pub(crate) fn bernoulli_indices(rng: &mut crate::rng::Rng, len: u64, p: f64) -> Vec<u64> {
    if p <= 0.0 || len == 0 {
        return Vec::new();
    }
    if p >= 1.0 {
        return (0..len).collect();
    }
    let log_q = (1.0 - p).ln();
    let mut out = Vec::new();
    let mut pos: u64 = 0;
    loop {
        let u: f64 = 1.0 - rng.random::<f64>(); // (0, 1]
        let skip = (u.ln() / log_q).floor();
        if !skip.is_finite() || skip >= (len - pos) as f64 {
            break;
        }
        pos += skip as u64;
        out.push(pos);
        pos += 1;
        if pos >= len {
            break;
        }
    }
    out
}

/// Bernoulli random graph G(n, p).
pub fn generate_gnp(n_v: usize, p: f64, seed: u64) -> Result<Graph> {
    if !(0.0..=1.0).contains(&p) {
        return invalid(format!("edge probability {p} outside [0, 1]"));
    }
    let mut rng = rng_from_seed(seed);
    let edges = bernoulli_indices(&mut rng, pair_count(n_v), p)
        .into_iter()
        .map(|i| pair_from_index(n_v, i))
        .collect();
    Ok(Graph::from_sorted_unique(n_v, edges))
}

/// Edge probabilities of the two-block model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlockProbabilities {
    pub within_first: f64,
    pub within_second: f64,
    pub between: f64,
}

/// Scales the ratio `(r11, r22, r12)` so the expected edge count of the two
/// equal blocks is `target_n_e`.
pub fn two_block_probabilities(n_v: usize, target_n_e: f64, ratio: (f64, f64, f64)) -> Result<BlockProbabilities> {
    if !n_v.is_multiple_of(2) {
        return invalid(format!("two-block model needs an even vertex count, got {n_v}"));
    }
    let (r11, r22, r12) = ratio;
    if !(r11 > 0.0 && r22 > 0.0 && r12 > 0.0) {
        return invalid("block ratio entries must be positive");
    }
    if !(target_n_e >= 0.0) {
        return invalid("target edge count must be non-negative");
    }
    let half = (n_v / 2) as f64;
    let within_pairs = half * (half - 1.0) / 2.0;
    let cross_pairs = half * half;
    let denom = (r11 + r22) * within_pairs + r12 * cross_pairs;
    if denom <= 0.0 {
        return invalid("no vertex pairs available");
    }
    let scale = target_n_e / denom;
    let probs = BlockProbabilities {
        within_first: r11 * scale,
        within_second: r22 * scale,
        between: r12 * scale,
    };
    for (name, p) in [
        ("within block 1", probs.within_first),
        ("within block 2", probs.within_second),
        ("between blocks", probs.between),
    ] {
        if p > 1.0 {
            return invalid(format!(
                "implied {name} edge probability {p} exceeds 1; lower the target edge count"
            ));
        }
    }
    Ok(probs)
}

/// Two-block stochastic block model. Block 1 is `0..n_v/2`.
pub fn generate_two_block(n_v: usize, target_n_e: f64, ratio: (f64, f64, f64), seed: u64) -> Result<Graph> {
    let probs = two_block_probabilities(n_v, target_n_e, ratio)?;
    let half = n_v / 2;
    let mut rng = rng_from_seed(seed);
    let mut edges = Vec::new();
    for i in bernoulli_indices(&mut rng, pair_count(half), probs.within_first) {
        edges.push(pair_from_index(half, i));
    }
    for i in bernoulli_indices(&mut rng, pair_count(half), probs.within_second) {
        let (u, v) = pair_from_index(half, i);
        edges.push((u + half, v + half));
    }
    let h = half as u64;
    for i in bernoulli_indices(&mut rng, h * h, probs.between) {
        edges.push(((i / h) as usize, (i % h) as usize + half));
    }
    edges.sort_unstable();
    Ok(Graph::from_sorted_unique(n_v, edges))
}
