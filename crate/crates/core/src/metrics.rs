//! Kolmogorov–Smirnov distance between degree distributions, moments, and
//! epidemic-threshold bounds `1/U <= τ_c <= 1/√M2 <= 1/M1`.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::graph::Graph;
use crate::scalar::Scalar;

/// `max_x |F1(x) - F2(x)|` after normalizing both vectors and padding the
/// shorter with zeros.
pub fn ks_d_statistic<T: Scalar>(f1: &[T], f2: &[T]) -> Result<T> {
    let z1 = checked_total(f1)?;
    let z2 = checked_total(f2)?;
    let len = f1.len().max(f2.len());
    let (mut c1, mut c2, mut d) = (T::zero(), T::zero(), T::zero());
    for i in 0..len {
        c1 += f1.get(i).copied().unwrap_or_else(T::zero) / z1;
        c2 += f2.get(i).copied().unwrap_or_else(T::zero) / z2;
        d = d.max((c1 - c2).abs());
    }
    Ok(d.min(T::one()))
}

fn checked_total<T: Scalar>(f: &[T]) -> Result<T> {
    if f.iter().any(|&x| !(x >= T::zero())) {
        return invalid("distribution entries must be non-negative");
    }
    let total = f.iter().fold(T::zero(), |a, &b| a + b);
    if !(total > T::zero()) {
        return invalid("distribution has zero total mass");
    }
    Ok(total)
}

/// Raw moments `(M1, M2)` of the distribution proportional to `counts`.
pub fn degree_moments<T: Scalar>(counts: &[T]) -> Result<(T, T)> {
    let total = checked_total(counts)?;
    let (mut m1, mut m2) = (T::zero(), T::zero());
    for (k, &c) in counts.iter().enumerate() {
        let k = T::of_usize(k);
        m1 += k * c / total;
        m2 += k * k * c / total;
    }
    Ok((m1, m2))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundsReport {
    pub n_v: f64,
    pub n_e: f64,
    pub m1: f64,
    pub m2: f64,
    /// `(2 n_e (n_v - 1) / n_v)^{1/2}`.
    pub u: f64,
    pub inv_u: f64,
    pub inv_sqrt_m2: f64,
    pub inv_m1: f64,
    pub lambda1: Option<f64>,
    pub inv_lambda1: Option<f64>,
    /// Set when `M1 = 0`, in which case the upper bounds are infinite.
    pub degenerate: bool,
}

impl BoundsReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// One row per reference line: `quantity,value,threshold_bound`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["quantity", "value", "threshold_bound"])?;
        let mut rows = vec![
            ("m1", self.m1, self.inv_m1),
            ("sqrt_m2", self.m2.sqrt(), self.inv_sqrt_m2),
            ("u", self.u, self.inv_u),
        ];
        if let (Some(l), Some(il)) = (self.lambda1, self.inv_lambda1) {
            rows.insert(2, ("lambda1", l, il));
        }
        for (name, v, b) in rows {
            w.write_record([name.to_string(), v.to_string(), b.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Attaches the spectral radius of the true graph.
    pub fn with_lambda1(mut self, lambda1: f64) -> Self {
        self.lambda1 = Some(lambda1);
        self.inv_lambda1 = Some(1.0 / lambda1);
        self
    }
}

/// Bounds from a (possibly real-valued) count vector. `n_e` defaults to half
/// the degree sum.
pub fn epidemic_bounds<T: Scalar>(counts: &[T], n_e: Option<f64>) -> Result<BoundsReport> {
    let (m1, m2) = degree_moments(counts)?;
    let (m1, m2) = (m1.as_f64(), m2.as_f64());
    let n_v = checked_total(counts)?.as_f64();
    let n_e = match n_e {
        Some(e) if e >= 0.0 => e,
        Some(_) => return invalid("edge count must be non-negative"),
        None => m1 * n_v / 2.0,
    };
    let u = (2.0 * n_e * (n_v - 1.0) / n_v).sqrt();
    Ok(BoundsReport {
        n_v,
        n_e,
        m1,
        m2,
        u,
        inv_u: 1.0 / u,
        inv_sqrt_m2: 1.0 / m2.sqrt(),
        inv_m1: 1.0 / m1,
        lambda1: None,
        inv_lambda1: None,
        degenerate: m1 == 0.0,
    })
}

/// Bounds of a full graph, including its spectral radius.
pub fn graph_bounds(g: &Graph) -> Result<BoundsReport> {
    let mut counts = vec![0.0f64; g.max_degree() + 1];
    for d in g.degrees() {
        counts[d] += 1.0;
    }
    let report = epidemic_bounds(&counts, Some(g.edge_count() as f64))?;
    Ok(report.with_lambda1(largest_adjacency_eigenvalue(g, 1e-10)?))
}

/// Iteration cap of [`largest_adjacency_eigenvalue`].
pub const POWER_ITERATION_CAP: usize = 100_000;

/// Spectral radius of the adjacency matrix by power iteration on `A + I`.
/// The shift keeps bipartite graphs from oscillating; the start vector is all
/// ones plus a small index-linear tilt. Regular graphs return their degree
/// exactly.
pub fn largest_adjacency_eigenvalue(g: &Graph, tol: f64) -> Result<f64> {
    let n = g.vertex_count();
    if n == 0 {
        return invalid("graph has no vertices");
    }
    if g.edge_count() == 0 {
        return Ok(0.0);
    }
    if !(tol > 0.0) {
        return invalid("tolerance must be positive");
    }
    let d0 = g.degree(0);
    if (1..n).all(|v| g.degree(v) == d0) {
        return Ok(d0 as f64);
    }
    let mut x: Vec<f64> = (0..n).map(|i| 1.0 + 1e-3 * i as f64 / n as f64).collect();
    normalize(&mut x);
    let mut y = vec![0.0; n];
    let mut last = f64::NAN;
    for _ in 0..POWER_ITERATION_CAP {
        for v in 0..n {
            y[v] = x[v] + g.neighbors(v).iter().map(|&w| x[w]).sum::<f64>();
        }
        let rayleigh: f64 = x.iter().zip(&y).map(|(a, b)| a * b).sum::<f64>() - 1.0;
        normalize(&mut y);
        std::mem::swap(&mut x, &mut y);
        if (rayleigh - last).abs() <= tol * rayleigh.abs().max(1.0) {
            return Ok(rayleigh);
        }
        last = rayleigh;
    }
    Err(Error::NotConverged {
        iterations: POWER_ITERATION_CAP,
    })
}

fn normalize(x: &mut [f64]) {
    let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    x.iter_mut().for_each(|v| *v /= norm);
}
