use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{DegreeBound, DesignSpec, EstimatorSettings, GraphSource, RunConfig};
use super::{PipelineError, Stage};
use crate::error::{Error, Result};
use crate::estimator::{build_penalty, PwlsProblem, QPSolution};
use crate::graph::{generate_er, generate_two_block, read_edge_list_file, EdgeList, Graph};
use crate::metrics::ks_d_statistic;
use crate::operator::{OperatorParams, SamplingOperator};
use crate::rng::{derive_seed, streams};
use crate::sampling::{sample, snowball_rate_for_fraction, Design, DesignParams, SampleResult};
use crate::smoothing::{build_covariance, smooth_counts, CovarianceApprox};
use crate::sure::{select_lambda, SureConfig, SureCurve};

/// The true graph of a run, with vertex labels when read from a file.
#[derive(Debug, Clone)]
pub struct LoadedGraph {
    pub graph: Graph,
    pub edge_list: Option<EdgeList>,
}

pub fn load_graph(source: &GraphSource, seed: u64) -> Result<LoadedGraph, PipelineError> {
    let graph_seed = derive_seed(seed, streams::SIM_GRAPH, 0);
    let loaded = match source {
        GraphSource::EdgeList { path } => read_edge_list_file(path).map(|el| LoadedGraph {
            graph: el.graph.clone(),
            edge_list: Some(el),
        }),
        GraphSource::ErdosRenyi { n_v, n_e } => generate_er(*n_v, *n_e, graph_seed).map(plain),
        GraphSource::TwoBlock { n_v, n_e, ratio } => {
            generate_two_block(*n_v, *n_e as f64, *ratio, graph_seed).map(plain)
        }
    };
    loaded.map_err(Stage::Graph.wrap())
}

fn plain(graph: Graph) -> LoadedGraph {
    LoadedGraph { graph, edge_list: None }
}

/// Design parameters after calibration against the true graph.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResolvedDesign {
    pub design: Design,
    pub params: DesignParams,
    /// Target vertex coverage when the snowball seed rate was calibrated.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub coverage: Option<f64>,
}

pub fn resolve_design(spec: &DesignSpec, g: &Graph) -> Result<ResolvedDesign, PipelineError> {
    spec.validate().map_err(Stage::Config.wrap())?;
    let params = match (spec.design, spec.rate, spec.edge_budget) {
        (Design::RandomWalk, _, Some(b)) => DesignParams::EdgeBudget(b),
        (Design::Snowball, Some(f), _) if spec.coverage => {
            DesignParams::Rate(snowball_rate_for_fraction(g, f).map_err(Stage::Sample.wrap())?)
        }
        (_, Some(p), _) => DesignParams::Rate(p),
        _ => unreachable!("validated design spec"),
    };
    Ok(ResolvedDesign {
        design: spec.design,
        params,
        coverage: spec.coverage.then_some(spec.rate).flatten(),
    })
}

/// Operator parameters for an observed sample. The random walk operator needs
/// the edge count of the true graph.
pub fn operator_params(params: DesignParams, n_e: Option<usize>, n_star_e: usize) -> Result<OperatorParams> {
    match params {
        DesignParams::Rate(p) => Ok(OperatorParams::Rate(p)),
        DesignParams::EdgeBudget(_) => match n_e {
            Some(n_e) => Ok(OperatorParams::Walk {
                n_e,
                sampled_edges: n_star_e,
            }),
            None => Err(Error::InvalidArgument(
                "random walk estimation needs the edge count of the true graph".into(),
            )),
        },
    }
}

/// Degree bound `M` under `policy`. Observed degrees are first scaled by the
/// expected thinning of the design: `1/p` for induced and incident sampling,
/// `n_e / n*_e` for the random walk.
pub fn resolve_degree_bound(
    policy: DegreeBound,
    design: Design,
    op: OperatorParams,
    max_observed: usize,
    true_max: Option<usize>,
) -> Result<usize> {
    let floor = max_observed.max(2);
    let scaled = |factor: f64, x: f64| ((factor * x - 1e-9).ceil() as usize).max(floor);
    match policy {
        DegreeBound::Fixed { max_degree } => {
            if max_degree < max_observed {
                return Err(Error::DegreeExceedsBound {
                    degree: max_observed,
                    bound: max_degree,
                });
            }
            Ok(max_degree.max(2))
        }
        DegreeBound::TrueMaxFactor { factor } => match true_max {
            Some(m) => Ok(scaled(factor, m as f64)),
            None => Err(Error::InvalidArgument(
                "the true maximum degree is unknown; use a fixed or observed bound".into(),
            )),
        },
        DegreeBound::ObservedFactor { factor } => {
            let thinning = match (design, op) {
                (Design::Induced | Design::Incident, OperatorParams::Rate(p)) => 1.0 / p,
                (Design::RandomWalk, OperatorParams::Walk { n_e, sampled_edges }) if sampled_edges > 0 => {
                    n_e as f64 / sampled_edges as f64
                }
                _ => 1.0,
            };
            Ok(scaled(factor, max_observed as f64 * thinning))
        }
    }
}

/// Observed counts and everything needed to invert them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimationInput {
    pub design: Design,
    pub operator: OperatorParams,
    pub n_v: usize,
    pub max_degree: usize,
    pub observed_counts: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct Estimation {
    pub input: EstimationInput,
    /// Observed counts padded to `M + 1` entries.
    pub n_star: Vec<f64>,
    pub covariance: CovarianceApprox<f64>,
    /// Risk curve when `λ` was selected by SURE.
    pub curve: Option<SureCurve>,
    pub solution: QPSolution<f64>,
    /// Kernel-smoothed observed counts rescaled to total `n_v`.
    pub smoothed: Vec<f64>,
}

impl Estimation {
    pub fn lambda(&self) -> f64 {
        self.solution.lambda
    }
}

/// Operator, covariance proxy, `λ` selection and constrained solve.
pub fn estimate_counts(
    input: &EstimationInput,
    settings: &EstimatorSettings,
    sure_seed: u64,
) -> Result<Estimation, PipelineError> {
    let m = input.max_degree;
    if input.observed_counts.len() > m + 1 && input.observed_counts[m + 1..].iter().any(|&c| c > 0) {
        return Err(Stage::Operator.error(Error::DegreeExceedsBound {
            degree: input.observed_counts.len() - 1,
            bound: m,
        }));
    }
    let mut n_star = vec![0.0; m + 1];
    for (slot, &c) in n_star.iter_mut().zip(&input.observed_counts) {
        *slot = c as f64;
    }
    let op = SamplingOperator::<f64>::build(input.design, input.operator, m).map_err(Stage::Operator.wrap())?;
    let covariance = build_covariance(&n_star, settings.target_condition).map_err(Stage::Covariance.wrap())?;
    let n_v = input.n_v as f64;
    let problem = PwlsProblem::new(&op, &covariance, n_v, settings.solver).map_err(Stage::Solve.wrap())?;
    let census = matches!(input.design, Design::Ego | Design::Snowball | Design::Induced)
        && input.operator == OperatorParams::Rate(1.0);
    // a census observes the truth: nothing to regularize
    let fixed = if census { Some(0.0) } else { settings.lambda };
    let observed_total: f64 = n_star.iter().sum();
    let (solution, curve) = match fixed {
        // `P = I` and `N*` is feasible, so it is the minimizer exactly
        Some(_) if census && observed_total == n_v => (exact_census(&n_star, m).map_err(Stage::Solve.wrap())?, None),
        Some(lambda) => (problem.solve(&n_star, lambda, None).map_err(Stage::Solve.wrap())?, None),
        None => {
            let cfg = SureConfig {
                epsilon: settings.epsilon,
                replicates: settings.replicates,
                lambda_grid: settings.lambda_grid.clone(),
                seed: sure_seed,
            };
            let sel = select_lambda(&problem, &op, &n_star, &covariance, &cfg).map_err(Stage::Sure.wrap())?;
            (sel.solution, Some(sel.curve))
        }
    };
    let mut smoothed = smooth_counts(&n_star, covariance.bandwidth);
    let total: f64 = smoothed.iter().sum();
    smoothed.iter_mut().for_each(|v| *v *= n_v / total);
    Ok(Estimation {
        input: input.clone(),
        n_star,
        covariance,
        curve,
        solution,
        smoothed,
    })
}

fn exact_census(n_star: &[f64], m: usize) -> Result<QPSolution<f64>> {
    let penalty = if m >= 2 {
        build_penalty::<f64>(m)?.penalty(n_star)
    } else {
        0.0
    };
    Ok(QPSolution {
        n_hat: n_star.to_vec(),
        lambda: 0.0,
        objective: 0.0,
        fit: 0.0,
        penalty,
        active_set: (0..n_star.len()).filter(|&i| n_star[i] == 0.0).collect(),
        iterations: 0,
        converged: true,
        kkt_residual: 0.0,
    })
}

/// One sample-and-estimate trial against a known truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial: usize,
    pub seed: u64,
    pub max_degree: usize,
    pub n_star_v: usize,
    pub lambda: f64,
    pub ks_sample: f64,
    pub ks_smoothed: f64,
    pub ks_estimate: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialFailure {
    pub trial: usize,
    pub stage: Stage,
    pub message: String,
}

/// Degree counts of `g` as reals.
pub fn true_counts(g: &Graph) -> Vec<f64> {
    let mut counts = vec![0.0; g.max_degree() + 1];
    for d in g.degrees() {
        counts[d] += 1.0;
    }
    counts
}

/// Samples `g` and estimates its degree counts.
pub fn sample_and_estimate(
    cfg: &RunConfig,
    g: &Graph,
    design: &ResolvedDesign,
    trial: usize,
) -> Result<(SampleResult, Estimation), PipelineError> {
    let sample_seed = derive_seed(cfg.seed, streams::SIM_TRIAL, trial as u64);
    let s = sample(design.design, g, design.params, sample_seed).map_err(Stage::Sample.wrap())?;
    let op = operator_params(design.params, Some(g.edge_count()), s.n_star_e()).map_err(Stage::Operator.wrap())?;
    let m = resolve_degree_bound(
        cfg.degree_bound,
        design.design,
        op,
        s.max_observed_degree(),
        Some(g.max_degree()),
    )
    .map_err(Stage::Operator.wrap())?;
    let input = EstimationInput {
        design: design.design,
        operator: op,
        n_v: g.vertex_count(),
        max_degree: m,
        observed_counts: s.observed_counts.clone(),
    };
    let est = estimate_counts(
        &input,
        &cfg.estimator,
        derive_seed(cfg.seed, streams::SIM_SURE, trial as u64),
    )?;
    Ok((s, est))
}

/// K-S distances of the raw sample, the smoothed sample and the estimate.
pub fn score(est: &Estimation, truth: &[f64]) -> Result<(f64, f64, f64), PipelineError> {
    let ks = |x: &[f64]| ks_d_statistic(x, truth).map_err(Stage::Score.wrap());
    Ok((ks(&est.n_star)?, ks(&est.smoothed)?, ks(&est.solution.n_hat)?))
}

pub fn run_trial(
    cfg: &RunConfig,
    g: &Graph,
    design: &ResolvedDesign,
    truth: &[f64],
    trial: usize,
) -> Result<TrialRecord, PipelineError> {
    let (s, est) = sample_and_estimate(cfg, g, design, trial)?;
    let (ks_sample, ks_smoothed, ks_estimate) = score(&est, truth)?;
    Ok(TrialRecord {
        trial,
        seed: s.seed,
        max_degree: est.input.max_degree,
        n_star_v: s.n_star_v(),
        lambda: est.lambda(),
        ks_sample,
        ks_smoothed,
        ks_estimate,
        converged: est.solution.converged,
    })
}

/// Median and interquartile range, with linearly interpolated quantiles.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ColumnSummary {
    pub median: f64,
    pub q25: f64,
    pub q75: f64,
    pub iqr: f64,
}

pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

pub fn summarize_column(values: impl Iterator<Item = f64>) -> ColumnSummary {
    let mut v: Vec<f64> = values.collect();
    v.sort_by(f64::total_cmp);
    let (q25, q75) = (quantile(&v, 0.25), quantile(&v, 0.75));
    ColumnSummary {
        median: quantile(&v, 0.5),
        q25,
        q75,
        iqr: q75 - q25,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphSummary {
    pub n_v: usize,
    pub n_e: usize,
    pub max_degree: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub label: String,
    pub graph: GraphSummary,
    pub design: ResolvedDesign,
    pub trials: usize,
    pub failures: usize,
    pub ks_sample: ColumnSummary,
    pub ks_smoothed: ColumnSummary,
    pub ks_estimate: ColumnSummary,
    pub lambda: ColumnSummary,
    /// Trials where the estimate is strictly closer to the truth than the
    /// raw sample.
    pub estimate_wins: usize,
}

#[derive(Debug, Clone)]
pub struct SimulationResult {
    pub config: RunConfig,
    pub summary: RunSummary,
    pub records: Vec<TrialRecord>,
    pub failures: Vec<TrialFailure>,
}

/// Runs `cfg.trials` trials on one graph. Failed trials are recorded and left
/// out of the summary.
pub fn simulate_run(cfg: &RunConfig) -> Result<SimulationResult, PipelineError> {
    cfg.validate().map_err(Stage::Config.wrap())?;
    let loaded = load_graph(&cfg.graph, cfg.seed)?;
    let g = &loaded.graph;
    let design = resolve_design(&cfg.design, g)?;
    let truth = true_counts(g);
    let outcomes: Vec<Result<TrialRecord, PipelineError>> = (0..cfg.trials)
        .into_par_iter()
        .map(|t| run_trial(cfg, g, &design, &truth, t))
        .collect();
    let mut records = Vec::new();
    let mut failures = Vec::new();
    for (t, outcome) in outcomes.into_iter().enumerate() {
        match outcome {
            Ok(r) => records.push(r),
            Err(e) => failures.push(TrialFailure {
                trial: t,
                stage: e.stage,
                message: e.source.to_string(),
            }),
        }
    }
    let summary = RunSummary {
        label: cfg.label(),
        graph: GraphSummary {
            n_v: g.vertex_count(),
            n_e: g.edge_count(),
            max_degree: g.max_degree(),
        },
        design,
        trials: cfg.trials,
        failures: failures.len(),
        ks_sample: summarize_column(records.iter().map(|r| r.ks_sample)),
        ks_smoothed: summarize_column(records.iter().map(|r| r.ks_smoothed)),
        ks_estimate: summarize_column(records.iter().map(|r| r.ks_estimate)),
        lambda: summarize_column(records.iter().map(|r| r.lambda)),
        estimate_wins: records.iter().filter(|r| r.ks_estimate < r.ks_sample).count(),
    };
    Ok(SimulationResult {
        config: cfg.clone(),
        summary,
        records,
        failures,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantiles_interpolate() {
        let s = summarize_column([4.0, 1.0, 3.0, 2.0].into_iter());
        assert_eq!(s.median, 2.5);
        assert_eq!(s.q25, 1.75);
        assert_eq!(s.q75, 3.25);
        assert_eq!(s.iqr, 1.5);
        assert!(quantile(&[], 0.5).is_nan());
    }

    #[test]
    fn degree_bound_policies() {
        let rate = OperatorParams::Rate(0.25);
        let b = resolve_degree_bound(DegreeBound::ObservedFactor { factor: 1.1 }, Design::Ego, rate, 10, None).unwrap();
        assert_eq!(b, 11);
        let b = resolve_degree_bound(
            DegreeBound::ObservedFactor { factor: 1.0 },
            Design::Induced,
            rate,
            5,
            None,
        )
        .unwrap();
        assert_eq!(b, 20);
        let b = resolve_degree_bound(
            DegreeBound::TrueMaxFactor { factor: 1.1 },
            Design::Ego,
            rate,
            3,
            Some(20),
        )
        .unwrap();
        assert_eq!(b, 22);
        assert!(resolve_degree_bound(DegreeBound::TrueMaxFactor { factor: 1.1 }, Design::Ego, rate, 3, None).is_err());
        assert!(resolve_degree_bound(DegreeBound::Fixed { max_degree: 4 }, Design::Ego, rate, 5, None).is_err());
        let walk = OperatorParams::Walk {
            n_e: 100,
            sampled_edges: 25,
        };
        let b = resolve_degree_bound(
            DegreeBound::ObservedFactor { factor: 1.0 },
            Design::RandomWalk,
            walk,
            3,
            None,
        )
        .unwrap();
        assert_eq!(b, 12);
        let b = resolve_degree_bound(DegreeBound::ObservedFactor { factor: 1.1 }, Design::Ego, rate, 0, None).unwrap();
        assert_eq!(b, 2);
    }

    #[test]
    fn census_round_trip() {
        let cfg = RunConfig {
            graph: GraphSource::ErdosRenyi { n_v: 200, n_e: 600 },
            design: DesignSpec::rate(Design::Ego, 1.0),
            degree_bound: DegreeBound::default(),
            estimator: EstimatorSettings {
                replicates: 10,
                ..Default::default()
            },
            trials: 1,
            seed: 3,
        };
        let res = simulate_run(&cfg).unwrap();
        let r = &res.records[0];
        assert_eq!(r.ks_sample, 0.0);
        assert_eq!(r.ks_estimate, 0.0);
    }
}
