use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::estimator::SolverOptions;
use crate::sampling::Design;
use crate::smoothing::DEFAULT_TARGET_CONDITION;
use crate::sure::{DEFAULT_EPSILON, DEFAULT_REPLICATES};

/// Edge-probability ratio (within block 1, within block 2, between) used by
/// the simulation study.
pub const DEFAULT_BLOCK_RATIO: (f64, f64, f64) = (6.0, 2.0, 1.0);

/// Where the true graph comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GraphSource {
    EdgeList {
        path: PathBuf,
    },
    /// Uniform graph with exactly `n_e` edges.
    ErdosRenyi {
        n_v: usize,
        n_e: usize,
    },
    /// Two equal blocks with edge probabilities in the given ratio and
    /// `n_e` expected edges.
    TwoBlock {
        n_v: usize,
        n_e: usize,
        #[serde(default = "default_ratio")]
        ratio: (f64, f64, f64),
    },
}

fn default_ratio() -> (f64, f64, f64) {
    DEFAULT_BLOCK_RATIO
}

impl GraphSource {
    pub fn label(&self) -> String {
        match self {
            GraphSource::EdgeList { path } => format!("file:{}", path.display()),
            GraphSource::ErdosRenyi { n_v, n_e } => format!("er_{n_v}_{n_e}"),
            GraphSource::TwoBlock { n_v, n_e, .. } => format!("two_block_{n_v}_{n_e}"),
        }
    }
}

/// Sampling design and its parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignSpec {
    pub design: Design,
    /// Bernoulli rate. For snowball sampling with `coverage` set, this is the
    /// target expected fraction of vertices in the sample instead.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rate: Option<f64>,
    /// Distinct-edge budget of a random walk.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub edge_budget: Option<usize>,
    #[serde(default)]
    pub coverage: bool,
}

impl DesignSpec {
    pub fn rate(design: Design, rate: f64) -> Self {
        Self {
            design,
            rate: Some(rate),
            edge_budget: None,
            coverage: false,
        }
    }

    /// Snowball sampling whose seed rate is calibrated so that the sample
    /// holds `fraction` of the vertices on average.
    pub fn snowball_coverage(fraction: f64) -> Self {
        Self {
            design: Design::Snowball,
            rate: Some(fraction),
            edge_budget: None,
            coverage: true,
        }
    }

    pub fn walk(edge_budget: usize) -> Self {
        Self {
            design: Design::RandomWalk,
            rate: None,
            edge_budget: Some(edge_budget),
            coverage: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self.design {
            Design::RandomWalk => {
                if self.edge_budget.is_none() {
                    return invalid("random walk sampling needs an edge budget");
                }
            }
            _ => match self.rate {
                Some(p) if p > 0.0 && p <= 1.0 => {}
                Some(p) => return invalid(format!("rate {p} outside (0, 1]")),
                None => return invalid(format!("{} sampling needs a rate", self.design)),
            },
        }
        if self.coverage && self.design != Design::Snowball {
            return invalid("coverage calibration only applies to snowball sampling");
        }
        Ok(())
    }

    pub fn label(&self) -> String {
        match (self.design, self.rate, self.edge_budget) {
            (Design::RandomWalk, _, Some(b)) => format!("random_walk_{b}"),
            (d, Some(p), _) => format!("{}_{p}", d.name()),
            (d, None, _) => d.name().to_string(),
        }
    }
}

/// Rule for the degree bound `M` of the estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DegreeBound {
    Fixed {
        max_degree: usize,
    },
    /// `factor` times the maximum degree of the true graph.
    TrueMaxFactor {
        factor: f64,
    },
    /// `factor` times the maximum observed degree, first scaled up by the
    /// expected thinning of degrees under the design.
    ObservedFactor {
        factor: f64,
    },
}

impl Default for DegreeBound {
    fn default() -> Self {
        DegreeBound::ObservedFactor { factor: 1.1 }
    }
}

/// Settings of the estimation stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EstimatorSettings {
    /// Fixed penalty weight; when absent `λ` is chosen by SURE.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda_grid: Option<Vec<f64>>,
    pub target_condition: f64,
    pub epsilon: f64,
    pub replicates: usize,
    pub solver: SolverOptions,
}

impl Default for EstimatorSettings {
    fn default() -> Self {
        Self {
            lambda: None,
            lambda_grid: None,
            target_condition: DEFAULT_TARGET_CONDITION,
            epsilon: DEFAULT_EPSILON,
            replicates: DEFAULT_REPLICATES,
            solver: SolverOptions::default(),
        }
    }
}

/// Everything needed to reproduce a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub graph: GraphSource,
    pub design: DesignSpec,
    #[serde(default)]
    pub degree_bound: DegreeBound,
    #[serde(default)]
    pub estimator: EstimatorSettings,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_trials() -> usize {
    1
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.design.validate()?;
        if self.trials == 0 {
            return invalid("at least one trial is required");
        }
        match self.degree_bound {
            DegreeBound::Fixed { max_degree: 0 } => return invalid("degree bound must be positive"),
            DegreeBound::TrueMaxFactor { factor } | DegreeBound::ObservedFactor { factor } if !(factor >= 1.0) => {
                return invalid("degree bound factor must be at least 1")
            }
            _ => {}
        }
        let e = &self.estimator;
        if let Some(l) = e.lambda {
            if !(l >= 0.0 && l.is_finite()) {
                return invalid("fixed lambda must be non-negative");
            }
        }
        if !(e.target_condition > 1.0) {
            return invalid("target condition number must exceed 1");
        }
        if !(e.epsilon > 0.0) || e.replicates == 0 {
            return invalid("SURE needs a positive epsilon and at least one replicate");
        }
        Ok(())
    }

    pub fn label(&self) -> String {
        format!("{}-{}", self.graph.label(), self.design.label())
    }
}

/// A list of configurations run by `simulate`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub runs: Vec<RunConfig>,
}

impl SweepConfig {
    pub fn validate(&self) -> Result<()> {
        if self.runs.is_empty() {
            return invalid("sweep has no runs");
        }
        self.runs.iter().try_for_each(RunConfig::validate)
    }

    /// The simulation study at desk scale: `n_v ∈ {300, 1000}`, ER and
    /// two-block graphs, ego, snowball and induced sampling at 10%, 20% and
    /// 30%. Mean degree is about 100 for ego and induced sampling and about
    /// 10 for snowball sampling, whose rate is the expected vertex coverage.
    pub fn study_grid(trials: usize, seed: u64) -> Self {
        let mut runs = Vec::new();
        for n_v in [300usize, 1000] {
            for design in [Design::Ego, Design::Snowball, Design::Induced] {
                let mean_degree = if design == Design::Snowball { 10.0 } else { 100.0 };
                let n_e = (mean_degree * n_v as f64 / 2.0).round() as usize;
                for two_block in [false, true] {
                    for rate in [0.1, 0.2, 0.3] {
                        let graph = if two_block {
                            GraphSource::TwoBlock {
                                n_v,
                                n_e,
                                ratio: DEFAULT_BLOCK_RATIO,
                            }
                        } else {
                            GraphSource::ErdosRenyi { n_v, n_e }
                        };
                        let spec = if design == Design::Snowball {
                            DesignSpec::snowball_coverage(rate)
                        } else {
                            DesignSpec::rate(design, rate)
                        };
                        runs.push(RunConfig {
                            graph,
                            design: spec,
                            degree_bound: DegreeBound::TrueMaxFactor { factor: 1.1 },
                            estimator: EstimatorSettings::default(),
                            trials,
                            seed,
                        });
                    }
                }
            }
        }
        Self { runs }
    }
}
