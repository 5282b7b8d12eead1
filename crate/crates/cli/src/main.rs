//! `netdeg`: estimate degree distributions of sampled networks.
//!
//! Every command writes one run directory holding CSV/JSON outputs and a
//! `manifest.json`. Without `--out` the directory is created under
//! `$NETDEG_OUTPUT_ROOT` (default `netdeg-runs`). `--config file.json` replaces
//! all other configuration flags of a command.
//!
//! Exit codes: 0 success, 2 invalid configuration or arguments, 3 unreadable
//! or malformed input, 4 numerical failure, 5 output could not be written.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use netdeg::pipeline::*;
use netdeg::{Design, Error};

#[derive(Parser)]
#[command(
    name = "netdeg",
    version,
    about = "Degree distribution estimation from sampled networks"
)]
struct Cli {
    /// Root under which run directories are created when `--out` is absent.
    #[arg(long, global = true, env = "NETDEG_OUTPUT_ROOT", default_value = "netdeg-runs")]
    output_root: PathBuf,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a random graph and write its edge list and degree counts.
    Generate {
        #[command(flatten)]
        graph: GraphArgs,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Draw one sample from a graph.
    Sample {
        #[command(flatten)]
        graph: GraphArgs,
        #[command(flatten)]
        design: DesignArgs,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Sample a graph and estimate its degree counts, or estimate from a
    /// sample written by `sample`.
    Estimate {
        /// `sample.json` from a previous `sample` run.
        #[arg(long, conflicts_with_all = ["graph_file", "model", "design"])]
        sample: Option<PathBuf>,
        #[command(flatten)]
        graph: GraphArgs,
        #[command(flatten)]
        design: DesignArgs,
        #[command(flatten)]
        estimator: EstimatorArgs,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Monte Carlo trials of one configuration, or the full study grid.
    Simulate {
        /// Run the study grid (36 configurations) instead of a single one.
        #[arg(long, conflicts_with_all = ["graph_file", "model", "design"])]
        study_grid: bool,
        #[command(flatten)]
        graph: GraphArgs,
        #[command(flatten)]
        design: DesignArgs,
        #[command(flatten)]
        estimator: EstimatorArgs,
        #[arg(long, default_value_t = 100)]
        trials: usize,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Epidemic threshold bounds from a graph or from degree counts.
    Bounds {
        /// CSV with a `degree` column, e.g. `estimate.csv`.
        #[arg(long, conflicts_with_all = ["graph_file", "model"])]
        counts: Option<PathBuf>,
        /// Count column of `--counts`; defaults to `estimate`, else the second column.
        #[arg(long, requires = "counts")]
        column: Option<String>,
        /// Edge count used by `U`; defaults to half the degree sum.
        #[arg(long)]
        edges: Option<f64>,
        #[command(flatten)]
        graph: GraphArgs,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Operator spectrum, and Poisson diagnostics of induced sampling.
    Diagnose {
        #[arg(long, value_parser = parse_design)]
        design: Option<Design>,
        #[arg(long)]
        rate: Option<f64>,
        /// Random walk operator: true and sampled edge counts.
        #[arg(long, value_parser = parse_pair, value_name = "N_E,SAMPLED")]
        walk: Option<(usize, usize)>,
        #[arg(long)]
        max_degree: Option<usize>,
        /// Degrees whose observed counts are compared with Poisson laws.
        #[arg(long, value_delimiter = ',')]
        marginal: Vec<usize>,
        /// Thresholds of the cumulative count diagnostics.
        #[arg(long, value_delimiter = ',')]
        cumulative: Vec<usize>,
        #[arg(long, default_value_t = 1000)]
        poisson_trials: usize,
        #[command(flatten)]
        graph: GraphArgs,
        #[command(flatten)]
        common: CommonArgs,
    },
}

#[derive(Args)]
struct CommonArgs {
    /// JSON configuration; replaces all other configuration flags.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Run directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct GraphArgs {
    /// Edge list: one `u v` pair per line, `#` comments.
    #[arg(long)]
    graph_file: Option<PathBuf>,
    /// Random graph model: `er` or `two-block`.
    #[arg(long, value_parser = ["er", "two-block"])]
    model: Option<String>,
    #[arg(long)]
    n_v: Option<usize>,
    #[arg(long)]
    n_e: Option<usize>,
    /// Two-block edge-probability ratio: within 1, within 2, between.
    #[arg(long, value_parser = parse_ratio, value_name = "A,B,C")]
    block_ratio: Option<(f64, f64, f64)>,
}

#[derive(Args)]
struct DesignArgs {
    #[arg(long, value_parser = parse_design)]
    design: Option<Design>,
    #[arg(long)]
    rate: Option<f64>,
    /// Distinct-edge budget of a random walk.
    #[arg(long)]
    edge_budget: Option<usize>,
    /// Snowball only: `--rate` is the target expected vertex coverage.
    #[arg(long)]
    coverage: bool,
}

#[derive(Args)]
struct EstimatorArgs {
    /// Fixed degree bound `M`.
    #[arg(long, conflicts_with_all = ["true_max_factor", "observed_factor"])]
    max_degree: Option<usize>,
    /// `M` as a multiple of the true maximum degree.
    #[arg(long, conflicts_with = "observed_factor")]
    true_max_factor: Option<f64>,
    /// `M` as a multiple of the thinning-scaled maximum observed degree (default 1.1).
    #[arg(long)]
    observed_factor: Option<f64>,
    /// Fixed penalty weight; skips SURE.
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long, value_delimiter = ',')]
    lambda_grid: Option<Vec<f64>>,
    #[arg(long)]
    target_condition: Option<f64>,
    /// SURE finite-difference step.
    #[arg(long)]
    epsilon: Option<f64>,
    /// SURE probe count.
    #[arg(long)]
    replicates: Option<usize>,
    #[arg(long)]
    tolerance: Option<f64>,
    #[arg(long)]
    max_iterations: Option<usize>,
}

/// A failure with its exit code.
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn config(message: impl Into<String>) -> Self {
        Self {
            code: 2,
            message: message.into(),
        }
    }
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        let code = match e.class() {
            FailureClass::Config => 2,
            FailureClass::Input => 3,
            FailureClass::Numerical => 4,
            FailureClass::Output => 5,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

type CliResult<T> = Result<T, Failure>;

fn parse_design(s: &str) -> Result<Design, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_pair(s: &str) -> Result<(usize, usize), String> {
    let (a, b) = s.split_once(',').ok_or("expected two comma-separated integers")?;
    Ok((
        a.trim().parse().map_err(|e| format!("{e}"))?,
        b.trim().parse().map_err(|e| format!("{e}"))?,
    ))
}

fn parse_ratio(s: &str) -> Result<(f64, f64, f64), String> {
    let v: Vec<f64> = s
        .split(',')
        .map(|x| x.trim().parse::<f64>().map_err(|e| e.to_string()))
        .collect::<Result<_, _>>()?;
    match v[..] {
        [a, b, c] => Ok((a, b, c)),
        _ => Err("expected three comma-separated numbers".into()),
    }
}

impl GraphArgs {
    fn given(&self) -> bool {
        self.graph_file.is_some() || self.model.is_some()
    }

    fn source(&self) -> CliResult<GraphSource> {
        if let Some(path) = &self.graph_file {
            return Ok(GraphSource::EdgeList { path: path.clone() });
        }
        let model = self
            .model
            .as_deref()
            .ok_or_else(|| Failure::config("a graph is required: --graph-file or --model"))?;
        let (Some(n_v), Some(n_e)) = (self.n_v, self.n_e) else {
            return Err(Failure::config("--model needs --n-v and --n-e"));
        };
        Ok(match model {
            "er" => GraphSource::ErdosRenyi { n_v, n_e },
            _ => GraphSource::TwoBlock {
                n_v,
                n_e,
                ratio: self.block_ratio.unwrap_or(DEFAULT_BLOCK_RATIO),
            },
        })
    }
}

impl DesignArgs {
    fn spec(&self) -> CliResult<DesignSpec> {
        let design = self.design.ok_or_else(|| Failure::config("--design is required"))?;
        let spec = DesignSpec {
            design,
            rate: self.rate,
            edge_budget: self.edge_budget,
            coverage: self.coverage,
        };
        spec.validate().map_err(|e| Failure::config(e.to_string()))?;
        Ok(spec)
    }
}

impl EstimatorArgs {
    fn degree_bound(&self) -> DegreeBound {
        match (self.max_degree, self.true_max_factor, self.observed_factor) {
            (Some(max_degree), _, _) => DegreeBound::Fixed { max_degree },
            (_, Some(factor), _) => DegreeBound::TrueMaxFactor { factor },
            (_, _, Some(factor)) => DegreeBound::ObservedFactor { factor },
            _ => DegreeBound::default(),
        }
    }

    fn settings(&self) -> EstimatorSettings {
        let mut s = EstimatorSettings {
            lambda: self.lambda,
            lambda_grid: self.lambda_grid.clone(),
            ..EstimatorSettings::default()
        };
        if let Some(v) = self.target_condition {
            s.target_condition = v;
        }
        if let Some(v) = self.epsilon {
            s.epsilon = v;
        }
        if let Some(v) = self.replicates {
            s.replicates = v;
        }
        if let Some(v) = self.tolerance {
            s.solver.tolerance = v;
        }
        if self.max_iterations.is_some() {
            s.solver.max_iterations = self.max_iterations;
        }
        s
    }

    fn run(&self, graph: &GraphArgs, design: &DesignArgs, trials: usize, seed: u64) -> CliResult<RunConfig> {
        let cfg = RunConfig {
            graph: graph.source()?,
            design: design.spec()?,
            degree_bound: self.degree_bound(),
            estimator: self.settings(),
            trials,
            seed,
        };
        cfg.validate().map_err(|e| Failure::config(e.to_string()))?;
        Ok(cfg)
    }
}

/// `--config` when given, else the configuration built from flags.
fn config_or<T: serde::de::DeserializeOwned>(
    common: &CommonArgs,
    flags: impl FnOnce() -> CliResult<T>,
) -> CliResult<T> {
    match &common.config {
        Some(path) => Ok(load_config(path)?),
        None => flags(),
    }
}

fn graph_label(g: &GraphSource) -> String {
    match g {
        GraphSource::EdgeList { path } => path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "graph".into()),
        other => other.label(),
    }
}

/// Default run directory `<root>/<command>-<label>-s<seed>`.
fn run_dir(root: &Path, common: &CommonArgs, command: &str, label: &str, seed: u64) -> PathBuf {
    if let Some(out) = &common.out {
        return out.clone();
    }
    let clean: String = label
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || matches!(c, '.' | '_' | '-') {
                c
            } else {
                '_'
            }
        })
        .collect();
    root.join(format!("{command}-{clean}-s{seed}"))
}

fn run(cli: Cli) -> CliResult<PathBuf> {
    let root = cli.output_root;
    match cli.command {
        Command::Generate { graph, common } => {
            let cfg: GenerateConfig = config_or(&common, || {
                Ok(GenerateConfig {
                    graph: graph.source()?,
                    seed: common.seed,
                })
            })?;
            let dir = run_dir(&root, &common, "generate", &graph_label(&cfg.graph), cfg.seed);
            cmd_generate(&cfg, &dir)?;
            Ok(dir)
        }
        Command::Sample { graph, design, common } => {
            let cfg: SampleConfig = config_or(&common, || {
                Ok(SampleConfig {
                    graph: graph.source()?,
                    design: design.spec()?,
                    seed: common.seed,
                })
            })?;
            let label = format!("{}-{}", graph_label(&cfg.graph), cfg.design.label());
            let dir = run_dir(&root, &common, "sample", &label, cfg.seed);
            cmd_sample(&cfg, &dir)?;
            Ok(dir)
        }
        Command::Estimate {
            sample,
            graph,
            design,
            estimator,
            common,
        } => {
            let cfg: EstimateConfig = config_or(&common, || match &sample {
                Some(path) => Ok(EstimateConfig::Sample(EstimateSampleConfig {
                    sample: path.clone(),
                    degree_bound: estimator.degree_bound(),
                    estimator: estimator.settings(),
                    seed: common.seed,
                })),
                None => Ok(EstimateConfig::Run(estimator.run(&graph, &design, 1, common.seed)?)),
            })?;
            match cfg {
                EstimateConfig::Sample(cfg) => {
                    let stem = cfg.sample.parent().and_then(Path::file_name).unwrap_or_default();
                    let label = format!("from-{}", stem.to_string_lossy());
                    let dir = run_dir(&root, &common, "estimate", &label, cfg.seed);
                    cmd_estimate_sample(&cfg, &dir)?;
                    Ok(dir)
                }
                EstimateConfig::Run(cfg) => {
                    let label = format!("{}-{}", graph_label(&cfg.graph), cfg.design.label());
                    let dir = run_dir(&root, &common, "estimate", &label, cfg.seed);
                    cmd_estimate(&cfg, &dir)?;
                    Ok(dir)
                }
            }
        }
        Command::Simulate {
            study_grid,
            graph,
            design,
            estimator,
            trials,
            common,
        } => {
            let cfg: SweepConfig = config_or(&common, || {
                if study_grid {
                    Ok(SweepConfig::study_grid(trials, common.seed))
                } else {
                    Ok(SweepConfig {
                        runs: vec![estimator.run(&graph, &design, trials, common.seed)?],
                    })
                }
            })?;
            let label = match &cfg.runs[..] {
                [one] => format!("{}-{}", graph_label(&one.graph), one.design.label()),
                _ if study_grid && common.config.is_none() => "study_grid".into(),
                runs => format!("sweep_{}", runs.len()),
            };
            let seed = cfg.runs.first().map_or(0, |r| r.seed);
            let dir = run_dir(&root, &common, "simulate", &label, seed);
            cmd_simulate(&cfg, &dir)?;
            Ok(dir)
        }
        Command::Bounds {
            counts,
            column,
            edges,
            graph,
            common,
        } => {
            let cfg: BoundsConfig = config_or(&common, || {
                let input = match counts {
                    Some(path) => BoundsInput::Counts { path, column },
                    None if graph.given() => BoundsInput::Graph { graph: graph.source()? },
                    None => return Err(Failure::config("bounds needs --counts, --graph-file or --model")),
                };
                Ok(BoundsConfig {
                    input,
                    n_e: edges,
                    seed: common.seed,
                })
            })?;
            let label = match &cfg.input {
                BoundsInput::Graph { graph } => graph_label(graph),
                BoundsInput::Counts { path, .. } => {
                    let parent = path.parent().and_then(Path::file_name).unwrap_or_default();
                    format!("from-{}", parent.to_string_lossy())
                }
            };
            let dir = run_dir(&root, &common, "bounds", &label, cfg.seed);
            cmd_bounds(&cfg, &dir)?;
            Ok(dir)
        }
        Command::Diagnose {
            design,
            rate,
            walk,
            max_degree,
            marginal,
            cumulative,
            poisson_trials,
            graph,
            common,
        } => {
            let cfg: DiagnoseConfig = config_or(&common, || {
                let poisson = if graph.given() {
                    Some(PoissonCheck {
                        graph: graph.source()?,
                        marginal_degrees: marginal,
                        cumulative_degrees: cumulative,
                        trials: poisson_trials,
                    })
                } else {
                    None
                };
                Ok(DiagnoseConfig {
                    design: design.ok_or_else(|| Failure::config("--design is required"))?,
                    rate,
                    walk,
                    max_degree: max_degree.ok_or_else(|| Failure::config("--max-degree is required"))?,
                    poisson,
                    seed: common.seed,
                })
            })?;
            let label = match cfg.rate {
                Some(p) => format!("{}_{p}-m{}", cfg.design, cfg.max_degree),
                None => format!("{}-m{}", cfg.design, cfg.max_degree),
            };
            let dir = run_dir(&root, &common, "diagnose", &label, cfg.seed);
            cmd_diagnose(&cfg, &dir)?;
            Ok(dir)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(dir) => {
            println!("{}", dir.display());
            ExitCode::SUCCESS
        }
        Err(f) => {
            eprintln!("netdeg: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
