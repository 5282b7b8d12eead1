use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::{DegreeBound, DesignSpec, EstimatorSettings, GraphSource, RunConfig, SweepConfig};
use super::run::{
    estimate_counts, load_graph, operator_params, resolve_degree_bound, resolve_design, sample_and_estimate, score,
    simulate_run, true_counts, Estimation, EstimationInput, LoadedGraph, ResolvedDesign, RunSummary,
};
use super::{PipelineError, Stage};
use crate::error::{invalid, Error, Result};
use crate::graph::Graph;
use crate::metrics::{epidemic_bounds, graph_bounds, BoundsReport};
use crate::operator::{spectral, OperatorParams, SamplingOperator};
use crate::rng::{derive_seed, streams};
use crate::sampling::{sample, Design, DesignParams, SampleRecord};
use crate::variance::{induced_count_draws, poisson_diagnostics, poisson_fit, PoissonDiagnostics, PoissonFit};

/// Written last into every run directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub config: serde_json::Value,
    pub outputs: Vec<String>,
    pub notes: Vec<String>,
    pub complete: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

pub const MANIFEST_FILE: &str = "manifest.json";

/// Reads a JSON configuration file. Malformed JSON is a config failure, an
/// unreadable file an input failure.
pub fn load_config<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, PipelineError> {
    let text = fs::read_to_string(path).map_err(|e| Stage::Config.error(e.into()))?;
    serde_json::from_str(&text).map_err(|e| Stage::Config.error(e.into()))
}

/// Configuration of `estimate`: a full run, or a persisted sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum EstimateConfig {
    Sample(EstimateSampleConfig),
    Run(RunConfig),
}

/// Output directory of one command.
struct RunDir {
    path: PathBuf,
    manifest: Manifest,
}

impl RunDir {
    fn create(path: &Path, command: &str, config: &impl Serialize) -> Result<Self, PipelineError> {
        let out = (|| -> Result<Self> {
            fs::create_dir_all(path)?;
            Ok(Self {
                path: path.to_path_buf(),
                manifest: Manifest {
                    tool: env!("CARGO_PKG_NAME").to_string(),
                    version: env!("CARGO_PKG_VERSION").to_string(),
                    command: command.to_string(),
                    config: serde_json::to_value(config)?,
                    outputs: Vec::new(),
                    notes: Vec::new(),
                    complete: false,
                    error: None,
                },
            })
        })();
        out.map_err(Stage::Output.wrap())
    }

    fn file(
        &mut self,
        name: &str,
        write: impl FnOnce(&mut BufWriter<File>) -> Result<()>,
    ) -> Result<(), PipelineError> {
        let out = (|| -> Result<()> {
            let mut w = BufWriter::new(File::create(self.path.join(name))?);
            write(&mut w)?;
            w.flush()?;
            Ok(())
        })();
        out.map_err(Stage::Output.wrap())?;
        self.manifest.outputs.push(name.to_string());
        Ok(())
    }

    fn json(&mut self, name: &str, value: &impl Serialize) -> Result<(), PipelineError> {
        self.file(name, |w| {
            serde_json::to_writer_pretty(&mut *w, value)?;
            writeln!(w)?;
            Ok(())
        })
    }

    fn note(&mut self, note: impl Into<String>) {
        self.manifest.notes.push(note.into());
    }

    fn finish(mut self) -> Result<Manifest, PipelineError> {
        self.manifest.complete = true;
        self.write_manifest()?;
        Ok(self.manifest)
    }

    fn fail(mut self, err: PipelineError) -> PipelineError {
        self.manifest.error = Some(err.to_string());
        // the original failure matters more than a manifest write error
        let _ = self.write_manifest();
        err
    }

    fn write_manifest(&self) -> Result<(), PipelineError> {
        let out = (|| -> Result<()> {
            let mut w = BufWriter::new(File::create(self.path.join(MANIFEST_FILE))?);
            serde_json::to_writer_pretty(&mut w, &self.manifest)?;
            writeln!(w)?;
            w.flush()?;
            Ok(())
        })();
        out.map_err(Stage::Output.wrap())
    }
}

/// Runs `body` against a fresh run directory, recording failures in the
/// manifest.
fn with_dir(
    path: &Path,
    command: &str,
    config: &impl Serialize,
    body: impl FnOnce(&mut RunDir) -> Result<(), PipelineError>,
) -> Result<Manifest, PipelineError> {
    let mut dir = RunDir::create(path, command, config)?;
    match body(&mut dir) {
        Ok(()) => dir.finish(),
        Err(e) => Err(dir.fail(e)),
    }
}

fn write_counts_csv(w: &mut impl Write, counts: &[usize]) -> Result<()> {
    let mut c = csv::Writer::from_writer(w);
    c.write_record(["degree", "count"])?;
    for (k, n) in counts.iter().enumerate() {
        c.write_record([k.to_string(), n.to_string()])?;
    }
    c.flush()?;
    Ok(())
}

fn integer_counts(g: &Graph) -> Vec<usize> {
    let mut counts = vec![0usize; g.max_degree() + 1];
    for d in g.degrees() {
        counts[d] += 1;
    }
    counts
}

fn write_graph_files(dir: &mut RunDir, loaded: &LoadedGraph) -> Result<(), PipelineError> {
    if let Some(el) = &loaded.edge_list {
        dir.file("vertex_map.csv", |w| el.write_vertex_map(w))?;
        if el.skipped_self_loops > 0 || el.duplicate_edges > 0 {
            dir.note(format!(
                "input had {} self-loops and {} duplicate edges, dropped",
                el.skipped_self_loops, el.duplicate_edges
            ));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerateConfig {
    pub graph: GraphSource,
    #[serde(default)]
    pub seed: u64,
}

/// Writes `graph.edgelist` and `degree_counts.csv`.
pub fn cmd_generate(cfg: &GenerateConfig, out: &Path) -> Result<Manifest, PipelineError> {
    with_dir(out, "generate", cfg, |dir| {
        let loaded = load_graph(&cfg.graph, cfg.seed)?;
        let g = &loaded.graph;
        dir.file("graph.edgelist", |w| g.write_edge_list(w))?;
        dir.file("degree_counts.csv", |w| write_counts_csv(w, &integer_counts(g)))?;
        write_graph_files(dir, &loaded)?;
        dir.note(format!("{} vertices, {} edges", g.vertex_count(), g.edge_count()));
        Ok(())
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleConfig {
    pub graph: GraphSource,
    pub design: DesignSpec,
    #[serde(default)]
    pub seed: u64,
}

/// Persisted sample with its resolved design.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleFile {
    pub design: ResolvedDesign,
    pub sample: SampleRecord,
}

/// Writes `sample.json`, `sample.edgelist` and `observed_counts.csv`. The
/// sample equals the one drawn by `estimate` with the same graph, design and
/// seed.
pub fn cmd_sample(cfg: &SampleConfig, out: &Path) -> Result<Manifest, PipelineError> {
    with_dir(out, "sample", cfg, |dir| {
        let loaded = load_graph(&cfg.graph, cfg.seed)?;
        let g = &loaded.graph;
        let design = resolve_design(&cfg.design, g)?;
        note_calibration(dir, &design);
        let seed = derive_seed(cfg.seed, streams::SIM_TRIAL, 0);
        let s = sample(design.design, g, design.params, seed).map_err(Stage::Sample.wrap())?;
        let file = SampleFile {
            design,
            sample: s.record(g),
        };
        dir.json("sample.json", &file)?;
        dir.file("sample.edgelist", |w| s.sampled_graph.write_edge_list(w))?;
        dir.file("observed_counts.csv", |w| write_counts_csv(w, &s.observed_counts))?;
        write_graph_files(dir, &loaded)?;
        Ok(())
    })
}

fn note_calibration(dir: &mut RunDir, design: &ResolvedDesign) {
    if let (Some(c), DesignParams::Rate(p)) = (design.coverage, design.params) {
        dir.note(format!(
            "snowball seed rate {p} calibrated so the expected sample holds a fraction {c} of the vertices"
        ));
    }
}

/// Scores against the truth, when it is known.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KsScores {
    pub sample: f64,
    pub smoothed: f64,
    pub estimate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateReport {
    pub design: Design,
    pub operator: OperatorParams,
    pub n_v: usize,
    pub max_degree: usize,
    pub lambda: f64,
    pub lambda_selected_by_sure: bool,
    pub bandwidth: usize,
    pub delta: f64,
    pub converged: bool,
    pub kkt_residual: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ks: Option<KsScores>,
    pub bounds: BoundsReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub true_bounds: Option<BoundsReport>,
}

fn write_estimation(
    dir: &mut RunDir,
    est: &Estimation,
    truth: Option<&[f64]>,
    true_bounds: Option<BoundsReport>,
) -> Result<(), PipelineError> {
    let ks = match truth {
        Some(t) => {
            let (sample, smoothed, estimate) = score(est, t)?;
            Some(KsScores {
                sample,
                smoothed,
                estimate,
            })
        }
        None => None,
    };
    let bounds = epidemic_bounds(&est.solution.n_hat, None).map_err(Stage::Score.wrap())?;
    let report = EstimateReport {
        design: est.input.design,
        operator: est.input.operator,
        n_v: est.input.n_v,
        max_degree: est.input.max_degree,
        lambda: est.solution.lambda,
        lambda_selected_by_sure: est.curve.is_some(),
        bandwidth: est.covariance.bandwidth,
        delta: est.covariance.delta,
        converged: est.solution.converged,
        kkt_residual: est.solution.kkt_residual,
        ks,
        bounds,
        true_bounds,
    };
    dir.file("estimate.csv", |w| {
        let mut c = csv::Writer::from_writer(w);
        let mut header = vec!["degree", "observed", "estimate", "smoothed"];
        if truth.is_some() {
            header.push("truth");
        }
        c.write_record(&header)?;
        let len = est.n_star.len().max(truth.map_or(0, <[f64]>::len));
        let at = |v: &[f64], k: usize| v.get(k).copied().unwrap_or(0.0).to_string();
        for k in 0..len {
            let mut row = vec![
                k.to_string(),
                at(&est.n_star, k),
                at(&est.solution.n_hat, k),
                at(&est.smoothed, k),
            ];
            if let Some(t) = truth {
                row.push(at(t, k));
            }
            c.write_record(&row)?;
        }
        c.flush()?;
        Ok(())
    })?;
    if let Some(curve) = &est.curve {
        dir.file("sure_curve.csv", |w| curve.write_csv(w))?;
    }
    dir.json("solution.json", &est.solution)?;
    dir.json("report.json", &report)?;
    if !est.solution.converged {
        dir.note("the solver stopped at its iteration cap; the estimate is the last iterate");
    }
    Ok(())
}

/// Samples the configured graph and estimates its degree counts.
pub fn cmd_estimate(cfg: &RunConfig, out: &Path) -> Result<Manifest, PipelineError> {
    with_dir(out, "estimate", cfg, |dir| {
        cfg.validate().map_err(Stage::Config.wrap())?;
        let loaded = load_graph(&cfg.graph, cfg.seed)?;
        let g = &loaded.graph;
        let design = resolve_design(&cfg.design, g)?;
        note_calibration(dir, &design);
        let (s, est) = sample_and_estimate(cfg, g, &design, 0)?;
        dir.json(
            "sample.json",
            &SampleFile {
                design,
                sample: s.record(g),
            },
        )?;
        let truth = true_counts(g);
        let true_bounds = graph_bounds(g).map_err(Stage::Score.wrap())?;
        write_estimation(dir, &est, Some(&truth), Some(true_bounds))?;
        write_graph_files(dir, &loaded)
    })
}

/// Estimation from a persisted sample, without access to the true graph.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateSampleConfig {
    pub sample: PathBuf,
    #[serde(default)]
    pub degree_bound: DegreeBound,
    #[serde(default)]
    pub estimator: EstimatorSettings,
    #[serde(default)]
    pub seed: u64,
}

pub fn read_sample_file(path: &Path) -> Result<SampleFile> {
    let text = fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

pub fn cmd_estimate_sample(cfg: &EstimateSampleConfig, out: &Path) -> Result<Manifest, PipelineError> {
    with_dir(out, "estimate", cfg, |dir| {
        let file = read_sample_file(&cfg.sample).map_err(Stage::Sample.wrap())?;
        let rec = &file.sample;
        let op = operator_params(rec.params, rec.n_e, rec.n_star_e).map_err(Stage::Config.wrap())?;
        let observed_max = rec.observed_counts.len().saturating_sub(1);
        let m =
            resolve_degree_bound(cfg.degree_bound, rec.design, op, observed_max, None).map_err(Stage::Config.wrap())?;
        let input = EstimationInput {
            design: rec.design,
            operator: op,
            n_v: rec.n_v,
            max_degree: m,
            observed_counts: rec.observed_counts.clone(),
        };
        let est = estimate_counts(&input, &cfg.estimator, derive_seed(cfg.seed, streams::SIM_SURE, 0))?;
        write_estimation(dir, &est, None, None)
    })
}

/// Writes `trials.csv`, `failures.csv`, `summary.csv` and `summary.json`.
pub fn cmd_simulate(cfg: &SweepConfig, out: &Path) -> Result<Manifest, PipelineError> {
    with_dir(out, "simulate", cfg, |dir| {
        cfg.validate().map_err(Stage::Config.wrap())?;
        let results = cfg.runs.iter().map(simulate_run).collect::<Result<Vec<_>, _>>()?;
        dir.file("trials.csv", |w| {
            let mut c = csv::Writer::from_writer(w);
            c.write_record([
                "run",
                "label",
                "trial",
                "seed",
                "max_degree",
                "n_star_v",
                "lambda",
                "ks_sample",
                "ks_smoothed",
                "ks_estimate",
                "converged",
            ])?;
            for (i, res) in results.iter().enumerate() {
                for r in &res.records {
                    c.write_record([
                        i.to_string(),
                        res.summary.label.clone(),
                        r.trial.to_string(),
                        r.seed.to_string(),
                        r.max_degree.to_string(),
                        r.n_star_v.to_string(),
                        r.lambda.to_string(),
                        r.ks_sample.to_string(),
                        r.ks_smoothed.to_string(),
                        r.ks_estimate.to_string(),
                        r.converged.to_string(),
                    ])?;
                }
            }
            c.flush()?;
            Ok(())
        })?;
        dir.file("failures.csv", |w| {
            let mut c = csv::Writer::from_writer(w);
            c.write_record(["run", "label", "trial", "stage", "message"])?;
            for (i, res) in results.iter().enumerate() {
                for f in &res.failures {
                    c.write_record([
                        i.to_string(),
                        res.summary.label.clone(),
                        f.trial.to_string(),
                        f.stage.to_string(),
                        f.message.clone(),
                    ])?;
                }
            }
            c.flush()?;
            Ok(())
        })?;
        let summaries: Vec<&RunSummary> = results.iter().map(|r| &r.summary).collect();
        dir.file("summary.csv", |w| write_summary_csv(w, &summaries))?;
        dir.json("summary.json", &summaries)?;
        let failed: usize = summaries.iter().map(|s| s.failures).sum();
        if failed > 0 {
            dir.note(format!("{failed} trials failed and are excluded from the summaries"));
        }
        for s in &summaries {
            if let (Some(c), DesignParams::Rate(p)) = (s.design.coverage, s.design.params) {
                dir.note(format!(
                    "{}: snowball seed rate {p} calibrated for coverage {c}",
                    s.label
                ));
            }
        }
        Ok(())
    })
}

fn write_summary_csv(w: &mut impl Write, summaries: &[&RunSummary]) -> Result<()> {
    let mut c = csv::Writer::from_writer(w);
    c.write_record([
        "run",
        "label",
        "n_v",
        "n_e",
        "design",
        "trials",
        "failures",
        "median_ks_sample",
        "iqr_ks_sample",
        "median_ks_smoothed",
        "iqr_ks_smoothed",
        "median_ks_estimate",
        "iqr_ks_estimate",
        "median_lambda",
        "estimate_wins",
    ])?;
    for (i, s) in summaries.iter().enumerate() {
        c.write_record([
            i.to_string(),
            s.label.clone(),
            s.graph.n_v.to_string(),
            s.graph.n_e.to_string(),
            s.design.design.to_string(),
            s.trials.to_string(),
            s.failures.to_string(),
            s.ks_sample.median.to_string(),
            s.ks_sample.iqr.to_string(),
            s.ks_smoothed.median.to_string(),
            s.ks_smoothed.iqr.to_string(),
            s.ks_estimate.median.to_string(),
            s.ks_estimate.iqr.to_string(),
            s.lambda.median.to_string(),
            s.estimate_wins.to_string(),
        ])?;
    }
    c.flush()?;
    Ok(())
}

/// Input of `bounds`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BoundsInput {
    /// A full graph; adds the spectral radius.
    Graph { graph: GraphSource },
    /// A CSV with a `degree` column and a count column, such as the
    /// `estimate.csv` written by `estimate`.
    Counts {
        path: PathBuf,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        column: Option<String>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundsConfig {
    pub input: BoundsInput,
    /// Edge count for `U`; defaults to half the degree sum.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_e: Option<f64>,
    #[serde(default)]
    pub seed: u64,
}

/// Reads a count column from a CSV with a `degree` column. Without an
/// explicit column, `estimate` is used if present, else the second column.
pub fn read_count_column(path: &Path, column: Option<&str>) -> Result<Vec<f64>> {
    let mut r = csv::Reader::from_path(path)?;
    let headers = r.headers()?.clone();
    let find = |name: &str| headers.iter().position(|h| h == name);
    let degree = find("degree").ok_or_else(|| Error::Parse {
        line: 1,
        message: "missing 'degree' column".into(),
    })?;
    let col = match column {
        Some(name) => find(name).ok_or_else(|| Error::Parse {
            line: 1,
            message: format!("missing '{name}' column"),
        })?,
        None => find("estimate").unwrap_or(if degree == 0 { 1 } else { 0 }),
    };
    let mut counts = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        let parse = |idx: usize| -> Result<f64> {
            rec.get(idx)
                .and_then(|s| s.trim().parse::<f64>().ok())
                .ok_or_else(|| Error::Parse {
                    line,
                    message: "expected a number".into(),
                })
        };
        let k = parse(degree)?;
        let v = parse(col)?;
        if k < 0.0 || k.fract() != 0.0 {
            return Err(Error::Parse {
                line,
                message: "degree must be a non-negative integer".into(),
            });
        }
        let k = k as usize;
        if counts.len() <= k {
            counts.resize(k + 1, 0.0);
        }
        counts[k] += v;
    }
    if counts.is_empty() {
        return invalid("count file has no rows");
    }
    Ok(counts)
}

pub fn cmd_bounds(cfg: &BoundsConfig, out: &Path) -> Result<Manifest, PipelineError> {
    with_dir(out, "bounds", cfg, |dir| {
        let report = match &cfg.input {
            BoundsInput::Graph { graph } => {
                let loaded = load_graph(graph, cfg.seed)?;
                let g = &loaded.graph;
                let counts = true_counts(g);
                let n_e = cfg.n_e.unwrap_or(g.edge_count() as f64);
                let report = epidemic_bounds(&counts, Some(n_e)).map_err(Stage::Score.wrap())?;
                let lambda1 = crate::metrics::largest_adjacency_eigenvalue(g, 1e-10).map_err(Stage::Score.wrap())?;
                write_graph_files(dir, &loaded)?;
                report.with_lambda1(lambda1)
            }
            BoundsInput::Counts { path, column } => {
                let counts = read_count_column(path, column.as_deref()).map_err(Stage::Graph.wrap())?;
                epidemic_bounds(&counts, cfg.n_e).map_err(Stage::Score.wrap())?
            }
        };
        if report.degenerate {
            dir.note("mean degree is zero; the upper bounds are infinite");
        }
        dir.json("bounds.json", &report)?;
        dir.file("bounds.csv", |w| report.write_csv(w))
    })
}

/// Poisson-approximation check for induced sampling of a graph.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoissonCheck {
    pub graph: GraphSource,
    /// Degrees `k` whose count `N*_k` is compared with Poisson(`(P N)_k`).
    #[serde(default)]
    pub marginal_degrees: Vec<usize>,
    /// Thresholds `k` for the Chen–Stein diagnostics of `#{d* >= k}`.
    #[serde(default)]
    pub cumulative_degrees: Vec<usize>,
    pub trials: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnoseConfig {
    pub design: Design,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rate: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub walk: Option<(usize, usize)>,
    pub max_degree: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub poisson: Option<PoissonCheck>,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralReport {
    pub design: Design,
    pub operator: OperatorParams,
    pub max_degree: usize,
    pub condition_number: f64,
    pub numerical_rank: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eigenvalue_ratio: Option<f64>,
    pub column_sums: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginalReport {
    pub k: usize,
    pub fit: PoissonFit,
}

/// Operator spectrum and, optionally, Poisson diagnostics of induced sampling.
pub fn cmd_diagnose(cfg: &DiagnoseConfig, out: &Path) -> Result<Manifest, PipelineError> {
    with_dir(out, "diagnose", cfg, |dir| {
        let params = match (cfg.design, cfg.rate, cfg.walk) {
            (Design::RandomWalk, _, Some((n_e, sampled_edges))) => OperatorParams::Walk { n_e, sampled_edges },
            (Design::RandomWalk, _, None) => {
                return Err(Stage::Config.error(Error::InvalidArgument(
                    "random walk operator needs the true and sampled edge counts".into(),
                )))
            }
            (_, Some(p), _) => OperatorParams::Rate(p),
            (d, None, _) => {
                return Err(Stage::Config.error(Error::InvalidArgument(format!("{d} operator needs a rate"))))
            }
        };
        let op = SamplingOperator::<f64>::build(cfg.design, params, cfg.max_degree).map_err(Stage::Operator.wrap())?;
        let diag = spectral(&op);
        let report = SpectralReport {
            design: cfg.design,
            operator: params,
            max_degree: cfg.max_degree,
            condition_number: diag.condition_number,
            numerical_rank: diag.numerical_rank,
            eigenvalue_ratio: diag.eigenvalue_ratio,
            column_sums: op.column_sums(),
        };
        if report.condition_number.is_infinite() {
            dir.note("operator is numerically rank deficient; condition number reported as infinite");
        }
        dir.file("operator.csv", |w| op.write_csv(w))?;
        dir.file("spectrum.csv", |w| diag.write_spectrum_csv(w))?;
        dir.json("spectral.json", &report)?;
        if let Some(check) = &cfg.poisson {
            poisson_outputs(dir, cfg, check)?;
        }
        Ok(())
    })
}

fn poisson_outputs(dir: &mut RunDir, cfg: &DiagnoseConfig, check: &PoissonCheck) -> Result<(), PipelineError> {
    let p = match (cfg.design, cfg.rate) {
        (Design::Induced, Some(p)) => p,
        _ => {
            return Err(Stage::Config.error(Error::InvalidArgument(
                "Poisson diagnostics apply to induced sampling".into(),
            )))
        }
    };
    let loaded = load_graph(&check.graph, cfg.seed)?;
    let g = &loaded.graph;
    let trial_seed = derive_seed(cfg.seed, streams::POISSON_TRIALS, 0);
    let cumulative = check
        .cumulative_degrees
        .iter()
        .map(|&k| poisson_diagnostics(g, p, k, check.trials, trial_seed))
        .collect::<Result<Vec<PoissonDiagnostics>>>()
        .map_err(Stage::Diagnostics.wrap())?;
    let mut marginal = Vec::new();
    if !check.marginal_degrees.is_empty() {
        let m = g.max_degree();
        let op = SamplingOperator::<f64>::build(Design::Induced, OperatorParams::Rate(p), m)
            .map_err(Stage::Operator.wrap())?;
        let expected = op.apply(&true_counts(g)).map_err(Stage::Operator.wrap())?;
        let draws = induced_count_draws(g, p, m, check.trials, trial_seed).map_err(Stage::Diagnostics.wrap())?;
        for &k in &check.marginal_degrees {
            let column: Vec<usize> = draws.iter().map(|d| d.get(k).copied().unwrap_or(0)).collect();
            let lambda = expected.get(k).copied().unwrap_or(0.0);
            marginal.push(MarginalReport {
                k,
                fit: poisson_fit(&column, lambda),
            });
        }
    }
    dir.json(
        "poisson.json",
        &serde_json::json!({ "cumulative": cumulative, "marginal": marginal }),
    )?;
    dir.file("poisson_qq.csv", |w| {
        let mut c = csv::Writer::from_writer(w);
        c.write_record(["kind", "k", "poisson_quantile", "empirical_quantile"])?;
        for d in &cumulative {
            for (a, b) in &d.qq {
                c.write_record(["cumulative".to_string(), d.k.to_string(), a.to_string(), b.to_string()])?;
            }
        }
        for m in &marginal {
            for (a, b) in &m.fit.qq {
                c.write_record(["marginal".to_string(), m.k.to_string(), a.to_string(), b.to_string()])?;
            }
        }
        c.flush()?;
        Ok(())
    })
}
