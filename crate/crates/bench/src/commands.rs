//! The work behind each CLI verb. Every command takes a fully resolved job,
//! writes its outputs with manifest sidecars and returns what it computed.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use anyhow::{bail, ensure, Context, Result};
use rayon::prelude::*;
use serde::Serialize;

use pgo_core::g2o::{read_g2o, save_g2o};
use pgo_core::{gauss_newton, generate, levenberg_marquardt, EnvParams, PoseGraph, SolveReport, SolveState};
use pgo_rl::environment::EpisodeConfig;
use pgo_rl::networks::NetConfig;
use pgo_rl::sac::{ActMode, Agent, Sac, TrainConfig};
use pgo_rl::train::{evaluate, reward_curve_csv, synthetic_factory, AgentPolicy, EvalReport, EpisodeSummary};

use crate::manifest::{ManifestBuilder, RunManifest};
use crate::plot::{render_svg, Curve};

/// Version tag of the result CSV layout, recorded in every manifest.
pub const RESULTS_SCHEMA: &str = "results-v1";
pub const DEFAULT_MAX_NODES: usize = 5000;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Method {
    Gn,
    Lm,
}

impl FromStr for Method {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "gn" => Ok(Method::Gn),
            "lm" => Ok(Method::Lm),
            _ => Err(format!("unknown solver {s:?} (expected gn or lm)")),
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Gn => "gn",
            Method::Lm => "lm",
        })
    }
}

impl Method {
    pub fn run(self, graph: &PoseGraph, init: &SolveState, iters: usize) -> Result<SolveReport> {
        Ok(match self {
            Method::Gn => gauss_newton(graph, init, iters)?,
            Method::Lm => levenberg_marquardt(graph, init, iters)?,
        })
    }

    pub fn label(self, iters: usize) -> String {
        format!("{}{iters}", self.to_string().to_uppercase())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum InitSource {
    Odometry,
    /// Vertices of a g2o file with the same node count.
    File(PathBuf),
}

/// One line of every result CSV.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ResultRow {
    pub dataset: String,
    pub method: String,
    pub seed: u64,
    #[serde(rename = "F")]
    pub f: f64,
    pub iterations: usize,
    pub time_s: f64,
}

pub fn write_rows(path: &Path, rows: &[ResultRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("writing {}", path.display()))?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

fn dataset_name(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

/// Extra sidecar-free path next to `base`: `dir/<stem><suffix>`.
pub fn sibling(base: &Path, suffix: &str) -> PathBuf {
    let stem = base.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    base.with_file_name(format!("{stem}{suffix}"))
}

fn load_graph(path: &Path, manifest: &mut ManifestBuilder) -> Result<PoseGraph> {
    manifest.input(path)?;
    Ok(read_g2o(path).with_context(|| format!("reading {}", path.display()))?.graph)
}

fn load_init(graph: &PoseGraph, init: &InitSource, manifest: &mut ManifestBuilder) -> Result<SolveState> {
    match init {
        InitSource::Odometry => Ok(graph.odometry_init()?),
        InitSource::File(p) => {
            let other = load_graph(p, manifest)?;
            ensure!(
                other.num_nodes() == graph.num_nodes(),
                "initial estimate {} has {} nodes, graph has {}",
                p.display(),
                other.num_nodes(),
                graph.num_nodes()
            );
            Ok(other.estimate())
        }
    }
}

fn check_budget(nodes: usize, max_nodes: usize, allow_large: bool) -> Result<()> {
    if nodes > max_nodes && !allow_large {
        bail!(
            "graph has {nodes} nodes, above the evaluation budget of {max_nodes}; \
             pass --allow-large (or raise --max-nodes) to run it anyway"
        );
    }
    Ok(())
}

fn write_g2o_with_state(graph: &PoseGraph, state: &SolveState, path: &Path) -> Result<()> {
    let mut g = graph.clone();
    g.set_estimate(state);
    save_g2o(&g, path).with_context(|| format!("writing {}", path.display()))
}

// ---------------------------------------------------------------- generate

#[derive(Clone, Debug)]
pub struct GenerateJob {
    pub params: EnvParams,
    /// Graph file; vertices hold the odometry initialization.
    pub out: PathBuf,
}

/// Writes the graph and `<stem>_gt.g2o` holding the ground truth.
pub fn cmd_generate(job: &GenerateJob, params: &BTreeMap<String, String>) -> Result<RunManifest> {
    job.params.validate().map_err(anyhow::Error::msg)?;
    let manifest = ManifestBuilder::start("generate", Some(job.params.seed));
    let gen = generate(&job.params);
    let init = gen.graph.odometry_init()?;
    let gt_path = sibling(&job.out, "_gt.g2o");
    write_g2o_with_state(&gen.graph, &init, &job.out)?;
    write_g2o_with_state(&gen.graph, &gen.ground_truth, &gt_path)?;
    manifest.finish(params, &[job.out.clone(), gt_path])
}

// ------------------------------------------------------------------- solve

#[derive(Clone, Debug)]
pub struct SolveJob {
    pub graph: PathBuf,
    pub method: Method,
    pub iters: usize,
    pub init: InitSource,
    pub out: PathBuf,
    /// Per-iteration objective trace.
    pub trace: Option<PathBuf>,
    /// Final estimate as g2o.
    pub estimate: Option<PathBuf>,
    pub seed: u64,
}

pub fn cmd_solve(job: &SolveJob, params: &BTreeMap<String, String>) -> Result<SolveReport> {
    let mut manifest = ManifestBuilder::start("solve", Some(job.seed));
    let graph = load_graph(&job.graph, &mut manifest)?;
    let init = load_init(&graph, &job.init, &mut manifest)?;
    let report = job.method.run(&graph, &init, job.iters)?;
    if let Some(d) = &report.diagnostic {
        log::warn!("{}: {d}", job.method);
    }
    let row = ResultRow {
        dataset: dataset_name(&job.graph),
        method: job.method.label(job.iters),
        seed: job.seed,
        f: report.final_chi2(),
        iterations: report.iterations,
        time_s: report.wall_time,
    };
    write_rows(&job.out, &[row])?;
    let mut outputs = vec![job.out.clone()];
    if let Some(t) = &job.trace {
        let mut w = csv::Writer::from_path(t)?;
        w.write_record(["iteration", "F"])?;
        for (k, f) in report.chi2_trace.iter().enumerate() {
            w.write_record([k.to_string(), f.to_string()])?;
        }
        w.flush()?;
        outputs.push(t.clone());
    }
    if let Some(e) = &job.estimate {
        write_g2o_with_state(&graph, &report.final_state, e)?;
        outputs.push(e.clone());
    }
    manifest.finish(params, &outputs)?;
    Ok(report)
}

// ------------------------------------------------------------------- train

/// Settings sized for a single desktop core: narrow networks, short BPTT
/// windows and a fixed number of updates per episode.
pub fn desk_train_config(seed: u64) -> TrainConfig {
    TrainConfig {
        gamma: 0.9,
        lr: 1e-3,
        batch: 16,
        updates_per_episode: Some(20),
        bptt_window: Some(16),
        reward_scale: 0.01,
        net: NetConfig { dense: 32, lstm: 32 },
        seed,
        ..TrainConfig::default()
    }
}

#[derive(Clone, Debug)]
pub struct TrainJob {
    /// Distribution of training graphs; its seed is unused (graphs are
    /// drawn from the training stream).
    pub env: EnvParams,
    pub episodes: usize,
    pub episode: EpisodeConfig,
    pub config: TrainConfig,
    pub checkpoint: PathBuf,
    pub curve: PathBuf,
}

pub fn train_agent(job: &TrainJob) -> Result<(Sac, Vec<EpisodeSummary>)> {
    job.env.validate().map_err(anyhow::Error::msg)?;
    job.episode.validate()?;
    let mut sac = Sac::new(job.config.clone()).map_err(anyhow::Error::msg)?;
    sac.agent.encoder.symmetric = job.episode.symmetric_messages;
    sac.agent.target_encoder.symmetric = job.episode.symmetric_messages;
    let curve = sac.train(job.episodes, job.episode, synthetic_factory(job.env), |e| {
        log::info!(
            "episode {} reward {:.1} oc {:.4} -> {:.4}",
            e.episode,
            e.cumulative_reward,
            e.initial_oc,
            e.final_oc
        );
    })?;
    Ok((sac, curve))
}

pub fn cmd_train(job: &TrainJob, params: &BTreeMap<String, String>) -> Result<Vec<EpisodeSummary>> {
    if job.episodes == 0 {
        log::info!("0 episodes requested; nothing to do");
        return Ok(Vec::new());
    }
    let manifest = ManifestBuilder::start("train", Some(job.config.seed));
    let (sac, curve) = train_agent(job)?;
    sac.agent.save(&job.checkpoint)?;
    std::fs::write(&job.curve, reward_curve_csv(&curve))?;
    manifest.finish(params, &[job.checkpoint.clone(), job.curve.clone()])?;
    Ok(curve)
}

// -------------------------------------------------------------------- eval

#[derive(Clone, Debug)]
pub struct EvalJob {
    pub graph: PathBuf,
    pub checkpoint: PathBuf,
    pub init: InitSource,
    /// Cycles here already include any test-time multiplier.
    pub episode: EpisodeConfig,
    pub runs: usize,
    pub max_nodes: usize,
    pub allow_large: bool,
    pub out: PathBuf,
    pub estimate: Option<PathBuf>,
    pub seed: u64,
}

pub struct Evaluated {
    pub graph: PoseGraph,
    pub report: EvalReport,
}

fn eval_inner(job: &EvalJob, manifest: &mut ManifestBuilder) -> Result<Evaluated> {
    ensure!(job.runs > 0, "runs must be at least 1");
    let graph = load_graph(&job.graph, manifest)?;
    check_budget(graph.num_nodes(), job.max_nodes, job.allow_large)?;
    let init = load_init(&graph, &job.init, manifest)?;
    manifest.input(&job.checkpoint)?;
    let agent = Agent::load(&job.checkpoint)?;
    let episode = EpisodeConfig {
        symmetric_messages: agent.encoder.symmetric,
        ..job.episode
    };
    let mut policy = AgentPolicy::new(&agent, ActMode::Deterministic, job.seed);
    let report = evaluate(&graph, &init, episode, &mut policy, job.runs)?;
    Ok(Evaluated { graph, report })
}

fn eval_rows(dataset: &str, seed: u64, steps: usize, report: &EvalReport) -> Vec<ResultRow> {
    let mut rows: Vec<ResultRow> = report
        .runs
        .iter()
        .enumerate()
        .map(|(k, r)| ResultRow {
            dataset: dataset.to_string(),
            method: format!("rl-run{k}"),
            seed,
            f: r.objective,
            iterations: steps,
            time_s: r.time_s,
        })
        .collect();
    rows.push(ResultRow {
        dataset: dataset.to_string(),
        method: "rl-mean".into(),
        seed,
        f: report.mean_objective,
        iterations: steps,
        time_s: report.mean_time,
    });
    rows.push(ResultRow {
        dataset: dataset.to_string(),
        method: "rl-best".into(),
        seed,
        f: report.best.objective,
        iterations: steps,
        time_s: report.mean_time,
    });
    rows
}

pub fn cmd_eval(job: &EvalJob, params: &BTreeMap<String, String>) -> Result<EvalReport> {
    let mut manifest = ManifestBuilder::start("eval", Some(job.seed));
    let ev = eval_inner(job, &mut manifest)?;
    let steps = job.episode.cycles * ev.graph.num_edges();
    write_rows(&job.out, &eval_rows(&dataset_name(&job.graph), job.seed, steps, &ev.report))?;
    let mut outputs = vec![job.out.clone()];
    if let Some(e) = &job.estimate {
        write_g2o_with_state(&ev.graph, &ev.report.best.state, e)?;
        outputs.push(e.clone());
    }
    manifest.finish(params, &outputs)?;
    Ok(ev.report)
}

// --------------------------------------------------------------- bootstrap

#[derive(Clone, Debug)]
pub struct BootstrapJob {
    pub eval: EvalJob,
    pub method: Method,
    pub iters: usize,
}

#[derive(Clone, Debug)]
pub struct BootstrapReport {
    pub rl: EvalReport,
    pub solver: SolveReport,
    /// RL mean episode time plus solver wall time.
    pub combined_time: f64,
}

pub fn cmd_bootstrap(job: &BootstrapJob, params: &BTreeMap<String, String>) -> Result<BootstrapReport> {
    let mut manifest = ManifestBuilder::start("bootstrap", Some(job.eval.seed));
    let ev = eval_inner(&job.eval, &mut manifest)?;
    let solver = job.method.run(&ev.graph, &ev.report.best.state, job.iters)?;
    let combined_time = ev.report.mean_time + solver.wall_time;
    let dataset = dataset_name(&job.eval.graph);
    let steps = job.eval.episode.cycles * ev.graph.num_edges();
    let seed = job.eval.seed;
    let rows = vec![
        ResultRow {
            dataset: dataset.clone(),
            method: "rl".into(),
            seed,
            f: ev.report.best.objective,
            iterations: steps,
            time_s: ev.report.mean_time,
        },
        ResultRow {
            dataset: dataset.clone(),
            method: job.method.label(job.iters),
            seed,
            f: solver.final_chi2(),
            iterations: solver.iterations,
            time_s: solver.wall_time,
        },
        ResultRow {
            dataset,
            method: format!("rl+{}", job.method.label(job.iters)),
            seed,
            f: solver.final_chi2(),
            iterations: solver.iterations,
            time_s: combined_time,
        },
    ];
    write_rows(&job.eval.out, &rows)?;
    let mut outputs = vec![job.eval.out.clone()];
    if let Some(e) = &job.eval.estimate {
        write_g2o_with_state(&ev.graph, &solver.final_state, e)?;
        outputs.push(e.clone());
    }
    manifest.finish(params, &outputs)?;
    Ok(BootstrapReport {
        rl: ev.report,
        solver,
        combined_time,
    })
}

// -------------------------------------------------------------------- plot

#[derive(Clone, Debug)]
pub struct PlotJob {
    pub inputs: Vec<PathBuf>,
    /// One per input; file stems when empty.
    pub labels: Vec<String>,
    pub out: PathBuf,
}

pub fn cmd_plot(job: &PlotJob, params: &BTreeMap<String, String>) -> Result<()> {
    ensure!(!job.inputs.is_empty(), "no trajectory files given");
    ensure!(
        job.labels.is_empty() || job.labels.len() == job.inputs.len(),
        "{} labels for {} files",
        job.labels.len(),
        job.inputs.len()
    );
    let mut manifest = ManifestBuilder::start("plot", None);
    let mut curves = Vec::new();
    for (k, p) in job.inputs.iter().enumerate() {
        let g = load_graph(p, &mut manifest)?;
        let label = job.labels.get(k).cloned().unwrap_or_else(|| dataset_name(p));
        curves.push(Curve::from_graph(&label, &g));
    }
    std::fs::write(&job.out, render_svg(&curves)?)?;
    manifest.finish(params, std::slice::from_ref(&job.out))?;
    Ok(())
}

// ------------------------------------------------------------------ report

#[derive(Clone, Debug)]
pub struct ReportJob {
    /// Instance family; the seed is replaced by each entry of `seeds`.
    pub env: EnvParams,
    pub seeds: Vec<u64>,
    pub checkpoint: Option<PathBuf>,
    pub episode: EpisodeConfig,
    pub runs: usize,
    pub max_nodes: usize,
    pub allow_large: bool,
    pub out: PathBuf,
}

/// Baselines (GN100, LM30, LM100) and, with a checkpoint, the agent and its
/// bootstrapped refinements (RL+GN50, RL+LM30) on each seeded instance.
pub fn sweep(job: &ReportJob, agent: Option<&Agent>) -> Result<Vec<ResultRow>> {
    job.env.validate().map_err(anyhow::Error::msg)?;
    check_budget(job.env.n, job.max_nodes, job.allow_large)?;
    let per_seed: Vec<Result<Vec<ResultRow>>> = job
        .seeds
        .par_iter()
        .map(|&seed| {
            let gen = generate(&job.env.with_seed(seed));
            let g = &gen.graph;
            let init = g.odometry_init()?;
            let dataset = format!("synthetic-n{}", job.env.n);
            let row = |method: String, f: f64, iterations: usize, time_s: f64| ResultRow {
                dataset: dataset.clone(),
                method,
                seed,
                f,
                iterations,
                time_s,
            };
            let mut rows = Vec::new();
            for (m, it) in [(Method::Gn, 100), (Method::Lm, 30), (Method::Lm, 100)] {
                let r = m.run(g, &init, it)?;
                rows.push(row(m.label(it), r.final_chi2(), r.iterations, r.wall_time));
            }
            if let Some(agent) = agent {
                let episode = EpisodeConfig {
                    symmetric_messages: agent.encoder.symmetric,
                    ..job.episode
                };
                let mut policy = AgentPolicy::new(agent, ActMode::Deterministic, seed);
                let ev = evaluate(g, &init, episode, &mut policy, job.runs)?;
                let steps = episode.cycles * g.num_edges();
                rows.push(row("RL".into(), ev.best.objective, steps, ev.mean_time));
                for (m, it) in [(Method::Gn, 50), (Method::Lm, 30)] {
                    let r = m.run(g, &ev.best.state, it)?;
                    rows.push(row(format!("RL+{}", m.label(it)), r.final_chi2(), r.iterations, ev.mean_time + r.wall_time));
                }
            }
            Ok(rows)
        })
        .collect();
    let mut rows = Vec::new();
    for r in per_seed {
        rows.extend(r?);
    }
    Ok(rows)
}

pub fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Markdown table of median objective and mean time per method.
pub fn summary_table(rows: &[ResultRow]) -> String {
    let mut methods: Vec<&str> = Vec::new();
    for r in rows {
        if !methods.contains(&r.method.as_str()) {
            methods.push(&r.method);
        }
    }
    let mut s = String::from("| method | median F(x) | mean time [s] | instances |\n|---|---|---|---|\n");
    for m in methods {
        let sel: Vec<&ResultRow> = rows.iter().filter(|r| r.method == m).collect();
        let mut fs: Vec<f64> = sel.iter().map(|r| r.f).collect();
        let t = sel.iter().map(|r| r.time_s).sum::<f64>() / sel.len() as f64;
        s.push_str(&format!("| {m} | {:.2e} | {t:.3} | {} |\n", median(&mut fs), sel.len()));
    }
    s
}

pub fn cmd_report(job: &ReportJob, params: &BTreeMap<String, String>) -> Result<Vec<ResultRow>> {
    let mut manifest = ManifestBuilder::start("report", None);
    let agent = match &job.checkpoint {
        Some(p) => {
            manifest.input(p)?;
            Some(Agent::load(p)?)
        }
        None => None,
    };
    let start = Instant::now();
    let rows = sweep(job, agent.as_ref())?;
    log::info!("sweep finished in {:.1} s", start.elapsed().as_secs_f64());
    write_rows(&job.out, &rows)?;
    let md = sibling(&job.out, ".md");
    std::fs::write(&md, summary_table(&rows))?;
    manifest.finish(params, &[job.out.clone(), md])?;
    Ok(rows)
}
