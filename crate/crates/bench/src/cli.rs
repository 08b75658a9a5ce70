//! Argument parsing. Every option may also come from a `--config` file
//! (`key = value`, keys spelled like the long flags); flags win.

use std::path::PathBuf;

use anyhow::{bail, Result};
use clap::{Args, Parser, Subcommand};

use pgo_core::EnvParams;
use pgo_rl::environment::{BonusMode, EpisodeConfig};
use pgo_rl::networks::NetConfig;
use pgo_rl::sac::TrainConfig;

use crate::commands::{
    cmd_bootstrap, cmd_eval, cmd_generate, cmd_plot, cmd_report, cmd_solve, cmd_train, desk_train_config,
    BootstrapJob, EvalJob, GenerateJob, InitSource, Method, PlotJob, ReportJob, SolveJob, TrainJob,
    DEFAULT_MAX_NODES, RESULTS_SCHEMA,
};
use crate::config::Settings;

#[derive(Debug, Parser)]
#[command(name = "pgo", version, about = "Planar pose-graph optimization: solvers, RL agent and benchmarks")]
pub struct Cli {
    /// key = value file supplying defaults for any option.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Draw a synthetic graph; writes the graph and <stem>_gt.g2o.
    Generate(GenerateArgs),
    /// Run Gauss-Newton or Levenberg-Marquardt on a g2o file.
    Solve(SolveArgs),
    /// Train an agent on freshly sampled synthetic graphs.
    Train(TrainArgs),
    /// Deterministic agent episodes on one graph.
    Eval(EvalArgs),
    /// Agent estimate refined by a classical solver.
    Bootstrap(BootstrapArgs),
    /// SVG overlay of trajectories stored in g2o files.
    Plot(PlotArgs),
    /// Seeded sweep of baselines and agent over one instance family.
    Report(ReportArgs),
}

#[derive(Debug, Args, Default)]
pub struct EnvArgs {
    #[arg(long)]
    pub n: Option<usize>,
    /// Orientation noise std [rad].
    #[arg(long)]
    pub sigma_r: Option<f64>,
    /// Translation noise std [m].
    #[arg(long)]
    pub sigma_t: Option<f64>,
    /// Inter-nodal spacing [m].
    #[arg(long)]
    pub d: Option<f64>,
    /// Loop-closure probability.
    #[arg(long)]
    pub lc: Option<f64>,
}

impl EnvArgs {
    fn resolve(&self, s: &mut Settings, seed: u64) -> Result<EnvParams> {
        let p = EnvParams::new(
            s.get("n", self.n, 20)?,
            s.get("sigma_r", self.sigma_r, 0.3)?,
            s.get("sigma_t", self.sigma_t, 0.01)?,
            s.get("d", self.d, 3.0)?,
            s.get("lc", self.lc, 0.5)?,
            seed,
        );
        p.validate().map_err(anyhow::Error::msg)?;
        Ok(p)
    }
}

#[derive(Debug, Args, Default)]
pub struct EpisodeArgs {
    /// Passes over all edges per episode.
    #[arg(long)]
    pub cycles: Option<usize>,
    /// Maximum retraction per step [rad].
    #[arg(long)]
    pub action_range: Option<f64>,
    /// Bonus thresholds: absolute or relative (to the initial cost).
    #[arg(long)]
    pub bonus: Option<String>,
    /// Send encoder messages in both edge directions (training only).
    #[arg(long)]
    pub symmetric: Option<bool>,
}

impl EpisodeArgs {
    fn resolve(&self, s: &mut Settings, multiplier: usize) -> Result<EpisodeConfig> {
        let cycles: usize = s.get("cycles", self.cycles, 7)?;
        let mut e = EpisodeConfig::new(cycles * multiplier, s.get("action_range", self.action_range, 0.25)?);
        e.bonus_mode = match s.get("bonus", self.bonus.clone(), "absolute".into())?.as_str() {
            "absolute" => BonusMode::Absolute,
            "relative" => BonusMode::Relative,
            other => bail!("unknown bonus mode {other:?}"),
        };
        e.symmetric_messages = s.get("symmetric", self.symmetric, false)?;
        e.validate()?;
        Ok(e)
    }
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[command(flatten)]
    pub env: EnvArgs,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SolveArgs {
    #[arg(long)]
    pub graph: PathBuf,
    /// gn or lm.
    #[arg(long)]
    pub method: Option<String>,
    #[arg(long)]
    pub iters: Option<usize>,
    /// g2o file whose vertices initialize the solver (default: odometry).
    #[arg(long)]
    pub init_file: Option<PathBuf>,
    /// Result CSV.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub trace: Option<PathBuf>,
    #[arg(long)]
    pub estimate: Option<PathBuf>,
    /// Label for the seed column.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub env: EnvArgs,
    #[command(flatten)]
    pub episode: EpisodeArgs,
    #[arg(long)]
    pub episodes: Option<usize>,
    /// full (512-wide networks, one update per step) or desk.
    #[arg(long)]
    pub profile: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub dense: Option<usize>,
    #[arg(long)]
    pub lstm: Option<usize>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long)]
    pub initial_alpha: Option<f64>,
    #[arg(long)]
    pub auto_alpha: Option<bool>,
    #[arg(long)]
    pub reward_scale: Option<f64>,
    /// 0 means whole episodes.
    #[arg(long)]
    pub bptt_window: Option<usize>,
    /// 0 means one update per collected step.
    #[arg(long)]
    pub updates_per_episode: Option<usize>,
    #[arg(long)]
    pub replay_capacity: Option<usize>,
    #[arg(long)]
    pub critics: Option<usize>,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Reward-curve CSV (default: <checkpoint stem>_curve.csv).
    #[arg(long)]
    pub curve: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub graph: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[command(flatten)]
    pub episode: EpisodeArgs,
    /// Test-time multiplier on the number of cycles.
    #[arg(long)]
    pub cycles_multiplier: Option<usize>,
    #[arg(long)]
    pub runs: Option<usize>,
    #[arg(long)]
    pub init_file: Option<PathBuf>,
    #[arg(long)]
    pub max_nodes: Option<usize>,
    /// Evaluate graphs above the node budget.
    #[arg(long)]
    pub allow_large: bool,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Result CSV.
    #[arg(long)]
    pub out: PathBuf,
    /// Best estimate as g2o.
    #[arg(long)]
    pub estimate: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BootstrapArgs {
    #[command(flatten)]
    pub eval: EvalArgs,
    /// gn or lm.
    #[arg(long)]
    pub solver: Option<String>,
    #[arg(long)]
    pub iters: Option<usize>,
}

#[derive(Debug, Args)]
pub struct PlotArgs {
    /// g2o files; each vertex sequence becomes one polyline.
    pub inputs: Vec<PathBuf>,
    /// Comma-separated legend labels.
    #[arg(long, value_delimiter = ',')]
    pub labels: Vec<String>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[command(flatten)]
    pub env: EnvArgs,
    #[command(flatten)]
    pub episode: EpisodeArgs,
    /// Instances are seeds 0..count.
    #[arg(long)]
    pub instances: Option<u64>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub runs: Option<usize>,
    #[arg(long)]
    pub max_nodes: Option<usize>,
    #[arg(long)]
    pub allow_large: bool,
    /// Result CSV; a markdown summary is written next to it.
    #[arg(long)]
    pub out: PathBuf,
}

fn method(s: &mut Settings, key: &str, flag: Option<String>, default: &str) -> Result<Method> {
    s.get(key, flag, default.to_string())?.parse().map_err(anyhow::Error::msg)
}

fn init_source(s: &mut Settings, flag: Option<PathBuf>) -> Result<InitSource> {
    let file: Option<String> = s.get_opt("init_file", flag.map(|p| p.display().to_string()))?;
    Ok(file.map_or(InitSource::Odometry, |f| InitSource::File(f.into())))
}

fn train_config(a: &TrainArgs, s: &mut Settings) -> Result<TrainConfig> {
    let seed = s.get("seed", a.seed, 0)?;
    let base = match s.get("profile", a.profile.clone(), "full".into())?.as_str() {
        "full" => TrainConfig {
            seed,
            ..TrainConfig::default()
        },
        "desk" => desk_train_config(seed),
        other => bail!("unknown profile {other:?} (expected full or desk)"),
    };
    let zero_none = |v: usize| (v > 0).then_some(v);
    let c = TrainConfig {
        net: NetConfig {
            dense: s.get("dense", a.dense, base.net.dense)?,
            lstm: s.get("lstm", a.lstm, base.net.lstm)?,
        },
        batch: s.get("batch", a.batch, base.batch)?,
        lr: s.get("lr", a.lr, base.lr)?,
        gamma: s.get("gamma", a.gamma, base.gamma)?,
        tau: s.get("tau", a.tau, base.tau)?,
        initial_alpha: s.get("initial_alpha", a.initial_alpha, base.initial_alpha)?,
        auto_alpha: s.get("auto_alpha", a.auto_alpha, base.auto_alpha)?,
        reward_scale: s.get("reward_scale", a.reward_scale, base.reward_scale)?,
        bptt_window: zero_none(s.get("bptt_window", a.bptt_window, base.bptt_window.unwrap_or(0))?),
        updates_per_episode: zero_none(s.get(
            "updates_per_episode",
            a.updates_per_episode,
            base.updates_per_episode.unwrap_or(0),
        )?),
        replay_capacity: s.get("replay_capacity", a.replay_capacity, base.replay_capacity)?,
        critics: s.get("critics", a.critics, base.critics)?,
        ..base
    };
    c.validate().map_err(anyhow::Error::msg)?;
    Ok(c)
}

fn eval_job(a: &EvalArgs, s: &mut Settings) -> Result<EvalJob> {
    let mult = s.get("cycles_multiplier", a.cycles_multiplier, 1)?;
    if mult == 0 {
        bail!("cycles multiplier must be at least 1");
    }
    s.get("allow_large", Some(a.allow_large), false)?;
    Ok(EvalJob {
        graph: a.graph.clone(),
        checkpoint: a.checkpoint.clone(),
        init: init_source(s, a.init_file.clone())?,
        episode: a.episode.resolve(s, mult)?,
        runs: s.get("runs", a.runs, 10)?,
        max_nodes: s.get("max_nodes", a.max_nodes, DEFAULT_MAX_NODES)?,
        allow_large: a.allow_large,
        out: a.out.clone(),
        estimate: a.estimate.clone(),
        seed: s.get("seed", a.seed, 0)?,
    })
}

/// Resolves options against the config file and runs the command.
pub fn run(cli: Cli) -> Result<()> {
    let mut s = Settings::load(cli.config.as_deref())?;
    s.get("csv_schema", None, RESULTS_SCHEMA.to_string())?;
    match &cli.command {
        Command::Generate(a) => {
            let seed = s.get("seed", a.seed, 0)?;
            let job = GenerateJob {
                params: a.env.resolve(&mut s, seed)?,
                out: a.out.clone(),
            };
            warn_unused(&s);
            cmd_generate(&job, s.resolved())?;
        }
        Command::Solve(a) => {
            let job = SolveJob {
                graph: a.graph.clone(),
                method: method(&mut s, "method", a.method.clone(), "lm")?,
                iters: s.get("iters", a.iters, 100)?,
                init: init_source(&mut s, a.init_file.clone())?,
                out: a.out.clone(),
                trace: a.trace.clone(),
                estimate: a.estimate.clone(),
                seed: s.get("seed", a.seed, 0)?,
            };
            warn_unused(&s);
            let r = cmd_solve(&job, s.resolved())?;
            println!("F = {:.6e} after {} iterations ({:.3} s)", r.final_chi2(), r.iterations, r.wall_time);
        }
        Command::Train(a) => {
            let config = train_config(a, &mut s)?;
            let job = TrainJob {
                env: a.env.resolve(&mut s, 0)?,
                episodes: s.get("episodes", a.episodes, 300)?,
                episode: a.episode.resolve(&mut s, 1)?,
                curve: a.curve.clone().unwrap_or_else(|| crate::commands::sibling(&a.checkpoint, "_curve.csv")),
                checkpoint: a.checkpoint.clone(),
                config,
            };
            warn_unused(&s);
            let curve = cmd_train(&job, s.resolved())?;
            if let Some(last) = curve.last() {
                println!("trained {} episodes; last cumulative reward {:.1}", curve.len(), last.cumulative_reward);
            }
        }
        Command::Eval(a) => {
            let job = eval_job(a, &mut s)?;
            warn_unused(&s);
            let r = cmd_eval(&job, s.resolved())?;
            println!(
                "best F = {:.6e}, mean F = {:.6e}, mean time {:.3} s",
                r.best.objective, r.mean_objective, r.mean_time
            );
        }
        Command::Bootstrap(a) => {
            let job = BootstrapJob {
                eval: eval_job(&a.eval, &mut s)?,
                method: method(&mut s, "solver", a.solver.clone(), "gn")?,
                iters: s.get("iters", a.iters, 50)?,
            };
            warn_unused(&s);
            let r = cmd_bootstrap(&job, s.resolved())?;
            println!(
                "RL F = {:.6e} -> {} F = {:.6e}; combined time {:.3} s",
                r.rl.best.objective,
                job.method.label(job.iters),
                r.solver.final_chi2(),
                r.combined_time
            );
        }
        Command::Plot(a) => {
            let job = PlotJob {
                inputs: a.inputs.clone(),
                labels: a.labels.clone(),
                out: a.out.clone(),
            };
            cmd_plot(&job, s.resolved())?;
        }
        Command::Report(a) => {
            s.get("allow_large", Some(a.allow_large), false)?;
            let job = ReportJob {
                env: a.env.resolve(&mut s, 0)?,
                seeds: (0..s.get("instances", a.instances, 10)?).collect(),
                checkpoint: s
                    .get_opt("checkpoint", a.checkpoint.as_ref().map(|p| p.display().to_string()))?
                    .map(PathBuf::from),
                episode: a.episode.resolve(&mut s, 1)?,
                runs: s.get("runs", a.runs, 10)?,
                max_nodes: s.get("max_nodes", a.max_nodes, DEFAULT_MAX_NODES)?,
                allow_large: a.allow_large,
                out: a.out.clone(),
            };
            warn_unused(&s);
            let rows = cmd_report(&job, s.resolved())?;
            print!("{}", crate::commands::summary_table(&rows));
        }
    }
    Ok(())
}

fn warn_unused(s: &Settings) {
    for k in s.unused() {
        log::warn!("config key {k:?} is not used by this command");
    }
}
