//! Episode rollouts: the training loop and deterministic evaluation.

use std::fmt::Write as _;
use std::time::Instant;

use pgo_core::{generate, EnvParams, PortableRng, PoseGraph, SolveState};

use crate::diffnet::LstmState;
use crate::environment::{EnvStep, Environment, EpisodeConfig, EpisodeTrace, Finalized};
use crate::error::EnvError;
use crate::networks::ACTION_DIM;
use crate::replay::EpisodeRecord;
use crate::sac::{ActMode, Agent, Sac, UpdateStats};

/// Anything that can drive an episode. Returns pre-squash actions.
pub trait Policy {
    fn begin_episode(&mut self);
    fn act(&mut self, env: &Environment, step: &EnvStep) -> [f64; ACTION_DIM];
}

/// Runs an agent with its own recurrent state.
pub struct AgentPolicy<'a> {
    agent: &'a Agent,
    mode: ActMode,
    rng: PortableRng,
    lstm: LstmState,
    prev: [f64; ACTION_DIM],
}

impl<'a> AgentPolicy<'a> {
    pub fn new(agent: &'a Agent, mode: ActMode, seed: u64) -> Self {
        Self {
            agent,
            mode,
            rng: PortableRng::seed_from_u64(seed),
            lstm: agent.initial_lstm(),
            prev: [0.0; ACTION_DIM],
        }
    }
}

impl Policy for AgentPolicy<'_> {
    fn begin_episode(&mut self) {
        self.lstm = self.agent.initial_lstm();
        self.prev = [0.0; ACTION_DIM];
    }

    fn act(&mut self, _env: &Environment, step: &EnvStep) -> [f64; ACTION_DIM] {
        let a = self.agent.act(&step.features, self.prev, &self.lstm, self.mode, &mut self.rng);
        self.lstm = a.state;
        self.prev = a.action;
        a.u
    }
}

/// Cancels the cursor edge's angular residual by rotating its head node,
/// as far as the action range allows.
#[derive(Clone, Copy, Debug, Default)]
pub struct ResidualZeroingPolicy;

impl Policy for ResidualZeroingPolicy {
    fn begin_episode(&mut self) {}

    fn act(&mut self, env: &Environment, step: &EnvStep) -> [f64; ACTION_DIM] {
        let target = -step.features.residual / env.config().action_range;
        [0.0, target.clamp(-1.0 + 1e-12, 1.0 - 1e-12).atanh()]
    }
}

/// Runs one episode from `first` to completion.
pub fn run_episode<P: Policy>(
    env: &mut Environment,
    first: EnvStep,
    policy: &mut P,
    mut trace: Option<&mut EpisodeTrace>,
) -> Result<f64, EnvError> {
    policy.begin_episode();
    let mut step = first;
    let mut total = 0.0;
    while !step.done {
        let u = policy.act(env, &step);
        step = env.step(u)?;
        total += step.reward;
        if let Some(t) = trace.as_deref_mut() {
            t.push(&step);
        }
    }
    Ok(total)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpisodeSummary {
    pub episode: usize,
    pub cumulative_reward: f64,
    pub steps: usize,
    pub initial_oc: f64,
    pub final_oc: f64,
    pub stats: Option<UpdateStats>,
}

/// Fresh synthetic graph every episode, seeded from the training stream,
/// initialized by odometry.
pub fn synthetic_factory(params: EnvParams) -> impl FnMut(usize, &mut PortableRng) -> (PoseGraph, SolveState) {
    move |_, rng| {
        let g = generate(&params.with_seed(rng.next_u64())).graph;
        let init = g.odometry_init().expect("generated graphs carry full odometry");
        (g, init)
    }
}

impl Sac {
    /// Collects one stochastic episode per iteration, stores it and runs
    /// the configured number of updates.
    pub fn train<F, C>(
        &mut self,
        episodes: usize,
        episode_config: EpisodeConfig,
        mut factory: F,
        mut on_episode: C,
    ) -> Result<Vec<EpisodeSummary>, EnvError>
    where
        F: FnMut(usize, &mut PortableRng) -> (PoseGraph, SolveState),
        C: FnMut(&EpisodeSummary),
    {
        let mut out = Vec::with_capacity(episodes);
        for k in 0..episodes {
            let (graph, init) = factory(k, &mut self.rng);
            let (mut env, first) = Environment::reset(graph, init, episode_config)?;
            let mut record = EpisodeRecord::new(first.features);
            let mut lstm = self.agent.initial_lstm();
            let mut prev = [0.0; ACTION_DIM];
            let mut step = first;
            let mut total = 0.0;
            while !step.done {
                let a = self.agent.act(&step.features, prev, &lstm, ActMode::Stochastic, &mut self.rng);
                step = env.step(a.u)?;
                record.push(a.action, step.reward, step.features, step.done);
                total += step.reward;
                lstm = a.state;
                prev = a.action;
            }
            let steps = record.len();
            self.replay.push(record);
            let mut stats = None;
            for _ in 0..self.config.updates_per_episode.unwrap_or(steps) {
                stats = self.update();
            }
            let summary = EpisodeSummary {
                episode: k,
                cumulative_reward: total,
                steps,
                initial_oc: first.oc,
                final_oc: step.oc,
                stats,
            };
            on_episode(&summary);
            out.push(summary);
        }
        Ok(out)
    }
}

pub fn reward_curve_csv(summaries: &[EpisodeSummary]) -> String {
    let mut s = String::from("episode,cumulative_reward,steps,initial_oc,final_oc,alpha,critic_loss\n");
    for e in summaries {
        let (alpha, loss) = e
            .stats
            .map(|st| (st.alpha.to_string(), st.critic_loss.to_string()))
            .unwrap_or_default();
        writeln!(
            s,
            "{},{},{},{},{},{},{}",
            e.episode, e.cumulative_reward, e.steps, e.initial_oc, e.final_oc, alpha, loss
        )
        .unwrap();
    }
    s
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RunResult {
    pub objective: f64,
    pub final_oc: f64,
    pub cumulative_reward: f64,
    pub time_s: f64,
}

#[derive(Clone, Debug)]
pub struct EvalReport {
    pub runs: Vec<RunResult>,
    pub best: Finalized,
    pub mean_objective: f64,
    pub mean_time: f64,
}

/// Runs `runs` episodes on one graph, finalizing translations after each,
/// and keeps the estimate with the lowest objective.
pub fn evaluate<P: Policy>(
    graph: &PoseGraph,
    init: &SolveState,
    config: EpisodeConfig,
    policy: &mut P,
    runs: usize,
) -> Result<EvalReport, EnvError> {
    assert!(runs > 0, "evaluate needs at least one run");
    let (mut env, _) = Environment::reset(graph.clone(), init.clone(), config)?;
    let mut results = Vec::with_capacity(runs);
    let mut best: Option<Finalized> = None;
    for _ in 0..runs {
        let start = Instant::now();
        let first = env.restart();
        let reward = run_episode(&mut env, first, policy, None)?;
        let fin = env.finalize()?;
        results.push(RunResult {
            objective: fin.objective,
            final_oc: env.orientation_cost(),
            cumulative_reward: reward,
            time_s: start.elapsed().as_secs_f64(),
        });
        if best.as_ref().is_none_or(|b| fin.objective < b.objective) {
            best = Some(fin);
        }
    }
    let n = runs as f64;
    Ok(EvalReport {
        mean_objective: results.iter().map(|r| r.objective).sum::<f64>() / n,
        mean_time: results.iter().map(|r| r.time_s).sum::<f64>() / n,
        best: best.expect("at least one run"),
        runs: results,
    })
}
