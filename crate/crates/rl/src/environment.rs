//! Episodic environment: a cursor walks the edges in storage order and each
//! step retracts the two endpoint orientations of the cursor edge.
//!
//! Per-edge chordal residuals are cached and only the edges incident to the
//! touched nodes are refreshed; totals are re-summed in edge order so the
//! orientation cost is a deterministic function of the orientations.

use std::fmt::Write as _;

use pgo_core::{translation_lls, PoseGraph, Rotation2, SolveState, TangentScalar};

use crate::encoder::{mean_cost_from_chordals, StateFeatures};
use crate::error::EnvError;

pub const BASE_REWARD: f64 = 100.0;
pub const BONUS: f64 = 25.0;
/// Absolute orientation-cost thresholds, each paying `BONUS` once per episode.
pub const LADDER: [f64; 6] = [1e-3, 1e-4, 1e-5, 1e-6, 1e-7, 1e-8];

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum BonusMode {
    /// Thresholds are the fixed `LADDER` values.
    #[default]
    Absolute,
    /// Thresholds are the episode's initial cost divided by 10, 100, ….
    Relative,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpisodeConfig {
    pub cycles: usize,
    /// Scale applied after the tanh squash, in radians.
    pub action_range: f64,
    pub deterministic_eval: bool,
    pub bonus_mode: BonusMode,
    /// Send encoder messages along both edge directions.
    pub symmetric_messages: bool,
}

impl EpisodeConfig {
    pub fn new(cycles: usize, action_range: f64) -> Self {
        Self {
            cycles,
            action_range,
            deterministic_eval: false,
            bonus_mode: BonusMode::Absolute,
            symmetric_messages: false,
        }
    }

    pub fn validate(&self) -> Result<(), EnvError> {
        if self.cycles == 0 || !(self.action_range > 0.0 && self.action_range.is_finite()) {
            return Err(EnvError::InvalidConfig);
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RewardTracker {
    thresholds: [f64; 6],
    hit: [bool; 6],
}

impl RewardTracker {
    pub fn absolute() -> Self {
        Self {
            thresholds: LADDER,
            hit: [false; 6],
        }
    }

    pub fn relative(initial_oc: f64) -> Self {
        let mut thresholds = [0.0; 6];
        let mut t = initial_oc;
        for th in &mut thresholds {
            t /= 10.0;
            *th = t;
        }
        Self {
            thresholds,
            hit: [false; 6],
        }
    }

    pub fn for_mode(mode: BonusMode, initial_oc: f64) -> Self {
        match mode {
            BonusMode::Absolute => Self::absolute(),
            BonusMode::Relative => Self::relative(initial_oc),
        }
    }

    pub fn thresholds(&self) -> &[f64; 6] {
        &self.thresholds
    }

    pub fn rungs_hit(&self) -> usize {
        self.hit.iter().filter(|&&h| h).count()
    }
}

pub fn base_reward(oc: f64) -> f64 {
    BASE_REWARD / (oc + 1.0)
}

/// `100 / (OC + 1)` plus `BONUS` for every threshold crossed for the first
/// time this episode.
pub fn reward_fn(oc: f64, tracker: &mut RewardTracker) -> f64 {
    let mut r = base_reward(oc);
    for (th, hit) in tracker.thresholds.iter().zip(tracker.hit.iter_mut()) {
        if !*hit && oc < *th {
            *hit = true;
            r += BONUS;
        }
    }
    r
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EnvStep {
    pub features: StateFeatures,
    pub reward: f64,
    pub done: bool,
    /// Orientation cost after the step.
    pub oc: f64,
    /// Edge the next action will act on.
    pub cursor: usize,
    /// Steps taken so far in the episode.
    pub step: usize,
    /// Retraction increments actually applied, `range·tanh(u)`.
    pub applied: [f64; 2],
}

/// Final estimate of an episode.
#[derive(Clone, Debug, PartialEq)]
pub struct Finalized {
    pub state: SolveState,
    pub objective: f64,
}

/// Translations from the linear solve for fixed orientations, with the
/// resulting objective.
pub fn finalize(graph: &PoseGraph, thetas: &[f64]) -> Result<Finalized, EnvError> {
    let translations = translation_lls(graph, thetas)?;
    let state = SolveState {
        thetas: thetas.to_vec(),
        translations,
    };
    let objective = graph.objective(&state)?;
    Ok(Finalized { state, objective })
}

#[derive(Clone, Debug)]
pub struct Environment {
    graph: PoseGraph,
    init: SolveState,
    config: EpisodeConfig,
    thetas: Vec<f64>,
    incident: Vec<Vec<usize>>,
    chordals: Vec<f64>,
    tracker: RewardTracker,
    cursor: usize,
    steps: usize,
    oc: f64,
}

impl Environment {
    pub fn reset(graph: PoseGraph, init: SolveState, config: EpisodeConfig) -> Result<(Self, EnvStep), EnvError> {
        config.validate()?;
        if graph.num_edges() == 0 {
            return Err(EnvError::NoEdges);
        }
        graph.check_state(&init)?;
        let mut incident = vec![Vec::new(); graph.num_nodes()];
        for (k, e) in graph.edges.iter().enumerate() {
            incident[e.i].push(k);
            incident[e.j].push(k);
        }
        let mut env = Self {
            thetas: init.thetas.clone(),
            graph,
            init,
            config,
            incident,
            chordals: Vec::new(),
            tracker: RewardTracker::absolute(),
            cursor: 0,
            steps: 0,
            oc: 0.0,
        };
        let first = env.restart();
        Ok((env, first))
    }

    /// Resets to the initial orientations and edge 0.
    pub fn restart(&mut self) -> EnvStep {
        self.thetas.clone_from(&self.init.thetas);
        self.chordals = self.graph.edges.iter().map(|e| e.chordal_residual(&self.thetas)).collect();
        self.oc = self.total_oc();
        self.tracker = RewardTracker::for_mode(self.config.bonus_mode, self.oc);
        self.cursor = 0;
        self.steps = 0;
        EnvStep {
            features: self.features(),
            reward: 0.0,
            done: false,
            oc: self.oc,
            cursor: 0,
            step: 0,
            applied: [0.0; 2],
        }
    }

    fn total_oc(&self) -> f64 {
        self.chordals.iter().map(|c| c * c).sum::<f64>().sqrt()
    }

    fn features(&self) -> StateFeatures {
        let e = &self.graph.edges[self.cursor];
        StateFeatures {
            mean_cost: mean_cost_from_chordals(&self.graph, &self.chordals, self.config.symmetric_messages),
            residual: pgo_core::edge_angular_residual(
                &Rotation2::new(self.thetas[e.i]),
                &Rotation2::new(self.thetas[e.j]),
                &Rotation2::new(e.meas_theta),
            ),
        }
    }

    fn refresh(&mut self, node: usize) {
        for &k in &self.incident[node] {
            self.chordals[k] = self.graph.edges[k].chordal_residual(&self.thetas);
        }
    }

    /// Applies `range·tanh(u)` to the cursor edge's endpoints and advances.
    pub fn step(&mut self, u: [f64; 2]) -> Result<EnvStep, EnvError> {
        if self.is_done() {
            return Err(EnvError::EpisodeDone);
        }
        let e = &self.graph.edges[self.cursor];
        let (i, j) = (e.i, e.j);
        let applied = [self.config.action_range * u[0].tanh(), self.config.action_range * u[1].tanh()];
        self.thetas[i] = pgo_core::retract(&Rotation2::new(self.thetas[i]), TangentScalar(applied[0])).angle();
        self.thetas[j] = pgo_core::retract(&Rotation2::new(self.thetas[j]), TangentScalar(applied[1])).angle();
        self.refresh(i);
        self.refresh(j);
        self.oc = self.total_oc();
        let reward = reward_fn(self.oc, &mut self.tracker);
        self.steps += 1;
        self.cursor = (self.cursor + 1) % self.graph.num_edges();
        Ok(EnvStep {
            features: self.features(),
            reward,
            done: self.is_done(),
            oc: self.oc,
            cursor: self.cursor,
            step: self.steps,
            applied,
        })
    }

    pub fn finalize(&self) -> Result<Finalized, EnvError> {
        finalize(&self.graph, &self.thetas)
    }

    pub fn is_done(&self) -> bool {
        self.steps >= self.steps_per_episode()
    }

    pub fn steps_per_episode(&self) -> usize {
        self.config.cycles * self.graph.num_edges()
    }

    pub fn graph(&self) -> &PoseGraph {
        &self.graph
    }

    pub fn thetas(&self) -> &[f64] {
        &self.thetas
    }

    pub fn cursor(&self) -> usize {
        self.cursor
    }

    pub fn config(&self) -> &EpisodeConfig {
        &self.config
    }

    pub fn orientation_cost(&self) -> f64 {
        self.oc
    }

    pub fn tracker(&self) -> &RewardTracker {
        &self.tracker
    }
}

/// One row per step of an episode.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TraceRow {
    pub step: usize,
    pub oc: f64,
    pub reward: f64,
    /// Objective after the closing translation solve; only on the last row.
    pub objective: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct EpisodeTrace {
    pub rows: Vec<TraceRow>,
}

impl EpisodeTrace {
    pub fn push(&mut self, s: &EnvStep) {
        self.rows.push(TraceRow {
            step: s.step,
            oc: s.oc,
            reward: s.reward,
            objective: None,
        });
    }

    pub fn cumulative_reward(&self) -> f64 {
        self.rows.iter().map(|r| r.reward).sum()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,oc,reward,F\n");
        for r in &self.rows {
            let f = r.objective.map(|f| f.to_string()).unwrap_or_default();
            writeln!(out, "{},{},{},{}", r.step, r.oc, r.reward, f).unwrap();
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use nalgebra::Matrix3;
    use pgo_core::{EdgeSE2, Pose2};

    fn two_pose(error: f64) -> (PoseGraph, SolveState) {
        let nodes = vec![Pose2::identity(), Pose2::new(1.0, 0.0, 0.0)];
        let edge = EdgeSE2::new(0, 1, Pose2::new(1.0, 0.0, error), Matrix3::identity());
        let g = PoseGraph::new(nodes, vec![edge]).unwrap();
        let init = SolveState::from_poses(&g.nodes);
        (g, init)
    }

    #[test]
    fn reward_examples() {
        let mut t = RewardTracker::absolute();
        assert_eq!(reward_fn(0.0, &mut t), 250.0);
        let mut t = RewardTracker::absolute();
        assert_eq!(reward_fn(3.0, &mut t), 25.0);
        let mut t = RewardTracker::absolute();
        assert_eq!(reward_fn(9e-4, &mut t), base_reward(9e-4) + 25.0);
        assert_eq!(reward_fn(9e-4, &mut t), base_reward(9e-4));
        assert_eq!(t.rungs_hit(), 1);
    }

    #[test]
    fn relative_ladder_scales_with_initial_cost() {
        let t = RewardTracker::relative(2.0);
        assert_abs_diff_eq!(t.thresholds()[0], 0.2, epsilon = 1e-15);
        assert_abs_diff_eq!(t.thresholds()[5], 2e-6, epsilon = 1e-18);
    }

    #[test]
    fn single_edge_oracle_action() {
        // Measurement says θ₁ − θ₀ = 0.1 but both start at 0: a = (0, 0.1) fixes it.
        let (g, init) = two_pose(0.1);
        let (mut env, first) = Environment::reset(g, init, EpisodeConfig::new(1, 0.25)).unwrap();
        assert!(first.oc > 0.0);
        let s = env.step([0.0, (0.1f64 / 0.25).atanh()]).unwrap();
        assert!(s.oc < 1e-8, "{}", s.oc);
        assert_eq!(s.reward, 250.0);
        assert!(s.done);
        assert!(matches!(env.step([0.0, 0.0]), Err(EnvError::EpisodeDone)));
    }

    #[test]
    fn rejects_edgeless_graphs_and_bad_config() {
        let g = PoseGraph::new(vec![Pose2::identity()], vec![]).unwrap();
        let init = SolveState::from_poses(&g.nodes);
        assert!(matches!(
            Environment::reset(g, init, EpisodeConfig::new(1, 0.25)),
            Err(EnvError::NoEdges)
        ));
        let (g, init) = two_pose(0.1);
        assert!(Environment::reset(g, init, EpisodeConfig::new(0, 0.25)).is_err());
    }

    #[test]
    fn trace_csv_has_header_and_rows() {
        let (g, init) = two_pose(0.1);
        let (mut env, _) = Environment::reset(g, init, EpisodeConfig::new(2, 0.25)).unwrap();
        let mut trace = EpisodeTrace::default();
        while !env.is_done() {
            trace.push(&env.step([0.0, 0.0]).unwrap());
        }
        trace.rows.last_mut().unwrap().objective = Some(env.finalize().unwrap().objective);
        let csv = trace.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "step,oc,reward,F");
        assert_eq!(lines.len(), 3);
        assert!(lines[1].ends_with(','));
    }
}
