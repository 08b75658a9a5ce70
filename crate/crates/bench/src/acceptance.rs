//! The acceptance checks, one function per criterion. Each returns an
//! [`Outcome`] rendered as a single PASS / FAIL / NOT RUN line.

use std::fmt;
use std::time::Instant;

use pgo_core::g2o::{parse_g2o_str, read_g2o, write_g2o};
use pgo_core::oracle::{
    brute_force, dense_translations, four_pose_graph, max_translation_gap, random_translation_problem,
};
use pgo_core::{gauss_newton, generate, levenberg_marquardt, translation_lls, EnvParams, PortableRng};
use pgo_rl::environment::{base_reward, Environment, EpisodeConfig};
use pgo_rl::gradcheck;
use pgo_rl::sac::{ActMode, Agent};
use pgo_rl::train::{evaluate, AgentPolicy, EpisodeSummary};

use crate::commands::{desk_train_config, median, train_agent, TrainJob};
use crate::datasets::locate;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Status {
    Pass,
    Fail,
    NotRun,
}

impl fmt::Display for Status {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Status::Pass => "PASS",
            Status::Fail => "FAIL",
            Status::NotRun => "NOT RUN",
        })
    }
}

#[derive(Clone, Debug)]
pub struct Outcome {
    pub id: u8,
    pub title: &'static str,
    pub status: Status,
    pub detail: String,
    /// Reported but not enforced.
    pub soft: bool,
}

impl Outcome {
    fn new(id: u8, title: &'static str, pass: bool, detail: String) -> Self {
        Self {
            id,
            title,
            status: if pass { Status::Pass } else { Status::Fail },
            detail,
            soft: false,
        }
    }

    fn not_run(id: u8, title: &'static str, detail: String) -> Self {
        Self {
            id,
            title,
            status: Status::NotRun,
            detail,
            soft: false,
        }
    }

    pub fn is_hard_failure(&self) -> bool {
        self.status == Status::Fail && !self.soft
    }
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let soft = if self.soft { " [soft]" } else { "" };
        write!(f, "{} criterion {}{soft}: {} — {}", self.status, self.id, self.title, self.detail)
    }
}

pub fn table_one_env1(seed: u64) -> EnvParams {
    EnvParams::new(20, 0.3, 0.01, 3.0, 0.5, seed)
}

pub fn c1_m3500_baseline() -> Outcome {
    const TITLE: &str = "M3500 LM100 from odometry within 10% of 1.38e2, ≤ 60 s";
    let Some(path) = locate("m3500") else {
        return Outcome::not_run(1, TITLE, "dataset missing (set PGO_DATA_DIR)".into());
    };
    let run = || -> anyhow::Result<(f64, usize, f64)> {
        let g = read_g2o(&path)?.graph;
        let start = Instant::now();
        let r = levenberg_marquardt(&g, &g.odometry_init()?, 100)?;
        Ok((r.final_chi2(), r.iterations, start.elapsed().as_secs_f64()))
    };
    match run() {
        Ok((f, it, t)) => Outcome::new(
            1,
            TITLE,
            (124.0..=152.0).contains(&f) && t <= 60.0,
            format!("F = {f:.4e} after {it} iterations in {t:.1} s"),
        ),
        Err(e) => Outcome::new(1, TITLE, false, format!("error: {e:#}")),
    }
}

pub fn c2_zero_noise() -> Outcome {
    const TITLE: &str = "zero-noise GN/LM reach F ≤ 1e-10 within 5 iterations";
    let gen = generate(&EnvParams::new(300, 0.0, 0.0, 3.0, 0.5, 1));
    let init = gen.graph.odometry_init().expect("chain");
    let gn = gauss_newton(&gen.graph, &init, 5);
    let lm = levenberg_marquardt(&gen.graph, &init, 5);
    match (gn, lm) {
        (Ok(gn), Ok(lm)) => {
            let ok = [&gn, &lm].iter().all(|r| r.iterations <= 5 && r.final_chi2() <= 1e-10);
            Outcome::new(
                2,
                TITLE,
                ok,
                format!(
                    "GN F = {:.2e} ({} it), LM F = {:.2e} ({} it)",
                    gn.final_chi2(),
                    gn.iterations,
                    lm.final_chi2(),
                    lm.iterations
                ),
            )
        }
        (a, b) => Outcome::new(2, TITLE, false, format!("solver error: {:?} {:?}", a.err(), b.err())),
    }
}

pub fn c3_translation_solve() -> Outcome {
    const TITLE: &str = "translation solve exact (ground truth and dense oracle, 1e-9)";
    let mut worst_gt: f64 = 0.0;
    for seed in 0..3 {
        let gen = generate(&EnvParams::new(200, 0.0, 0.0, 3.0, 0.5, seed));
        let gt = &gen.ground_truth;
        let Ok(t) = translation_lls(&gen.graph, &gt.thetas) else {
            return Outcome::new(3, TITLE, false, format!("solve failed on seed {seed}"));
        };
        let anchored: Vec<_> = gt.translations.iter().map(|p| p - gt.translations[0]).collect();
        worst_gt = worst_gt.max(max_translation_gap(&t, &anchored));
    }
    let mut worst_dense: f64 = 0.0;
    for seed in 0..5 {
        let (g, thetas) = random_translation_problem(50, seed);
        let Ok(t) = translation_lls(&g, &thetas) else {
            return Outcome::new(3, TITLE, false, format!("solve failed on random graph {seed}"));
        };
        worst_dense = worst_dense.max(max_translation_gap(&t, &dense_translations(&g, &thetas)));
    }
    Outcome::new(
        3,
        TITLE,
        worst_gt <= 1e-9 && worst_dense <= 1e-9,
        format!("max gap {worst_gt:.1e} to ground truth, {worst_dense:.1e} to dense oracle"),
    )
}

pub fn c4_gradients() -> Outcome {
    const TITLE: &str = "finite-difference gradient suite (≤ 1e-4, BPTT T=5 and T=8)";
    let results = gradcheck::suite();
    let (name, worst) = results
        .iter()
        .copied()
        .fold(("", 0.0f64), |acc, (n, e)| if e > acc.1 { (n, e) } else { acc });
    let failed: Vec<&str> = results.iter().filter(|(_, e)| *e > gradcheck::TOLERANCE).map(|(n, _)| *n).collect();
    let detail = if failed.is_empty() {
        format!("{} paths, worst {worst:.1e} ({name})", results.len())
    } else {
        format!("failing: {}", failed.join(", "))
    };
    Outcome::new(4, TITLE, failed.is_empty(), detail)
}

pub fn c5_small_oracle() -> Outcome {
    const TITLE: &str = "4-pose/5-edge GN and LM match exhaustive search within 1e-6";
    let mut worst: f64 = 0.0;
    for seed in 0..3 {
        let (g, init) = four_pose_graph(seed);
        let oracle = brute_force(&g);
        for r in [gauss_newton(&g, &init, 100), levenberg_marquardt(&g, &init, 100)] {
            match r {
                Ok(r) => worst = worst.max((r.final_chi2() - oracle).abs()),
                Err(e) => return Outcome::new(5, TITLE, false, format!("solver error: {e}")),
            }
        }
    }
    Outcome::new(5, TITLE, worst <= 1e-6, format!("3 graphs, max |F − F*| = {worst:.1e}"))
}

pub struct TrainingRun {
    pub seed: u64,
    pub agent: Agent,
    pub curve: Vec<EpisodeSummary>,
    pub first_decile: f64,
    pub last_decile: f64,
    pub time_s: f64,
}

pub const TRAINING_SEEDS: [u64; 5] = [0, 1, 2, 3, 4];
pub const TRAINING_EPISODES: usize = 300;

fn decile_means(curve: &[EpisodeSummary]) -> (f64, f64) {
    let k = (curve.len() / 10).max(1);
    let mean = |s: &[EpisodeSummary]| s.iter().map(|e| e.cumulative_reward).sum::<f64>() / s.len() as f64;
    (mean(&curve[..k]), mean(&curve[curve.len() - k..]))
}

/// Trains one desk-scale agent per seed on environment 1.
pub fn train_seeds(seeds: &[u64], episodes: usize) -> anyhow::Result<Vec<TrainingRun>> {
    seeds
        .iter()
        .map(|&seed| {
            let job = TrainJob {
                env: table_one_env1(0),
                episodes,
                episode: EpisodeConfig::new(7, 0.25),
                config: desk_train_config(seed),
                checkpoint: Default::default(),
                curve: Default::default(),
            };
            let start = Instant::now();
            let (sac, curve) = train_agent(&job)?;
            let (first_decile, last_decile) = decile_means(&curve);
            Ok(TrainingRun {
                seed,
                agent: sac.agent,
                curve,
                first_decile,
                last_decile,
                time_s: start.elapsed().as_secs_f64(),
            })
        })
        .collect()
}

pub fn c6_training_signal(runs: &[TrainingRun]) -> Outcome {
    const TITLE: &str = "training improves last-decile reward on ≥ 3 of 5 seeds, ≤ 2 h";
    let improved = runs.iter().filter(|r| r.last_decile > r.first_decile).count();
    let total: f64 = runs.iter().map(|r| r.time_s).sum();
    let per_seed: Vec<String> = runs
        .iter()
        .map(|r| format!("s{}: {:.0}→{:.0}", r.seed, r.first_decile, r.last_decile))
        .collect();
    Outcome::new(
        6,
        TITLE,
        runs.len() == 5 && improved >= 3 && total <= 7200.0,
        format!("{improved}/{} improved in {total:.0} s [{}]", runs.len(), per_seed.join(", ")),
    )
}

pub const HARD_INSTANCES: u64 = 10;

/// GN50 from the agent's finalized estimate against GN100 from odometry.
pub fn c7_bootstrap(agent: &Agent) -> Outcome {
    const TITLE: &str = "median F of RL+GN50 ≤ median F of GN100 on 10 hard instances";
    let mut boot = Vec::new();
    let mut plain = Vec::new();
    for seed in 0..HARD_INSTANCES {
        let g = generate(&EnvParams::new(100, 0.3, 0.01, 3.0, 0.5, 1000 + seed)).graph;
        let run = || -> anyhow::Result<(f64, f64)> {
            let init = g.odometry_init()?;
            let gn100 = gauss_newton(&g, &init, 100)?.final_chi2();
            let mut policy = AgentPolicy::new(agent, ActMode::Deterministic, seed);
            let ev = evaluate(&g, &init, EpisodeConfig::new(14, 0.25), &mut policy, 1)?;
            let gn50 = gauss_newton(&g, &ev.best.state, 50)?.final_chi2();
            Ok((gn50, gn100))
        };
        match run() {
            Ok((b, p)) => {
                boot.push(b);
                plain.push(p);
            }
            Err(e) => return Outcome::new(7, TITLE, false, format!("error on instance {seed}: {e:#}")),
        }
    }
    let fmt_all = |v: &[f64]| v.iter().map(|x| format!("{x:.1e}")).collect::<Vec<_>>().join(" ");
    let detail = format!(
        "RL+GN50 [{}] vs GN100 [{}]",
        fmt_all(&boot),
        fmt_all(&plain)
    );
    let (mb, mp) = (median(&mut boot), median(&mut plain));
    let mut o = Outcome::new(7, TITLE, mb <= mp, format!("medians {mb:.3e} vs {mp:.3e}; {detail}"));
    o.soft = true;
    o
}

pub fn c8_environment_contracts() -> Outcome {
    const TITLE: &str = "environment: length cycles·|E|, base reward 100 at OC=0, zero action inert, seeded traces";
    let mut problems = Vec::new();
    let g = generate(&table_one_env1(3)).graph;
    let init = g.odometry_init().expect("chain");
    let edges = g.num_edges();

    let rollout = |seed: u64, zero: bool| -> Vec<(u64, u64, u64)> {
        let (mut env, mut s) = Environment::reset(g.clone(), init.clone(), EpisodeConfig::new(7, 0.25)).expect("env");
        let mut rng = PortableRng::seed_from_u64(seed);
        let mut trace = Vec::new();
        while !s.done {
            let u = if zero { [0.0, 0.0] } else { [rng.normal(), rng.normal()] };
            s = env.step(u).expect("step");
            trace.push((s.oc.to_bits(), s.reward.to_bits(), s.features.mean_cost.to_bits()));
        }
        trace
    };
    let a = rollout(5, false);
    if a.len() != 7 * edges {
        problems.push(format!("length {} ≠ {}", a.len(), 7 * edges));
    }
    if a != rollout(5, false) {
        problems.push("traces differ across identical seeds".into());
    }
    let (_, first) = Environment::reset(g.clone(), init.clone(), EpisodeConfig::new(1, 0.25)).expect("env");
    if rollout(0, true).iter().any(|t| t.0 != first.oc.to_bits()) {
        problems.push("zero action changed OC".into());
    }
    if base_reward(0.0) != 100.0 {
        problems.push(format!("base reward at OC=0 is {}", base_reward(0.0)));
    }
    let detail = if problems.is_empty() {
        format!("{} steps on a {edges}-edge graph", a.len())
    } else {
        problems.join("; ")
    };
    Outcome::new(8, TITLE, problems.is_empty(), detail)
}

pub fn c9_g2o_round_trip() -> Outcome {
    const TITLE: &str = "g2o parse → write → parse identical on M3500, Intel, MIT";
    let keys = ["m3500", "intel", "mit"];
    let missing: Vec<&str> = keys.iter().copied().filter(|k| locate(k).is_none()).collect();
    if !missing.is_empty() {
        return Outcome::not_run(
            9,
            TITLE,
            format!("dataset missing: {} (set PGO_DATA_DIR)", missing.join(", ")),
        );
    }
    let mut details = Vec::new();
    let mut ok = true;
    for k in keys {
        let path = locate(k).expect("checked above");
        let result = read_g2o(&path).map_err(anyhow::Error::from).and_then(|first| {
            let again = parse_g2o_str(&write_g2o(&first.graph))?;
            Ok((again.graph == first.graph, first.graph.num_nodes(), first.graph.num_edges()))
        });
        match result {
            Ok((same, n, m)) => {
                ok &= same;
                details.push(format!("{k}: {n} nodes, {m} edges{}", if same { "" } else { " MISMATCH" }));
            }
            Err(e) => {
                ok = false;
                details.push(format!("{k}: {e:#}"));
            }
        }
    }
    Outcome::new(9, TITLE, ok, details.join("; "))
}
