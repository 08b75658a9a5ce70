//! Seeded Manhattan-world pose-graph generator.
//!
//! The ground-truth trajectory is a random walk on a square grid of pitch
//! `d`: at every step the robot keeps its heading (p = 1/2) or turns ±π/2
//! (p = 1/4 each) and then moves forward by `d`. Consecutive poses are
//! joined by odometry edges. For every pose `k ≥ 2`, with probability `lc`,
//! one loop closure is added from a uniformly chosen earlier pose
//! `j < k − 1` whose ground-truth position lies within `1.5·d`.

use std::f64::consts::FRAC_PI_2;

use nalgebra::Vector2;

use crate::graph::{isotropic_information, EdgeSE2, PoseGraph, SolveState};
use crate::rng::PortableRng;
use crate::se2::{wrap, Pose2};

/// Information weight used for a noise-free component.
pub const ZERO_NOISE_INFORMATION: f64 = 1e6;

const LOOP_RADIUS_FACTOR: f64 = 1.5;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EnvParams {
    pub n: usize,
    pub sigma_r: f64,
    pub sigma_t: f64,
    pub d: f64,
    pub lc: f64,
    pub seed: u64,
}

impl EnvParams {
    pub fn new(n: usize, sigma_r: f64, sigma_t: f64, d: f64, lc: f64, seed: u64) -> Self {
        Self {
            n,
            sigma_r,
            sigma_t,
            d,
            lc,
            seed,
        }
    }

    pub fn with_seed(self, seed: u64) -> Self {
        Self { seed, ..self }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.n < 2 {
            return Err(format!("n must be at least 2, got {}", self.n));
        }
        if !(self.sigma_r >= 0.0 && self.sigma_t >= 0.0) {
            return Err("noise standard deviations must be non-negative".into());
        }
        if !(self.d > 0.0) {
            return Err(format!("spacing d must be positive, got {}", self.d));
        }
        if !(0.0..=1.0).contains(&self.lc) {
            return Err(format!("loop-closure probability must be in [0, 1], got {}", self.lc));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct Generated {
    pub graph: PoseGraph,
    pub ground_truth: SolveState,
}

fn ground_truth_walk(n: usize, d: f64, rng: &mut PortableRng) -> Vec<Pose2> {
    let mut poses = Vec::with_capacity(n);
    // Grid coordinates are kept as integers so positions stay exact multiples of d.
    let (mut gx, mut gy, mut heading) = (0i64, 0i64, 0i64);
    poses.push(Pose2::identity());
    for _ in 1..n {
        let u = rng.uniform();
        heading = (heading
            + if u < 0.5 {
                0
            } else if u < 0.75 {
                1
            } else {
                3
            })
            % 4;
        let (dx, dy) = [(1, 0), (0, 1), (-1, 0), (0, -1)][heading as usize];
        gx += dx;
        gy += dy;
        poses.push(Pose2::new(gx as f64 * d, gy as f64 * d, heading as f64 * FRAC_PI_2));
    }
    poses
}

fn noisy(rel: Pose2, params: &EnvParams, rng: &mut PortableRng) -> Pose2 {
    let nx = rng.normal();
    let ny = rng.normal();
    let nr = rng.normal();
    Pose2 {
        t: rel.t + Vector2::new(params.sigma_t * nx, params.sigma_t * ny),
        r: crate::se2::Rotation2::new(wrap(rel.theta() + params.sigma_r * nr)),
    }
}

/// Draws a graph and its ground truth. Panics on invalid parameters; call
/// [`EnvParams::validate`] first when they come from user input.
pub fn generate(params: &EnvParams) -> Generated {
    if let Err(e) = params.validate() {
        panic!("invalid generator parameters: {e}");
    }
    let mut rng = PortableRng::seed_from_u64(params.seed);
    let gt = ground_truth_walk(params.n, params.d, &mut rng);
    let info = isotropic_information(params.sigma_t, params.sigma_r, ZERO_NOISE_INFORMATION);
    let radius2 = (LOOP_RADIUS_FACTOR * params.d).powi(2);

    let mut edges = Vec::new();
    for k in 1..params.n {
        let rel = gt[k - 1].between(&gt[k]);
        edges.push(EdgeSE2::new(k - 1, k, noisy(rel, params, &mut rng), info));
    }
    for k in 2..params.n {
        if !rng.bernoulli(params.lc) {
            continue;
        }
        let candidates: Vec<usize> = (0..k - 1)
            .filter(|&j| (gt[j].t - gt[k].t).norm_squared() <= radius2 * (1.0 + 1e-12))
            .collect();
        if candidates.is_empty() {
            continue;
        }
        let j = candidates[rng.index(candidates.len())];
        let rel = gt[j].between(&gt[k]);
        edges.push(EdgeSE2::new(j, k, noisy(rel, params, &mut rng), info));
    }

    let graph = PoseGraph {
        nodes: gt.clone(),
        edges,
    };
    Generated {
        ground_truth: SolveState::from_poses(&gt),
        graph,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table_one_env1(seed: u64) -> EnvParams {
        EnvParams::new(20, 0.3, 0.01, 3.0, 0.5, seed)
    }

    #[test]
    fn deterministic_for_fixed_seed() {
        let a = generate(&table_one_env1(5));
        let b = generate(&table_one_env1(5));
        assert_eq!(a.graph, b.graph);
        let c = generate(&table_one_env1(6));
        assert_ne!(a.graph, c.graph);
    }

    #[test]
    fn noiseless_graph_has_zero_objective_at_ground_truth() {
        for seed in 0..5 {
            let g = generate(&EnvParams::new(60, 0.0, 0.0, 3.0, 0.5, seed));
            for e in &g.graph.edges {
                let rel = g.ground_truth.pose(e.i).between(&g.ground_truth.pose(e.j));
                assert_eq!(e.meas_t, rel.t);
                assert_eq!(e.meas_theta, rel.theta());
            }
            assert!(g.graph.objective(&g.ground_truth).unwrap() <= 1e-20);
            assert_eq!(g.graph.edges[0].info[(0, 0)], ZERO_NOISE_INFORMATION);
        }
    }

    #[test]
    fn structure_invariants() {
        let g = generate(&EnvParams::new(300, 0.3, 0.01, 3.0, 0.5, 9));
        let n = 300;
        let m = g.graph.num_edges();
        assert!(m >= n - 1 && m <= 2 * (n - 1), "m = {m}");
        assert!(m > n - 1, "expected some loop closures");
        assert!(g.graph.odometry_init().is_ok());
        g.graph.validate().unwrap();
        for e in g.graph.edges.iter().filter(|e| !e.is_odometry()) {
            let dist = (g.ground_truth.translations[e.i] - g.ground_truth.translations[e.j]).norm();
            assert!(dist <= 1.5 * 3.0 + 1e-9);
            assert!(e.i + 1 < e.j);
        }
        for th in &g.ground_truth.thetas {
            let q = th / FRAC_PI_2;
            assert!((q - q.round()).abs() < 1e-12);
        }
    }

    #[test]
    fn no_loop_closures_gives_chain() {
        let g = generate(&EnvParams::new(40, 0.1, 0.1, 1.0, 0.0, 1));
        assert_eq!(g.graph.num_edges(), 39);
        assert!(g.graph.edges.iter().all(|e| e.is_odometry()));
    }

    #[test]
    fn empirical_noise_matches_sigma() {
        let (sr, st) = (0.2, 0.15);
        let mut dt = Vec::new();
        let mut dr = Vec::new();
        let mut seed = 0;
        while dr.len() < 10_000 {
            let g = generate(&EnvParams::new(300, sr, st, 1.0, 0.5, seed));
            for e in &g.graph.edges {
                let rel = g.ground_truth.pose(e.i).between(&g.ground_truth.pose(e.j));
                dt.push(e.meas_t.x - rel.t.x);
                dt.push(e.meas_t.y - rel.t.y);
                dr.push(wrap(e.meas_theta - rel.theta()));
            }
            seed += 1;
        }
        let std = |v: &[f64]| (v.iter().map(|x| x * x).sum::<f64>() / v.len() as f64).sqrt();
        assert!((std(&dt) / st - 1.0).abs() < 0.1, "{}", std(&dt));
        assert!((std(&dr) / sr - 1.0).abs() < 0.1, "{}", std(&dr));
        let mean = dr.iter().sum::<f64>() / dr.len() as f64;
        assert!(mean.abs() < 0.01);
    }

    #[test]
    fn invalid_params_rejected() {
        assert!(EnvParams::new(1, 0.1, 0.1, 1.0, 0.5, 0).validate().is_err());
        assert!(EnvParams::new(5, -0.1, 0.1, 1.0, 0.5, 0).validate().is_err());
        assert!(EnvParams::new(5, 0.1, 0.1, 0.0, 0.5, 0).validate().is_err());
        assert!(EnvParams::new(5, 0.1, 0.1, 1.0, 1.5, 0).validate().is_err());
    }
}
