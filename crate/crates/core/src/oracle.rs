//! Independent reference computations used to validate the solvers: dense
//! normal equations for the translation solve and an exhaustive angle search
//! for tiny graphs.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector, Matrix2, Vector2};

use crate::graph::{isotropic_information, EdgeSE2, PoseGraph, SolveState};
use crate::rng::PortableRng;
use crate::se2::Pose2;

fn rot_t(theta: f64) -> Matrix2<f64> {
    let (s, c) = theta.sin_cos();
    Matrix2::new(c, s, -s, c)
}

/// Dense normal equations for the translations with orientations fixed and
/// `t₀ = 0`. Only the translation block of each information matrix is used.
pub fn dense_translations(graph: &PoseGraph, thetas: &[f64]) -> Vec<Vector2<f64>> {
    let n = graph.num_nodes();
    let dim = 2 * (n - 1);
    let mut h = DMatrix::<f64>::zeros(dim, dim);
    let mut g = DVector::<f64>::zeros(dim);
    for e in &graph.edges {
        let rt = rot_t(thetas[e.i]);
        let lam = e.info.fixed_view::<2, 2>(0, 0).into_owned();
        let mut a = DMatrix::<f64>::zeros(2, dim);
        for (node, block) in [(e.i, -rt), (e.j, rt)] {
            if node > 0 {
                let mut v = a.view_mut((0, 2 * (node - 1)), (2, 2));
                v += block;
            }
        }
        let lam = DMatrix::from_column_slice(2, 2, lam.as_slice());
        let m = DVector::from_column_slice(e.meas_t.as_slice());
        h += a.transpose() * &lam * &a;
        g += a.transpose() * &lam * m;
    }
    let x = h.cholesky().expect("connected graph").solve(&g);
    std::iter::once(Vector2::zeros())
        .chain((0..n - 1).map(|k| Vector2::new(x[2 * k], x[2 * k + 1])))
        .collect()
}

/// Objective minimized over translations for fixed orientations.
pub fn concentrated(graph: &PoseGraph, thetas: &[f64]) -> f64 {
    let state = SolveState {
        thetas: thetas.to_vec(),
        translations: dense_translations(graph, thetas),
    };
    graph.objective(&state).unwrap()
}

/// Global minimum of the objective of a 4-pose graph: exhaustive 60³ grid
/// over θ₁..θ₃ (θ₀ = 0), then repeated local zooms around the best point.
pub fn brute_force(graph: &PoseGraph) -> f64 {
    assert_eq!(graph.num_nodes(), 4, "the exhaustive search covers 4-pose graphs");
    const GRID: usize = 60;
    let step = 2.0 * PI / GRID as f64;
    let mut best = (f64::INFINITY, [0.0; 3]);
    for a in 0..GRID {
        for b in 0..GRID {
            for c in 0..GRID {
                let th = [-PI + a as f64 * step, -PI + b as f64 * step, -PI + c as f64 * step];
                let f = concentrated(graph, &[0.0, th[0], th[1], th[2]]);
                if f < best.0 {
                    best = (f, th);
                }
            }
        }
    }
    let mut radius = step;
    while radius > 1e-9 {
        let centre = best.1;
        const K: i32 = 5;
        for a in -K..=K {
            for b in -K..=K {
                for c in -K..=K {
                    let d = radius / K as f64;
                    let th = [centre[0] + a as f64 * d, centre[1] + b as f64 * d, centre[2] + c as f64 * d];
                    let f = concentrated(graph, &[0.0, th[0], th[1], th[2]]);
                    if f < best.0 {
                        best = (f, th);
                    }
                }
            }
        }
        radius /= 4.0;
    }
    best.0
}

/// Noisy square with one diagonal: 4 poses, 5 edges, initialized by odometry.
pub fn four_pose_graph(seed: u64) -> (PoseGraph, SolveState) {
    let mut rng = PortableRng::seed_from_u64(seed);
    let gt = [
        Pose2::new(0.0, 0.0, 0.0),
        Pose2::new(2.0, 0.1, 0.5 * PI),
        Pose2::new(2.2, 2.0, PI),
        Pose2::new(-0.1, 1.9, -0.5 * PI),
    ];
    let info = isotropic_information(0.1, 0.1, 0.0);
    let pairs = [(0, 1), (1, 2), (2, 3), (0, 3), (0, 2)];
    let edges = pairs
        .iter()
        .map(|&(i, j)| {
            let rel = gt[i].between(&gt[j]);
            let noisy = Pose2::new(
                rel.t.x + 0.1 * rng.normal(),
                rel.t.y + 0.1 * rng.normal(),
                rel.theta() + 0.1 * rng.normal(),
            );
            EdgeSE2::new(i, j, noisy, info)
        })
        .collect();
    let g = PoseGraph::new(gt.to_vec(), edges).unwrap();
    let init = g.odometry_init().unwrap();
    (g, init)
}


/// Synthetic graph with random full-rank translation information
/// blocks (no translation-rotation coupling) and random orientations.
pub fn random_translation_problem(n: usize, seed: u64) -> (PoseGraph, Vec<f64>) {
    let mut rng = PortableRng::seed_from_u64(seed ^ 0x5eed);
    let mut g = crate::synth::generate(&crate::synth::EnvParams::new(n, 0.3, 0.2, 3.0, 0.5, seed)).graph;
    for e in &mut g.edges {
        let l = Matrix2::new(rng.uniform_range(0.5, 3.0), 0.0, rng.normal(), rng.uniform_range(0.5, 3.0));
        let mut info = nalgebra::Matrix3::zeros();
        info.fixed_view_mut::<2, 2>(0, 0).copy_from(&(l * l.transpose()));
        info[(2, 2)] = rng.uniform_range(1.0, 50.0);
        e.info = info;
    }
    let thetas = (0..n).map(|_| rng.uniform_range(-PI, PI)).collect();
    (g, thetas)
}

/// Largest coordinate difference between two translation sets.
pub fn max_translation_gap(a: &[Vector2<f64>], b: &[Vector2<f64>]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).amax()).fold(0.0, f64::max)
}
