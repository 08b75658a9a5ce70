//! Sparse Gauss-Newton and Levenberg-Marquardt over SE(2), plus the linear
//! translation solve used once orientations are fixed.

use std::time::Instant;

use nalgebra::{Matrix2, Matrix3, Vector2, Vector3};

use crate::error::SolveError;
use crate::graph::{PoseGraph, SolveState};
use crate::se2::Rotation2;
use crate::sparse::{expand_block_order, minimum_degree_order, CscMatrix, SymbolicLdl, TripletBuilder};

/// Weight of the prior that pins pose 0 in the normal equations.
pub const GAUGE_PRIOR: f64 = 1e12;
pub const STEP_TOLERANCE: f64 = 1e-10;
pub const RELATIVE_DECREASE_TOLERANCE: f64 = 1e-12;
pub const LM_INITIAL_LAMBDA: f64 = 1e-4;

#[derive(Clone, Debug)]
pub struct Linearization {
    pub h: CscMatrix,
    pub b: Vec<f64>,
    pub chi2: f64,
}

/// Analytic Jacobians of an edge residual with respect to `(tᵢ, θᵢ)` and `(tⱼ, θⱼ)`.
pub fn edge_jacobians(theta_i: f64, ti: &Vector2<f64>, tj: &Vector2<f64>) -> (Matrix3<f64>, Matrix3<f64>) {
    let (s, c) = theta_i.sin_cos();
    let d = tj - ti;
    // d(Rᵀ)/dθ · (tⱼ − tᵢ)
    let dx = -s * d.x + c * d.y;
    let dy = -c * d.x - s * d.y;
    let ji = Matrix3::new(-c, -s, dx, s, -c, dy, 0.0, 0.0, -1.0);
    let jj = Matrix3::new(c, s, 0.0, -s, c, 0.0, 0.0, 0.0, 1.0);
    (ji, jj)
}

fn push_block3(t: &mut TripletBuilder, bi: usize, bj: usize, m: &Matrix3<f64>) {
    for r in 0..3 {
        for c in 0..3 {
            t.push(3 * bi + r, 3 * bj + c, m[(r, c)]);
        }
    }
}

/// Builds `H = Σ Jᵀ Λ J` and `b = Σ Jᵀ Λ e` with pose 0 pinned by a prior.
pub fn linearize(graph: &PoseGraph, state: &SolveState) -> Result<Linearization, SolveError> {
    graph.check_state(state)?;
    let n = graph.num_nodes();
    let mut t = TripletBuilder::with_capacity(3 * n, 36 * graph.num_edges() + 3 * n);
    let mut b = vec![0.0; 3 * n];
    let mut chi2 = 0.0;
    for k in 0..3 * n {
        t.push(k, k, if k < 3 { GAUGE_PRIOR } else { 0.0 });
    }
    for e in &graph.edges {
        let res = e.residual(state);
        let lam = &e.info;
        chi2 += res.dot(&(lam * res));
        let (ji, jj) = edge_jacobians(state.thetas[e.i], &state.translations[e.i], &state.translations[e.j]);
        let ji_t_lam = ji.transpose() * lam;
        let jj_t_lam = jj.transpose() * lam;
        push_block3(&mut t, e.i, e.i, &(ji_t_lam * ji));
        push_block3(&mut t, e.i, e.j, &(ji_t_lam * jj));
        push_block3(&mut t, e.j, e.i, &(jj_t_lam * ji));
        push_block3(&mut t, e.j, e.j, &(jj_t_lam * jj));
        let gi: Vector3<f64> = ji_t_lam * res;
        let gj: Vector3<f64> = jj_t_lam * res;
        for r in 0..3 {
            b[3 * e.i + r] += gi[r];
            b[3 * e.j + r] += gj[r];
        }
    }
    Ok(Linearization {
        h: t.into_csc(),
        b,
        chi2,
    })
}

/// Applies a stacked `(dx, dy, dθ)` increment: additive on translations,
/// retraction on angles.
pub fn apply_increment(state: &SolveState, delta: &[f64]) -> SolveState {
    let mut out = state.clone();
    for k in 0..state.len() {
        out.translations[k] += Vector2::new(delta[3 * k], delta[3 * k + 1]);
        out.thetas[k] = Rotation2::new(state.thetas[k] + delta[3 * k + 2]).angle();
    }
    out
}

#[derive(Clone, Debug)]
pub struct SolveReport {
    pub final_state: SolveState,
    /// Objective at the initial state followed by one entry per iteration.
    pub chi2_trace: Vec<f64>,
    pub iterations: usize,
    pub wall_time: f64,
    pub converged: bool,
    pub diagnostic: Option<String>,
}

impl SolveReport {
    pub fn final_chi2(&self) -> f64 {
        *self.chi2_trace.last().expect("chi2 trace is never empty")
    }
}

/// Caches the ordering and symbolic factorization across iterations.
struct NormalSolver {
    adjacency: Vec<Vec<usize>>,
    symbolic: Option<SymbolicLdl>,
}

impl NormalSolver {
    fn new(graph: &PoseGraph) -> Self {
        Self {
            adjacency: graph.adjacency(),
            symbolic: None,
        }
    }

    fn solve(&mut self, h: &CscMatrix, rhs: &[f64]) -> Result<Vec<f64>, SolveError> {
        if !self.symbolic.as_ref().is_some_and(|s| s.matches(h)) {
            let perm = expand_block_order(&minimum_degree_order(&self.adjacency), 3);
            self.symbolic = Some(SymbolicLdl::analyze(h, perm));
        }
        let sym = self.symbolic.as_ref().unwrap();
        Ok(sym.factor(h)?.solve(rhs))
    }
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn stalled(prev: f64, next: f64) -> bool {
    next == 0.0 || (prev - next).abs() <= RELATIVE_DECREASE_TOLERANCE * prev.abs()
}

pub fn gauss_newton(graph: &PoseGraph, init: &SolveState, max_iters: usize) -> Result<SolveReport, SolveError> {
    let start = Instant::now();
    let mut solver = NormalSolver::new(graph);
    let mut state = init.clone();
    let mut lin = linearize(graph, &state)?;
    let mut trace = vec![lin.chi2];
    let mut converged = lin.chi2 == 0.0;
    let mut diagnostic = None;
    let mut iterations = 0;

    while !converged && iterations < max_iters {
        let rhs: Vec<f64> = lin.b.iter().map(|v| -v).collect();
        let delta = match solver.solve(&lin.h, &rhs) {
            Ok(d) => d,
            Err(e) => {
                diagnostic = Some(e.to_string());
                break;
            }
        };
        state = apply_increment(&state, &delta);
        let next = linearize(graph, &state)?;
        iterations += 1;
        trace.push(next.chi2);
        converged = inf_norm(&delta) < STEP_TOLERANCE || stalled(lin.chi2, next.chi2);
        if !next.chi2.is_finite() {
            diagnostic = Some("objective became non-finite".into());
            break;
        }
        lin = next;
    }

    Ok(SolveReport {
        final_state: state,
        chi2_trace: trace,
        iterations,
        wall_time: start.elapsed().as_secs_f64(),
        converged,
        diagnostic,
    })
}

/// Damped Gauss-Newton on `(H + λ·diag(H)) δ = −b`. Rejected steps count
/// toward `max_iters`.
pub fn levenberg_marquardt(graph: &PoseGraph, init: &SolveState, max_iters: usize) -> Result<SolveReport, SolveError> {
    let start = Instant::now();
    let mut solver = NormalSolver::new(graph);
    let mut state = init.clone();
    let mut lin = linearize(graph, &state)?;
    let mut trace = vec![lin.chi2];
    let mut lambda = LM_INITIAL_LAMBDA;
    let mut converged = lin.chi2 == 0.0;
    let mut diagnostic = None;
    let mut iterations = 0;

    while !converged && iterations < max_iters {
        let diag = lin.h.diagonal();
        let mut damped = lin.h.clone();
        damped.add_to_diagonal(|k| lambda * diag[k]);
        let rhs: Vec<f64> = lin.b.iter().map(|v| -v).collect();
        iterations += 1;
        let delta = match solver.solve(&damped, &rhs) {
            Ok(d) => d,
            Err(e) => {
                // A larger damping may still restore definiteness.
                lambda *= 10.0;
                trace.push(lin.chi2);
                if lambda > 1e20 {
                    diagnostic = Some(e.to_string());
                    break;
                }
                continue;
            }
        };
        let candidate = apply_increment(&state, &delta);
        let chi2 = graph.objective_unchecked(&candidate);
        let small_step = inf_norm(&delta) < STEP_TOLERANCE;
        if chi2 < lin.chi2 {
            let prev = lin.chi2;
            state = candidate;
            lin = linearize(graph, &state)?;
            lambda = (lambda / 10.0).max(1e-20);
            converged = small_step || stalled(prev, lin.chi2);
        } else {
            lambda *= 10.0;
            converged = small_step;
        }
        trace.push(lin.chi2);
    }

    Ok(SolveReport {
        final_state: state,
        chi2_trace: trace,
        iterations,
        wall_time: start.elapsed().as_secs_f64(),
        converged,
        diagnostic,
    })
}

fn reachable_from_anchor(graph: &PoseGraph) -> Result<(), SolveError> {
    let adj = graph.adjacency();
    let mut seen = vec![false; graph.num_nodes()];
    let mut stack = vec![0];
    seen[0] = true;
    while let Some(v) = stack.pop() {
        for &u in &adj[v] {
            if !seen[u] {
                seen[u] = true;
                stack.push(u);
            }
        }
    }
    match seen.iter().position(|s| !s) {
        Some(node) => Err(SolveError::Disconnected { node }),
        None => Ok(()),
    }
}

/// Exact minimizer of `Σ ‖Rᵢᵀ(tⱼ − tᵢ) − t̃ᵢⱼ‖²_Λt` with orientations fixed
/// and `t₀ = (0, 0)`.
pub fn translation_lls(graph: &PoseGraph, thetas: &[f64]) -> Result<Vec<Vector2<f64>>, SolveError> {
    let n = graph.num_nodes();
    if thetas.len() != n {
        return Err(crate::error::GraphError::DimensionMismatch {
            expected: n,
            got: thetas.len(),
        }
        .into());
    }
    if n == 0 {
        return Err(crate::error::GraphError::Empty.into());
    }
    if n == 1 {
        return Ok(vec![Vector2::zeros()]);
    }
    reachable_from_anchor(graph)?;

    // Unknown block k - 1 holds node k.
    let m = n - 1;
    let mut t = TripletBuilder::with_capacity(2 * m, 16 * graph.num_edges() + 2 * m);
    let mut rhs = vec![0.0; 2 * m];
    for k in 0..2 * m {
        t.push(k, k, 0.0);
    }
    let mut adj = vec![Vec::new(); m];
    for e in &graph.edges {
        let rt = Rotation2::new(thetas[e.i]).as_matrix().transpose();
        let lam: Matrix2<f64> = e.info.fixed_view::<2, 2>(0, 0).into_owned();
        let blocks = [(e.i, -rt), (e.j, rt)];
        let g = lam * e.meas_t;
        for (u, au) in &blocks {
            if *u == 0 {
                continue;
            }
            let rhs_u = au.transpose() * g;
            rhs[2 * (u - 1)] += rhs_u.x;
            rhs[2 * (u - 1) + 1] += rhs_u.y;
            for (v, av) in &blocks {
                if *v == 0 {
                    continue;
                }
                let h = au.transpose() * lam * av;
                for r in 0..2 {
                    for c in 0..2 {
                        t.push(2 * (u - 1) + r, 2 * (v - 1) + c, h[(r, c)]);
                    }
                }
                if u != v {
                    adj[u - 1].push(v - 1);
                }
            }
        }
    }
    for a in &mut adj {
        a.sort_unstable();
        a.dedup();
    }
    let h = t.into_csc();
    let perm = expand_block_order(&minimum_degree_order(&adj), 2);
    let sym = SymbolicLdl::analyze(&h, perm);
    let x = sym.factor(&h)?.solve(&rhs);
    let mut out = Vec::with_capacity(n);
    out.push(Vector2::zeros());
    out.extend((0..m).map(|k| Vector2::new(x[2 * k], x[2 * k + 1])));
    Ok(out)
}

/// Translation-only part of the objective, used to check `translation_lls`.
pub fn translation_objective(graph: &PoseGraph, thetas: &[f64], translations: &[Vector2<f64>]) -> f64 {
    graph
        .edges
        .iter()
        .map(|e| {
            let r = Rotation2::new(thetas[e.i]).unrotate(&(translations[e.j] - translations[e.i])) - e.meas_t;
            let lam: Matrix2<f64> = e.info.fixed_view::<2, 2>(0, 0).into_owned();
            r.dot(&(lam * r))
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::EdgeSE2;
    use crate::se2::Pose2;
    use crate::synth::{generate, EnvParams};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_small(rng: &mut ChaCha8Rng, n: usize) -> (PoseGraph, SolveState) {
        let mut edges = Vec::new();
        for k in 1..n {
            let m = Pose2::new(rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0), rng.gen_range(-1.0..1.0));
            let a = Matrix3::from_fn(|_, _| rng.gen_range(-1.0..1.0));
            edges.push(EdgeSE2::new(k - 1, k, m, a * a.transpose() + Matrix3::identity()));
        }
        if n > 2 {
            let m = Pose2::new(1.0, -0.5, 0.4);
            edges.push(EdgeSE2::new(0, n - 1, m, Matrix3::identity() * 2.0));
        }
        let poses: Vec<_> = (0..n)
            .map(|_| Pose2::new(rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0)))
            .collect();
        (PoseGraph::new(poses.clone(), edges).unwrap(), SolveState::from_poses(&poses))
    }

    fn perturb(state: &SolveState, k: usize, d: usize, h: f64) -> SolveState {
        let mut s = state.clone();
        match d {
            0 => s.translations[k].x += h,
            1 => s.translations[k].y += h,
            _ => s.thetas[k] += h,
        }
        s
    }

    // Central differences of F: gradient is 2b, Hessian-free check of b.
    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for n in [2, 3, 4, 5] {
            let (g, s) = random_small(&mut rng, n);
            let lin = linearize(&g, &s).unwrap();
            let h = 1e-6;
            for k in 0..n {
                for d in 0..3 {
                    let fp = g.objective(&perturb(&s, k, d, h)).unwrap();
                    let fm = g.objective(&perturb(&s, k, d, -h)).unwrap();
                    let fd = (fp - fm) / (2.0 * h);
                    let an = 2.0 * lin.b[3 * k + d];
                    assert!((fd - an).abs() <= 1e-6 * an.abs().max(1.0), "n={n} k={k} d={d}: {fd} vs {an}");
                }
            }
        }
    }

    // Jacobian columns against central differences of the residual vector.
    #[test]
    fn jacobians_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let (g, s) = random_small(&mut rng, 2);
            let e = &g.edges[0];
            let (ji, jj) = edge_jacobians(s.thetas[0], &s.translations[0], &s.translations[1]);
            let h = 1e-6;
            for (node, jac) in [(0usize, ji), (1, jj)] {
                for d in 0..3 {
                    let rp = e.residual(&perturb(&s, node, d, h));
                    let rm = e.residual(&perturb(&s, node, d, -h));
                    let col = (rp - rm) / (2.0 * h);
                    for r in 0..3 {
                        assert!((col[r] - jac[(r, d)]).abs() <= 1e-6 * jac[(r, d)].abs().max(1.0));
                    }
                }
            }
            let rt = Rotation2::new(s.thetas[0]).as_matrix().transpose();
            assert!((jj.fixed_view::<2, 2>(0, 0) - rt).norm() < 1e-15);
        }
    }

    #[test]
    fn gauss_newton_hessian_matches_jtj_by_differences() {
        // For a single edge, H (minus the prior) equals JᵀΛJ where J is built
        // from finite differences of the residual.
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let (g, s) = random_small(&mut rng, 2);
        let lin = linearize(&g, &s).unwrap();
        let dense = lin.h.to_dense();
        let e = &g.edges[0];
        let h = 1e-6;
        let mut j = nalgebra::Matrix3x6::zeros();
        for node in 0..2 {
            for d in 0..3 {
                let col = (e.residual(&perturb(&s, node, d, h)) - e.residual(&perturb(&s, node, d, -h))) / (2.0 * h);
                j.set_column(3 * node + d, &col);
            }
        }
        let jtj = j.transpose() * e.info * j;
        for r in 0..6 {
            for c in 0..6 {
                if r == c && r < 3 {
                    // Swamped by the gauge prior.
                    continue;
                }
                let got = dense[r][c];
                assert!((got - jtj[(r, c)]).abs() <= 1e-6 * jtj[(r, c)].abs().max(1.0), "({r},{c})");
            }
        }
    }

    #[test]
    fn zero_residual_gives_zero_gradient() {
        let gen = generate(&EnvParams::new(30, 0.0, 0.0, 2.0, 0.5, 4));
        let lin = linearize(&gen.graph, &gen.ground_truth).unwrap();
        assert!(inf_norm(&lin.b) < 1e-9);
    }

    #[test]
    fn zero_noise_solvers_stay_at_optimum() {
        let gen = generate(&EnvParams::new(100, 0.0, 0.0, 3.0, 0.5, 2));
        let init = gen.graph.odometry_init().unwrap();
        for report in [
            gauss_newton(&gen.graph, &init, 10).unwrap(),
            levenberg_marquardt(&gen.graph, &init, 10).unwrap(),
        ] {
            assert!(report.final_chi2() <= 1e-10);
            assert!(report.iterations <= 5);
            assert!(report.converged);
        }
    }

    #[test]
    fn lm_accepted_chi2_is_monotone() {
        let gen = generate(&EnvParams::new(80, 0.2, 0.1, 1.0, 0.5, 3));
        let init = gen.graph.odometry_init().unwrap();
        let report = levenberg_marquardt(&gen.graph, &init, 50).unwrap();
        for w in report.chi2_trace.windows(2) {
            assert!(w[1] <= w[0]);
        }
        assert!(report.final_chi2() < report.chi2_trace[0]);
    }

    #[test]
    fn translation_lls_single_edge() {
        let e = EdgeSE2::new(0, 1, Pose2::new(1.0, 2.0, 0.3), Matrix3::identity());
        let g = PoseGraph::new(vec![Pose2::identity(); 2], vec![e]).unwrap();
        let t = translation_lls(&g, &[0.0, 0.3]).unwrap();
        assert_eq!(t[0], Vector2::zeros());
        assert!((t[1] - Vector2::new(1.0, 2.0)).norm() < 1e-12);
    }

    #[test]
    fn translation_lls_recovers_ground_truth() {
        let gen = generate(&EnvParams::new(200, 0.0, 0.0, 3.0, 0.5, 12));
        let t = translation_lls(&gen.graph, &gen.ground_truth.thetas).unwrap();
        for (a, b) in t.iter().zip(&gen.ground_truth.translations) {
            assert!((a - b).norm() < 1e-9);
        }
    }

    #[test]
    fn translation_lls_is_a_minimizer() {
        let gen = generate(&EnvParams::new(40, 0.2, 0.1, 1.0, 0.5, 6));
        let thetas = gen.graph.odometry_init().unwrap().thetas;
        let t = translation_lls(&gen.graph, &thetas).unwrap();
        let base = translation_objective(&gen.graph, &thetas, &t);
        for k in 1..t.len() {
            for d in [Vector2::new(1e-3, 0.0), Vector2::new(-1e-3, 0.0), Vector2::new(0.0, 1e-3), Vector2::new(0.0, -1e-3)] {
                let mut p = t.clone();
                p[k] += d;
                assert!(translation_objective(&gen.graph, &thetas, &p) > base);
            }
        }
    }

    #[test]
    fn translation_lls_detects_disconnection() {
        let e = EdgeSE2::new(1, 2, Pose2::new(1.0, 0.0, 0.0), Matrix3::identity());
        let g = PoseGraph::new(vec![Pose2::identity(); 3], vec![e]).unwrap();
        assert!(matches!(translation_lls(&g, &[0.0; 3]), Err(SolveError::Disconnected { node: 1 })));
    }

    #[test]
    fn singular_system_reports_failure() {
        // Node 2 is not constrained at all: H is singular.
        let e = EdgeSE2::new(0, 1, Pose2::new(1.0, 0.0, 0.0), Matrix3::identity());
        let g = PoseGraph::new(vec![Pose2::identity(); 3], vec![e]).unwrap();
        let init = SolveState::from_poses(&[Pose2::identity(); 3]);
        let r = gauss_newton(&g, &init, 5).unwrap();
        assert!(!r.converged);
        assert!(r.diagnostic.is_some());
    }
}
