//! Pose-graph data model and the scalar objectives evaluated on it.

use nalgebra::{Matrix3, Vector2, Vector3};

use crate::error::GraphError;
use crate::se2::{angular_residual, chordal_from_angle, Pose2, Rotation2};

/// Relative SE(2) measurement between two poses with its information matrix
/// (ordering `x, y, θ`).
#[derive(Clone, Debug, PartialEq)]
pub struct EdgeSE2 {
    pub i: usize,
    pub j: usize,
    pub meas_t: Vector2<f64>,
    pub meas_theta: f64,
    pub info: Matrix3<f64>,
}

impl EdgeSE2 {
    pub fn new(i: usize, j: usize, meas: Pose2, info: Matrix3<f64>) -> Self {
        Self {
            i,
            j,
            meas_t: meas.t,
            meas_theta: meas.theta(),
            info,
        }
    }

    pub fn measurement(&self) -> Pose2 {
        Pose2 {
            t: self.meas_t,
            r: Rotation2::new(self.meas_theta),
        }
    }

    pub fn is_odometry(&self) -> bool {
        self.j == self.i + 1
    }

    /// `[Rᵢᵀ(tⱼ − tᵢ) − t̃ᵢⱼ ; wrap(θⱼ − θᵢ − θ̃ᵢⱼ)]`
    pub fn residual(&self, state: &SolveState) -> Vector3<f64> {
        let r = Rotation2::new(state.thetas[self.i]);
        let et = r.unrotate(&(state.translations[self.j] - state.translations[self.i])) - self.meas_t;
        let eth = angular_residual(state.thetas[self.i], state.thetas[self.j], self.meas_theta);
        Vector3::new(et.x, et.y, eth)
    }

    /// Chordal norm `‖R̃ᵢⱼ − Rᵢᵀ Rⱼ‖_F` of this edge's rotation residual.
    pub fn chordal_residual(&self, thetas: &[f64]) -> f64 {
        chordal_from_angle(thetas[self.j] - thetas[self.i] - self.meas_theta)
    }
}

/// Current estimate for every pose, split into angles and translations.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct SolveState {
    pub thetas: Vec<f64>,
    pub translations: Vec<Vector2<f64>>,
}

impl SolveState {
    pub fn from_poses(poses: &[Pose2]) -> Self {
        Self {
            thetas: poses.iter().map(Pose2::theta).collect(),
            translations: poses.iter().map(|p| p.t).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.thetas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.thetas.is_empty()
    }

    pub fn pose(&self, k: usize) -> Pose2 {
        Pose2 {
            t: self.translations[k],
            r: Rotation2::new(self.thetas[k]),
        }
    }

    pub fn poses(&self) -> Vec<Pose2> {
        (0..self.len()).map(|k| self.pose(k)).collect()
    }

    /// Applies the same rigid transform to every pose.
    pub fn transformed(&self, by: &Pose2) -> Self {
        let poses: Vec<_> = self.poses().iter().map(|p| by.compose(p)).collect();
        Self::from_poses(&poses)
    }
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct PoseGraph {
    pub nodes: Vec<Pose2>,
    pub edges: Vec<EdgeSE2>,
}

impl PoseGraph {
    pub fn new(nodes: Vec<Pose2>, edges: Vec<EdgeSE2>) -> Result<Self, GraphError> {
        let g = Self { nodes, edges };
        g.validate()?;
        Ok(g)
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn validate(&self) -> Result<(), GraphError> {
        let n = self.nodes.len();
        for (index, e) in self.edges.iter().enumerate() {
            if e.i == e.j {
                return Err(GraphError::SelfLoop { index, node: e.i });
            }
            for node in [e.i, e.j] {
                if node >= n {
                    return Err(GraphError::DanglingEdge { index, node, n });
                }
            }
        }
        Ok(())
    }

    pub fn odometry_edges(&self) -> impl Iterator<Item = &EdgeSE2> {
        self.edges.iter().filter(|e| e.is_odometry())
    }

    /// Node estimates stored in the graph, as a solver state.
    pub fn estimate(&self) -> SolveState {
        SolveState::from_poses(&self.nodes)
    }

    pub fn set_estimate(&mut self, state: &SolveState) {
        self.nodes = state.poses();
    }

    pub fn check_state(&self, state: &SolveState) -> Result<(), GraphError> {
        let n = self.nodes.len();
        if state.thetas.len() != n || state.translations.len() != n {
            return Err(GraphError::DimensionMismatch {
                expected: n,
                got: state.thetas.len().min(state.translations.len()),
            });
        }
        Ok(())
    }

    /// Chains odometry measurements from an anchored origin.
    pub fn odometry_init(&self) -> Result<SolveState, GraphError> {
        let n = self.nodes.len();
        if n == 0 {
            return Err(GraphError::Empty);
        }
        let mut step: Vec<Option<&EdgeSE2>> = vec![None; n.saturating_sub(1)];
        for e in self.odometry_edges() {
            step[e.i].get_or_insert(e);
        }
        let mut poses = Vec::with_capacity(n);
        poses.push(Pose2::identity());
        for (k, e) in step.iter().enumerate() {
            let e = e.ok_or(GraphError::MissingOdometry { from: k, to: k + 1 })?;
            let next = poses[k].compose(&e.measurement());
            poses.push(next);
        }
        Ok(SolveState::from_poses(&poses))
    }

    /// Weighted squared residual sum `Σ eᵀ Λ e` over all edges.
    pub fn objective(&self, state: &SolveState) -> Result<f64, GraphError> {
        self.check_state(state)?;
        Ok(self.objective_unchecked(state))
    }

    pub(crate) fn objective_unchecked(&self, state: &SolveState) -> f64 {
        self.edges
            .iter()
            .map(|e| {
                let r = e.residual(state);
                r.dot(&(e.info * r))
            })
            .sum()
    }

    /// Unweighted root-sum-square of chordal rotation residuals.
    pub fn orientation_cost(&self, thetas: &[f64]) -> Result<f64, GraphError> {
        if thetas.len() != self.nodes.len() {
            return Err(GraphError::DimensionMismatch {
                expected: self.nodes.len(),
                got: thetas.len(),
            });
        }
        Ok(self
            .edges
            .iter()
            .map(|e| e.chordal_residual(thetas).powi(2))
            .sum::<f64>()
            .sqrt())
    }

    /// Undirected adjacency lists, neighbours sorted and de-duplicated.
    pub fn adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.nodes.len()];
        for e in &self.edges {
            adj[e.i].push(e.j);
            adj[e.j].push(e.i);
        }
        for a in &mut adj {
            a.sort_unstable();
            a.dedup();
        }
        adj
    }

    /// Relabels nodes with `perm[old] = new`; edges keep their order.
    pub fn relabeled(&self, perm: &[usize]) -> PoseGraph {
        let mut nodes = vec![Pose2::identity(); self.nodes.len()];
        for (old, p) in self.nodes.iter().enumerate() {
            nodes[perm[old]] = *p;
        }
        let edges = self
            .edges
            .iter()
            .map(|e| EdgeSE2 {
                i: perm[e.i],
                j: perm[e.j],
                ..e.clone()
            })
            .collect();
        PoseGraph { nodes, edges }
    }
}

/// `diag(1/σ_t², 1/σ_t², 1/σ_R²)`, with `floor` standing in when a sigma is 0.
pub fn isotropic_information(sigma_t: f64, sigma_r: f64, floor: f64) -> Matrix3<f64> {
    let w = |s: f64| if s > 0.0 { 1.0 / (s * s) } else { floor };
    let wt = w(sigma_t);
    Matrix3::from_diagonal(&Vector3::new(wt, wt, w(sigma_r)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn chain(deltas: &[Pose2]) -> PoseGraph {
        let edges = deltas
            .iter()
            .enumerate()
            .map(|(k, d)| EdgeSE2::new(k, k + 1, *d, Matrix3::identity()))
            .collect();
        PoseGraph::new(vec![Pose2::identity(); deltas.len() + 1], edges).unwrap()
    }

    #[test]
    fn odometry_chain_by_hand() {
        let g = chain(&[Pose2::new(1.0, 0.0, FRAC_PI_2), Pose2::new(1.0, 0.0, 0.0)]);
        let s = g.odometry_init().unwrap();
        assert_eq!(s.pose(0), Pose2::identity());
        assert_abs_diff_eq!(s.translations[1].x, 1.0);
        assert_abs_diff_eq!(s.thetas[1], FRAC_PI_2);
        assert_abs_diff_eq!(s.translations[2].x, 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(s.translations[2].y, 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(s.thetas[2], FRAC_PI_2);
    }

    #[test]
    fn odometry_gap_is_reported() {
        let mut g = chain(&[Pose2::new(1.0, 0.0, 0.0); 3]);
        g.edges.remove(1);
        match g.odometry_init() {
            Err(GraphError::MissingOdometry { from: 1, to: 2 }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn two_pose_objective_by_substitution() {
        let g = chain(&[Pose2::new(1.0, 0.0, 0.0)]);
        let s = SolveState::from_poses(&[Pose2::identity(), Pose2::identity()]);
        assert_eq!(g.edges[0].residual(&s), Vector3::new(-1.0, 0.0, 0.0));
        assert_eq!(g.objective(&s).unwrap(), 1.0);
        assert_eq!(g.objective(&g.odometry_init().unwrap()).unwrap(), 0.0);
    }

    #[test]
    fn dimension_mismatch() {
        let g = chain(&[Pose2::new(1.0, 0.0, 0.0)]);
        let s = SolveState::from_poses(&[Pose2::identity()]);
        assert!(g.objective(&s).is_err());
        assert!(g.orientation_cost(&[0.0; 3]).is_err());
    }

    #[test]
    fn invalid_edges_rejected() {
        let e = EdgeSE2::new(0, 0, Pose2::identity(), Matrix3::identity());
        assert!(PoseGraph::new(vec![Pose2::identity(); 2], vec![e]).is_err());
        let e = EdgeSE2::new(0, 5, Pose2::identity(), Matrix3::identity());
        assert!(PoseGraph::new(vec![Pose2::identity(); 2], vec![e]).is_err());
    }

    // Brute-force summation written independently of EdgeSE2::residual.
    fn objective_oracle(g: &PoseGraph, s: &SolveState) -> f64 {
        let mut total = 0.0;
        for e in &g.edges {
            let (ti, tj) = (s.translations[e.i], s.translations[e.j]);
            let th = s.thetas[e.i];
            let dx = tj.x - ti.x;
            let dy = tj.y - ti.y;
            let ex = th.cos() * dx + th.sin() * dy - e.meas_t.x;
            let ey = -th.sin() * dx + th.cos() * dy - e.meas_t.y;
            let mut et = s.thetas[e.j] - s.thetas[e.i] - e.meas_theta;
            while et > PI {
                et -= 2.0 * PI;
            }
            while et <= -PI {
                et += 2.0 * PI;
            }
            let v = [ex, ey, et];
            for a in 0..3 {
                for b in 0..3 {
                    total += v[a] * e.info[(a, b)] * v[b];
                }
            }
        }
        total
    }

    fn random_graph(rng: &mut ChaCha8Rng, n: usize, extra: usize) -> (PoseGraph, SolveState) {
        let mut edges = Vec::new();
        let mut info = || {
            let a = Matrix3::from_fn(|_, _| rng.gen_range(-1.0..1.0));
            a * a.transpose() + Matrix3::identity()
        };
        let mut infos: Vec<_> = (0..n - 1 + extra).map(|_| info()).collect();
        for k in 0..n - 1 {
            let m = Pose2::new(rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0), rng.gen_range(-3.0..3.0));
            edges.push(EdgeSE2::new(k, k + 1, m, infos.pop().unwrap()));
        }
        for _ in 0..extra {
            let i = rng.gen_range(0..n);
            let j = (i + rng.gen_range(2..n)) % n;
            let m = Pose2::new(rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0), rng.gen_range(-3.0..3.0));
            edges.push(EdgeSE2::new(i, j, m, infos.pop().unwrap()));
        }
        let poses: Vec<_> = (0..n)
            .map(|_| Pose2::new(rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0), rng.gen_range(-3.0..3.0)))
            .collect();
        (PoseGraph::new(poses.clone(), edges).unwrap(), SolveState::from_poses(&poses))
    }

    #[test]
    fn objective_matches_summation_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let (g, s) = random_graph(&mut rng, 3, 1);
            let f = g.objective(&s).unwrap();
            let o = objective_oracle(&g, &s);
            assert!((f - o).abs() <= 1e-12 * o.max(1.0), "{f} vs {o}");
        }
    }

    #[test]
    fn objective_gauge_invariance_for_block_information() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let (mut g, s) = random_graph(&mut rng, 6, 3);
            for e in &mut g.edges {
                let (a, b) = (rng.gen_range(0.5..3.0), rng.gen_range(-0.4..0.4));
                e.info = Matrix3::new(a, b, 0.0, b, a, 0.0, 0.0, 0.0, rng.gen_range(0.5..3.0));
            }
            let by = Pose2::new(rng.gen_range(-9.0..9.0), rng.gen_range(-9.0..9.0), rng.gen_range(-3.0..3.0));
            let f0 = g.objective(&s).unwrap();
            let f1 = g.objective(&s.transformed(&by)).unwrap();
            assert!((f0 - f1).abs() <= 1e-9 * f0.max(1.0), "{f0} vs {f1}");
        }
    }

    #[test]
    fn orientation_cost_examples() {
        let g = chain(&[Pose2::new(1.0, 0.0, 0.3)]);
        assert_abs_diff_eq!(g.orientation_cost(&[0.1, 0.4]).unwrap(), 0.0, epsilon = 1e-15);
        let g = chain(&[Pose2::new(1.0, 0.0, 0.0)]);
        assert_abs_diff_eq!(g.orientation_cost(&[0.0, PI]).unwrap(), 2.0 * 2f64.sqrt(), epsilon = 1e-12);

        // Three edges with angular errors 0.1, 0.2, 0.3.
        let g = chain(&[Pose2::identity(); 3]);
        let oc = g.orientation_cost(&[0.0, 0.1, 0.3, 0.6]).unwrap();
        let closed = (8.0 * (0.05f64.sin().powi(2) + 0.1f64.sin().powi(2) + 0.15f64.sin().powi(2))).sqrt();
        assert_abs_diff_eq!(oc, closed, epsilon = 1e-12);
        assert_abs_diff_eq!(oc, 0.527_609, epsilon = 1e-6);
    }

    #[test]
    fn orientation_cost_ignores_translations() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (g, s) = random_graph(&mut rng, 8, 4);
        let oc = g.orientation_cost(&s.thetas).unwrap();
        let mut moved = s.clone();
        for t in &mut moved.translations {
            *t += Vector2::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        }
        assert_eq!(g.orientation_cost(&moved.thetas).unwrap().to_bits(), oc.to_bits());
    }
}
