//! One-round message-passing summary of the graph, concatenated with the
//! angular residual of the edge under the cursor.
//!
//! Each edge `(i, j)` sends `β·‖Rᵢ R̃ᵢⱼ − Rⱼ‖_F` to node `j` (and to `i` as
//! well in symmetric mode). The mean node cost goes through a 1 → 20 linear
//! layer. Because the layer is linear in `β·C`, where `C` is the mean cost
//! at `β = 1`, only `C` and the residual need to be recorded to re-encode a
//! state under new parameters.

use nalgebra::DVector;
use pgo_core::{chordal_from_angle, edge_angular_residual, PortableRng, PoseGraph, Rotation2};

use crate::diffnet::{kaiming_init, Matrix, ParameterBlock, Parameters};
use crate::error::EncodeError;

pub const ENCODING_DIM: usize = 20;
pub const STATE_DIM: usize = ENCODING_DIM + 1;

/// `β·‖Rᵢ R̃ᵢⱼ − Rⱼ‖_F`.
pub fn message(ri: &Rotation2, rj: &Rotation2, measured: &Rotation2, beta: f64) -> f64 {
    beta * chordal_from_angle(ri.angle() + measured.angle() - rj.angle())
}

fn check_thetas(graph: &PoseGraph, thetas: &[f64]) -> Result<(), EncodeError> {
    if graph.num_nodes() == 0 {
        return Err(EncodeError::Empty);
    }
    if thetas.len() != graph.num_nodes() {
        return Err(EncodeError::Dimension {
            expected: graph.num_nodes(),
            got: thetas.len(),
        });
    }
    Ok(())
}

/// Per-node cost from per-edge chordal residuals, summed in edge order.
pub fn aggregate_chordals(graph: &PoseGraph, chordals: &[f64], beta: f64, symmetric: bool) -> Vec<f64> {
    let mut cost = vec![0.0; graph.num_nodes()];
    for (e, &ch) in graph.edges.iter().zip(chordals) {
        cost[e.j] += beta * ch;
        if symmetric {
            cost[e.i] += beta * ch;
        }
    }
    cost
}

/// Node costs `cost_j = Σᵢ msgᵢⱼ` for the orientations `thetas`.
pub fn aggregate(graph: &PoseGraph, thetas: &[f64], beta: f64, symmetric: bool) -> Result<Vec<f64>, EncodeError> {
    check_thetas(graph, thetas)?;
    let chordals: Vec<f64> = graph.edges.iter().map(|e| e.chordal_residual(thetas)).collect();
    Ok(aggregate_chordals(graph, &chordals, beta, symmetric))
}

pub(crate) fn mean_cost_from_chordals(graph: &PoseGraph, chordals: &[f64], symmetric: bool) -> f64 {
    let cost = aggregate_chordals(graph, chordals, 1.0, symmetric);
    cost.iter().sum::<f64>() / cost.len() as f64
}

/// Parameter-free part of the state: mean node cost at `β = 1` and the
/// cursor edge's angular residual.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct StateFeatures {
    pub mean_cost: f64,
    pub residual: f64,
}

impl StateFeatures {
    pub fn compute(graph: &PoseGraph, thetas: &[f64], cursor: usize, symmetric: bool) -> Result<Self, EncodeError> {
        check_thetas(graph, thetas)?;
        let e = graph.edges.get(cursor).ok_or(EncodeError::Cursor {
            cursor,
            edges: graph.num_edges(),
        })?;
        let chordals: Vec<f64> = graph.edges.iter().map(|e| e.chordal_residual(thetas)).collect();
        Ok(Self {
            mean_cost: mean_cost_from_chordals(graph, &chordals, symmetric),
            residual: edge_angular_residual(
                &Rotation2::new(thetas[e.i]),
                &Rotation2::new(thetas[e.j]),
                &Rotation2::new(e.meas_theta),
            ),
        })
    }
}

/// Learnable encoder parameters: the message weight `β` and the linear
/// layer mapping the mean cost to `ENCODING_DIM` features.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderParams {
    pub beta: ParameterBlock,
    pub w_lin: ParameterBlock,
    pub b_lin: ParameterBlock,
    pub symmetric: bool,
}

impl EncoderParams {
    pub fn new(rng: &mut PortableRng) -> Self {
        Self {
            beta: ParameterBlock::from_value(Matrix::from_element(1, 1, 1.0)),
            w_lin: ParameterBlock::from_value(kaiming_init(ENCODING_DIM, 1, 1, rng)),
            b_lin: ParameterBlock::zeros(ENCODING_DIM, 1),
            symmetric: false,
        }
    }

    pub fn beta(&self) -> f64 {
        self.beta.value[0]
    }

    pub fn encode(&self, f: &StateFeatures) -> DVector<f64> {
        let mut s = DVector::zeros(STATE_DIM);
        let m = self.beta() * f.mean_cost;
        for k in 0..ENCODING_DIM {
            s[k] = self.w_lin.value[k] * m + self.b_lin.value[k];
        }
        s[ENCODING_DIM] = f.residual;
        s
    }

    /// States for a batch of features, one column each.
    pub fn encode_batch(&self, features: &[StateFeatures]) -> Matrix {
        let mut out = Matrix::zeros(STATE_DIM, features.len());
        for (c, f) in features.iter().enumerate() {
            out.set_column(c, &self.encode(f));
        }
        out
    }

    /// Accumulates parameter gradients given `∂L/∂s` for each column of a batch.
    pub fn backward_batch(&mut self, features: &[StateFeatures], ds: &Matrix) {
        assert_eq!(ds.ncols(), features.len(), "one gradient column per state");
        let beta = self.beta();
        for (c, f) in features.iter().enumerate() {
            let m = beta * f.mean_cost;
            for k in 0..ENCODING_DIM {
                let g = ds[(k, c)];
                self.beta.grad[0] += g * self.w_lin.value[k] * f.mean_cost;
                self.w_lin.grad[k] += g * m;
                self.b_lin.grad[k] += g;
            }
        }
    }
}

impl Parameters for EncoderParams {
    fn params(&self) -> Vec<&ParameterBlock> {
        vec![&self.beta, &self.w_lin, &self.b_lin]
    }

    fn params_mut(&mut self) -> Vec<&mut ParameterBlock> {
        vec![&mut self.beta, &mut self.w_lin, &mut self.b_lin]
    }
}

/// Full length-21 state for the cursor edge.
pub fn encode_state(
    graph: &PoseGraph,
    thetas: &[f64],
    cursor: usize,
    params: &EncoderParams,
) -> Result<DVector<f64>, EncodeError> {
    let f = StateFeatures::compute(graph, thetas, cursor, params.symmetric)?;
    Ok(params.encode(&f))
}
