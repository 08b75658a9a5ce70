//! Policy and critic networks. Both share the trunk shape
//! `Dense(ReLU) → LSTM` over `[sₜ ; aₜ₋₁]`. The critic concatenates the
//! candidate action `aₜ` with the LSTM output before its head, so the
//! recurrent summary depends only on the realized history and any action
//! can be scored at every step without re-unrolling.

use pgo_core::PortableRng;

use crate::diffnet::{Activation, Dense, DenseCache, Lstm, LstmCache, LstmState, Matrix, ParameterBlock, Parameters};
use crate::encoder::STATE_DIM;

pub const ACTION_DIM: usize = 2;
pub const TRUNK_INPUT: usize = STATE_DIM + ACTION_DIM;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NetConfig {
    pub dense: usize,
    pub lstm: usize,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self { dense: 512, lstm: 512 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trunk {
    pub fc: Dense,
    pub lstm: Lstm,
}

pub struct TrunkCache {
    fc: Vec<DenseCache>,
    lstm: Vec<LstmCache>,
}

impl Trunk {
    pub fn new(cfg: NetConfig, rng: &mut PortableRng) -> Self {
        Self {
            fc: Dense::new(TRUNK_INPUT, cfg.dense, Activation::Relu, rng),
            lstm: Lstm::new(cfg.dense, cfg.lstm, rng),
        }
    }

    /// Unrolls from a zero recurrent state.
    pub fn forward(&self, xs: &[Matrix]) -> (Vec<Matrix>, TrunkCache) {
        let batch = xs.first().map_or(0, Matrix::ncols);
        let mut fc = Vec::with_capacity(xs.len());
        let mut hidden_in = Vec::with_capacity(xs.len());
        for x in xs {
            let (y, c) = self.fc.forward(x).expect("trunk input width");
            hidden_in.push(y);
            fc.push(c);
        }
        let (hs, lstm) = self
            .lstm
            .forward_seq(&hidden_in, LstmState::zeros(self.lstm.hidden(), batch))
            .expect("trunk widths agree");
        (hs, TrunkCache { fc, lstm })
    }

    pub fn backward(&mut self, cache: &TrunkCache, dhs: &[Matrix]) -> Vec<Matrix> {
        let dmid = self.lstm.backward_seq(&cache.lstm, dhs);
        cache.fc.iter().zip(&dmid).map(|(c, d)| self.fc.backward(c, d)).collect()
    }

    /// One step for acting; no caches are kept.
    pub fn step(&self, x: &Matrix, state: &LstmState) -> (Matrix, LstmState) {
        let (y, _) = self.fc.forward(x).expect("trunk input width");
        let (next, _) = self.lstm.step(&y, state).expect("trunk widths agree");
        (next.h.clone(), next)
    }
}

impl Parameters for Trunk {
    fn params(&self) -> Vec<&ParameterBlock> {
        let mut v = self.fc.params();
        v.extend(self.lstm.params());
        v
    }

    fn params_mut(&mut self) -> Vec<&mut ParameterBlock> {
        let mut v = self.fc.params_mut();
        v.extend(self.lstm.params_mut());
        v
    }
}

/// Outputs `[μ (2) ; log σ (2)]` per column.
#[derive(Clone, Debug, PartialEq)]
pub struct PolicyNet {
    pub trunk: Trunk,
    pub head: Dense,
}

pub struct PolicyCache {
    trunk: TrunkCache,
    head: Vec<DenseCache>,
}

impl PolicyNet {
    pub fn new(cfg: NetConfig, rng: &mut PortableRng) -> Self {
        Self {
            trunk: Trunk::new(cfg, rng),
            head: Dense::new(cfg.lstm, 2 * ACTION_DIM, Activation::Identity, rng),
        }
    }

    pub fn lstm_width(&self) -> usize {
        self.trunk.lstm.hidden()
    }

    pub fn forward(&self, xs: &[Matrix]) -> (Vec<Matrix>, PolicyCache) {
        let (hs, trunk) = self.trunk.forward(xs);
        let mut outs = Vec::with_capacity(hs.len());
        let mut head = Vec::with_capacity(hs.len());
        for h in &hs {
            let (y, c) = self.head.forward(h).expect("head width");
            outs.push(y);
            head.push(c);
        }
        (outs, PolicyCache { trunk, head })
    }

    pub fn backward(&mut self, cache: &PolicyCache, douts: &[Matrix]) -> Vec<Matrix> {
        let dhs: Vec<Matrix> = cache.head.iter().zip(douts).map(|(c, d)| self.head.backward(c, d)).collect();
        self.trunk.backward(&cache.trunk, &dhs)
    }

    pub fn step(&self, x: &Matrix, state: &LstmState) -> (Matrix, LstmState) {
        let (h, next) = self.trunk.step(x, state);
        let (y, _) = self.head.forward(&h).expect("head width");
        (y, next)
    }
}

impl Parameters for PolicyNet {
    fn params(&self) -> Vec<&ParameterBlock> {
        let mut v = self.trunk.params();
        v.extend(self.head.params());
        v
    }

    fn params_mut(&mut self) -> Vec<&mut ParameterBlock> {
        let mut v = self.trunk.params_mut();
        v.extend(self.head.params_mut());
        v
    }
}

/// Scalar soft Q-value of `[hₜ ; aₜ]`.
#[derive(Clone, Debug, PartialEq)]
pub struct QNet {
    pub trunk: Trunk,
    pub hidden: Dense,
    pub out: Dense,
}

pub struct QHeadCache {
    hidden: DenseCache,
    out: DenseCache,
}

impl QNet {
    pub fn new(cfg: NetConfig, rng: &mut PortableRng) -> Self {
        Self {
            trunk: Trunk::new(cfg, rng),
            hidden: Dense::new(cfg.lstm + ACTION_DIM, cfg.dense, Activation::Relu, rng),
            out: Dense::new(cfg.dense, 1, Activation::Identity, rng),
        }
    }

    pub fn head(&self, h: &Matrix, a: &Matrix) -> (Matrix, QHeadCache) {
        let mut x = Matrix::zeros(h.nrows() + a.nrows(), h.ncols());
        x.rows_mut(0, h.nrows()).copy_from(h);
        x.rows_mut(h.nrows(), a.nrows()).copy_from(a);
        let (z, hidden) = self.hidden.forward(&x).expect("q head width");
        let (q, out) = self.out.forward(&z).expect("q output width");
        (q, QHeadCache { hidden, out })
    }

    /// Accumulates head gradients and returns `(∂L/∂h, ∂L/∂a)`.
    pub fn head_backward(&mut self, cache: &QHeadCache, dq: &Matrix) -> (Matrix, Matrix) {
        let dz = self.out.backward(&cache.out, dq);
        split_head_grad(self.hidden.backward(&cache.hidden, &dz))
    }

    /// `(∂L/∂h, ∂L/∂a)` without touching parameter gradients.
    pub fn head_input_grad(&self, cache: &QHeadCache, dq: &Matrix) -> (Matrix, Matrix) {
        let dz = self.out.input_grad(&cache.out, dq);
        split_head_grad(self.hidden.input_grad(&cache.hidden, &dz))
    }
}

fn split_head_grad(dx: Matrix) -> (Matrix, Matrix) {
    let nh = dx.nrows() - ACTION_DIM;
    (dx.rows(0, nh).into_owned(), dx.rows(nh, ACTION_DIM).into_owned())
}

impl Parameters for QNet {
    fn params(&self) -> Vec<&ParameterBlock> {
        let mut v = self.trunk.params();
        v.extend(self.hidden.params());
        v.extend(self.out.params());
        v
    }

    fn params_mut(&mut self) -> Vec<&mut ParameterBlock> {
        let mut v = self.trunk.params_mut();
        v.extend(self.hidden.params_mut());
        v.extend(self.out.params_mut());
        v
    }
}
