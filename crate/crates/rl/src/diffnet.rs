//! Hand-written reverse-mode pieces for the two fixed network shapes used
//! by the agent: dense layers, an LSTM cell unrolled through time, the
//! tanh-squashed Gaussian head, Kaiming initialization, Adam and EMA.
//!
//! Activations are column-major batches: a `(features × batch)` matrix.
//! Every forward returns a cache; the matching backward consumes it,
//! accumulates parameter gradients and returns the input gradient.

use std::f64::consts::PI;
use std::ops::AddAssign;

use nalgebra::DMatrix;
use pgo_core::PortableRng;

use crate::error::DiffError;

pub type Matrix = DMatrix<f64>;

pub const LOG_STD_MIN: f64 = -20.0;
pub const LOG_STD_MAX: f64 = 2.0;
pub const SQUASH_EPS: f64 = 1e-6;

/// A parameter tensor and its accumulated gradient.
#[derive(Clone, Debug, PartialEq)]
pub struct ParameterBlock {
    pub value: Matrix,
    pub grad: Matrix,
}

impl ParameterBlock {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::from_value(Matrix::zeros(rows, cols))
    }

    pub fn from_value(value: Matrix) -> Self {
        let grad = Matrix::zeros(value.nrows(), value.ncols());
        Self { value, grad }
    }

    pub fn kaiming(rows: usize, cols: usize, fan_in: usize, rng: &mut PortableRng) -> Self {
        Self::from_value(kaiming_init(rows, cols, fan_in, rng))
    }

    pub fn shape(&self) -> (usize, usize) {
        self.value.shape()
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }
}

/// Anything owning parameter blocks in a fixed order.
pub trait Parameters {
    fn params(&self) -> Vec<&ParameterBlock>;
    fn params_mut(&mut self) -> Vec<&mut ParameterBlock>;

    fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    fn num_parameters(&self) -> usize {
        self.params().iter().map(|p| p.value.len()).sum()
    }
}

/// Samples `N(0, 2 / fan_in)`.
pub fn kaiming_init(rows: usize, cols: usize, fan_in: usize, rng: &mut PortableRng) -> Matrix {
    let std = (2.0 / fan_in.max(1) as f64).sqrt();
    // Row-major draw order so the stream does not depend on storage layout.
    let mut m = Matrix::zeros(rows, cols);
    for r in 0..rows {
        for c in 0..cols {
            m[(r, c)] = std * rng.normal();
        }
    }
    m
}

fn check_shape(what: &'static str, expected: (usize, usize), got: (usize, usize)) -> Result<(), DiffError> {
    if expected == got {
        Ok(())
    } else {
        Err(DiffError::Shape { what, expected, got })
    }
}

fn add_bias(m: &mut Matrix, b: &Matrix) {
    for mut col in m.column_iter_mut() {
        col += b.column(0);
    }
}

fn accumulate_bias_grad(grad: &mut Matrix, dz: &Matrix) {
    for col in dz.column_iter() {
        grad.column_mut(0).add_assign(&col);
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Tanh,
    Identity,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
            Activation::Identity => x,
        }
    }

    /// Derivative expressed through the activation output `y`.
    fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - y * y,
            Activation::Identity => 1.0,
        }
    }
}

/// `y = act(W x + b)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    pub w: ParameterBlock,
    pub b: ParameterBlock,
    pub act: Activation,
}

#[derive(Clone, Debug)]
pub struct DenseCache {
    x: Matrix,
    y: Matrix,
}

impl Dense {
    pub fn new(inputs: usize, outputs: usize, act: Activation, rng: &mut PortableRng) -> Self {
        Self {
            w: ParameterBlock::kaiming(outputs, inputs, inputs, rng),
            b: ParameterBlock::zeros(outputs, 1),
            act,
        }
    }

    pub fn inputs(&self) -> usize {
        self.w.value.ncols()
    }

    pub fn outputs(&self) -> usize {
        self.w.value.nrows()
    }

    pub fn forward(&self, x: &Matrix) -> Result<(Matrix, DenseCache), DiffError> {
        check_shape("dense input", (self.inputs(), x.ncols()), x.shape())?;
        let mut y = &self.w.value * x;
        add_bias(&mut y, &self.b.value);
        let act = self.act;
        y.apply(|v| *v = act.apply(*v));
        Ok((
            y.clone(),
            DenseCache {
                x: x.clone(),
                y,
            },
        ))
    }

    /// Accumulates `∂L/∂W`, `∂L/∂b` and returns `∂L/∂x`.
    pub fn backward(&mut self, cache: &DenseCache, dy: &Matrix) -> Matrix {
        let act = self.act;
        let dz = dy.zip_map(&cache.y, |g, y| g * act.derivative_from_output(y));
        self.w.grad += &dz * cache.x.transpose();
        accumulate_bias_grad(&mut self.b.grad, &dz);
        self.w.value.tr_mul(&dz)
    }

    /// `∂L/∂x` only, leaving parameter gradients untouched.
    pub fn input_grad(&self, cache: &DenseCache, dy: &Matrix) -> Matrix {
        let act = self.act;
        let dz = dy.zip_map(&cache.y, |g, y| g * act.derivative_from_output(y));
        self.w.value.tr_mul(&dz)
    }
}

impl Parameters for Dense {
    fn params(&self) -> Vec<&ParameterBlock> {
        vec![&self.w, &self.b]
    }

    fn params_mut(&mut self) -> Vec<&mut ParameterBlock> {
        vec![&mut self.w, &mut self.b]
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Hidden and cell state for a batch, `(hidden × batch)` each.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmState {
    pub h: Matrix,
    pub c: Matrix,
}

impl LstmState {
    pub fn zeros(hidden: usize, batch: usize) -> Self {
        Self {
            h: Matrix::zeros(hidden, batch),
            c: Matrix::zeros(hidden, batch),
        }
    }
}

/// LSTM cell with stacked gate order input, forget, candidate, output.
#[derive(Clone, Debug, PartialEq)]
pub struct Lstm {
    pub wx: ParameterBlock,
    pub wh: ParameterBlock,
    pub b: ParameterBlock,
}

#[derive(Clone, Debug)]
pub struct LstmCache {
    x: Matrix,
    h_prev: Matrix,
    c_prev: Matrix,
    i: Matrix,
    f: Matrix,
    g: Matrix,
    o: Matrix,
    tanh_c: Matrix,
}

impl Lstm {
    pub fn new(inputs: usize, hidden: usize, rng: &mut PortableRng) -> Self {
        Self {
            wx: ParameterBlock::kaiming(4 * hidden, inputs, inputs, rng),
            wh: ParameterBlock::kaiming(4 * hidden, hidden, hidden, rng),
            b: ParameterBlock::zeros(4 * hidden, 1),
        }
    }

    pub fn hidden(&self) -> usize {
        self.wh.value.ncols()
    }

    pub fn inputs(&self) -> usize {
        self.wx.value.ncols()
    }

    pub fn step(&self, x: &Matrix, state: &LstmState) -> Result<(LstmState, LstmCache), DiffError> {
        let hd = self.hidden();
        let batch = x.ncols();
        check_shape("lstm input", (self.inputs(), batch), x.shape())?;
        check_shape("lstm hidden", (hd, batch), state.h.shape())?;
        check_shape("lstm cell", (hd, batch), state.c.shape())?;
        let mut z = &self.wx.value * x;
        z.gemm(1.0, &self.wh.value, &state.h, 1.0);
        add_bias(&mut z, &self.b.value);
        let i = z.rows(0, hd).map(sigmoid);
        let f = z.rows(hd, hd).map(sigmoid);
        let g = z.rows(2 * hd, hd).map(f64::tanh);
        let o = z.rows(3 * hd, hd).map(sigmoid);
        let c = f.component_mul(&state.c) + i.component_mul(&g);
        let tanh_c = c.map(f64::tanh);
        let h = o.component_mul(&tanh_c);
        Ok((
            LstmState { h, c },
            LstmCache {
                x: x.clone(),
                h_prev: state.h.clone(),
                c_prev: state.c.clone(),
                i,
                f,
                g,
                o,
                tanh_c,
            },
        ))
    }

    /// Unrolls over `xs`, returning the hidden output of every step.
    pub fn forward_seq(&self, xs: &[Matrix], init: LstmState) -> Result<(Vec<Matrix>, Vec<LstmCache>), DiffError> {
        let mut state = init;
        let mut hs = Vec::with_capacity(xs.len());
        let mut caches = Vec::with_capacity(xs.len());
        for x in xs {
            let (next, cache) = self.step(x, &state)?;
            hs.push(next.h.clone());
            caches.push(cache);
            state = next;
        }
        Ok((hs, caches))
    }

    /// Backpropagation through time. `dhs[t]` is the loss gradient with
    /// respect to the hidden output at step `t`; the final state receives
    /// no gradient. Returns the input gradients.
    pub fn backward_seq(&mut self, caches: &[LstmCache], dhs: &[Matrix]) -> Vec<Matrix> {
        assert_eq!(caches.len(), dhs.len(), "one output gradient per step");
        let hd = self.hidden();
        let mut dxs = vec![Matrix::zeros(0, 0); caches.len()];
        let Some(first) = caches.first() else {
            return dxs;
        };
        let batch = first.x.ncols();
        let mut dh_next = Matrix::zeros(hd, batch);
        let mut dc_next = Matrix::zeros(hd, batch);
        let mut dz = Matrix::zeros(4 * hd, batch);
        for t in (0..caches.len()).rev() {
            let k = &caches[t];
            let dh = &dhs[t] + &dh_next;
            let dc = &dc_next + dh.component_mul(&k.o).zip_map(&k.tanh_c, |v, tc| v * (1.0 - tc * tc));
            for col in 0..batch {
                for r in 0..hd {
                    let (i, f, g, o) = (k.i[(r, col)], k.f[(r, col)], k.g[(r, col)], k.o[(r, col)]);
                    let dcv = dc[(r, col)];
                    dz[(r, col)] = dcv * g * i * (1.0 - i);
                    dz[(hd + r, col)] = dcv * k.c_prev[(r, col)] * f * (1.0 - f);
                    dz[(2 * hd + r, col)] = dcv * i * (1.0 - g * g);
                    dz[(3 * hd + r, col)] = dh[(r, col)] * k.tanh_c[(r, col)] * o * (1.0 - o);
                }
            }
            self.wx.grad += &dz * k.x.transpose();
            self.wh.grad += &dz * k.h_prev.transpose();
            accumulate_bias_grad(&mut self.b.grad, &dz);
            dxs[t] = self.wx.value.tr_mul(&dz);
            dh_next = self.wh.value.tr_mul(&dz);
            dc_next = dc.component_mul(&k.f);
        }
        dxs
    }
}

impl Parameters for Lstm {
    fn params(&self) -> Vec<&ParameterBlock> {
        vec![&self.wx, &self.wh, &self.b]
    }

    fn params_mut(&mut self) -> Vec<&mut ParameterBlock> {
        vec![&mut self.wx, &mut self.wh, &mut self.b]
    }
}

pub fn clamp_log_std(raw: f64) -> f64 {
    raw.clamp(LOG_STD_MIN, LOG_STD_MAX)
}

/// `log N(u; μ, σ) − Σ log(1 − tanh(u)² + ε)` for a diagonal Gaussian.
/// `log_std` is clamped to `[LOG_STD_MIN, LOG_STD_MAX]` first.
pub fn tanh_gaussian_logprob(mu: &[f64], log_std: &[f64], u: &[f64]) -> f64 {
    assert!(mu.len() == log_std.len() && mu.len() == u.len(), "dimension mismatch");
    mu.iter()
        .zip(log_std)
        .zip(u)
        .map(|((&m, &ls), &x)| {
            let ls = clamp_log_std(ls);
            let eps = (x - m) / ls.exp();
            gaussian_term(eps, ls) - (1.0 - x.tanh().powi(2) + SQUASH_EPS).ln()
        })
        .sum()
}

fn gaussian_term(eps: f64, log_std: f64) -> f64 {
    -0.5 * eps * eps - log_std - 0.5 * (2.0 * PI).ln()
}

/// One reparametrized draw `u = μ + σ·ε` of a single action dimension with
/// the derivatives the SAC losses need. Derivatives with respect to the
/// log-std are taken on the raw (pre-clamp) head output.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SquashedSample {
    pub u: f64,
    /// `tanh(u)`.
    pub action: f64,
    pub logp: f64,
    pub dlogp_dmu: f64,
    pub dlogp_dlog_std: f64,
    pub daction_dmu: f64,
    pub daction_dlog_std: f64,
}

pub fn squashed_sample(mu: f64, raw_log_std: f64, eps: f64) -> SquashedSample {
    let ls = clamp_log_std(raw_log_std);
    let inside = if (LOG_STD_MIN..=LOG_STD_MAX).contains(&raw_log_std) { 1.0 } else { 0.0 };
    let std = ls.exp();
    let u = mu + std * eps;
    let t = u.tanh();
    let sech2 = 1.0 - t * t;
    let q = sech2 + SQUASH_EPS;
    // d/du of −log(1 − tanh²u + ε)
    let kappa = 2.0 * t * sech2 / q;
    SquashedSample {
        u,
        action: t,
        logp: gaussian_term(eps, ls) - q.ln(),
        dlogp_dmu: kappa,
        dlogp_dlog_std: inside * (-1.0 + kappa * std * eps),
        daction_dmu: sech2,
        daction_dlog_std: inside * sech2 * std * eps,
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 3.0e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Bias-corrected Adam over an ordered list of parameter blocks.
#[derive(Clone, Debug)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step_count: u64,
    m: Vec<Matrix>,
    v: Vec<Matrix>,
}

impl AdamState {
    pub fn new(config: AdamConfig, params: &[&ParameterBlock]) -> Self {
        let zeros = |p: &&ParameterBlock| Matrix::zeros(p.value.nrows(), p.value.ncols());
        Self {
            config,
            step_count: 0,
            m: params.iter().map(zeros).collect(),
            v: params.iter().map(zeros).collect(),
        }
    }

    /// Applies one update from the current gradients; gradients are left
    /// untouched for the caller to clear.
    pub fn step(&mut self, params: &mut [&mut ParameterBlock]) {
        assert_eq!(params.len(), self.m.len(), "parameter list changed since construction");
        self.step_count += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let c1 = 1.0 - beta1.powi(self.step_count as i32);
        let c2 = 1.0 - beta2.powi(self.step_count as i32);
        for ((p, m), v) in params.iter_mut().zip(&mut self.m).zip(&mut self.v) {
            assert_eq!(p.value.shape(), m.shape(), "parameter shape changed");
            for k in 0..p.value.len() {
                let g = p.grad[k];
                m[k] = beta1 * m[k] + (1.0 - beta1) * g;
                v[k] = beta2 * v[k] + (1.0 - beta2) * g * g;
                let mh = m[k] / c1;
                let vh = v[k] / c2;
                p.value[k] -= lr * mh / (vh.sqrt() + eps);
            }
        }
    }
}

/// `target ← (1 − τ)·target + τ·online`, block by block.
pub fn ema_update(target: &mut [&mut ParameterBlock], online: &[&ParameterBlock], tau: f64) {
    assert_eq!(target.len(), online.len(), "EMA over different parameter lists");
    for (t, o) in target.iter_mut().zip(online) {
        assert_eq!(t.value.shape(), o.value.shape(), "EMA shape mismatch");
        t.value.zip_apply(&o.value, |tv, ov| *tv = (1.0 - tau) * *tv + tau * ov);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn identity_dense_passes_through() {
        let mut rng = PortableRng::seed_from_u64(0);
        let mut d = Dense::new(3, 3, Activation::Identity, &mut rng);
        d.w.value = Matrix::identity(3, 3);
        let x = Matrix::from_column_slice(3, 2, &[1.0, -2.0, 3.0, 0.5, 0.0, -1.0]);
        assert_eq!(d.forward(&x).unwrap().0, x);
        assert!(d.forward(&Matrix::zeros(2, 1)).is_err());
    }

    #[test]
    fn relu_values() {
        assert_eq!(Activation::Relu.apply(-1.0), 0.0);
        assert_eq!(Activation::Relu.apply(2.0), 2.0);
    }

    #[test]
    fn zero_lstm_gives_zero_hidden() {
        let mut rng = PortableRng::seed_from_u64(0);
        let mut l = Lstm::new(3, 4, &mut rng);
        l.wx.value.fill(0.0);
        l.wh.value.fill(0.0);
        let x = Matrix::from_element(3, 2, 0.7);
        let (s, _) = l.step(&x, &LstmState::zeros(4, 2)).unwrap();
        assert!(s.h.iter().all(|&v| v == 0.0));
        assert!(s.c.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn standard_normal_logprob_at_origin() {
        let lp = tanh_gaussian_logprob(&[0.0, 0.0], &[0.0, 0.0], &[0.0, 0.0]);
        // The squash guard contributes −2·log(1 + 1e−6).
        assert_abs_diff_eq!(lp, -(2.0 * PI).ln() - 2.0 * (1.0 + SQUASH_EPS).ln(), epsilon = 1e-15);
        assert_abs_diff_eq!(lp, -1.837877, epsilon = 1e-5);
    }

    #[test]
    fn squashed_sample_agrees_with_logprob() {
        let s = squashed_sample(0.3, -0.7, 1.2);
        let lp = tanh_gaussian_logprob(&[0.3], &[-0.7], &[s.u]);
        assert_abs_diff_eq!(s.logp, lp, epsilon = 1e-12);
        // Out-of-range log-std is clamped and carries no gradient.
        let s = squashed_sample(0.0, 5.0, 0.4);
        assert_eq!(s.dlogp_dlog_std, 0.0);
        assert_abs_diff_eq!(s.u, 0.4 * LOG_STD_MAX.exp(), epsilon = 1e-12);
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut p = ParameterBlock::from_value(Matrix::from_column_slice(2, 1, &[1.0, -1.0]));
        let mut adam = AdamState::new(AdamConfig::default(), &[&p]);
        p.grad = Matrix::from_column_slice(2, 1, &[0.5, -3.0]);
        adam.step(&mut [&mut p]);
        assert_abs_diff_eq!(p.value[0], 1.0 - 3e-4, epsilon = 1e-10);
        assert_abs_diff_eq!(p.value[1], -1.0 + 3e-4, epsilon = 1e-10);
        assert_eq!(p.grad[0], 0.5, "gradients are left for the caller");
    }

    #[test]
    fn adam_zero_gradient_is_a_no_op() {
        let mut p = ParameterBlock::from_value(Matrix::from_element(3, 1, 0.25));
        let before = p.value.clone();
        let mut adam = AdamState::new(AdamConfig::default(), &[&p]);
        for _ in 0..5 {
            adam.step(&mut [&mut p]);
        }
        assert_eq!(p.value, before);
    }

    #[test]
    fn ema_limits() {
        let o = ParameterBlock::from_value(Matrix::from_element(2, 2, 3.0));
        let mut t = ParameterBlock::from_value(Matrix::from_element(2, 2, -1.0));
        ema_update(&mut [&mut t], &[&o], 0.0);
        assert_eq!(t.value, Matrix::from_element(2, 2, -1.0));
        ema_update(&mut [&mut t], &[&o], 1.0);
        assert_eq!(t.value, o.value);
    }

    #[test]
    fn kaiming_is_seeded_and_biases_are_zero() {
        let a = Dense::new(5, 7, Activation::Relu, &mut PortableRng::seed_from_u64(9));
        let b = Dense::new(5, 7, Activation::Relu, &mut PortableRng::seed_from_u64(9));
        assert_eq!(a, b);
        assert!(a.b.value.iter().all(|&v| v == 0.0));
    }
}
