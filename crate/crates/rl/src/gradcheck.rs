//! Central finite-difference checks for every differentiable path: dense
//! layers, LSTM BPTT, the squashed-Gaussian head, the encoder and both SAC
//! losses. Each check returns the worst relative error over [`PROBES`]
//! random coordinates.

use pgo_core::PortableRng;

use crate::diffnet::{squashed_sample, Activation, Dense, Lstm, LstmState, Matrix, ParameterBlock, Parameters};
use crate::encoder::{EncoderParams, StateFeatures, STATE_DIM};
use crate::networks::NetConfig;
use crate::replay::{EpisodeRecord, ReplayBuffer, SequenceBatch};
use crate::sac::Agent;

pub const PROBES: usize = 20;
pub const TOLERANCE: f64 = 1e-4;
const STEP: f64 = 1e-5;

pub fn random_matrix(rows: usize, cols: usize, scale: f64, rng: &mut PortableRng) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| scale * rng.normal())
}

/// `|a − n| / max(|a|, |n|, 1e−6)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

/// Compares analytic gradients against central differences at `PROBES`
/// random coordinates. `blocks` exposes the perturbable blocks of a model
/// copy; `analytic[k]` is the gradient of block `k`.
pub fn max_fd_error<M: Clone>(
    model: &M,
    blocks: impl Fn(&mut M) -> Vec<&mut ParameterBlock>,
    analytic: &[Matrix],
    loss: impl Fn(&M) -> f64,
    rng: &mut PortableRng,
) -> f64 {
    let sizes: Vec<usize> = analytic.iter().map(|g| g.len()).collect();
    let total: usize = sizes.iter().sum();
    let mut worst: f64 = 0.0;
    for _ in 0..PROBES {
        let mut pick = rng.index(total);
        let mut k = 0;
        while pick >= sizes[k] {
            pick -= sizes[k];
            k += 1;
        }
        let mut plus = model.clone();
        blocks(&mut plus)[k].value[pick] += STEP;
        let mut minus = model.clone();
        blocks(&mut minus)[k].value[pick] -= STEP;
        let numeric = (loss(&plus) - loss(&minus)) / (2.0 * STEP);
        worst = worst.max(relative_error(analytic[k][pick], numeric));
    }
    worst
}

fn grads(blocks: Vec<&ParameterBlock>) -> Vec<Matrix> {
    blocks.into_iter().map(|b| b.grad.clone()).collect()
}

fn weighted_sum(y: &Matrix, w: &Matrix) -> f64 {
    y.component_mul(w).sum()
}

#[derive(Clone)]
struct DenseCase {
    layer: Dense,
    x: ParameterBlock,
    w: Matrix,
}

impl DenseCase {
    fn loss(&self) -> f64 {
        weighted_sum(&self.layer.forward(&self.x.value).unwrap().0, &self.w)
    }
}

fn dense_blocks(c: &mut DenseCase) -> Vec<&mut ParameterBlock> {
    vec![&mut c.layer.w, &mut c.layer.b, &mut c.x]
}

pub fn dense(act: Activation, seed: u64) -> f64 {
    let mut rng = PortableRng::seed_from_u64(seed);
    let mut layer = Dense::new(5, 4, act, &mut rng);
    layer.b.value = random_matrix(4, 1, 0.3, &mut rng);
    let mut case = DenseCase {
        layer,
        x: ParameterBlock::from_value(random_matrix(5, 3, 1.0, &mut rng)),
        w: random_matrix(4, 3, 1.0, &mut rng),
    };
    let (_, cache) = case.layer.forward(&case.x.value).unwrap();
    case.x.grad = case.layer.backward(&cache, &case.w.clone());
    let analytic = vec![case.layer.w.grad.clone(), case.layer.b.grad.clone(), case.x.grad.clone()];
    max_fd_error(&case, dense_blocks, &analytic, DenseCase::loss, &mut rng)
}

#[derive(Clone)]
struct LstmCase {
    cell: Lstm,
    xs: Vec<ParameterBlock>,
    w: Vec<Matrix>,
}

impl LstmCase {
    fn inputs(&self) -> Vec<Matrix> {
        self.xs.iter().map(|x| x.value.clone()).collect()
    }

    fn loss(&self) -> f64 {
        let (hs, _) = self.cell.forward_seq(&self.inputs(), LstmState::zeros(self.cell.hidden(), 2)).unwrap();
        hs.iter().zip(&self.w).map(|(h, w)| weighted_sum(h, w)).sum()
    }
}

fn lstm_blocks(c: &mut LstmCase) -> Vec<&mut ParameterBlock> {
    let mut v = c.cell.params_mut();
    v.extend(c.xs.iter_mut());
    v
}

/// BPTT through `steps` LSTM steps, checking weights and every input.
pub fn lstm_bptt(steps: usize, seed: u64) -> f64 {
    let mut rng = PortableRng::seed_from_u64(seed);
    let mut cell = Lstm::new(3, 4, &mut rng);
    cell.b.value = random_matrix(16, 1, 0.5, &mut rng);
    let mut case = LstmCase {
        cell,
        xs: (0..steps).map(|_| ParameterBlock::from_value(random_matrix(3, 2, 1.0, &mut rng))).collect(),
        w: (0..steps).map(|_| random_matrix(4, 2, 1.0, &mut rng)).collect(),
    };
    let (_, caches) = case.cell.forward_seq(&case.inputs(), LstmState::zeros(4, 2)).unwrap();
    let dxs = case.cell.backward_seq(&caches, &case.w.clone());
    for (x, d) in case.xs.iter_mut().zip(dxs) {
        x.grad = d;
    }
    let mut analytic = grads(case.cell.params());
    analytic.extend(case.xs.iter().map(|x| x.grad.clone()));
    max_fd_error(&case, lstm_blocks, &analytic, LstmCase::loss, &mut rng)
}

/// Log-density and action derivatives of the tanh-Gaussian head.
pub fn squashed_gaussian(seed: u64) -> f64 {
    let mut rng = PortableRng::seed_from_u64(seed);
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for _ in 0..PROBES {
        let mu = rng.uniform_range(-1.5, 1.5);
        let ls = rng.uniform_range(-2.0, 1.0);
        let eps = rng.normal();
        let s = squashed_sample(mu, ls, eps);
        let f = |m: f64, l: f64| squashed_sample(m, l, eps);
        let pairs = [
            (s.dlogp_dmu, (f(mu + h, ls).logp - f(mu - h, ls).logp) / (2.0 * h)),
            (s.dlogp_dlog_std, (f(mu, ls + h).logp - f(mu, ls - h).logp) / (2.0 * h)),
            (s.daction_dmu, (f(mu + h, ls).action - f(mu - h, ls).action) / (2.0 * h)),
            (s.daction_dlog_std, (f(mu, ls + h).action - f(mu, ls - h).action) / (2.0 * h)),
        ];
        for (a, n) in pairs {
            worst = worst.max(relative_error(a, n));
        }
    }
    worst
}

#[derive(Clone)]
struct EncoderCase {
    enc: EncoderParams,
    features: Vec<StateFeatures>,
    w: Matrix,
}

impl EncoderCase {
    fn loss(&self) -> f64 {
        weighted_sum(&self.enc.encode_batch(&self.features), &self.w)
    }
}

/// Encoder weights plus a dedicated probe on β, which random probes may miss.
pub fn encoder(seed: u64) -> f64 {
    let mut rng = PortableRng::seed_from_u64(seed);
    let mut enc = EncoderParams::new(&mut rng);
    enc.beta.value[0] = 0.7;
    enc.b_lin.value = random_matrix(20, 1, 0.5, &mut rng);
    let features: Vec<StateFeatures> = (0..4)
        .map(|_| StateFeatures {
            mean_cost: rng.uniform_range(0.0, 3.0),
            residual: rng.normal(),
        })
        .collect();
    let mut case = EncoderCase {
        enc,
        w: random_matrix(STATE_DIM, features.len(), 1.0, &mut rng),
        features,
    };
    let (f, w) = (case.features.clone(), case.w.clone());
    case.enc.backward_batch(&f, &w);
    let analytic = grads(case.enc.params());
    let err = max_fd_error(&case, |c| c.enc.params_mut(), &analytic, EncoderCase::loss, &mut rng);

    let h = 1e-6;
    let mut plus = case.clone();
    plus.enc.beta.value[0] += h;
    let mut minus = case.clone();
    minus.enc.beta.value[0] -= h;
    let numeric = (plus.loss() - minus.loss()) / (2.0 * h);
    err.max(relative_error(case.enc.beta.grad[0], numeric))
}

fn tiny_batch(rng: &mut PortableRng) -> SequenceBatch {
    let mut buf = ReplayBuffer::new(8);
    for _ in 0..4 {
        let feat = |rng: &mut PortableRng| StateFeatures {
            mean_cost: rng.uniform_range(0.0, 2.0),
            residual: 0.3 * rng.normal(),
        };
        let mut ep = EpisodeRecord::new(feat(rng));
        let len = 4 + rng.index(4);
        for t in 0..len {
            let a = [rng.uniform_range(-0.9, 0.9), rng.uniform_range(-0.9, 0.9)];
            let f = feat(rng);
            ep.push(a, rng.uniform_range(0.0, 2.0), f, t + 1 == len);
        }
        buf.push(ep);
    }
    buf.sample(rng, 3, Some(5))
}

fn tiny_agent(rng: &mut PortableRng) -> Agent {
    let net = NetConfig { dense: 4, lstm: 4 };
    let mut a = Agent::new(net, 2, rng);
    a.log_alpha.value[0] = 0.3f64.ln();
    // Break the symmetry between online and target networks.
    a.target_critics = Agent::new(net, 2, rng).critics;
    a
}

fn critic_blocks(a: &mut Agent) -> Vec<&mut ParameterBlock> {
    let mut v = Vec::new();
    for q in &mut a.critics {
        v.extend(q.params_mut());
    }
    v.extend(a.encoder.params_mut());
    v
}

/// Bellman loss with respect to both critics and the shared encoder.
pub fn critic_loss(seed: u64) -> f64 {
    let mut rng = PortableRng::seed_from_u64(seed);
    let mut agent = tiny_agent(&mut rng);
    let batch = tiny_batch(&mut rng);
    let y = agent.critic_targets(&batch, 0.9, 1.0);
    agent.zero_grad();
    agent.critic_pass(&batch, &y, true);
    let analytic: Vec<Matrix> = critic_blocks(&mut agent.clone()).into_iter().map(|b| b.grad.clone()).collect();
    let loss = |a: &Agent| a.clone().critic_pass(&batch, &y, false).loss;
    max_fd_error(&agent, critic_blocks, &analytic, loss, &mut rng)
}

fn policy_blocks(a: &mut Agent) -> Vec<&mut ParameterBlock> {
    let mut v = a.policy.params_mut();
    v.extend(a.encoder.params_mut());
    v
}

/// Policy loss with respect to the policy and the shared encoder, with the
/// critic recurrent outputs held fixed.
pub fn policy_loss(seed: u64) -> f64 {
    let mut rng = PortableRng::seed_from_u64(seed);
    let mut agent = tiny_agent(&mut rng);
    let batch = tiny_batch(&mut rng);
    let y = agent.critic_targets(&batch, 1.0, 1.0);
    let hidden = agent.critic_pass(&batch, &y, false).hidden;
    agent.zero_grad();
    agent.policy_pass(&batch, &hidden, true);
    let analytic: Vec<Matrix> = policy_blocks(&mut agent.clone()).into_iter().map(|b| b.grad.clone()).collect();
    let loss = |a: &Agent| a.clone().policy_pass(&batch, &hidden, false).loss;
    max_fd_error(&agent, policy_blocks, &analytic, loss, &mut rng)
}

/// Every check with its worst relative error.
pub fn suite() -> Vec<(&'static str, f64)> {
    vec![
        ("dense relu", dense(Activation::Relu, 0)),
        ("dense tanh", dense(Activation::Tanh, 1)),
        ("dense identity", dense(Activation::Identity, 2)),
        ("lstm bptt T=5", lstm_bptt(5, 11)),
        ("lstm bptt T=8", lstm_bptt(8, 12)),
        ("squashed gaussian", squashed_gaussian(5)),
        ("encoder", encoder(21)),
        ("critic loss", critic_loss(31)),
        ("policy loss", policy_loss(41)),
    ]
}
