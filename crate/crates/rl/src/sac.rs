//! Recurrent soft actor-critic.
//!
//! Losses are evaluated on sequence windows from the replay buffer. Critic
//! targets use the EMA target critics and target encoder; the next action
//! comes from the online policy. All gradients of one update are computed
//! on the same parameter snapshot, then Adam steps are applied to the
//! critics, the policy (with the encoder), the temperature, and finally the
//! targets are moved by EMA.

use pgo_core::PortableRng;

use crate::diffnet::{
    ema_update, squashed_sample, AdamConfig, AdamState, LstmState, Matrix, ParameterBlock, Parameters, SquashedSample,
};
use crate::encoder::{EncoderParams, StateFeatures, STATE_DIM};
use crate::networks::{NetConfig, PolicyNet, QNet, ACTION_DIM, TRUNK_INPUT};
use crate::replay::{ReplayBuffer, SequenceBatch};

pub const TARGET_ENTROPY: f64 = -(ACTION_DIM as f64);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ActMode {
    Stochastic,
    Deterministic,
}

/// Everything a checkpoint holds.
#[derive(Clone, Debug, PartialEq)]
pub struct Agent {
    pub net: NetConfig,
    pub encoder: EncoderParams,
    pub policy: PolicyNet,
    pub critics: Vec<QNet>,
    pub target_encoder: EncoderParams,
    pub target_critics: Vec<QNet>,
    pub log_alpha: ParameterBlock,
}

/// Output of one acting step.
#[derive(Clone, Debug)]
pub struct Act {
    /// Pre-squash action handed to the environment.
    pub u: [f64; ACTION_DIM],
    /// `tanh(u)`, the normalized action fed back to the networks.
    pub action: [f64; ACTION_DIM],
    pub logp: f64,
    pub state: LstmState,
}

fn trunk_input(state: &Matrix, prev: &Matrix) -> Matrix {
    let mut x = Matrix::zeros(TRUNK_INPUT, state.ncols());
    x.rows_mut(0, STATE_DIM).copy_from(state);
    x.rows_mut(STATE_DIM, ACTION_DIM).copy_from(prev);
    x
}

fn batch_inputs(encoder: &EncoderParams, batch: &SequenceBatch, steps: usize) -> Vec<Matrix> {
    (0..steps)
        .map(|t| trunk_input(&encoder.encode_batch(&batch.features[t]), &batch.prev_actions[t]))
        .collect()
}

fn sample_columns(out: &Matrix, noise: &Matrix) -> Vec<[SquashedSample; ACTION_DIM]> {
    (0..out.ncols())
        .map(|b| std::array::from_fn(|k| squashed_sample(out[(k, b)], out[(ACTION_DIM + k, b)], noise[(k, b)])))
        .collect()
}

fn actions_matrix(samples: &[[SquashedSample; ACTION_DIM]]) -> Matrix {
    Matrix::from_fn(ACTION_DIM, samples.len(), |k, b| samples[b][k].action)
}

fn logp_row(samples: &[[SquashedSample; ACTION_DIM]]) -> Vec<f64> {
    samples.iter().map(|s| s.iter().map(|d| d.logp).sum()).collect()
}

/// Column-wise minimum over critics and the index attaining it.
fn min_over(qs: &[Matrix]) -> (Vec<f64>, Vec<usize>) {
    let n = qs[0].ncols();
    let mut v = vec![f64::INFINITY; n];
    let mut arg = vec![0; n];
    for (k, q) in qs.iter().enumerate() {
        for b in 0..n {
            if q[(0, b)] < v[b] {
                v[b] = q[(0, b)];
                arg[b] = k;
            }
        }
    }
    (v, arg)
}

/// Result of the critic loss on one batch.
pub struct CriticPass {
    pub loss: f64,
    /// `hidden[k][t]`: LSTM output of critic `k` at step `t`.
    pub hidden: Vec<Vec<Matrix>>,
}

pub struct PolicyPass {
    pub loss: f64,
    /// Masked mean of `log π(ãₜ)`.
    pub mean_logp: f64,
}

impl Agent {
    pub fn new(net: NetConfig, critics: usize, rng: &mut PortableRng) -> Self {
        assert!(critics == 1 || critics == 2, "one or two critics");
        let encoder = EncoderParams::new(rng);
        let policy = PolicyNet::new(net, rng);
        let critics: Vec<QNet> = (0..critics).map(|_| QNet::new(net, rng)).collect();
        Self {
            net,
            target_encoder: encoder.clone(),
            target_critics: critics.clone(),
            encoder,
            policy,
            critics,
            log_alpha: ParameterBlock::zeros(1, 1),
        }
    }

    pub fn alpha(&self) -> f64 {
        self.log_alpha.value[0].exp()
    }

    pub fn initial_lstm(&self) -> LstmState {
        LstmState::zeros(self.policy.lstm_width(), 1)
    }

    /// One policy step. Stochastic mode samples `u = μ + σ·ε`;
    /// deterministic mode returns `u = μ`.
    pub fn act(
        &self,
        features: &StateFeatures,
        prev: [f64; ACTION_DIM],
        lstm: &LstmState,
        mode: ActMode,
        rng: &mut PortableRng,
    ) -> Act {
        let s = Matrix::from_column_slice(STATE_DIM, 1, self.encoder.encode(features).as_slice());
        let x = trunk_input(&s, &Matrix::from_column_slice(ACTION_DIM, 1, &prev));
        let (out, state) = self.policy.step(&x, lstm);
        let samples: [SquashedSample; ACTION_DIM] = std::array::from_fn(|k| {
            let eps = match mode {
                ActMode::Stochastic => rng.normal(),
                ActMode::Deterministic => 0.0,
            };
            squashed_sample(out[k], out[ACTION_DIM + k], eps)
        });
        Act {
            u: samples.map(|s| s.u),
            action: samples.map(|s| s.action),
            logp: samples.iter().map(|s| s.logp).sum(),
            state,
        }
    }

    /// Soft Bellman targets `yₜ = c·rₜ + γ·(1 − doneₜ)·(minₖ Q̄ₖ(hₜ₊₁, ãₜ₊₁) − α·log π(ãₜ₊₁))`,
    /// one row per step.
    pub fn critic_targets(&self, batch: &SequenceBatch, gamma: f64, reward_scale: f64) -> Matrix {
        let w = batch.steps;
        let alpha = self.alpha();
        let xs = batch_inputs(&self.encoder, batch, w + 1);
        let (outs, _) = self.policy.forward(&xs);
        let xt = batch_inputs(&self.target_encoder, batch, w + 1);
        let hidden: Vec<Vec<Matrix>> = self.target_critics.iter().map(|q| q.trunk.forward(&xt).0).collect();
        let mut y = Matrix::zeros(w, batch.batch);
        for t in 0..w {
            let samples = sample_columns(&outs[t + 1], &batch.noise[t + 1]);
            let a = actions_matrix(&samples);
            let logp = logp_row(&samples);
            let qs: Vec<Matrix> = self
                .target_critics
                .iter()
                .zip(&hidden)
                .map(|(q, h)| q.head(&h[t + 1], &a).0)
                .collect();
            let (qmin, _) = min_over(&qs);
            for b in 0..batch.batch {
                let v = qmin[b] - alpha * logp[b];
                y[(t, b)] = reward_scale * batch.rewards[(t, b)] + gamma * batch.not_done[(t, b)] * v;
            }
        }
        y
    }

    /// Masked mean squared Bellman error summed over critics. With `grads`
    /// set, accumulates critic and encoder gradients.
    pub fn critic_pass(&mut self, batch: &SequenceBatch, y: &Matrix, grads: bool) -> CriticPass {
        let w = batch.steps;
        let n = batch.mask.sum().max(1.0);
        let xs = batch_inputs(&self.encoder, batch, w);
        let mut loss = 0.0;
        let mut hidden = Vec::with_capacity(self.critics.len());
        let mut ds = vec![Matrix::zeros(STATE_DIM, batch.batch); w];
        for q in &mut self.critics {
            let (hs, cache) = q.trunk.forward(&xs);
            let mut dhs = Vec::with_capacity(w);
            for t in 0..w {
                let (qv, hc) = q.head(&hs[t], &batch.actions[t]);
                let diff = Matrix::from_fn(1, batch.batch, |_, b| (qv[(0, b)] - y[(t, b)]) * batch.mask[(t, b)]);
                loss += diff.norm_squared() / n;
                if grads {
                    let (dh, _) = q.head_backward(&hc, &(diff * (2.0 / n)));
                    dhs.push(dh);
                }
            }
            if grads {
                let dxs = q.trunk.backward(&cache, &dhs);
                for (acc, dx) in ds.iter_mut().zip(&dxs) {
                    *acc += dx.rows(0, STATE_DIM);
                }
            }
            hidden.push(hs);
        }
        if grads {
            for (t, d) in ds.iter().enumerate() {
                self.encoder.backward_batch(&batch.features[t], d);
            }
        }
        CriticPass { loss, hidden }
    }

    /// `mean(α·log π(ãₜ) − minₖ Qₖ(hₜ, ãₜ))` with reparametrized actions.
    /// Critic recurrent outputs come from [`Agent::critic_pass`] and are held
    /// fixed. With `grads` set, accumulates policy and encoder gradients.
    pub fn policy_pass(&mut self, batch: &SequenceBatch, critic_hidden: &[Vec<Matrix>], grads: bool) -> PolicyPass {
        let w = batch.steps;
        let n = batch.mask.sum().max(1.0);
        let alpha = self.alpha();
        let xs = batch_inputs(&self.encoder, batch, w);
        let (outs, cache) = self.policy.forward(&xs);
        let mut loss = 0.0;
        let mut logp_sum = 0.0;
        let mut douts = Vec::with_capacity(w);
        for t in 0..w {
            let samples = sample_columns(&outs[t], &batch.noise[t]);
            let a = actions_matrix(&samples);
            let logp = logp_row(&samples);
            let heads: Vec<_> = self
                .critics
                .iter()
                .zip(critic_hidden)
                .map(|(q, h)| q.head(&h[t], &a))
                .collect();
            let qs: Vec<Matrix> = heads.iter().map(|(q, _)| q.clone()).collect();
            let (qmin, arg) = min_over(&qs);
            for b in 0..batch.batch {
                let m = batch.mask[(t, b)];
                loss += m * (alpha * logp[b] - qmin[b]) / n;
                logp_sum += m * logp[b];
            }
            if grads {
                let mut da = Matrix::zeros(ACTION_DIM, batch.batch);
                for (k, (q, (_, hc))) in self.critics.iter().zip(&heads).enumerate() {
                    let dq = Matrix::from_fn(1, batch.batch, |_, b| {
                        if arg[b] == k {
                            -batch.mask[(t, b)] / n
                        } else {
                            0.0
                        }
                    });
                    da += q.head_input_grad(hc, &dq).1;
                }
                let mut dout = Matrix::zeros(2 * ACTION_DIM, batch.batch);
                for b in 0..batch.batch {
                    let m = batch.mask[(t, b)] / n;
                    for k in 0..ACTION_DIM {
                        let s = &samples[b][k];
                        dout[(k, b)] = m * alpha * s.dlogp_dmu + da[(k, b)] * s.daction_dmu;
                        dout[(ACTION_DIM + k, b)] = m * alpha * s.dlogp_dlog_std + da[(k, b)] * s.daction_dlog_std;
                    }
                }
                douts.push(dout);
            }
        }
        if grads {
            let dxs = self.policy.backward(&cache, &douts);
            for (t, dx) in dxs.iter().enumerate() {
                self.encoder.backward_batch(&batch.features[t], &dx.rows(0, STATE_DIM).into_owned());
            }
        }
        PolicyPass {
            loss,
            mean_logp: logp_sum / n,
        }
    }

    pub fn soft_update_targets(&mut self, tau: f64) {
        for (t, o) in self.target_critics.iter_mut().zip(&self.critics) {
            ema_update(&mut t.params_mut(), &o.params(), tau);
        }
        ema_update(&mut self.target_encoder.params_mut(), &self.encoder.params(), tau);
    }

    pub fn zero_grad(&mut self) {
        self.encoder.zero_grad();
        self.policy.zero_grad();
        for q in &mut self.critics {
            q.zero_grad();
        }
        self.log_alpha.zero_grad();
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub gamma: f64,
    pub tau: f64,
    pub lr: f64,
    pub batch: usize,
    /// Starting entropy temperature.
    pub initial_alpha: f64,
    /// Tune `α` toward `target_entropy`; otherwise keep it fixed.
    pub auto_alpha: bool,
    pub target_entropy: f64,
    /// `None`: one update per collected step.
    pub updates_per_episode: Option<usize>,
    /// `None`: whole episodes.
    pub bptt_window: Option<usize>,
    /// Capacity of the replay buffer in episodes.
    pub replay_capacity: usize,
    /// Multiplies rewards inside the critic targets only.
    pub reward_scale: f64,
    pub critics: usize,
    pub net: NetConfig,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            gamma: 1.0,
            tau: 1e-2,
            lr: 3e-4,
            batch: 128,
            initial_alpha: 1.0,
            auto_alpha: true,
            target_entropy: TARGET_ENTROPY,
            updates_per_episode: None,
            bptt_window: None,
            replay_capacity: 1000,
            reward_scale: 1.0,
            critics: 2,
            net: NetConfig::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(format!("gamma must lie in [0, 1], got {}", self.gamma));
        }
        if !(0.0..=1.0).contains(&self.tau) {
            return Err(format!("tau must lie in [0, 1], got {}", self.tau));
        }
        if self.batch == 0 {
            return Err("batch must be at least 1".into());
        }
        if !(self.lr > 0.0) || !(self.initial_alpha > 0.0) {
            return Err("learning rate and initial alpha must be positive".into());
        }
        if self.critics != 1 && self.critics != 2 {
            return Err("critics must be 1 or 2".into());
        }
        if self.net.dense == 0 || self.net.lstm == 0 || self.replay_capacity == 0 {
            return Err("network widths and replay capacity must be positive".into());
        }
        if self.bptt_window == Some(0) {
            return Err("bptt window must be positive".into());
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UpdateStats {
    pub critic_loss: f64,
    pub policy_loss: f64,
    pub alpha: f64,
    pub entropy: f64,
}

/// Agent plus optimizer state, replay and the training random stream.
pub struct Sac {
    pub agent: Agent,
    pub config: TrainConfig,
    pub replay: ReplayBuffer,
    pub rng: PortableRng,
    opt_critics: Vec<AdamState>,
    opt_policy: AdamState,
    opt_encoder: AdamState,
    opt_alpha: AdamState,
    pub updates: u64,
}

impl Sac {
    pub fn new(config: TrainConfig) -> Result<Self, String> {
        config.validate()?;
        let mut rng = PortableRng::seed_from_u64(config.seed);
        let agent = Agent::new(config.net, config.critics, &mut rng);
        Ok(Self::from_agent(agent, config, rng))
    }

    pub fn from_agent(mut agent: Agent, config: TrainConfig, rng: PortableRng) -> Self {
        agent.log_alpha.value[0] = config.initial_alpha.ln();
        let adam = AdamConfig {
            lr: config.lr,
            ..AdamConfig::default()
        };
        Self {
            opt_critics: agent.critics.iter().map(|q| AdamState::new(adam, &q.params())).collect(),
            opt_policy: AdamState::new(adam, &agent.policy.params()),
            opt_encoder: AdamState::new(adam, &agent.encoder.params()),
            opt_alpha: AdamState::new(adam, &[&agent.log_alpha]),
            replay: ReplayBuffer::new(config.replay_capacity),
            agent,
            config,
            rng,
            updates: 0,
        }
    }

    /// Samples a batch and updates; `None` while the buffer is empty.
    pub fn update(&mut self) -> Option<UpdateStats> {
        if self.replay.is_empty() {
            return None;
        }
        let batch = self.replay.sample(&mut self.rng, self.config.batch, self.config.bptt_window);
        Some(self.update_on(&batch))
    }

    pub fn update_on(&mut self, batch: &SequenceBatch) -> UpdateStats {
        let y = self.agent.critic_targets(batch, self.config.gamma, self.config.reward_scale);
        self.agent.zero_grad();
        let critic = self.agent.critic_pass(batch, &y, true);
        let policy = self.agent.policy_pass(batch, &critic.hidden, true);

        for (q, opt) in self.agent.critics.iter_mut().zip(&mut self.opt_critics) {
            opt.step(&mut q.params_mut());
        }
        self.opt_policy.step(&mut self.agent.policy.params_mut());
        self.opt_encoder.step(&mut self.agent.encoder.params_mut());
        if self.config.auto_alpha {
            self.agent.log_alpha.grad[0] = -(policy.mean_logp + self.config.target_entropy);
            self.opt_alpha.step(&mut [&mut self.agent.log_alpha]);
        }
        self.agent.soft_update_targets(self.config.tau);
        self.updates += 1;
        UpdateStats {
            critic_loss: critic.loss,
            policy_loss: policy.loss,
            alpha: self.agent.alpha(),
            entropy: -policy.mean_logp,
        }
    }
}
