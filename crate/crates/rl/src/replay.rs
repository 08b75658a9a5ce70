//! Whole-episode replay with padded, masked sequence windows.

use std::collections::VecDeque;

use pgo_core::PortableRng;

use crate::diffnet::Matrix;
use crate::encoder::StateFeatures;
use crate::networks::ACTION_DIM;

/// One episode. Observations hold one more entry than actions: the
/// observation after the final step is needed for its Bellman target.
/// Actions are stored squashed, `tanh(u) ∈ (−1, 1)`.
#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeRecord {
    pub features: Vec<StateFeatures>,
    pub actions: Vec<[f64; ACTION_DIM]>,
    pub rewards: Vec<f64>,
    pub dones: Vec<bool>,
}

impl EpisodeRecord {
    pub fn new(first: StateFeatures) -> Self {
        Self {
            features: vec![first],
            actions: Vec::new(),
            rewards: Vec::new(),
            dones: Vec::new(),
        }
    }

    pub fn push(&mut self, action: [f64; ACTION_DIM], reward: f64, next: StateFeatures, done: bool) {
        self.actions.push(action);
        self.rewards.push(reward);
        self.features.push(next);
        self.dones.push(done);
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }
}

#[derive(Clone, Debug)]
pub struct ReplayBuffer {
    capacity: usize,
    episodes: VecDeque<EpisodeRecord>,
}

/// Sequence windows laid out time-major: entry `t` of each vector is a
/// `(rows × batch)` matrix. Windows start from a zero recurrent state and
/// columns shorter than `steps` are zero-padded with `mask = 0`.
#[derive(Clone, Debug)]
pub struct SequenceBatch {
    pub steps: usize,
    pub batch: usize,
    /// `steps + 1` entries.
    pub features: Vec<Vec<StateFeatures>>,
    /// `aₜ₋₁`, `steps + 1` entries.
    pub prev_actions: Vec<Matrix>,
    /// `aₜ`, `steps` entries.
    pub actions: Vec<Matrix>,
    /// `(steps × batch)`.
    pub rewards: Matrix,
    pub not_done: Matrix,
    pub mask: Matrix,
    /// Reparametrization noise for the policy, `steps + 1` entries.
    pub noise: Vec<Matrix>,
    /// `(episode index, start, length)` per column.
    pub origin: Vec<(usize, usize, usize)>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        Self {
            capacity,
            episodes: VecDeque::with_capacity(capacity.min(1024)),
        }
    }

    pub fn push(&mut self, episode: EpisodeRecord) {
        if episode.is_empty() {
            return;
        }
        if self.episodes.len() == self.capacity {
            self.episodes.pop_front();
        }
        self.episodes.push_back(episode);
    }

    pub fn len(&self) -> usize {
        self.episodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.episodes.is_empty()
    }

    pub fn episode(&self, k: usize) -> &EpisodeRecord {
        &self.episodes[k]
    }

    /// Uniform over stored episodes; the window start is uniform over the
    /// positions where a full window fits. `window = None` takes whole
    /// episodes.
    pub fn sample(&self, rng: &mut PortableRng, batch: usize, window: Option<usize>) -> SequenceBatch {
        assert!(!self.is_empty(), "sampling from an empty buffer");
        assert!(batch > 0, "batch must be positive");
        let origin: Vec<(usize, usize, usize)> = (0..batch)
            .map(|_| {
                let e = rng.index(self.episodes.len());
                let len = self.episodes[e].len();
                let l = window.map_or(len, |w| w.clamp(1, len));
                let start = rng.index(len - l + 1);
                (e, start, l)
            })
            .collect();
        let steps = origin.iter().map(|o| o.2).max().unwrap();

        let mut features = vec![vec![StateFeatures::default(); batch]; steps + 1];
        let mut prev_actions = vec![Matrix::zeros(ACTION_DIM, batch); steps + 1];
        let mut actions = vec![Matrix::zeros(ACTION_DIM, batch); steps];
        let mut rewards = Matrix::zeros(steps, batch);
        let mut not_done = Matrix::zeros(steps, batch);
        let mut mask = Matrix::zeros(steps, batch);
        for (b, &(e, start, l)) in origin.iter().enumerate() {
            let ep = &self.episodes[e];
            for t in 0..=l {
                features[t][b] = ep.features[start + t];
                if start + t > 0 {
                    let a = ep.actions[start + t - 1];
                    for k in 0..ACTION_DIM {
                        prev_actions[t][(k, b)] = a[k];
                    }
                }
            }
            for t in 0..l {
                let a = ep.actions[start + t];
                for k in 0..ACTION_DIM {
                    actions[t][(k, b)] = a[k];
                }
                rewards[(t, b)] = ep.rewards[start + t];
                not_done[(t, b)] = if ep.dones[start + t] { 0.0 } else { 1.0 };
                mask[(t, b)] = 1.0;
            }
        }
        let noise = (0..=steps)
            .map(|_| {
                let mut m = Matrix::zeros(ACTION_DIM, batch);
                for b in 0..batch {
                    for k in 0..ACTION_DIM {
                        m[(k, b)] = rng.normal();
                    }
                }
                m
            })
            .collect();
        SequenceBatch {
            steps,
            batch,
            features,
            prev_actions,
            actions,
            rewards,
            not_done,
            mask,
            noise,
            origin,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn episode(tag: f64, len: usize) -> EpisodeRecord {
        let f = |t: usize| StateFeatures {
            mean_cost: tag,
            residual: t as f64,
        };
        let mut ep = EpisodeRecord::new(f(0));
        for t in 0..len {
            ep.push([tag, t as f64 / 100.0], t as f64, f(t + 1), t + 1 == len);
        }
        ep
    }

    #[test]
    fn windows_stay_inside_one_episode() {
        let mut buf = ReplayBuffer::new(8);
        for k in 0..5 {
            buf.push(episode(k as f64, 3 + 2 * k));
        }
        let mut rng = PortableRng::seed_from_u64(4);
        for _ in 0..50 {
            let b = buf.sample(&mut rng, 6, Some(4));
            for (col, &(e, start, l)) in b.origin.iter().enumerate() {
                let tag = buf.episode(e).features[0].mean_cost;
                for t in 0..=l {
                    assert_eq!(b.features[t][col].mean_cost, tag);
                    assert_eq!(b.features[t][col].residual, (start + t) as f64);
                }
                for t in 0..b.steps {
                    let valid = t < l;
                    assert_eq!(b.mask[(t, col)], if valid { 1.0 } else { 0.0 });
                    if valid {
                        assert_eq!(b.actions[t][(0, col)], tag);
                        assert_eq!(b.prev_actions[t + 1][(1, col)], b.actions[t][(1, col)]);
                    }
                }
                assert!(start + l <= buf.episode(e).len());
            }
        }
    }

    #[test]
    fn ring_drops_oldest() {
        let mut buf = ReplayBuffer::new(2);
        for k in 0..3 {
            buf.push(episode(k as f64, 2));
        }
        assert_eq!(buf.len(), 2);
        assert_eq!(buf.episode(0).features[0].mean_cost, 1.0);
    }

    #[test]
    fn full_episode_windows_pad_to_longest() {
        let mut buf = ReplayBuffer::new(4);
        buf.push(episode(0.0, 2));
        buf.push(episode(1.0, 5));
        let b = buf.sample(&mut PortableRng::seed_from_u64(1), 16, None);
        assert_eq!(b.steps, 5);
        for (col, &(_, start, l)) in b.origin.iter().enumerate() {
            assert_eq!(start, 0);
            assert_eq!(b.not_done[(l - 1, col)], 0.0);
            assert_eq!(b.prev_actions[0][(0, col)], 0.0);
        }
    }
}
