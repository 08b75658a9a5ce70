//! Learning side of the toolkit: a small differentiable-network kit, the
//! graph encoder, the edge-cursor environment and a recurrent soft
//! actor-critic agent that refines orientations.

pub mod checkpoint;
pub mod diffnet;
pub mod encoder;
pub mod environment;
pub mod error;
pub mod gradcheck;
pub mod networks;
pub mod replay;
pub mod sac;
pub mod train;

pub use encoder::{encode_state, EncoderParams, StateFeatures, STATE_DIM};
pub use environment::{finalize, reward_fn, BonusMode, EnvStep, Environment, EpisodeConfig, EpisodeTrace, RewardTracker};
pub use error::{CheckpointError, DiffError, EncodeError, EnvError};
pub use networks::NetConfig;
pub use sac::{ActMode, Agent, Sac, TrainConfig, UpdateStats};
pub use train::{evaluate, reward_curve_csv, synthetic_factory, AgentPolicy, EvalReport, Policy, ResidualZeroingPolicy};
