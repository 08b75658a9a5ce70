//! Plain-text agent checkpoints.
//!
//! ```text
//! pgo-agent-checkpoint v1
//! dense 512
//! lstm 512
//! critics 2
//! symmetric 0
//! block policy.0 512 23
//! <row-major values>
//! ...
//! ```
//!
//! Values use Rust's shortest round-trip formatting, so a save/load cycle
//! reproduces every parameter bit for bit.

use std::fmt::Write as _;
use std::path::Path;

use pgo_core::PortableRng;

use crate::diffnet::{ParameterBlock, Parameters};
use crate::error::CheckpointError;
use crate::networks::NetConfig;
use crate::sac::Agent;

pub const HEADER: &str = "pgo-agent-checkpoint v1";

impl Agent {
    /// Every parameter block with a stable name, in file order.
    pub fn named_params(&self) -> Vec<(String, &ParameterBlock)> {
        let mut groups: Vec<(String, Vec<&ParameterBlock>)> = vec![
            ("encoder".into(), self.encoder.params()),
            ("policy".into(), self.policy.params()),
        ];
        for (k, q) in self.critics.iter().enumerate() {
            groups.push((format!("critic{k}"), q.params()));
        }
        groups.push(("target_encoder".into(), self.target_encoder.params()));
        for (k, q) in self.target_critics.iter().enumerate() {
            groups.push((format!("target_critic{k}"), q.params()));
        }
        groups.push(("log_alpha".into(), vec![&self.log_alpha]));
        groups
            .into_iter()
            .flat_map(|(name, blocks)| blocks.into_iter().enumerate().map(move |(k, b)| (format!("{name}.{k}"), b)))
            .collect()
    }

    fn params_in_file_order_mut(&mut self) -> Vec<&mut ParameterBlock> {
        let mut v = self.encoder.params_mut();
        v.extend(self.policy.params_mut());
        for q in &mut self.critics {
            v.extend(q.params_mut());
        }
        v.extend(self.target_encoder.params_mut());
        for q in &mut self.target_critics {
            v.extend(q.params_mut());
        }
        v.push(&mut self.log_alpha);
        v
    }

    pub fn to_checkpoint_string(&self) -> String {
        let mut s = String::new();
        writeln!(s, "{HEADER}").unwrap();
        writeln!(s, "dense {}", self.net.dense).unwrap();
        writeln!(s, "lstm {}", self.net.lstm).unwrap();
        writeln!(s, "critics {}", self.critics.len()).unwrap();
        writeln!(s, "symmetric {}", u8::from(self.encoder.symmetric)).unwrap();
        for (name, b) in self.named_params() {
            let (r, c) = b.shape();
            writeln!(s, "block {name} {r} {c}").unwrap();
            let mut line = String::new();
            for i in 0..r {
                for j in 0..c {
                    if !line.is_empty() {
                        line.push(' ');
                    }
                    write!(line, "{}", b.value[(i, j)]).unwrap();
                }
            }
            writeln!(s, "{line}").unwrap();
        }
        s
    }

    pub fn from_checkpoint_str(text: &str) -> Result<Agent, CheckpointError> {
        let mut lines = text.lines().enumerate().map(|(k, l)| (k + 1, l.trim()));
        let parse_err = |line: usize, message: String| CheckpointError::Parse { line, message };
        match lines.next() {
            Some((_, h)) if h == HEADER => {}
            other => return Err(CheckpointError::Header(other.map(|(_, h)| h.to_string()).unwrap_or_default())),
        }
        let mut field = |key: &str| -> Result<usize, CheckpointError> {
            let (ln, l) = lines.next().ok_or_else(|| parse_err(0, format!("missing {key}")))?;
            let mut it = l.split_whitespace();
            if it.next() != Some(key) {
                return Err(parse_err(ln, format!("expected {key}")));
            }
            it.next()
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| parse_err(ln, format!("bad value for {key}")))
        };
        let net = NetConfig {
            dense: field("dense")?,
            lstm: field("lstm")?,
        };
        let critics = field("critics")?;
        let symmetric = field("symmetric")? != 0;
        if !(critics == 1 || critics == 2) || net.dense == 0 || net.lstm == 0 {
            return Err(parse_err(4, "unsupported network configuration".into()));
        }
        let mut agent = Agent::new(net, critics, &mut PortableRng::seed_from_u64(0));
        agent.encoder.symmetric = symmetric;
        agent.target_encoder.symmetric = symmetric;
        let names: Vec<String> = agent.named_params().into_iter().map(|(n, _)| n).collect();
        for (name, block) in names.into_iter().zip(agent.params_in_file_order_mut()) {
            let (ln, head) = lines.next().ok_or_else(|| parse_err(0, format!("missing block {name}")))?;
            let parts: Vec<&str> = head.split_whitespace().collect();
            if parts.len() != 4 || parts[0] != "block" || parts[1] != name {
                return Err(parse_err(ln, format!("expected block {name}")));
            }
            let dims: Vec<usize> = parts[2..]
                .iter()
                .map(|v| v.parse().map_err(|_| parse_err(ln, "bad block shape".into())))
                .collect::<Result<_, _>>()?;
            let expected = block.shape();
            if (dims[0], dims[1]) != expected {
                return Err(CheckpointError::Shape {
                    name,
                    expected,
                    got: (dims[0], dims[1]),
                });
            }
            let (ln, body) = lines.next().ok_or_else(|| parse_err(0, format!("missing values for {name}")))?;
            let values: Vec<f64> = body
                .split_whitespace()
                .map(|v| v.parse().map_err(|_| parse_err(ln, format!("bad number {v:?}"))))
                .collect::<Result<_, _>>()?;
            if values.len() != dims[0] * dims[1] {
                return Err(parse_err(ln, format!("{name}: expected {} values", dims[0] * dims[1])));
            }
            for i in 0..dims[0] {
                for j in 0..dims[1] {
                    block.value[(i, j)] = values[i * dims[1] + j];
                }
            }
        }
        Ok(agent)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), CheckpointError> {
        std::fs::write(path, self.to_checkpoint_string())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Agent, CheckpointError> {
        Self::from_checkpoint_str(&std::fs::read_to_string(path)?)
    }
}
