use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::agent::{Agent, AgentConfig};
use crate::config::RunConfig;
use crate::nets::ParamContainer;

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

/// Everything needed to rebuild an agent for evaluation: its configuration, every
/// network (online and target), and the dual variables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub step: u64,
    pub gradient_steps: u64,
    pub run: RunConfig,
    pub agent: AgentConfig,
    pub lambda: f64,
    pub log_temperature: f64,
    pub policy: ParamContainer,
    pub reward_online: Vec<ParamContainer>,
    pub reward_target: Vec<ParamContainer>,
    pub cost_online: Vec<ParamContainer>,
    pub cost_target: Vec<ParamContainer>,
}

impl Checkpoint {
    pub fn capture(agent: &Agent<f64>, run: &RunConfig, step: u64) -> Self {
        let pack_all = |critics: &[crate::heads::Critic<f64>], target: bool| {
            critics.iter().map(|c| ParamContainer::pack(&c.spec, c.params(target))).collect()
        };
        Self {
            format_version: CHECKPOINT_FORMAT_VERSION,
            step,
            gradient_steps: agent.gradient_steps(),
            run: run.clone(),
            agent: agent.config.clone(),
            lambda: agent.lagrangian.lambda,
            log_temperature: agent.entropy.log_temperature,
            policy: ParamContainer::pack(&agent.policy.spec, &agent.policy.params),
            reward_online: pack_all(&agent.reward.critics, false),
            reward_target: pack_all(&agent.reward.critics, true),
            cost_online: pack_all(&agent.cost.members, false),
            cost_target: pack_all(&agent.cost.members, true),
        }
    }

    /// Rebuilds the agent. Optimiser moments are not stored and restart from zero.
    pub fn restore(&self) -> Result<Agent<f64>, HarnessError> {
        let bad = |message: String| HarnessError::Format { path: "checkpoint".into(), message };
        let mut agent = Agent::new(self.agent.clone()).map_err(HarnessError::Config)?;
        let unpack = |c: &ParamContainer| c.unpack::<f64>().map_err(|e| bad(e.to_string()));
        let policy = unpack(&self.policy)?;
        if !policy.same_shape(&agent.policy.params) {
            return Err(bad("policy does not match the agent configuration".into()));
        }
        agent.policy.params = policy;
        if self.reward_online.len() != 2 || self.reward_target.len() != 2 {
            return Err(bad("expected two reward critics".into()));
        }
        if self.cost_online.len() != agent.cost.len() || self.cost_target.len() != agent.cost.len() {
            return Err(bad("cost ensemble size does not match the agent configuration".into()));
        }
        let critics = agent.reward.critics.iter_mut().zip(self.reward_online.iter().zip(&self.reward_target));
        let members = agent.cost.members.iter_mut().zip(self.cost_online.iter().zip(&self.cost_target));
        for (critic, (online, target)) in critics.chain(members) {
            let (online, target) = (unpack(online)?, unpack(target)?);
            if !online.same_shape(&critic.online) || !target.same_shape(&critic.target) {
                return Err(bad("critic does not match the agent configuration".into()));
            }
            critic.online = online;
            critic.target = target;
        }
        agent.lagrangian.lambda = self.lambda;
        agent.entropy.log_temperature = self.log_temperature;
        agent.set_gradient_steps(self.gradient_steps);
        Ok(agent)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("checkpoint serialises")
    }

    pub fn save(&self, path: &Path) -> Result<(), HarnessError> {
        let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
        fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
        let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| HarnessError::io(dir, e))?;
        tmp.write_all(self.to_json().as_bytes()).map_err(|e| HarnessError::io(path, e))?;
        tmp.persist(path).map_err(|e| HarnessError::io(path, e.error))?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        if !path.is_file() {
            return Err(HarnessError::CheckpointNotFound(path.into()));
        }
        let text = fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        let value: serde_json::Value = serde_json::from_str(&text)
            .map_err(|e| HarnessError::Format { path: path.into(), message: e.to_string() })?;
        let found = value.get("format_version").and_then(|v| v.as_u64());
        match found {
            Some(v) if v == CHECKPOINT_FORMAT_VERSION as u64 => {}
            Some(v) => return Err(HarnessError::Version { found: v as u32, expected: CHECKPOINT_FORMAT_VERSION }),
            None => {
                return Err(HarnessError::Format { path: path.into(), message: "missing format_version".into() })
            }
        }
        let ckpt: Self = serde_json::from_value(value)
            .map_err(|e| HarnessError::Format { path: path.into(), message: e.to_string() })?;
        ckpt.run.validate().map_err(HarnessError::Config)?;
        Ok(ckpt)
    }
}
