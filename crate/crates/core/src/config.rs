//! Run configuration: one flat record covering the environment, agent, and harness.
//!
//! Keys serialise in kebab-case so a config file uses the same names as the CLI flags.
//! [`RunConfig::from_overrides`] layers a partial JSON object on top of the
//! environment's defaults.

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::agent::{AgentConfig, AgentKind};
use crate::env::{Env, EnvKind, GuardedMaze, GuardedMazeConfig, RiskyBandit, RiskyBanditConfig};
use crate::explore::ExploreConfig;
use crate::risk::{CriticMode, RiskSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct RunConfig {
    pub env: EnvKind,
    pub agent: AgentKind,
    pub seed: u64,
    pub total_steps: u64,
    pub rho: f64,
    pub cost_limit: f64,
    /// Multiplies `cost-limit` before it is compared with discounted cost values.
    pub budget_scale: f64,
    pub guard_prob: f64,
    pub step_scale: f64,
    pub beta_r: f64,
    pub beta_c: f64,
    pub delta: f64,
    /// Environment steps over which the exploration radius decays; `null` means
    /// `total-steps`.
    pub explore_horizon: Option<u64>,
    pub critic_mode: CriticMode,
    pub kappa: f64,
    pub n_quantiles: usize,
    pub ensemble_size: usize,
    pub embedding_dim: usize,
    pub hidden: Vec<usize>,
    pub layer_norm: bool,
    pub policy_lr: f64,
    pub critic_lr: f64,
    pub cost_critic_lr: f64,
    pub entropy_lr: f64,
    pub lagrangian_lr: f64,
    pub lambda0: f64,
    pub initial_log_temperature: f64,
    pub gamma: f64,
    pub cost_gamma: f64,
    pub tau: f64,
    pub target_every: u64,
    pub buffer_size: usize,
    pub batch_size: usize,
    pub learning_starts: u64,
    pub eval_every: u64,
    pub eval_episodes: usize,
    /// Threads used for evaluation episodes; results do not depend on it.
    pub eval_workers: usize,
    pub convergence_window: usize,
    /// Checkpoint cadence in environment steps; 0 keeps only the final checkpoint.
    pub checkpoint_every: u64,
}

impl RunConfig {
    /// GuardedMaze settings: the hyper-parameter column used for the maze experiments.
    pub fn guarded_maze(agent: AgentKind) -> Self {
        Self {
            env: EnvKind::GuardedMaze,
            agent,
            seed: 0,
            total_steps: 500_000,
            rho: 0.05,
            cost_limit: 5.0,
            budget_scale: 1.0,
            guard_prob: 0.15,
            step_scale: 1.0,
            beta_r: 3.0,
            beta_c: 2.0,
            delta: 4.0,
            explore_horizon: None,
            critic_mode: CriticMode::FixedFraction,
            kappa: 1.0,
            n_quantiles: 32,
            ensemble_size: 2,
            embedding_dim: 64,
            hidden: vec![64, 64],
            layer_norm: true,
            policy_lr: 3e-4,
            critic_lr: 3e-4,
            cost_critic_lr: 3e-4,
            entropy_lr: 5e-4,
            lagrangian_lr: 5e-4,
            lambda0: 0.0,
            initial_log_temperature: 0.0,
            gamma: 0.9999,
            cost_gamma: 0.9999,
            tau: 0.005,
            target_every: 2,
            buffer_size: 1_000_000,
            batch_size: 256,
            learning_starts: 5_000,
            eval_every: 10_000,
            eval_episodes: 20,
            eval_workers: 1,
            convergence_window: 5,
            checkpoint_every: 100_000,
        }
    }

    /// RiskyBandit settings: maze hyper-parameters with a shorter schedule and a unit
    /// budget, which sits between the risky arm's mean cost and its tail cost.
    ///
    /// 50 quantile bins put a bin edge at 0.98, so the 2% hit atom fills exactly one
    /// bin and the discretised mean cost equals the true one.
    pub fn risky_bandit(agent: AgentKind) -> Self {
        Self {
            env: EnvKind::RiskyBandit,
            total_steps: 20_000,
            cost_limit: 1.0,
            n_quantiles: 50,
            learning_starts: 1_000,
            eval_every: 2_000,
            checkpoint_every: 0,
            ..Self::guarded_maze(agent)
        }
    }

    pub fn defaults(env: EnvKind, agent: AgentKind) -> Self {
        match env {
            EnvKind::GuardedMaze => Self::guarded_maze(agent),
            EnvKind::RiskyBandit => Self::risky_bandit(agent),
        }
    }

    /// Builds a config from a partial key/value map layered over the defaults of the
    /// environment and agent it names (GuardedMaze and SAC-Lagrangian when absent).
    pub fn from_overrides(overrides: &Map<String, Value>) -> Result<Self, String> {
        let env = match overrides.get("env") {
            Some(v) => serde_json::from_value(v.clone()).map_err(|e| format!("env: {e}"))?,
            None => EnvKind::GuardedMaze,
        };
        let agent = match overrides.get("agent") {
            Some(v) => serde_json::from_value(v.clone()).map_err(|e| format!("agent: {e}"))?,
            None => AgentKind::SacLag,
        };
        let mut base = match serde_json::to_value(Self::defaults(env, agent)) {
            Ok(Value::Object(m)) => m,
            _ => unreachable!("config serialises to an object"),
        };
        for (k, v) in overrides {
            base.insert(k.clone(), v.clone());
        }
        let cfg: Self = serde_json::from_value(Value::Object(base)).map_err(|e| e.to_string())?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_json(text: &str) -> Result<Self, String> {
        let value: Value = serde_json::from_str(text).map_err(|e| e.to_string())?;
        match value {
            Value::Object(m) => Self::from_overrides(&m),
            _ => Err("config must be a JSON object".into()),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialises")
    }

    pub fn c_bar(&self) -> f64 {
        self.cost_limit * self.budget_scale
    }

    pub fn risk_spec(&self) -> RiskSpec {
        RiskSpec { rho: self.rho, mode: self.critic_mode, kappa: self.kappa }
    }

    pub fn explore_config(&self) -> ExploreConfig {
        ExploreConfig {
            beta_r: self.beta_r,
            beta_c: self.beta_c,
            delta0: self.delta,
            horizon: self.explore_horizon.unwrap_or(self.total_steps),
        }
    }

    pub fn maze_config(&self) -> GuardedMazeConfig {
        GuardedMazeConfig { guard_prob: self.guard_prob, step_scale: self.step_scale, ..GuardedMazeConfig::default() }
    }

    pub fn make_env(&self) -> Box<dyn Env> {
        match self.env {
            EnvKind::GuardedMaze => Box::new(GuardedMaze::new(self.maze_config())),
            EnvKind::RiskyBandit => Box::new(RiskyBandit::new(RiskyBanditConfig::default())),
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        let env = self.make_env();
        (env.observation_dim(), env.action_dim())
    }

    /// Agent hyper-parameters; `init_seed` seeds the network initialisation.
    pub fn agent_config(&self, init_seed: u64) -> AgentConfig {
        let (state_dim, action_dim) = self.dims();
        AgentConfig {
            kind: self.agent,
            risk: self.risk_spec(),
            explore: self.explore_config(),
            state_dim,
            action_dim,
            policy_hidden: self.hidden.clone(),
            critic_hidden: self.hidden.clone(),
            quantile_hidden: self.hidden.clone(),
            layer_norm: self.layer_norm,
            n_quantiles: self.n_quantiles,
            ensemble_size: self.ensemble_size,
            embedding_dim: self.embedding_dim,
            policy_lr: self.policy_lr,
            reward_lr: self.critic_lr,
            cost_lr: self.cost_critic_lr,
            entropy_lr: self.entropy_lr,
            lagrangian_lr: self.lagrangian_lr,
            lambda0: self.lambda0,
            initial_log_temperature: self.initial_log_temperature,
            gamma: self.gamma,
            cost_gamma: self.cost_gamma,
            tau: self.tau,
            target_every: self.target_every,
            c_bar: self.c_bar(),
            seed: init_seed,
        }
    }

    /// Checks every field against its domain.
    pub fn validate(&self) -> Result<(), String> {
        self.risk_spec().validate().map_err(|e| e.to_string())?;
        self.maze_config().validate()?;
        let non_negative = [
            ("cost-limit", self.cost_limit),
            ("beta-r", self.beta_r),
            ("beta-c", self.beta_c),
            ("delta", self.delta),
            ("lambda0", self.lambda0),
        ];
        for (name, v) in non_negative {
            if !(v.is_finite() && v >= 0.0) {
                return Err(format!("{name} must be a non-negative number, got {v}"));
            }
        }
        if !(self.budget_scale.is_finite() && self.budget_scale > 0.0) {
            return Err(format!("budget-scale must be positive, got {}", self.budget_scale));
        }
        if !self.initial_log_temperature.is_finite() {
            return Err("initial-log-temperature must be finite".into());
        }
        if self.explore_horizon == Some(0) {
            return Err("explore-horizon must be positive".into());
        }
        if self.hidden.iter().any(|&h| h == 0) {
            return Err("hidden layer widths must be positive".into());
        }
        if self.embedding_dim == 0 {
            return Err("embedding-dim must be positive".into());
        }
        let positive_counts = [
            ("batch-size", self.batch_size),
            ("buffer-size", self.buffer_size),
            ("eval-episodes", self.eval_episodes),
            ("eval-workers", self.eval_workers),
            ("convergence-window", self.convergence_window),
        ];
        for (name, v) in positive_counts {
            if v == 0 {
                return Err(format!("{name} must be positive"));
            }
        }
        if self.batch_size > self.buffer_size {
            return Err("batch-size cannot exceed buffer-size".into());
        }
        if self.eval_every == 0 {
            return Err("eval-every must be positive".into());
        }
        self.agent_config(0).validate()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn maze_defaults_validate() {
        for kind in AgentKind::ALL {
            RunConfig::guarded_maze(kind).validate().unwrap();
            RunConfig::risky_bandit(kind).validate().unwrap();
        }
    }

    #[test]
    fn overrides_pick_env_defaults() {
        let m: Map<String, Value> = serde_json::from_str(r#"{"env":"riskybandit","seed":9}"#).unwrap();
        let c = RunConfig::from_overrides(&m).unwrap();
        assert_eq!(c.env, EnvKind::RiskyBandit);
        assert_eq!(c.cost_limit, 1.0);
        assert_eq!(c.seed, 9);
    }

    #[test]
    fn unknown_and_invalid_keys_are_rejected() {
        assert!(RunConfig::from_json(r#"{"sed": 1}"#).is_err());
        assert!(RunConfig::from_json(r#"{"rho": 0}"#).is_err());
        assert!(RunConfig::from_json(r#"{"guard-prob": 1.5}"#).is_err());
        assert!(RunConfig::from_json(r#"{"agent": "ppo"}"#).is_err());
    }

    #[test]
    fn json_round_trip() {
        let c = RunConfig::guarded_maze(AgentKind::Orac);
        assert_eq!(RunConfig::from_json(&c.to_json()).unwrap(), c);
    }
}
