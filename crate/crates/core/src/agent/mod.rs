//! SAC-Lagrangian, WCSAC and ORAC agents.
//!
//! All three share one gradient step: quantile cost critics, twin reward critics,
//! reparameterised actor, projected Lagrangian ascent, and entropy temperature tuning.
//! They differ only in the risk level used for the cost estimate (SAC-Lagrangian is
//! risk neutral) and in how actions are chosen during training (ORAC explores with
//! the optimistic policy from [`crate::explore`]).

mod update;

use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, Array2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::explore::{explore_action, ExploreConfig, ExploreContext, ExploreStep};
use crate::heads::{CostCriticEnsemble, GaussianPolicy, RewardCriticPair};
use crate::nets::{AdamConfig, AdamState, ScalarAdam};
use crate::risk::RiskSpec;
use crate::Scalar;

pub use update::StepReport;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AgentKind {
    SacLag,
    Wcsac,
    Orac,
}

impl AgentKind {
    pub const ALL: [AgentKind; 3] = [AgentKind::SacLag, AgentKind::Wcsac, AgentKind::Orac];

    pub fn name(self) -> &'static str {
        match self {
            AgentKind::SacLag => "saclag",
            AgentKind::Wcsac => "wcsac",
            AgentKind::Orac => "orac",
        }
    }
}

impl fmt::Display for AgentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AgentKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "saclag" => Ok(AgentKind::SacLag),
            "wcsac" => Ok(AgentKind::Wcsac),
            "orac" => Ok(AgentKind::Orac),
            other => Err(format!("unknown agent `{other}` (expected saclag, wcsac or orac)")),
        }
    }
}

/// Hyper-parameters of one agent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentConfig {
    pub kind: AgentKind,
    pub risk: RiskSpec,
    pub explore: ExploreConfig,
    pub state_dim: usize,
    pub action_dim: usize,
    pub policy_hidden: Vec<usize>,
    pub critic_hidden: Vec<usize>,
    pub quantile_hidden: Vec<usize>,
    pub layer_norm: bool,
    pub n_quantiles: usize,
    pub ensemble_size: usize,
    /// Cosine embedding width for IQN critics.
    pub embedding_dim: usize,
    pub policy_lr: f64,
    pub reward_lr: f64,
    pub cost_lr: f64,
    pub entropy_lr: f64,
    pub lagrangian_lr: f64,
    pub lambda0: f64,
    pub initial_log_temperature: f64,
    pub gamma: f64,
    pub cost_gamma: f64,
    pub tau: f64,
    /// Polyak updates happen every `target_every` gradient steps.
    pub target_every: u64,
    /// Cost budget in return units.
    pub c_bar: f64,
    pub seed: u64,
}

impl AgentConfig {
    /// Defaults taken from the GuardedMaze hyper-parameter column.
    pub fn new(kind: AgentKind, state_dim: usize, action_dim: usize) -> Self {
        Self {
            kind,
            risk: RiskSpec { rho: 0.05, ..RiskSpec::default() },
            explore: ExploreConfig { beta_r: 3.0, beta_c: 2.0, delta0: 4.0, horizon: 500_000 },
            state_dim,
            action_dim,
            policy_hidden: vec![64, 64],
            critic_hidden: vec![64, 64],
            quantile_hidden: vec![64, 64],
            layer_norm: true,
            n_quantiles: 32,
            ensemble_size: 2,
            embedding_dim: 64,
            policy_lr: 3e-4,
            reward_lr: 3e-4,
            cost_lr: 3e-4,
            entropy_lr: 5e-4,
            lagrangian_lr: 5e-4,
            lambda0: 0.0,
            initial_log_temperature: 0.0,
            gamma: 0.9999,
            cost_gamma: 0.9999,
            tau: 0.005,
            target_every: 2,
            c_bar: 5.0,
            seed: 0,
        }
    }

    /// Risk level actually optimised: SAC-Lagrangian is always risk neutral.
    pub fn effective_rho(&self) -> f64 {
        match self.kind {
            AgentKind::SacLag => 1.0,
            _ => self.risk.rho,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        self.risk.validate().map_err(|e| e.to_string())?;
        self.explore.validate()?;
        if self.state_dim == 0 || self.action_dim == 0 {
            return Err("state and action dimensions must be positive".into());
        }
        if self.n_quantiles == 0 {
            return Err("need at least one quantile".into());
        }
        if self.ensemble_size == 0 {
            return Err("need at least one cost critic".into());
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return Err(format!("tau must lie in (0, 1], got {}", self.tau));
        }
        for (name, g) in [("gamma", self.gamma), ("cost-gamma", self.cost_gamma)] {
            if !(0.0..=1.0).contains(&g) {
                return Err(format!("{name} must lie in [0, 1], got {g}"));
            }
        }
        for (name, lr) in [
            ("policy-lr", self.policy_lr),
            ("reward-lr", self.reward_lr),
            ("cost-lr", self.cost_lr),
            ("entropy-lr", self.entropy_lr),
            ("lagrangian-lr", self.lagrangian_lr),
        ] {
            if !(lr.is_finite() && lr >= 0.0) {
                return Err(format!("{name} must be a non-negative number, got {lr}"));
            }
        }
        if !(self.lambda0 >= 0.0) {
            return Err("initial Lagrangian multiplier must be non-negative".into());
        }
        if self.target_every == 0 {
            return Err("target update frequency must be positive".into());
        }
        Ok(())
    }
}

/// Projected dual variable for the cost constraint.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LagrangianState {
    pub lambda: f64,
    pub lr: f64,
    pub c_bar: f64,
}

impl LagrangianState {
    /// `lambda <- max(0, lambda + lr * (cost_estimate - c_bar))`.
    pub fn ascend(&mut self, mean_cost_estimate: f64) {
        self.lambda = (self.lambda + self.lr * (mean_cost_estimate - self.c_bar)).max(0.0);
    }
}

/// Entropy temperature, parametrised in log space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EntropyState {
    pub log_temperature: f64,
    pub target_entropy: f64,
    pub opt: ScalarAdam,
}

impl EntropyState {
    pub fn temperature(&self) -> f64 {
        self.log_temperature.exp()
    }
}

/// A minibatch of transitions in row-major matrices.
#[derive(Debug, Clone)]
pub struct Batch<F> {
    pub states: Array2<F>,
    pub actions: Array2<F>,
    pub rewards: Array1<F>,
    pub costs: Array1<F>,
    pub next_states: Array2<F>,
    /// 1 for terminal transitions (no bootstrap), 0 otherwise.
    pub terminals: Array1<F>,
}

impl<F: Scalar> Batch<F> {
    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }
}

pub struct Agent<F> {
    pub config: AgentConfig,
    pub policy: GaussianPolicy<F>,
    pub reward: RewardCriticPair<F>,
    pub cost: CostCriticEnsemble<F>,
    pub lagrangian: LagrangianState,
    pub entropy: EntropyState,
    policy_opt: AdamState<F>,
    reward_opts: [AdamState<F>; 2],
    cost_opts: Vec<AdamState<F>>,
    grad_steps: u64,
    faults: u64,
}

impl<F: Scalar> Agent<F> {
    pub fn new(config: AgentConfig) -> Result<Self, String> {
        config.validate()?;
        let c = &config;
        let policy = GaussianPolicy::new(c.state_dim, c.action_dim, &c.policy_hidden, c.layer_norm, c.seed);
        let reward =
            RewardCriticPair::new(c.state_dim, c.action_dim, &c.critic_hidden, c.layer_norm, c.seed.wrapping_add(1));
        let cost = CostCriticEnsemble::new(
            c.ensemble_size,
            c.n_quantiles,
            c.risk.mode,
            c.embedding_dim,
            c.state_dim,
            c.action_dim,
            &c.quantile_hidden,
            c.layer_norm,
            c.seed.wrapping_add(2),
        );
        let policy_opt = AdamState::new(&policy.params, AdamConfig::with_lr(c.policy_lr));
        let reward_opts = [
            AdamState::new(&reward.critics[0].online, AdamConfig::with_lr(c.reward_lr)),
            AdamState::new(&reward.critics[1].online, AdamConfig::with_lr(c.reward_lr)),
        ];
        let cost_opts = cost.members.iter().map(|m| AdamState::new(&m.online, AdamConfig::with_lr(c.cost_lr))).collect();
        let lagrangian = LagrangianState { lambda: c.lambda0, lr: c.lagrangian_lr, c_bar: c.c_bar };
        let entropy = EntropyState {
            log_temperature: c.initial_log_temperature,
            target_entropy: -(c.action_dim as f64),
            opt: ScalarAdam::new(AdamConfig::with_lr(c.entropy_lr)),
        };
        Ok(Self {
            config,
            policy,
            reward,
            cost,
            lagrangian,
            entropy,
            policy_opt,
            reward_opts,
            cost_opts,
            grad_steps: 0,
            faults: 0,
        })
    }

    pub fn kind(&self) -> AgentKind {
        self.config.kind
    }

    pub fn gradient_steps(&self) -> u64 {
        self.grad_steps
    }

    pub(crate) fn set_gradient_steps(&mut self, n: u64) {
        self.grad_steps = n;
    }

    /// Number of updates skipped because of non-finite values.
    pub fn faults(&self) -> u64 {
        self.faults
    }

    pub fn explore_context(&self) -> ExploreContext<'_, F> {
        ExploreContext {
            policy: &self.policy,
            reward: &self.reward,
            cost: &self.cost,
            lambda: F::lit(self.lagrangian.lambda),
            c_bar: F::lit(self.lagrangian.c_bar),
            rho: self.config.effective_rho(),
        }
    }

    /// Training-time action: optimistic exploration for ORAC, the target policy otherwise.
    pub fn select_action<R: Rng + ?Sized>(&mut self, state: &[F], env_step: u64, rng: &mut R) -> Vec<F> {
        match self.config.kind {
            AgentKind::Orac => {
                let step = self.explore(state, env_step, rng);
                if step.status.is_fault() {
                    self.faults += 1;
                }
                step.action
            }
            _ => self.policy.sample(state, rng).0,
        }
    }

    pub fn explore<R: Rng + ?Sized>(&self, state: &[F], env_step: u64, rng: &mut R) -> ExploreStep<F> {
        explore_action(&self.explore_context(), &self.config.explore, state, env_step, rng)
    }

    /// Evaluation-time action `tanh(mu_T)`.
    pub fn act_deterministic(&self, state: &[F]) -> Vec<F> {
        self.policy.head(state).mean_action()
    }
}
