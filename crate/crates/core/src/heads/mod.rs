//! Function approximators used by the agents.

mod critic;
mod policy;

pub use critic::{iqn_fractions, CostCriticEnsemble, Critic, FractionSet, QuantileTape, RewardCriticPair};
pub use policy::{
    log_squash_jacobian, sample_from, squashed_log_prob, standard_normal, GaussianPolicy, PolicyForward, PolicyHead,
    PolicySample, LOG_SIGMA_MAX, LOG_SIGMA_MIN,
};
