use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use super::{CmdpStep, Env};

/// One-step bandit with a safe half (`a <= 0`) and a risky half (`a > 0`).
///
/// Reward is the action itself. The risky half pays a base cost plus a rare large hit,
/// so its mean cost is small but its tail cost is large.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RiskyBanditConfig {
    pub base_cost: f64,
    pub hit_cost: f64,
    pub hit_prob: f64,
}

impl Default for RiskyBanditConfig {
    fn default() -> Self {
        Self { base_cost: 0.5, hit_cost: 19.5, hit_prob: 0.02 }
    }
}

impl RiskyBanditConfig {
    pub fn mean_risky_cost(&self) -> f64 {
        self.base_cost + self.hit_cost * self.hit_prob
    }
}

#[derive(Debug, Clone)]
pub struct RiskyBandit {
    pub config: RiskyBanditConfig,
    last_action: Option<f64>,
}

impl RiskyBandit {
    pub fn new(config: RiskyBanditConfig) -> Self {
        Self { config, last_action: None }
    }
}

impl Default for RiskyBandit {
    fn default() -> Self {
        Self::new(RiskyBanditConfig::default())
    }
}

impl Env for RiskyBandit {
    fn observation_dim(&self) -> usize {
        1
    }

    fn action_dim(&self) -> usize {
        1
    }

    fn reset(&mut self, _rng: &mut dyn RngCore) -> Vec<f64> {
        self.last_action = None;
        vec![1.0]
    }

    fn step(&mut self, action: &[f64], rng: &mut dyn RngCore) -> CmdpStep {
        let a = action[0].clamp(-1.0, 1.0);
        self.last_action = Some(a);
        let cost = if a <= 0.0 {
            0.0
        } else {
            // Drawn only on the risky half so safe actions leave the stream untouched.
            let hit = rng.random_bool(self.config.hit_prob);
            self.config.base_cost + if hit { self.config.hit_cost } else { 0.0 }
        };
        CmdpStep { next_state: vec![1.0], reward: a, cost, terminated: true, truncated: false }
    }

    fn risky_choice(&self) -> Option<bool> {
        self.last_action.map(|a| a > 0.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn safe_arm_is_free() {
        let mut env = RiskyBandit::default();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        env.reset(&mut rng);
        let s = env.step(&[-0.3], &mut rng);
        assert_eq!((s.reward, s.cost, s.terminated), (-0.3, 0.0, true));
        assert_eq!(env.risky_choice(), Some(false));
        let s = env.step(&[0.0], &mut rng);
        assert_eq!(s.cost, 0.0);
    }

    #[test]
    fn risky_arm_mean_cost() {
        let mut env = RiskyBandit::default();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 200_000;
        let total: f64 = (0..n).map(|_| env.step(&[0.5], &mut rng).cost).sum();
        // sd of one draw is 19.5 * sqrt(0.02 * 0.98), so 5 sd of the mean is ~0.03
        assert!((total / n as f64 - 0.89).abs() < 0.03);
        assert!((env.config.mean_risky_cost() - 0.89).abs() < 1e-12);
    }
}
