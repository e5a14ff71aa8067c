use serde::{Deserialize, Serialize};

use super::episode_rng;
use crate::env::{Env, PathClass};
use crate::heads::GaussianPolicy;
use crate::risk::worst_fraction_mean;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PathHistogram {
    pub short: usize,
    pub long: usize,
    pub none: usize,
}

impl PathHistogram {
    pub fn add(&mut self, p: PathClass) {
        match p {
            PathClass::Short => self.short += 1,
            PathClass::Long => self.long += 1,
            PathClass::None => self.none += 1,
        }
    }

    pub fn total(&self) -> usize {
        self.short + self.long + self.none
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeResult {
    pub reward: f64,
    pub cost: f64,
    pub steps: u32,
    pub path: PathClass,
    pub risky: Option<bool>,
}

/// Summary of a batch of deterministic evaluation episodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Training step at which the evaluation ran.
    pub step: u64,
    pub episodes: usize,
    pub rho: f64,
    pub mean_reward: f64,
    pub mean_cost: f64,
    /// Mean of the worst `ceil(rho * episodes)` episode costs.
    pub cvar_cost: f64,
    pub episode_costs: Vec<f64>,
    pub episode_rewards: Vec<f64>,
    pub path_histogram: PathHistogram,
    /// Fraction of episodes that took the environment's risky choice, where defined.
    pub risky_rate: Option<f64>,
    pub long_path_converged: bool,
    pub steps_to_convergence: Option<u64>,
}

impl EvalReport {
    pub fn from_episodes(step: u64, rho: f64, episodes: &[EpisodeResult]) -> Self {
        assert!(!episodes.is_empty(), "evaluation needs at least one episode");
        let n = episodes.len() as f64;
        let episode_costs: Vec<f64> = episodes.iter().map(|e| e.cost).collect();
        let episode_rewards: Vec<f64> = episodes.iter().map(|e| e.reward).collect();
        let mut path_histogram = PathHistogram::default();
        for e in episodes {
            path_histogram.add(e.path);
        }
        let risky: Vec<bool> = episodes.iter().filter_map(|e| e.risky).collect();
        let risky_rate = (!risky.is_empty())
            .then(|| risky.iter().filter(|&&r| r).count() as f64 / risky.len() as f64);
        let mean_cost = episode_costs.iter().sum::<f64>() / n;
        // The tail mean can fall a rounding error below the plain mean for equal costs.
        let cvar_cost = worst_fraction_mean(&episode_costs, rho).expect("validated rho").max(mean_cost);
        Self {
            step,
            episodes: episodes.len(),
            rho,
            mean_reward: episode_rewards.iter().sum::<f64>() / n,
            mean_cost,
            cvar_cost,
            episode_costs,
            episode_rewards,
            path_histogram,
            risky_rate,
            long_path_converged: false,
            steps_to_convergence: None,
        }
    }

    /// Every episode reached the goal through the long path.
    pub fn all_long(&self) -> bool {
        self.path_histogram.long == self.episodes
    }
}

/// Runs one episode with the deterministic action `tanh(mu)`.
pub fn run_episode(policy: &GaussianPolicy<f64>, env: &mut dyn Env, seed: u64, index: u64) -> EpisodeResult {
    let mut rng = episode_rng(seed, index);
    let mut state = env.reset(&mut rng);
    let (mut reward, mut cost, mut steps) = (0.0, 0.0, 0);
    loop {
        let action = policy.head(&state).mean_action();
        let step = env.step(&action, &mut rng);
        reward += step.reward;
        cost += step.cost;
        steps += 1;
        if step.done() {
            break;
        }
        state = step.next_state;
    }
    EpisodeResult { reward, cost, steps, path: env.path_class(), risky: env.risky_choice() }
}

/// Evaluates `policy` for `episodes` episodes. Episode `i` always uses the generator
/// derived from `(seed, i)`, so the report does not depend on `workers`.
pub fn evaluate(
    policy: &GaussianPolicy<f64>,
    make_env: &(dyn Fn() -> Box<dyn Env> + Sync),
    episodes: usize,
    rho: f64,
    seed: u64,
    step: u64,
    workers: usize,
) -> EvalReport {
    let workers = workers.clamp(1, episodes.max(1));
    let results: Vec<EpisodeResult> = if workers == 1 {
        let mut env = make_env();
        (0..episodes as u64).map(|i| run_episode(policy, env.as_mut(), seed, i)).collect()
    } else {
        let mut slots: Vec<Option<EpisodeResult>> = vec![None; episodes];
        let chunk = episodes.div_ceil(workers);
        std::thread::scope(|scope| {
            for (c, out) in slots.chunks_mut(chunk).enumerate() {
                scope.spawn(move || {
                    let mut env = make_env();
                    for (j, slot) in out.iter_mut().enumerate() {
                        let i = (c * chunk + j) as u64;
                        *slot = Some(run_episode(policy, env.as_mut(), seed, i));
                    }
                });
            }
        });
        slots.into_iter().map(|s| s.expect("every episode ran")).collect()
    };
    EvalReport::from_episodes(step, rho, &results)
}

/// Latches the first window of `window` consecutive all-long evaluations.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceDetector {
    pub window: usize,
    streak: Vec<u64>,
    converged_at: Option<u64>,
}

impl ConvergenceDetector {
    pub fn new(window: usize) -> Self {
        assert!(window > 0, "window must be positive");
        Self { window, streak: Vec::new(), converged_at: None }
    }

    /// Records an evaluation and fills the report's convergence fields.
    pub fn observe(&mut self, report: &mut EvalReport) {
        if self.converged_at.is_none() {
            if report.all_long() {
                self.streak.push(report.step);
                if self.streak.len() >= self.window {
                    self.converged_at = Some(self.streak[0]);
                }
            } else {
                self.streak.clear();
            }
        }
        report.long_path_converged = self.converged_at.is_some();
        report.steps_to_convergence = self.converged_at;
    }

    pub fn converged_at(&self) -> Option<u64> {
        self.converged_at
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ep(cost: f64, path: PathClass) -> EpisodeResult {
        EpisodeResult { reward: 0.0, cost, steps: 1, path, risky: None }
    }

    #[test]
    fn report_examples() {
        let r = EvalReport::from_episodes(0, 0.05, &[ep(0.0, PathClass::None), ep(0.0, PathClass::None)]);
        assert_eq!((r.mean_cost, r.cvar_cost), (0.0, 0.0));
        let eps: Vec<_> = [2.0, 2.0, 2.0, 20.0].iter().map(|&c| ep(c, PathClass::Short)).collect();
        let r = EvalReport::from_episodes(0, 0.25, &eps);
        assert_eq!(r.cvar_cost, 20.0);
        assert_eq!(r.path_histogram.total(), 4);
        assert!(r.risky_rate.is_none());
    }

    #[test]
    fn detector_latches_first_window() {
        let mut d = ConvergenceDetector::new(2);
        let report = |step, path| EvalReport::from_episodes(step, 0.5, &[ep(1.0, path)]);
        let mut a = report(10, PathClass::Long);
        let mut short = report(20, PathClass::Short);
        let mut b = report(30, PathClass::Long);
        let mut c = report(40, PathClass::Long);
        let mut e = report(50, PathClass::Short);
        for r in [&mut a, &mut short, &mut b] {
            d.observe(r);
            assert!(!r.long_path_converged);
        }
        d.observe(&mut c);
        assert_eq!(c.steps_to_convergence, Some(30));
        d.observe(&mut e);
        assert!(e.long_path_converged);
        assert_eq!(e.steps_to_convergence, Some(30));
    }
}
