use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{
    evaluate, stream_rng, Checkpoint, ConvergenceDetector, EvalReport, HarnessError, MetricsRow, MetricsWriter,
    ReplayBuffer, Stream, Transition,
};
use crate::agent::{Agent, AgentKind, StepReport};
use crate::config::RunConfig;
use crate::env::Env;

/// Directory name of a run: `<env>-<agent>-seed<seed>`.
pub fn run_name(config: &RunConfig) -> String {
    format!("{}-{}-seed{}", config.env, config.agent, config.seed)
}

/// Owns every piece of mutable training state of one run.
pub struct Trainer {
    pub config: RunConfig,
    pub agent: Agent<f64>,
    pub buffer: ReplayBuffer,
    env: Box<dyn Env>,
    env_rng: ChaCha8Rng,
    action_rng: ChaCha8Rng,
    buffer_rng: ChaCha8Rng,
    state: Vec<f64>,
    step: u64,
    episodes: u64,
    detector: ConvergenceDetector,
}

impl Trainer {
    pub fn new(config: RunConfig) -> Result<Self, HarnessError> {
        config.validate().map_err(HarnessError::Config)?;
        let init_seed = stream_rng(config.seed, Stream::Init).random::<u64>();
        let agent = Agent::new(config.agent_config(init_seed)).map_err(HarnessError::Config)?;
        let mut env = config.make_env();
        let mut env_rng = stream_rng(config.seed, Stream::Environment);
        let state = env.reset(&mut env_rng);
        let buffer = ReplayBuffer::new(config.buffer_size, env.observation_dim(), env.action_dim());
        Ok(Self {
            agent,
            buffer,
            env,
            env_rng,
            action_rng: stream_rng(config.seed, Stream::Action),
            buffer_rng: stream_rng(config.seed, Stream::Buffer),
            state,
            step: 0,
            episodes: 0,
            detector: ConvergenceDetector::new(config.convergence_window),
            config,
        })
    }

    /// Environment steps taken so far.
    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn episodes(&self) -> u64 {
        self.episodes
    }

    /// Acts once, stores the transition, and runs one gradient pass once past
    /// `learning-starts`.
    pub fn step(&mut self) -> Option<StepReport> {
        let action = self.agent.select_action(&self.state, self.step, &mut self.action_rng);
        let out = self.env.step(&action, &mut self.env_rng);
        self.buffer.push(&Transition {
            state: std::mem::take(&mut self.state),
            action,
            reward: out.reward,
            cost: out.cost,
            next_state: out.next_state.clone(),
            terminal: out.terminated,
        });
        self.state = if out.done() {
            self.episodes += 1;
            self.env.reset(&mut self.env_rng)
        } else {
            out.next_state
        };
        self.step += 1;
        if self.step >= self.config.learning_starts && self.buffer.len() >= self.config.batch_size {
            let batch = self.buffer.sample(self.config.batch_size, &mut self.buffer_rng);
            Some(self.agent.gradient_step(&batch, &mut self.action_rng))
        } else {
            None
        }
    }

    /// Deterministic-policy evaluation at the current step.
    pub fn evaluate(&self) -> EvalReport {
        let cfg = &self.config;
        let make_env = || cfg.make_env();
        evaluate(&self.agent.policy, &make_env, cfg.eval_episodes, cfg.rho, cfg.seed, self.step, cfg.eval_workers)
    }

    pub fn delta(&self) -> f64 {
        match self.config.agent {
            AgentKind::Orac => self.config.explore_config().delta(self.step),
            _ => 0.0,
        }
    }

    fn checkpoint(&self, dir: &Path) -> Result<(), HarnessError> {
        let path = dir.join("checkpoints").join(format!("step_{}", self.step));
        Checkpoint::capture(&self.agent, &self.config, self.step).save(&path)
    }

    /// Runs to `total-steps`, writing metrics and checkpoints into `dir` (which must
    /// exist). Returns the final evaluation.
    pub fn run(&mut self, dir: &Path) -> Result<EvalReport, HarnessError> {
        let metrics = MetricsWriter::create(dir.join("metrics.csv"))?;
        let mut last: Option<EvalReport> = None;
        while self.step < self.config.total_steps {
            self.step();
            if self.step % self.config.eval_every == 0 {
                let mut report = self.evaluate();
                self.detector.observe(&mut report);
                let row = MetricsRow::new(
                    &report,
                    self.episodes,
                    self.agent.lagrangian.lambda,
                    self.agent.entropy.temperature(),
                    self.delta(),
                );
                metrics.append(&row)?;
                log::info!(
                    "{} step {}: reward {:.3} cost {:.3} cvar {:.3} lambda {:.4} paths {}/{}/{}",
                    super::run_name(&self.config),
                    self.step,
                    report.mean_reward,
                    report.mean_cost,
                    report.cvar_cost,
                    row.lambda,
                    row.path_short,
                    row.path_long,
                    row.path_none
                );
                last = Some(report);
            }
            let every = self.config.checkpoint_every;
            if every > 0 && self.step % every == 0 && self.step < self.config.total_steps {
                self.checkpoint(dir)?;
            }
        }
        self.checkpoint(dir)?;
        if self.agent.faults() > 0 {
            log::warn!("{} numeric faults skipped during training", self.agent.faults());
        }
        let mut report = match last {
            Some(r) if r.step == self.step => r,
            _ => self.evaluate(),
        };
        report.long_path_converged = self.detector.converged_at().is_some();
        report.steps_to_convergence = self.detector.converged_at();
        Ok(report)
    }
}

/// Trains into `<out_root>/<run name>` and returns that directory.
pub fn train(config: &RunConfig, out_root: &Path) -> Result<PathBuf, HarnessError> {
    let dir = out_root.join(run_name(config));
    train_in(config, &dir)?;
    Ok(dir)
}

/// Trains into `dir`. Output is assembled in a sibling staging directory and moved
/// into place only on success, so failed runs leave nothing behind.
pub fn train_in(config: &RunConfig, dir: &Path) -> Result<EvalReport, HarnessError> {
    config.validate().map_err(HarnessError::Config)?;
    if dir.exists() {
        return Err(HarnessError::RunExists(dir.into()));
    }
    let parent = dir.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(parent).map_err(|e| HarnessError::io(parent, e))?;
    let staging = tempfile::Builder::new()
        .prefix(".staging-")
        .tempdir_in(parent)
        .map_err(|e| HarnessError::io(parent, e))?;
    let report = {
        let s = staging.path();
        fs::write(s.join("config.json"), config.to_json()).map_err(|e| HarnessError::io(s.join("config.json"), e))?;
        let mut trainer = Trainer::new(config.clone())?;
        let report = trainer.run(s)?;
        let json = serde_json::to_string_pretty(&report).expect("report serialises");
        fs::write(s.join("result.json"), json).map_err(|e| HarnessError::io(s.join("result.json"), e))?;
        report
    };
    let staged = staging.keep();
    fs::rename(&staged, dir).map_err(|e| {
        let _ = fs::remove_dir_all(&staged);
        HarnessError::io(dir, e)
    })?;
    Ok(report)
}
