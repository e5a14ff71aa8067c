//! Constrained MDP environments: the GuardedMaze grid and a one-step risky bandit.

mod bandit;
mod maze;

use std::fmt;
use std::str::FromStr;

use rand::RngCore;
use serde::{Deserialize, Serialize};

pub use bandit::{RiskyBandit, RiskyBanditConfig};
pub use maze::{Cell, GuardedMaze, GuardedMazeConfig, MAZE_LAYOUT};

/// Result of one environment transition.
#[derive(Debug, Clone, PartialEq)]
pub struct CmdpStep {
    pub next_state: Vec<f64>,
    pub reward: f64,
    pub cost: f64,
    pub terminated: bool,
    /// Step limit reached without termination.
    pub truncated: bool,
}

impl CmdpStep {
    pub fn done(&self) -> bool {
        self.terminated || self.truncated
    }
}

/// Which door a GuardedMaze episode used on its way to the goal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PathClass {
    /// Through the guarded door.
    Short,
    /// Through the pink door.
    Long,
    /// Goal not reached.
    None,
}

/// Common interface of the environments. Randomness is supplied by the caller so a
/// run can keep its environment stream separate from everything else.
pub trait Env: Send {
    fn observation_dim(&self) -> usize;

    fn action_dim(&self) -> usize;

    fn reset(&mut self, rng: &mut dyn RngCore) -> Vec<f64>;

    /// Actions outside `[-1, 1]` are clipped.
    fn step(&mut self, action: &[f64], rng: &mut dyn RngCore) -> CmdpStep;

    /// Path taken by the current episode so far.
    fn path_class(&self) -> PathClass {
        PathClass::None
    }

    /// For environments with a designated risky choice, whether this episode made it.
    fn risky_choice(&self) -> Option<bool> {
        None
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EnvKind {
    GuardedMaze,
    RiskyBandit,
}

impl EnvKind {
    pub fn name(self) -> &'static str {
        match self {
            EnvKind::GuardedMaze => "guardedmaze",
            EnvKind::RiskyBandit => "riskybandit",
        }
    }
}

impl fmt::Display for EnvKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EnvKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "guardedmaze" => Ok(EnvKind::GuardedMaze),
            "riskybandit" => Ok(EnvKind::RiskyBandit),
            other => Err(format!("unknown env `{other}` (expected guardedmaze or riskybandit)")),
        }
    }
}
