use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use super::{CmdpStep, Env, PathClass};

/// Map rows from top (row 8) to bottom (row 0); columns left to right.
///
/// `#` wall, `.` open, `S` open start cell, `A` guarded door, `P` pink door,
/// `G` goal, `B` bonus.
pub const MAZE_LAYOUT: [&str; 9] = [
    "#########",
    "#......B#",
    "#.......#",
    "#.#####.#",
    "#.A.G.P.#",
    "#S#####.#",
    "#SSS....#",
    "#SSS....#",
    "#########",
];

const SIZE: usize = 9;
// Keeps a clipped position strictly inside the cell it came from.
const FACE_GAP: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Cell {
    Wall,
    Open,
    Guard,
    Pink,
    Goal,
    Bonus,
}

fn cell_at(col: usize, row: usize) -> Cell {
    match MAZE_LAYOUT[SIZE - 1 - row].as_bytes()[col] {
        b'#' => Cell::Wall,
        b'A' => Cell::Guard,
        b'P' => Cell::Pink,
        b'G' => Cell::Goal,
        b'B' => Cell::Bonus,
        _ => Cell::Open,
    }
}

fn is_start(col: usize, row: usize) -> bool {
    MAZE_LAYOUT[SIZE - 1 - row].as_bytes()[col] == b'S'
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GuardedMazeConfig {
    pub guard_prob: f64,
    /// Cells moved per unit action.
    pub step_scale: f64,
    pub max_steps: u32,
    /// Steps that pay the per-step reward penalty.
    pub reward_window: u32,
    pub goal_bonus: f64,
    pub guard_cost_low: f64,
    pub guard_cost_high: f64,
    pub long_path_cost: f64,
    pub corner_bonus: f64,
}

impl Default for GuardedMazeConfig {
    fn default() -> Self {
        Self {
            guard_prob: 0.15,
            step_scale: 1.0,
            max_steps: 100,
            reward_window: 32,
            goal_bonus: 16.0,
            guard_cost_low: 2.0,
            guard_cost_high: 20.0,
            long_path_cost: 4.0,
            corner_bonus: 1.0,
        }
    }
}

impl GuardedMazeConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(0.0..=1.0).contains(&self.guard_prob) {
            return Err(format!("guard-prob must lie in [0, 1], got {}", self.guard_prob));
        }
        let positive = [
            ("step-scale", self.step_scale),
            ("goal bonus", self.goal_bonus),
            ("guard cost", self.guard_cost_low),
            ("guard cost", self.guard_cost_high),
            ("pink cost", self.long_path_cost),
            ("corner bonus", self.corner_bonus),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(format!("{name} must be positive, got {v}"));
            }
        }
        if self.max_steps == 0 || self.reward_window == 0 {
            return Err("step limits must be positive".into());
        }
        Ok(())
    }
}

/// 9x9 grid with a walled chamber around the goal, entered either through the
/// guarded door (short, risky) or the pink door (long, fixed cost).
///
/// Positions are continuous; cell `(c, r)` covers `[c, c+1) x [r, r+1)` with row 0 at
/// the bottom. Observations are the position rescaled to `[-1, 1]`.
#[derive(Debug, Clone)]
pub struct GuardedMaze {
    pub config: GuardedMazeConfig,
    pos: [f64; 2],
    steps: u32,
    guard_present: bool,
    bonus_taken: bool,
    last_door: Option<Cell>,
    reached_goal: bool,
}

impl GuardedMaze {
    pub fn new(config: GuardedMazeConfig) -> Self {
        Self {
            config,
            pos: [1.5, 1.5],
            steps: 0,
            guard_present: false,
            bonus_taken: false,
            last_door: None,
            reached_goal: false,
        }
    }

    /// The ASCII map, top row first.
    pub fn describe() -> String {
        MAZE_LAYOUT.join("\n")
    }

    pub fn start_cells() -> Vec<(usize, usize)> {
        let mut cells = Vec::new();
        for row in 0..SIZE {
            for col in 0..SIZE {
                if is_start(col, row) {
                    cells.push((col, row));
                }
            }
        }
        cells
    }

    pub fn position(&self) -> [f64; 2] {
        self.pos
    }

    pub fn steps_taken(&self) -> u32 {
        self.steps
    }

    pub fn guard_present(&self) -> bool {
        self.guard_present
    }

    pub fn current_cell(&self) -> (usize, usize) {
        (self.pos[0].floor() as usize, self.pos[1].floor() as usize)
    }

    /// Places the agent at the centre of `cell` with a chosen guard state.
    pub fn reset_to(&mut self, cell: (usize, usize), guard_present: bool) -> Vec<f64> {
        assert!(cell_at(cell.0, cell.1) != Cell::Wall, "cannot start inside a wall");
        self.pos = [cell.0 as f64 + 0.5, cell.1 as f64 + 0.5];
        self.steps = 0;
        self.guard_present = guard_present;
        self.bonus_taken = false;
        self.last_door = None;
        self.reached_goal = false;
        self.observe()
    }

    pub fn observe(&self) -> Vec<f64> {
        self.pos.iter().map(|&p| 2.0 * p / SIZE as f64 - 1.0).collect()
    }

    /// Moves along one axis, stopping at the face of the first wall crossed.
    fn slide(&mut self, axis: usize, delta: f64) {
        let from = self.pos[axis];
        let to = from + delta;
        let other = self.pos[1 - axis].floor() as usize;
        let start = from.floor() as i64;
        let end = to.floor() as i64;
        let step = if end >= start { 1 } else { -1 };
        let mut c = start;
        while c != end {
            let next = c + step;
            let blocked = next < 0 || next >= SIZE as i64 || {
                let idx = next as usize;
                let cell = if axis == 0 { cell_at(idx, other) } else { cell_at(other, idx) };
                cell == Cell::Wall
            };
            if blocked {
                self.pos[axis] = if step > 0 { next as f64 - FACE_GAP } else { c as f64 };
                return;
            }
            c = next;
        }
        self.pos[axis] = to;
    }
}

impl Default for GuardedMaze {
    fn default() -> Self {
        Self::new(GuardedMazeConfig::default())
    }
}

impl Env for GuardedMaze {
    fn observation_dim(&self) -> usize {
        2
    }

    fn action_dim(&self) -> usize {
        2
    }

    fn reset(&mut self, rng: &mut dyn RngCore) -> Vec<f64> {
        let starts = Self::start_cells();
        let cell = starts[rng.random_range(0..starts.len())];
        let guard = rng.random_bool(self.config.guard_prob);
        self.reset_to(cell, guard)
    }

    fn step(&mut self, action: &[f64], _rng: &mut dyn RngCore) -> CmdpStep {
        let c = self.config;
        let mut reward = if self.steps < c.reward_window { -1.0 } else { 0.0 };
        for axis in 0..2 {
            let a = if action[axis].is_finite() { action[axis].clamp(-1.0, 1.0) } else { 0.0 };
            self.slide(axis, c.step_scale * a);
        }
        self.steps += 1;

        let (col, row) = self.current_cell();
        let mut cost = 0.0;
        let mut terminated = false;
        match cell_at(col, row) {
            Cell::Guard => {
                cost = if self.guard_present { c.guard_cost_high } else { c.guard_cost_low };
                self.last_door = Some(Cell::Guard);
            }
            Cell::Pink => {
                cost = c.long_path_cost;
                self.last_door = Some(Cell::Pink);
            }
            Cell::Goal => {
                reward += c.goal_bonus;
                terminated = true;
                self.reached_goal = true;
            }
            Cell::Bonus if !self.bonus_taken => {
                reward += c.corner_bonus;
                self.bonus_taken = true;
            }
            _ => {}
        }
        let truncated = !terminated && self.steps >= c.max_steps;
        CmdpStep { next_state: self.observe(), reward, cost, terminated, truncated }
    }

    fn path_class(&self) -> PathClass {
        match (self.reached_goal, self.last_door) {
            (true, Some(Cell::Guard)) => PathClass::Short,
            (true, Some(Cell::Pink)) => PathClass::Long,
            _ => PathClass::None,
        }
    }
}
