//! The empty room: a 7x7 interior surrounded by walls on a 9x9 grid.
//!
//! Moves into a wall leave the agent in place and raise the `blocked` flag.
//! Reward is 1 on transitions that arrive at the goal cell and 0 otherwise;
//! the environment never terminates. Observations are two binary 9x9 planes
//! (walls, agent position) flattened to a 162-vector.

mod exact_model;
mod vector;

pub use exact_model::ExactModel;
pub use vector::VectorEnv;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::rng::chacha;

/// Outer grid side length, including walls.
pub const GRID: usize = 9;
/// Interior side length.
pub const INTERIOR: usize = 7;
/// Number of interior states.
pub const N_STATES: usize = INTERIOR * INTERIOR;
/// Observation length: two flattened planes.
pub const OBS_LEN: usize = 2 * GRID * GRID;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Action {
    Up,
    Down,
    Left,
    Right,
}

impl Action {
    pub const ALL: [Action; 4] = [Action::Up, Action::Down, Action::Left, Action::Right];

    pub fn index(self) -> usize {
        match self {
            Action::Up => 0,
            Action::Down => 1,
            Action::Left => 2,
            Action::Right => 3,
        }
    }

    pub fn from_index(i: usize) -> Option<Action> {
        Action::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Action::Up => "up",
            Action::Down => "down",
            Action::Left => "left",
            Action::Right => "right",
        }
    }

    pub fn from_name(name: &str) -> Option<Action> {
        Action::ALL.iter().copied().find(|a| a.name() == name)
    }

    /// (row, col) displacement; rows grow downward.
    fn delta(self) -> (isize, isize) {
        match self {
            Action::Up => (-1, 0),
            Action::Down => (1, 0),
            Action::Left => (0, -1),
            Action::Right => (0, 1),
        }
    }
}

/// Action names in index order, for wiring question networks to the grid.
pub fn action_names() -> Vec<String> {
    Action::ALL.iter().map(|a| a.name().to_string()).collect()
}

/// One interaction step. `obs`/`next_obs` bracket the transition and
/// `blocked` records whether the attempted move hit a wall.
#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub obs: Vec<f64>,
    pub action: usize,
    pub next_obs: Vec<f64>,
    pub reward: f64,
    pub terminal: bool,
    pub blocked: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmptyRoomConfig {
    /// Goal cell in grid coordinates (row, col). Interior rows and columns
    /// run 1..=7.
    #[serde(default = "default_goal")]
    pub goal: (usize, usize),
    /// Start cell in grid coordinates.
    #[serde(default = "default_start")]
    pub start: (usize, usize),
    /// Draw a uniform interior start on every reset instead.
    #[serde(default)]
    pub random_start: bool,
    /// Also pay the goal reward when a blocked move keeps the agent on the
    /// goal cell. Off by default: reward requires arriving, i.e. a position
    /// change onto the goal.
    #[serde(default)]
    pub reward_on_stay: bool,
}

fn default_goal() -> (usize, usize) {
    (1, 6)
}

fn default_start() -> (usize, usize) {
    (7, 1)
}

impl Default for EmptyRoomConfig {
    fn default() -> Self {
        EmptyRoomConfig {
            goal: default_goal(),
            start: default_start(),
            random_start: false,
            reward_on_stay: false,
        }
    }
}

impl EmptyRoomConfig {
    pub fn validate(&self) -> Result<(), String> {
        for (name, cell) in [("goal", self.goal), ("start", self.start)] {
            if !is_interior(cell) {
                return Err(format!(
                    "{name} cell ({}, {}) is not inside the 7x7 interior",
                    cell.0, cell.1
                ));
            }
        }
        Ok(())
    }
}

fn is_interior((r, c): (usize, usize)) -> bool {
    (1..=INTERIOR).contains(&r) && (1..=INTERIOR).contains(&c)
}

/// Result of one environment step.
#[derive(Clone, Debug)]
pub struct StepOutcome {
    pub obs: Vec<f64>,
    pub reward: f64,
    pub blocked: bool,
    pub transition: Transition,
}

#[derive(Clone, Debug)]
pub struct EmptyRoom {
    cfg: EmptyRoomConfig,
    pos: (usize, usize),
    rng: ChaCha8Rng,
}

impl EmptyRoom {
    pub fn new(cfg: EmptyRoomConfig, seed: u64) -> Self {
        debug_assert!(cfg.validate().is_ok());
        let pos = cfg.start;
        let mut env = EmptyRoom {
            cfg,
            pos,
            rng: chacha(seed),
        };
        env.reset();
        env
    }

    pub fn config(&self) -> &EmptyRoomConfig {
        &self.cfg
    }

    pub fn reset(&mut self) -> Vec<f64> {
        self.pos = if self.cfg.random_start {
            (
                self.rng.random_range(1..=INTERIOR),
                self.rng.random_range(1..=INTERIOR),
            )
        } else {
            self.cfg.start
        };
        self.observation()
    }

    pub fn step(&mut self, action: Action) -> StepOutcome {
        let obs = self.observation();
        let prev = self.pos;
        let (dr, dc) = action.delta();
        let target = (
            (prev.0 as isize + dr) as usize,
            (prev.1 as isize + dc) as usize,
        );
        let blocked = !is_interior(target);
        let next = if blocked { prev } else { target };
        self.pos = next;
        let arrived = next == self.cfg.goal && (next != prev || self.cfg.reward_on_stay);
        let reward = if arrived { 1.0 } else { 0.0 };
        let next_obs = self.observation();
        StepOutcome {
            obs: next_obs.clone(),
            reward,
            blocked,
            transition: Transition {
                obs,
                action: action.index(),
                next_obs,
                reward,
                terminal: false,
                blocked,
            },
        }
    }

    pub fn position(&self) -> (usize, usize) {
        self.pos
    }

    pub fn set_position(&mut self, pos: (usize, usize)) {
        assert!(is_interior(pos), "position {pos:?} outside interior");
        self.pos = pos;
    }

    /// Row-major interior state index in 0..49.
    pub fn state_index(&self) -> usize {
        state_index(self.pos)
    }

    pub fn observation(&self) -> Vec<f64> {
        observation_for(self.pos)
    }
}

/// Interior state index of a grid cell.
pub fn state_index((r, c): (usize, usize)) -> usize {
    debug_assert!(is_interior((r, c)));
    (r - 1) * INTERIOR + (c - 1)
}

/// Grid cell of an interior state index.
pub fn state_cell(index: usize) -> (usize, usize) {
    debug_assert!(index < N_STATES);
    (index / INTERIOR + 1, index % INTERIOR + 1)
}

/// Two planes, walls then agent, each row-major.
pub fn observation_for(pos: (usize, usize)) -> Vec<f64> {
    let mut obs = vec![0.0; OBS_LEN];
    for r in 0..GRID {
        for c in 0..GRID {
            if !is_interior((r, c)) {
                obs[r * GRID + c] = 1.0;
            }
        }
    }
    obs[GRID * GRID + pos.0 * GRID + pos.1] = 1.0;
    obs
}

/// Recovers the agent cell from the one-hot agent plane.
pub fn decode_agent_position(obs: &[f64]) -> Option<(usize, usize)> {
    if obs.len() != OBS_LEN {
        return None;
    }
    let mut found = None;
    for r in 0..GRID {
        for c in 0..GRID {
            if obs[GRID * GRID + r * GRID + c] != 0.0 {
                if found.is_some() {
                    return None;
                }
                found = Some((r, c));
            }
        }
    }
    found
}
