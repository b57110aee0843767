//! Cooperative gridworlds behind one interface: predator/prey, a traffic
//! junction and level-based foraging.
//!
//! Coordinates are `(row, col)` with row 0 at the top. Directional actions
//! shared by predator/prey and foraging are `0 = up (forward)`,
//! `1 = down (backward)`, `2 = left`, `3 = right`; predator/prey adds
//! `4 = stay` and foraging adds `4 = load`. The traffic junction has
//! `0 = gas` and `1 = brake`.

pub mod foraging;
pub mod predator_prey;
pub mod traffic_junction;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use foraging::{Foraging, ForagingAgent, Food};
pub use predator_prey::PredatorPrey;
pub use traffic_junction::{Car, CarStatus, TrafficJunction};

#[derive(Debug, Error, PartialEq)]
pub enum EnvError {
    #[error("invalid environment config: {0}")]
    Config(String),
    #[error("agent {agent}: action {action} is not in 0..{n_actions}")]
    InvalidAction {
        agent: usize,
        action: usize,
        n_actions: usize,
    },
    #[error("expected {expected} actions, got {found}")]
    ActionCount { expected: usize, found: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvKind {
    PredatorPrey,
    TrafficJunction,
    Foraging,
}

impl EnvKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EnvKind::PredatorPrey => "predator_prey",
            EnvKind::TrafficJunction => "traffic_junction",
            EnvKind::Foraging => "foraging",
        }
    }
}

impl fmt::Display for EnvKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EnvKind {
    type Err = EnvError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "predator_prey" => Ok(EnvKind::PredatorPrey),
            "traffic_junction" => Ok(EnvKind::TrafficJunction),
            "foraging" | "lbf" => Ok(EnvKind::Foraging),
            other => Err(EnvError::Config(format!("unknown environment `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Difficulty {
    Easy,
    Medium,
    Hard,
}

impl Difficulty {
    pub fn as_str(self) -> &'static str {
        match self {
            Difficulty::Easy => "easy",
            Difficulty::Medium => "medium",
            Difficulty::Hard => "hard",
        }
    }
}

impl fmt::Display for Difficulty {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Difficulty {
    type Err = EnvError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "easy" => Ok(Difficulty::Easy),
            "medium" => Ok(Difficulty::Medium),
            "hard" => Ok(Difficulty::Hard),
            other => Err(EnvError::Config(format!("unknown difficulty `{other}`"))),
        }
    }
}

/// Full environment configuration. Fields that do not apply to a kind are ignored.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvConfig {
    pub kind: EnvKind,
    pub grid_size: usize,
    pub n_agents: usize,
    pub vision: usize,
    pub max_steps: usize,
    /// Predator/prey: prey takes a uniformly random move each step instead of staying put.
    pub prey_random_walk: bool,
    /// Traffic junction: per-route, per-step probability that a waiting car enters.
    pub arrival_prob: f64,
    /// Traffic junction: one-way roads per axis (1 = a single crossing).
    pub roads_per_axis: usize,
    /// Foraging: number of food items.
    pub n_food: usize,
    /// Foraging: agent levels are drawn from `1..=max_agent_level`.
    pub max_agent_level: u32,
}

impl EnvConfig {
    /// Preset settings. Predator/prey and traffic junction agent counts, grid
    /// sizes, vision and step limits follow the published difficulty tables;
    /// foraging presets, traffic road layouts for medium/hard and the traffic
    /// vision radius are local choices.
    pub fn preset(kind: EnvKind, difficulty: Difficulty) -> Self {
        let base = EnvConfig {
            kind,
            grid_size: 5,
            n_agents: 2,
            vision: 0,
            max_steps: 20,
            prey_random_walk: false,
            arrival_prob: 0.3,
            roads_per_axis: 1,
            n_food: 0,
            max_agent_level: 3,
        };
        match (kind, difficulty) {
            (EnvKind::PredatorPrey, Difficulty::Easy) => base,
            (EnvKind::PredatorPrey, Difficulty::Medium) => EnvConfig {
                grid_size: 10,
                n_agents: 4,
                vision: 1,
                ..base
            },
            (EnvKind::PredatorPrey, Difficulty::Hard) => EnvConfig {
                grid_size: 20,
                n_agents: 10,
                vision: 1,
                ..base
            },
            (EnvKind::TrafficJunction, d) => {
                let (n, g, t, roads) = match d {
                    Difficulty::Easy => (5, 6, 20, 1),
                    Difficulty::Medium => (14, 10, 40, 2),
                    Difficulty::Hard => (20, 18, 80, 3),
                };
                EnvConfig {
                    grid_size: g,
                    n_agents: n,
                    vision: 1,
                    max_steps: t,
                    roads_per_axis: roads,
                    ..base
                }
            }
            (EnvKind::Foraging, d) => {
                let (g, n, food, vision) = match d {
                    Difficulty::Easy => (8, 2, 2, 2),
                    Difficulty::Medium => (10, 3, 3, 2),
                    Difficulty::Hard => (12, 4, 4, 3),
                };
                EnvConfig {
                    grid_size: g,
                    n_agents: n,
                    vision,
                    max_steps: 50,
                    n_food: food,
                    ..base
                }
            }
        }
    }

    pub fn validate(&self) -> Result<(), EnvError> {
        let err = |m: String| Err(EnvError::Config(m));
        if self.grid_size < 2 {
            return err(format!("grid_size {} < 2", self.grid_size));
        }
        if self.n_agents < 2 {
            return err(format!("n_agents {} < 2", self.n_agents));
        }
        if self.max_steps < 1 {
            return err("max_steps must be at least 1".into());
        }
        let cells = self.grid_size * self.grid_size;
        match self.kind {
            EnvKind::PredatorPrey => {
                if self.n_agents + 1 > cells {
                    return err(format!(
                        "{} predators and a prey do not fit in {} cells",
                        self.n_agents, cells
                    ));
                }
            }
            EnvKind::TrafficJunction => {
                if !(0.0..=1.0).contains(&self.arrival_prob) {
                    return err(format!("arrival_prob {} outside [0, 1]", self.arrival_prob));
                }
                if self.roads_per_axis == 0 || self.roads_per_axis >= self.grid_size {
                    return err(format!(
                        "roads_per_axis {} invalid for grid {}",
                        self.roads_per_axis, self.grid_size
                    ));
                }
                if self.n_agents > cells {
                    return err(format!("{} cars exceed {} cells", self.n_agents, cells));
                }
            }
            EnvKind::Foraging => {
                if self.n_food == 0 {
                    return err("foraging needs at least one food item".into());
                }
                if self.max_agent_level == 0 {
                    return err("max_agent_level must be positive".into());
                }
                if self.n_agents + self.n_food > cells {
                    return err(format!(
                        "{} agents and {} food do not fit in {} cells",
                        self.n_agents, self.n_food, cells
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn n_actions(&self) -> usize {
        match self.kind {
            EnvKind::PredatorPrey | EnvKind::Foraging => 5,
            EnvKind::TrafficJunction => 2,
        }
    }

    pub fn window_cells(&self) -> usize {
        let side = 2 * self.vision + 1;
        side * side
    }

    pub fn obs_len(&self) -> usize {
        let extras = match self.kind {
            EnvKind::Foraging => 3,
            _ => 2,
        };
        self.window_cells() * CHANNELS + extras
    }

    /// `(worst, best)` achievable team return for one episode.
    pub fn return_bounds(&self) -> (f64, f64) {
        let n = self.n_agents as f64;
        let t = self.max_steps as f64;
        match self.kind {
            EnvKind::PredatorPrey => (
                -predator_prey::STEP_PENALTY * n * t,
                predator_prey::CAPTURE_REWARD * n,
            ),
            EnvKind::TrafficJunction => {
                let per_car = traffic_junction::COLLISION_PENALTY * t
                    + traffic_junction::TIME_PENALTY * t * (t + 1.0) / 2.0;
                (-n * per_car, 0.0)
            }
            EnvKind::Foraging => (0.0, 1.0),
        }
    }
}

/// Channels per window cell, in this order for every environment:
/// self, other agents, target entity (prey / road / food), out-of-grid wall.
pub const CHANNELS: usize = 4;

/// Maps a team return into `[0, 1]` using the config's analytic bounds.
pub fn success_metric(config: &EnvConfig, team_return: f64) -> Result<f64, EnvError> {
    let (worst, best) = config.return_bounds();
    if best <= worst {
        return Err(EnvError::Config(format!(
            "degenerate return bounds: best {best} <= worst {worst}"
        )));
    }
    Ok(((team_return - worst) / (best - worst)).clamp(0.0, 1.0))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Cell {
    pub row: usize,
    pub col: usize,
}

impl Cell {
    pub fn new(row: usize, col: usize) -> Self {
        Self { row, col }
    }

    /// Moves one cell in `dir` (0 up, 1 down, 2 left, 3 right), clamped to the grid.
    pub fn step_clamped(self, dir: usize, grid: usize) -> Cell {
        self.neighbor(dir, grid).unwrap_or(self)
    }

    pub fn neighbor(self, dir: usize, grid: usize) -> Option<Cell> {
        let (r, c) = (self.row, self.col);
        match dir {
            0 if r > 0 => Some(Cell::new(r - 1, c)),
            1 if r + 1 < grid => Some(Cell::new(r + 1, c)),
            2 if c > 0 => Some(Cell::new(r, c - 1)),
            3 if c + 1 < grid => Some(Cell::new(r, c + 1)),
            _ => None,
        }
    }

    pub fn is_adjacent(self, other: Cell) -> bool {
        self.row.abs_diff(other.row) + self.col.abs_diff(other.col) == 1
    }
}

/// Local view of one agent. Entries are in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Observation(pub Vec<f64>);

impl Observation {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct StepInfo {
    /// Traffic junction: car pairs sharing a cell after the move.
    pub collisions: usize,
    /// Predator/prey: all predators on the prey this step.
    pub captured: bool,
    /// Foraging: food items collected this step.
    pub food_collected: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepResult {
    pub observations: Vec<Observation>,
    pub rewards: Vec<f64>,
    pub done: bool,
    pub info: StepInfo,
}

/// Common simulator interface. Implementors own their state and random stream,
/// so `(config, seed, actions)` fully determines a trajectory.
pub trait Environment {
    fn config(&self) -> &EnvConfig;
    /// Re-initialises the episode and returns each agent's first observation.
    fn reset(&mut self, seed: u64) -> Vec<Observation>;
    fn step(&mut self, actions: &[usize]) -> Result<StepResult, EnvError>;
    fn observe(&self, agent: usize) -> Observation;
    fn step_count(&self) -> usize;
    fn is_done(&self) -> bool;
    /// Whether the finished episode counts as solved.
    fn succeeded(&self) -> bool;
    fn render(&self) -> String;
}

/// Any of the three environments.
#[derive(Clone, Debug)]
pub enum Env {
    PredatorPrey(PredatorPrey),
    TrafficJunction(TrafficJunction),
    Foraging(Foraging),
}

macro_rules! dispatch {
    ($self:expr, $e:ident => $body:expr) => {
        match $self {
            Env::PredatorPrey($e) => $body,
            Env::TrafficJunction($e) => $body,
            Env::Foraging($e) => $body,
        }
    };
}

impl Env {
    pub fn new(config: EnvConfig, seed: u64) -> Result<Self, EnvError> {
        config.validate()?;
        Ok(match config.kind {
            EnvKind::PredatorPrey => Env::PredatorPrey(PredatorPrey::new(config, seed)),
            EnvKind::TrafficJunction => Env::TrafficJunction(TrafficJunction::new(config, seed)),
            EnvKind::Foraging => Env::Foraging(Foraging::new(config, seed)),
        })
    }
}

impl Environment for Env {
    fn config(&self) -> &EnvConfig {
        dispatch!(self, e => e.config())
    }
    fn reset(&mut self, seed: u64) -> Vec<Observation> {
        dispatch!(self, e => e.reset(seed))
    }
    fn step(&mut self, actions: &[usize]) -> Result<StepResult, EnvError> {
        dispatch!(self, e => e.step(actions))
    }
    fn observe(&self, agent: usize) -> Observation {
        dispatch!(self, e => e.observe(agent))
    }
    fn step_count(&self) -> usize {
        dispatch!(self, e => e.step_count())
    }
    fn is_done(&self) -> bool {
        dispatch!(self, e => e.is_done())
    }
    fn succeeded(&self) -> bool {
        dispatch!(self, e => e.succeeded())
    }
    fn render(&self) -> String {
        dispatch!(self, e => e.render())
    }
}

pub(crate) fn check_actions(actions: &[usize], n_agents: usize, n_actions: usize) -> Result<(), EnvError> {
    if actions.len() != n_agents {
        return Err(EnvError::ActionCount {
            expected: n_agents,
            found: actions.len(),
        });
    }
    if let Some((agent, &action)) = actions.iter().enumerate().find(|(_, &a)| a >= n_actions) {
        return Err(EnvError::InvalidAction {
            agent,
            action,
            n_actions,
        });
    }
    Ok(())
}

/// Encodes the `(2v+1)^2` window around `center`. `fill` writes the first
/// three channels of an in-grid cell; out-of-grid cells set only the wall channel.
pub(crate) fn encode_window(
    grid: usize,
    center: Cell,
    vision: usize,
    out: &mut Vec<f64>,
    mut fill: impl FnMut(Cell, &mut [f64]),
) {
    let v = vision as isize;
    for dr in -v..=v {
        for dc in -v..=v {
            let base = out.len();
            out.extend_from_slice(&[0.0; CHANNELS]);
            let (r, c) = (center.row as isize + dr, center.col as isize + dc);
            if r < 0 || c < 0 || r >= grid as isize || c >= grid as isize {
                out[base + 3] = 1.0;
            } else {
                fill(Cell::new(r as usize, c as usize), &mut out[base..base + 3]);
            }
        }
    }
}

pub(crate) fn normalized_coord(x: usize, grid: usize) -> f64 {
    x as f64 / (grid - 1) as f64
}
