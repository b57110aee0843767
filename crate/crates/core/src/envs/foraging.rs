//! Level-based foraging.
//!
//! Agents and food carry levels. A food item is collected when the agents that
//! load it in the same step, each standing next to it, have levels summing to at
//! least the food's level. Collecting food of level `l` pays `l / total_level`
//! to the team, split equally between the loaders, so a perfect episode returns 1.
//!
//! Moves into grid edges, food, currently occupied cells, or a cell that another
//! agent also targets this step are blocked.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{
    check_actions, encode_window, normalized_coord, Cell, EnvConfig, EnvError, Environment,
    Observation, StepInfo, StepResult,
};

pub const LOAD: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ForagingAgent {
    pub cell: Cell,
    pub level: u32,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Food {
    pub cell: Cell,
    pub level: u32,
    pub collected: bool,
}

#[derive(Clone, Debug)]
pub struct Foraging {
    config: EnvConfig,
    agents: Vec<ForagingAgent>,
    food: Vec<Food>,
    total_food_level: u32,
    steps: usize,
    done: bool,
    rng: ChaCha8Rng,
}

impl Foraging {
    pub fn new(config: EnvConfig, seed: u64) -> Self {
        let mut env = Self {
            agents: Vec::new(),
            food: Vec::new(),
            total_food_level: 0,
            steps: 0,
            done: false,
            rng: ChaCha8Rng::seed_from_u64(seed),
            config,
        };
        env.reset(seed);
        env
    }

    pub fn from_parts(
        config: EnvConfig,
        agents: Vec<ForagingAgent>,
        food: Vec<(Cell, u32)>,
        seed: u64,
    ) -> Result<Self, EnvError> {
        config.validate()?;
        let g = config.grid_size;
        if agents.len() != config.n_agents || food.is_empty() {
            return Err(EnvError::Config("agent count mismatch or no food".into()));
        }
        let cells: Vec<Cell> = agents.iter().map(|a| a.cell).chain(food.iter().map(|f| f.0)).collect();
        if cells.iter().any(|c| c.row >= g || c.col >= g) {
            return Err(EnvError::Config("position outside the grid".into()));
        }
        let mut sorted = cells.clone();
        sorted.sort();
        sorted.dedup();
        if sorted.len() != cells.len() {
            return Err(EnvError::Config("overlapping agents or food".into()));
        }
        let food: Vec<Food> = food
            .into_iter()
            .map(|(cell, level)| Food {
                cell,
                level,
                collected: false,
            })
            .collect();
        Ok(Self {
            total_food_level: food.iter().map(|f| f.level).sum(),
            config,
            agents,
            food,
            steps: 0,
            done: false,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    pub fn agents(&self) -> &[ForagingAgent] {
        &self.agents
    }

    pub fn food(&self) -> &[Food] {
        &self.food
    }

    fn max_food_level(&self) -> u32 {
        self.config.n_agents as u32 * self.config.max_agent_level
    }

    fn food_at(&self, c: Cell) -> Option<&Food> {
        self.food.iter().find(|f| !f.collected && f.cell == c)
    }

    /// The food an agent at `cell` loads: the first uncollected neighbour in
    /// up, down, left, right order.
    fn adjacent_food(&self, cell: Cell) -> Option<usize> {
        let g = self.config.grid_size;
        (0..4)
            .filter_map(|d| cell.neighbor(d, g))
            .find_map(|n| self.food.iter().position(|f| !f.collected && f.cell == n))
    }
}

impl Environment for Foraging {
    fn config(&self) -> &EnvConfig {
        &self.config
    }

    fn reset(&mut self, seed: u64) -> Vec<Observation> {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
        let g = self.config.grid_size;
        let (n, k) = (self.config.n_agents, self.config.n_food);
        let mut cells: Vec<usize> = (0..g * g).collect();
        let (picked, _) = cells.partial_shuffle(&mut self.rng, n + k);
        let picked = picked.to_vec();
        let to_cell = |i: usize| Cell::new(i / g, i % g);
        let max_level = self.config.max_agent_level;
        self.agents = picked[..n]
            .iter()
            .map(|&i| ForagingAgent {
                cell: to_cell(i),
                level: self.rng.gen_range(1..=max_level),
            })
            .collect();
        let level_sum: u32 = self.agents.iter().map(|a| a.level).sum();
        self.food = picked[n..]
            .iter()
            .map(|&i| Food {
                cell: to_cell(i),
                level: self.rng.gen_range(1..=level_sum),
                collected: false,
            })
            .collect();
        self.total_food_level = self.food.iter().map(|f| f.level).sum();
        self.steps = 0;
        self.done = false;
        (0..n).map(|i| self.observe(i)).collect()
    }

    fn step(&mut self, actions: &[usize]) -> Result<StepResult, EnvError> {
        check_actions(actions, self.config.n_agents, self.config.n_actions())?;
        let g = self.config.grid_size;
        let n = self.agents.len();
        let mut rewards = vec![0.0; n];
        let mut collected = 0;

        // loading resolves against positions before anyone moves
        let targets: Vec<Option<usize>> = (0..n)
            .map(|i| (actions[i] == LOAD).then(|| self.adjacent_food(self.agents[i].cell)).flatten())
            .collect();
        for f in 0..self.food.len() {
            let loaders: Vec<usize> = (0..n).filter(|&i| targets[i] == Some(f)).collect();
            let power: u32 = loaders.iter().map(|&i| self.agents[i].level).sum();
            if !loaders.is_empty() && power >= self.food[f].level {
                let share = self.food[f].level as f64 / self.total_food_level as f64 / loaders.len() as f64;
                for &i in &loaders {
                    rewards[i] += share;
                }
                self.food[f].collected = true;
                collected += 1;
            }
        }

        let wanted: Vec<Option<Cell>> = (0..n)
            .map(|i| {
                let a = actions[i];
                if a == LOAD {
                    return None;
                }
                let here = self.agents[i].cell;
                let to = here.neighbor(a, g)?;
                let blocked = self.food_at(to).is_some() || self.agents.iter().any(|o| o.cell == to);
                (!blocked).then_some(to)
            })
            .collect();
        for i in 0..n {
            if let Some(to) = wanted[i] {
                let contested = (0..n).any(|j| j != i && wanted[j] == Some(to));
                if !contested {
                    self.agents[i].cell = to;
                }
            }
        }

        self.steps += 1;
        let all_collected = self.food.iter().all(|f| f.collected);
        self.done = all_collected || self.steps >= self.config.max_steps;
        Ok(StepResult {
            observations: (0..n).map(|i| self.observe(i)).collect(),
            rewards,
            done: self.done,
            info: StepInfo {
                food_collected: collected,
                ..StepInfo::default()
            },
        })
    }

    fn observe(&self, agent: usize) -> Observation {
        let g = self.config.grid_size;
        let me = self.agents[agent];
        let max_level = self.config.max_agent_level as f64;
        let max_food = self.max_food_level() as f64;
        let mut out = Vec::with_capacity(self.config.obs_len());
        encode_window(g, me.cell, self.config.vision, &mut out, |cell, ch| {
            if cell == me.cell {
                ch[0] = 1.0;
            }
            if let Some(o) = self
                .agents
                .iter()
                .enumerate()
                .find(|(j, o)| *j != agent && o.cell == cell)
            {
                ch[1] = o.1.level as f64 / max_level;
            }
            if let Some(f) = self.food_at(cell) {
                ch[2] = (f.level as f64 / max_food).min(1.0);
            }
        });
        out.push(normalized_coord(me.cell.row, g));
        out.push(normalized_coord(me.cell.col, g));
        out.push(me.level as f64 / max_level);
        Observation(out)
    }

    fn step_count(&self) -> usize {
        self.steps
    }

    fn is_done(&self) -> bool {
        self.done
    }

    fn succeeded(&self) -> bool {
        self.food.iter().all(|f| f.collected)
    }

    fn render(&self) -> String {
        let g = self.config.grid_size;
        let mut s = String::new();
        for r in 0..g {
            for c in 0..g {
                let cell = Cell::new(r, c);
                let ch = if let Some(i) = self.agents.iter().position(|a| a.cell == cell) {
                    (b'a' + (i % 26) as u8) as char
                } else if let Some(f) = self.food_at(cell) {
                    std::char::from_digit(f.level.min(9), 10).unwrap()
                } else {
                    '.'
                };
                s.push(ch);
            }
            s.push('\n');
        }
        s
    }
}
