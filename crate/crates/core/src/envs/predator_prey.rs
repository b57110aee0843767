use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{
    check_actions, encode_window, normalized_coord, Cell, EnvConfig, EnvError, Environment,
    Observation, StepInfo, StepResult,
};

/// Reward to every predator when all of them occupy the prey's cell.
pub const CAPTURE_REWARD: f64 = 5.0;
/// Charged per step to each predator not on the prey's cell.
pub const STEP_PENALTY: f64 = 0.05;

pub const STAY: usize = 4;

/// Predators must all stand on the prey's cell at the same time. Predators may
/// share cells; the prey stays put unless `prey_random_walk` is set.
#[derive(Clone, Debug)]
pub struct PredatorPrey {
    config: EnvConfig,
    predators: Vec<Cell>,
    prey: Cell,
    steps: usize,
    done: bool,
    captured: bool,
    rng: ChaCha8Rng,
}

impl PredatorPrey {
    pub fn new(config: EnvConfig, seed: u64) -> Self {
        let mut env = Self {
            predators: Vec::new(),
            prey: Cell::new(0, 0),
            steps: 0,
            done: false,
            captured: false,
            rng: ChaCha8Rng::seed_from_u64(seed),
            config,
        };
        env.reset(seed);
        env
    }

    /// Builds a state with explicit positions, for scripted scenarios.
    pub fn from_parts(config: EnvConfig, predators: Vec<Cell>, prey: Cell, seed: u64) -> Result<Self, EnvError> {
        config.validate()?;
        let g = config.grid_size;
        if predators.len() != config.n_agents {
            return Err(EnvError::Config(format!(
                "expected {} predators, got {}",
                config.n_agents,
                predators.len()
            )));
        }
        if predators.iter().chain([&prey]).any(|c| c.row >= g || c.col >= g) {
            return Err(EnvError::Config("position outside the grid".into()));
        }
        Ok(Self {
            config,
            predators,
            prey,
            steps: 0,
            done: false,
            captured: false,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    pub fn predators(&self) -> &[Cell] {
        &self.predators
    }

    pub fn prey(&self) -> Cell {
        self.prey
    }
}

impl Environment for PredatorPrey {
    fn config(&self) -> &EnvConfig {
        &self.config
    }

    fn reset(&mut self, seed: u64) -> Vec<Observation> {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
        let g = self.config.grid_size;
        let mut cells: Vec<usize> = (0..g * g).collect();
        let (picked, _) = cells.partial_shuffle(&mut self.rng, self.config.n_agents + 1);
        let to_cell = |i: usize| Cell::new(i / g, i % g);
        self.prey = to_cell(picked[0]);
        self.predators = picked[1..].iter().map(|&i| to_cell(i)).collect();
        self.steps = 0;
        self.done = false;
        self.captured = false;
        (0..self.config.n_agents).map(|i| self.observe(i)).collect()
    }

    fn step(&mut self, actions: &[usize]) -> Result<StepResult, EnvError> {
        check_actions(actions, self.config.n_agents, self.config.n_actions())?;
        let g = self.config.grid_size;
        for (p, &a) in self.predators.iter_mut().zip(actions) {
            if a != STAY {
                *p = p.step_clamped(a, g);
            }
        }
        self.steps += 1;
        let on_prey: Vec<bool> = self.predators.iter().map(|&p| p == self.prey).collect();
        let captured = on_prey.iter().all(|&b| b);
        let rewards = on_prey
            .iter()
            .map(|&on| {
                if captured {
                    CAPTURE_REWARD
                } else if on {
                    0.0
                } else {
                    -STEP_PENALTY
                }
            })
            .collect();
        if !captured && self.config.prey_random_walk {
            let dir = self.rng.gen_range(0..5);
            if dir != STAY {
                self.prey = self.prey.step_clamped(dir, g);
            }
        }
        self.captured = captured;
        self.done = captured || self.steps >= self.config.max_steps;
        Ok(StepResult {
            observations: (0..self.config.n_agents).map(|i| self.observe(i)).collect(),
            rewards,
            done: self.done,
            info: StepInfo {
                captured,
                ..StepInfo::default()
            },
        })
    }

    fn observe(&self, agent: usize) -> Observation {
        let g = self.config.grid_size;
        let me = self.predators[agent];
        let mut out = Vec::with_capacity(self.config.obs_len());
        encode_window(g, me, self.config.vision, &mut out, |cell, ch| {
            if cell == me {
                ch[0] = 1.0;
            }
            if self
                .predators
                .iter()
                .enumerate()
                .any(|(j, &p)| j != agent && p == cell)
            {
                ch[1] = 1.0;
            }
            if cell == self.prey {
                ch[2] = 1.0;
            }
        });
        out.push(normalized_coord(me.row, g));
        out.push(normalized_coord(me.col, g));
        Observation(out)
    }

    fn step_count(&self) -> usize {
        self.steps
    }

    fn is_done(&self) -> bool {
        self.done
    }

    fn succeeded(&self) -> bool {
        self.captured
    }

    fn render(&self) -> String {
        let g = self.config.grid_size;
        let mut s = String::new();
        for r in 0..g {
            for c in 0..g {
                let cell = Cell::new(r, c);
                let here: Vec<usize> = (0..self.predators.len())
                    .filter(|&i| self.predators[i] == cell)
                    .collect();
                let ch = match (here.len(), cell == self.prey) {
                    (0, true) => 'P',
                    (0, false) => '.',
                    (_, true) => '*',
                    (1, false) => std::char::from_digit((here[0] % 10) as u32, 10).unwrap(),
                    _ => '+',
                };
                s.push(ch);
            }
            s.push('\n');
        }
        s
    }
}
