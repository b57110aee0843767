//! One-way straight roads crossing on a square grid.
//!
//! With `roads_per_axis = k` there are `k` horizontal and `k` vertical roads at
//! offsets `(i + 1) * grid / (k + 1)`. Even-indexed horizontal roads run left to
//! right and odd ones right to left; even vertical roads run top to bottom and
//! odd ones bottom to top. The easy preset (`k = 1`, 6x6) is two roads crossing
//! at one cell. The multi-junction layouts for larger presets are a
//! reconstruction: only agent counts, grid sizes and step limits are fixed.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{
    check_actions, encode_window, normalized_coord, Cell, EnvConfig, EnvError, Environment,
    Observation, StepInfo, StepResult,
};

/// Charged to every car sharing a cell after a move.
pub const COLLISION_PENALTY: f64 = 10.0;
/// Per-step charge is `TIME_PENALTY * tau`, `tau` = steps since the car entered.
pub const TIME_PENALTY: f64 = 0.01;

pub const GAS: usize = 0;
pub const BRAKE: usize = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CarStatus {
    Waiting,
    Active { route: usize, progress: usize, age: usize },
    Exited,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Car {
    pub status: CarStatus,
}

#[derive(Clone, Debug)]
pub struct TrafficJunction {
    config: EnvConfig,
    routes: Vec<Vec<Cell>>,
    road: Vec<bool>,
    cars: Vec<Car>,
    steps: usize,
    done: bool,
    collisions: usize,
    rng: ChaCha8Rng,
}

pub(crate) fn build_routes(grid: usize, k: usize) -> Vec<Vec<Cell>> {
    let offsets: Vec<usize> = (0..k).map(|i| (i + 1) * grid / (k + 1)).collect();
    let mut routes = Vec::with_capacity(2 * k);
    for (i, &row) in offsets.iter().enumerate() {
        let mut r: Vec<Cell> = (0..grid).map(|c| Cell::new(row, c)).collect();
        if i % 2 == 1 {
            r.reverse();
        }
        routes.push(r);
    }
    for (i, &col) in offsets.iter().enumerate() {
        let mut r: Vec<Cell> = (0..grid).map(|row| Cell::new(row, col)).collect();
        if i % 2 == 1 {
            r.reverse();
        }
        routes.push(r);
    }
    routes
}

impl TrafficJunction {
    pub fn new(config: EnvConfig, seed: u64) -> Self {
        let g = config.grid_size;
        let routes = build_routes(g, config.roads_per_axis);
        let mut road = vec![false; g * g];
        for c in routes.iter().flatten() {
            road[c.row * g + c.col] = true;
        }
        let mut env = Self {
            cars: vec![Car { status: CarStatus::Waiting }; config.n_agents],
            routes,
            road,
            steps: 0,
            done: false,
            collisions: 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
            config,
        };
        env.reset(seed);
        env
    }

    /// Places cars explicitly; `None` leaves a car waiting to enter.
    pub fn from_parts(
        config: EnvConfig,
        placements: Vec<Option<(usize, usize)>>,
        seed: u64,
    ) -> Result<Self, EnvError> {
        config.validate()?;
        if placements.len() != config.n_agents {
            return Err(EnvError::Config(format!(
                "expected {} cars, got {}",
                config.n_agents,
                placements.len()
            )));
        }
        let mut env = Self::new(config, seed);
        for (car, p) in env.cars.iter_mut().zip(placements) {
            car.status = match p {
                None => CarStatus::Waiting,
                Some((route, progress)) => {
                    if route >= env.routes.len() || progress >= env.routes[route].len() {
                        return Err(EnvError::Config(format!("no cell {progress} on route {route}")));
                    }
                    CarStatus::Active { route, progress, age: 0 }
                }
            };
        }
        Ok(env)
    }

    pub fn routes(&self) -> &[Vec<Cell>] {
        &self.routes
    }

    pub fn cars(&self) -> &[Car] {
        &self.cars
    }

    pub fn car_cell(&self, i: usize) -> Option<Cell> {
        match self.cars[i].status {
            CarStatus::Active { route, progress, .. } => Some(self.routes[route][progress]),
            _ => None,
        }
    }

    /// Total colliding pairs so far this episode.
    pub fn total_collisions(&self) -> usize {
        self.collisions
    }

    fn is_road(&self, c: Cell) -> bool {
        self.road[c.row * self.config.grid_size + c.col]
    }

    fn spawn(&mut self) {
        for route in 0..self.routes.len() {
            let entry = self.routes[route][0];
            let occupied = (0..self.cars.len()).any(|i| self.car_cell(i) == Some(entry));
            // draw unconditionally so the random stream does not depend on occupancy
            let arrives = self.rng.gen_bool(self.config.arrival_prob);
            if !arrives || occupied {
                continue;
            }
            if let Some(car) = self.cars.iter_mut().find(|c| c.status == CarStatus::Waiting) {
                car.status = CarStatus::Active {
                    route,
                    progress: 0,
                    age: 0,
                };
            }
        }
    }

    /// Counts car pairs that share a cell, grouping by cell.
    fn count_collisions(&self) -> (usize, Vec<bool>) {
        let g = self.config.grid_size;
        let mut per_cell = vec![0usize; g * g];
        for i in 0..self.cars.len() {
            if let Some(c) = self.car_cell(i) {
                per_cell[c.row * g + c.col] += 1;
            }
        }
        let pairs = per_cell.iter().map(|&k| k * k.saturating_sub(1) / 2).sum();
        let colliding = (0..self.cars.len())
            .map(|i| {
                self.car_cell(i)
                    .is_some_and(|c| per_cell[c.row * g + c.col] > 1)
            })
            .collect();
        (pairs, colliding)
    }
}

impl Environment for TrafficJunction {
    fn config(&self) -> &EnvConfig {
        &self.config
    }

    fn reset(&mut self, seed: u64) -> Vec<Observation> {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
        for c in &mut self.cars {
            c.status = CarStatus::Waiting;
        }
        self.steps = 0;
        self.done = false;
        self.collisions = 0;
        self.spawn();
        (0..self.config.n_agents).map(|i| self.observe(i)).collect()
    }

    /// Actions of cars that are not on the road are ignored.
    fn step(&mut self, actions: &[usize]) -> Result<StepResult, EnvError> {
        check_actions(actions, self.config.n_agents, self.config.n_actions())?;
        let mut rewards = vec![0.0; self.cars.len()];
        for (i, car) in self.cars.iter_mut().enumerate() {
            if let CarStatus::Active { route, progress, age } = car.status {
                let age = age + 1;
                rewards[i] -= TIME_PENALTY * age as f64;
                let progress = if actions[i] == GAS { progress + 1 } else { progress };
                car.status = if progress >= self.routes[route].len() {
                    CarStatus::Exited
                } else {
                    CarStatus::Active { route, progress, age }
                };
            }
        }
        let (pairs, colliding) = self.count_collisions();
        for (r, hit) in rewards.iter_mut().zip(&colliding) {
            if *hit {
                *r -= COLLISION_PENALTY;
            }
        }
        self.collisions += pairs;
        self.steps += 1;
        self.spawn();
        let all_exited = self.cars.iter().all(|c| c.status == CarStatus::Exited);
        self.done = all_exited || self.steps >= self.config.max_steps;
        Ok(StepResult {
            observations: (0..self.config.n_agents).map(|i| self.observe(i)).collect(),
            rewards,
            done: self.done,
            info: StepInfo {
                collisions: pairs,
                ..StepInfo::default()
            },
        })
    }

    /// Cars that are waiting or have exited observe all zeros.
    fn observe(&self, agent: usize) -> Observation {
        let g = self.config.grid_size;
        let Some(me) = self.car_cell(agent) else {
            return Observation(vec![0.0; self.config.obs_len()]);
        };
        let mut out = Vec::with_capacity(self.config.obs_len());
        encode_window(g, me, self.config.vision, &mut out, |cell, ch| {
            if cell == me {
                ch[0] = 1.0;
            }
            if (0..self.cars.len()).any(|j| j != agent && self.car_cell(j) == Some(cell)) {
                ch[1] = 1.0;
            }
            if self.is_road(cell) {
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

    /// No collisions during the episode.
    fn succeeded(&self) -> bool {
        self.done && self.collisions == 0
    }

    fn render(&self) -> String {
        let g = self.config.grid_size;
        let mut s = String::new();
        for r in 0..g {
            for c in 0..g {
                let cell = Cell::new(r, c);
                let here: Vec<usize> = (0..self.cars.len())
                    .filter(|&i| self.car_cell(i) == Some(cell))
                    .collect();
                s.push(match here.len() {
                    0 if self.is_road(cell) => '=',
                    0 => ' ',
                    1 => std::char::from_digit((here[0] % 36) as u32, 36).unwrap(),
                    _ => 'X',
                });
            }
            s.push('\n');
        }
        s
    }
}
