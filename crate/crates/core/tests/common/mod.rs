#![allow(dead_code)]

use iec_core::envs::{Cell, Difficulty, EnvConfig, EnvKind, Environment, PredatorPrey};
use iec_core::ibm::IbmEntry;
use iec_core::nn::{Graph, ParamStore, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-5;
pub const FD_TOL: f64 = 1e-4;

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

/// Central-difference check of up to `per_tensor` coordinates of every tensor
/// in the parameter store reached through `store_of`. Returns the number of
/// coordinates compared.
pub fn fd_check<S>(
    state: &mut S,
    store_of: fn(&mut S) -> &mut ParamStore,
    per_tensor: usize,
    seed: u64,
    loss: impl Fn(&mut Graph, &S) -> Var,
) -> usize {
    store_of(state).zero_grads();
    let mut g = Graph::new();
    let l = loss(&mut g, state);
    g.backward(l).unwrap();
    store_of(state).accumulate_grads(&g);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut checked = 0;
    for t in 0..store_of(state).tensors().len() {
        let len = store_of(state).tensors()[t].len();
        let coords: Vec<usize> = if len <= per_tensor {
            (0..len).collect()
        } else {
            (0..per_tensor).map(|_| rng.gen_range(0..len)).collect()
        };
        for i in coords {
            let analytic = store_of(state).tensors()[t].grad()[i];
            let orig = store_of(state).tensors()[t].values()[i];
            let mut eval = |x: f64| {
                store_of(state).tensors_mut()[t].values_mut()[i] = x;
                let mut g = Graph::new();
                let l = loss(&mut g, state);
                g.scalar(l)
            };
            let up = eval(orig + FD_STEP);
            let down = eval(orig - FD_STEP);
            store_of(state).tensors_mut()[t].values_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * FD_STEP);
            let name = store_of(state).tensors()[t].name().to_string();
            assert!(
                rel_err(analytic, numeric) < FD_TOL,
                "{name}[{i}]: analytic {analytic} vs numeric {numeric}"
            );
            checked += 1;
        }
    }
    store_of(state).zero_grads();
    checked
}

/// A predator that sweeps the 5x5 grid in a fixed boustrophedon pattern
/// while its partner stays put. Each step it emits a fixed random linear code of
/// its current observation; the pair target is its next observation and reward.
pub struct SenderFixture {
    pub message_width: usize,
    pub obs_len: usize,
    code: Vec<Vec<f64>>,
}

impl SenderFixture {
    pub fn new(message_width: usize, seed: u64) -> Self {
        let config = EnvConfig::preset(EnvKind::PredatorPrey, Difficulty::Easy);
        let obs_len = config.obs_len();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let code = (0..message_width)
            .map(|_| (0..obs_len).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        Self {
            message_width,
            obs_len,
            code,
        }
    }

    fn policy(cell: Cell) -> usize {
        // right along even rows, left along odd rows, down at the row ends
        let right = cell.row.is_multiple_of(2);
        match (right, cell.col) {
            (true, 4) | (false, 0) => 1,
            (true, _) => 3,
            (false, _) => 2,
        }
    }

    pub fn message(&self, obs: &[f64]) -> Vec<f64> {
        self.code
            .iter()
            .map(|row| row.iter().zip(obs).map(|(a, b)| a * b).sum::<f64>())
            .collect()
    }

    pub fn entries(&self, episodes: usize, seed: u64) -> Vec<IbmEntry> {
        let config = EnvConfig::preset(EnvKind::PredatorPrey, Difficulty::Easy);
        let mut out = Vec::new();
        for ep in 0..episodes {
            let mut env = PredatorPrey::new(config.clone(), seed.wrapping_mul(1_000_003).wrapping_add(ep as u64));
            loop {
                let obs = env.observe(1);
                let action = Self::policy(env.predators()[1]);
                let r = env.step(&[4, action]).unwrap();
                let mut target = r.observations[1].as_slice().to_vec();
                target.push(r.rewards[1]);
                out.push(IbmEntry {
                    message: self.message(obs.as_slice()),
                    target,
                });
                if r.done {
                    break;
                }
            }
        }
        out
    }
}
