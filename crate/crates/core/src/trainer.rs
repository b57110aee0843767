//! Interleaved training: advantage actor-critic on the shared core, with the
//! per-agent belief modules retrained from their own buffers every
//! `ibm_interval` episodes.
//!
//! Each episode is unrolled on a single graph holding every agent, so the
//! policy gradient reaches the message network through the receivers' (frozen)
//! belief modules and recurrent states.

use std::fs::{self, File};
use std::io::{self, BufRead, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::comm::{argmax, sample_categorical, Ablation, AgentCore, CommConfig, CommError};
use crate::envs::{success_metric, Env, EnvConfig, EnvError, Environment, Observation};
use crate::ibm::{train_ibms, IbmBuffer, IbmConfig, IbmEntry, IbmError, IbmModel, IbmRoundStats};
use crate::nn::{Adam, Graph, Init, NnError, Var};
use crate::trajectory::StepRecord;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Comm(#[from] CommError),
    #[error(transparent)]
    Ibm(#[from] IbmError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("non-finite value in `{name}` after episode {episode}")]
    NonFinite { name: String, episode: usize },
    #[error("policy update on an empty buffer")]
    EmptyBuffer,
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    /// Episode count `E`.
    pub episodes: usize,
    /// Stop early once this many environment steps have been taken.
    pub max_env_steps: Option<usize>,
    /// Belief-module training interval `I`, in episodes.
    pub ibm_interval: usize,
    pub gamma: f64,
    pub learning_rate: f64,
    /// Minimum environment steps collected per policy update.
    pub batch_size: usize,
    pub entropy_coef: f64,
    pub value_coef: f64,
    pub grad_clip: f64,
    pub normalize_advantages: bool,
    pub hidden: usize,
    pub message_width: usize,
    pub ablation: Ablation,
    pub ibm: IbmConfig,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            episodes: 10_000,
            max_env_steps: None,
            ibm_interval: 50,
            gamma: 0.99,
            learning_rate: 1e-3,
            batch_size: 500,
            entropy_coef: 0.01,
            value_coef: 0.5,
            grad_clip: 5.0,
            normalize_advantages: false,
            hidden: 128,
            message_width: 128,
            ablation: Ablation::Full,
            ibm: IbmConfig::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let err = |m: &str| Err(TrainError::Config(m.into()));
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return err("gamma must lie strictly between 0 and 1");
        }
        if self.ibm_interval == 0 {
            return err("ibm_interval must be at least 1");
        }
        if self.batch_size == 0 || self.ibm.batch_size == 0 {
            return err("batch sizes must be positive");
        }
        if self.hidden == 0 || self.message_width == 0 || self.ibm.latent_dim == 0 {
            return err("network widths must be positive");
        }
        if self.learning_rate < 0.0 || self.ibm.learning_rate < 0.0 {
            return err("learning rates must be non-negative");
        }
        if self.ibm.capacity == 0 {
            return err("ibm capacity must be positive");
        }
        Ok(())
    }

    pub fn comm_config(&self, env: &EnvConfig) -> CommConfig {
        CommConfig {
            n_agents: env.n_agents,
            obs_len: env.obs_len(),
            n_actions: env.n_actions(),
            hidden: self.hidden,
            message_width: self.message_width,
            ablation: self.ablation,
        }
    }
}

/// Discounted returns by backward recursion and advantages `G_t - v_t`.
pub fn compute_returns(rewards: &[f64], gamma: f64, values: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let mut returns = vec![0.0; rewards.len()];
    let mut acc = 0.0;
    for t in (0..rewards.len()).rev() {
        acc = rewards[t] + gamma * acc;
        returns[t] = acc;
    }
    let adv = returns.iter().zip(values).map(|(g, v)| g - v).collect();
    (returns, adv)
}

/// How actions are chosen while unrolling an episode.
pub enum Actions<'a, R: Rng + ?Sized> {
    Sample(&'a mut R),
    Greedy,
    /// Replays a recorded joint action per step.
    Fixed(&'a [Vec<usize>]),
}

/// One unrolled episode: the graph, per-agent handles and the plain record.
pub struct Rollout {
    pub graph: Graph,
    /// `[agent][t]` log-probabilities over actions.
    pub log_probs: Vec<Vec<Var>>,
    /// `[agent][t]` value estimates.
    pub values: Vec<Vec<Var>>,
    /// `[t][agent]`.
    pub actions: Vec<Vec<usize>>,
    /// `[agent][t]`.
    pub rewards: Vec<Vec<f64>>,
    /// `[t][agent]` observations the step acted on.
    pub observations: Vec<Vec<Observation>>,
    /// `[t][agent]` messages broadcast at step `t`.
    pub messages: Vec<Vec<Vec<f64>>>,
    /// `[t][agent]` hidden states after step `t`.
    pub hiddens: Vec<Vec<Vec<f64>>>,
    pub team_return: f64,
    pub collisions: usize,
    pub succeeded: bool,
}

impl Rollout {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn value_estimates(&self, agent: usize) -> Vec<f64> {
        self.values[agent].iter().map(|&v| self.graph.scalar(v)).collect()
    }

    pub fn step_records(&self, episode: usize) -> Vec<StepRecord> {
        let mut out = Vec::new();
        for t in 0..self.len() {
            for (j, obs) in self.observations[t].iter().enumerate() {
                out.push(StepRecord {
                    episode,
                    step: t,
                    agent: j,
                    action: self.actions[t][j],
                    reward: self.rewards[j][t],
                    observation: obs.as_slice().to_vec(),
                    message: self.messages[t][j].clone(),
                });
            }
        }
        out
    }
}

/// Plays one episode from a freshly reset `env` with zeroed hidden states and
/// inboxes. Returns the rollout and, per receiving agent `j`, the pairs
/// `(c^k_t, (o^k_t+1, r^k_t+1))` for every other agent `k`.
pub fn run_episode<R: Rng + ?Sized>(
    env: &mut Env,
    core: &AgentCore,
    ibms: &[IbmModel],
    episode_seed: u64,
    mut actions: Actions<'_, R>,
) -> Result<(Rollout, Vec<Vec<IbmEntry>>), TrainError> {
    let cfg = core.config().clone();
    let n = cfg.n_agents;
    if ibms.len() != n {
        return Err(CommError::IbmCount {
            expected: n,
            found: ibms.len(),
        }
        .into());
    }
    let mut obs = env.reset(episode_seed);
    let mut g = Graph::new();
    let mut hidden: Vec<Var> = (0..n).map(|_| g.constant(vec![0.0; cfg.hidden])).collect();
    let zero_msg = g.constant(vec![0.0; cfg.message_width]);
    let mut inbox: Vec<Vec<Var>> = vec![vec![zero_msg; n - 1]; n];
    let mut r = Rollout {
        graph: Graph::new(),
        log_probs: vec![Vec::new(); n],
        values: vec![Vec::new(); n],
        actions: Vec::new(),
        rewards: vec![Vec::new(); n],
        observations: Vec::new(),
        messages: Vec::new(),
        hiddens: Vec::new(),
        team_return: 0.0,
        collisions: 0,
        succeeded: false,
    };
    let mut entries = vec![Vec::new(); n];
    let mut t = 0;
    loop {
        let mut joint = Vec::with_capacity(n);
        let mut sent = Vec::with_capacity(n);
        for j in 0..n {
            let o = g.constant(obs[j].as_slice().to_vec());
            let nodes = core.agent_forward(&mut g, &ibms[j], &inbox[j], o, hidden[j])?;
            let a = match &mut actions {
                Actions::Sample(rng) => {
                    let p: Vec<f64> = g.value(nodes.log_probs).iter().map(|l| l.exp()).collect();
                    sample_categorical(&p, *rng)
                }
                Actions::Greedy => argmax(g.value(nodes.log_probs)),
                Actions::Fixed(plan) => plan[t][j],
            };
            joint.push(a);
            hidden[j] = nodes.hidden;
            sent.push(nodes.message);
            r.log_probs[j].push(nodes.log_probs);
            r.values[j].push(nodes.value);
        }
        let step = env.step(&joint)?;
        for (j, msgs) in inbox.iter_mut().enumerate() {
            *msgs = (0..n).filter(|&k| k != j).map(|k| sent[k]).collect();
        }
        let sent_values: Vec<Vec<f64>> = sent.iter().map(|&m| g.value(m).to_vec()).collect();
        if cfg.ablation != Ablation::NoComm {
            for (j, e) in entries.iter_mut().enumerate() {
                for k in (0..n).filter(|&k| k != j) {
                    let mut target = step.observations[k].as_slice().to_vec();
                    target.push(step.rewards[k]);
                    e.push(IbmEntry {
                        message: sent_values[k].clone(),
                        target,
                    });
                }
            }
        }
        for j in 0..n {
            r.rewards[j].push(step.rewards[j]);
        }
        r.team_return += step.rewards.iter().sum::<f64>();
        r.collisions += step.info.collisions;
        r.hiddens.push(hidden.iter().map(|&h| g.value(h).to_vec()).collect());
        r.messages.push(sent_values);
        r.actions.push(joint);
        r.observations.push(std::mem::replace(&mut obs, step.observations));
        t += 1;
        if step.done {
            break;
        }
    }
    r.succeeded = env.succeeded();
    r.graph = g;
    Ok((r, entries))
}

/// Actor-critic loss on a rollout's graph, averaged with weight `scale`:
/// `sum_j,t [-A log pi(a) + value_coef (v - G)^2 - entropy_coef H(pi)] * scale`.
/// `advantages` and `returns` are `[agent][t]` constants.
pub fn episode_loss(
    rollout: &mut Rollout,
    advantages: &[Vec<f64>],
    returns: &[Vec<f64>],
    value_coef: f64,
    entropy_coef: f64,
    scale: f64,
) -> Result<Var, TrainError> {
    let g = &mut rollout.graph;
    let mut terms = Vec::new();
    for j in 0..rollout.log_probs.len() {
        for t in 0..rollout.log_probs[j].len() {
            let lp = rollout.log_probs[j][t];
            let chosen = g.pick(lp, rollout.actions[t][j])?;
            terms.push(g.scale(chosen, -advantages[j][t] * scale));
            let target = g.constant(vec![returns[j][t]]);
            let err = g.sub(rollout.values[j][t], target)?;
            let sq = g.square(err);
            terms.push(g.scale(sq, value_coef * scale));
            let p = g.exp(lp);
            let plogp = g.mul(p, lp)?;
            let neg_entropy = g.sum(plogp);
            terms.push(g.scale(neg_entropy, entropy_coef * scale));
        }
    }
    Ok(g.add_n(&terms)?)
}

/// Policy buffer `B`: rollouts waiting for the next update.
#[derive(Default)]
pub struct PolicyBuffer {
    rollouts: Vec<Rollout>,
    steps: usize,
}

impl PolicyBuffer {
    pub fn push(&mut self, r: Rollout) {
        self.steps += r.len();
        self.rollouts.push(r);
    }

    /// Environment steps held.
    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn len(&self) -> usize {
        self.rollouts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rollouts.is_empty()
    }

    pub fn clear(&mut self) {
        self.rollouts.clear();
        self.steps = 0;
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct UpdateStats {
    pub loss: f64,
    pub grad_norm: f64,
    pub agent_steps: usize,
}

/// One clipped Adam step on the actor-critic loss over every rollout in
/// `buffer`, which is left empty.
pub fn update_policy(
    core: &mut AgentCore,
    optimizer: &mut Adam,
    buffer: &mut PolicyBuffer,
    config: &TrainConfig,
) -> Result<UpdateStats, TrainError> {
    if buffer.is_empty() {
        return Err(TrainError::EmptyBuffer);
    }
    let n = core.config().n_agents;
    let mut returns = Vec::with_capacity(buffer.len());
    let mut advantages = Vec::with_capacity(buffer.len());
    for r in &buffer.rollouts {
        let (mut rs, mut adv) = (Vec::with_capacity(n), Vec::with_capacity(n));
        for j in 0..n {
            let (g, a) = compute_returns(&r.rewards[j], config.gamma, &r.value_estimates(j));
            rs.push(g);
            adv.push(a);
        }
        returns.push(rs);
        advantages.push(adv);
    }
    if config.normalize_advantages {
        let all: Vec<f64> = advantages.iter().flatten().flatten().copied().collect();
        let mean = all.iter().sum::<f64>() / all.len() as f64;
        let std = (all.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / all.len() as f64).sqrt();
        for a in advantages.iter_mut().flatten().flatten() {
            *a = (*a - mean) / (std + 1e-8);
        }
    }
    let agent_steps: usize = buffer.rollouts.iter().map(|r| r.len() * n).sum();
    let scale = 1.0 / agent_steps as f64;
    core.store_mut().zero_grads();
    let mut loss = 0.0;
    for (i, r) in buffer.rollouts.iter_mut().enumerate() {
        let l = episode_loss(r, &advantages[i], &returns[i], config.value_coef, config.entropy_coef, scale)?;
        r.graph.backward(l)?;
        loss += r.graph.scalar(l);
        core.store_mut().accumulate_grads(&r.graph);
    }
    let grad_norm = core.store_mut().clip_grad_norm(config.grad_clip);
    optimizer.step(core.store_mut())?;
    buffer.clear();
    Ok(UpdateStats {
        loss,
        grad_norm,
        agent_steps,
    })
}

/// One row of the per-run metrics file.
#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeMetrics {
    pub episode: usize,
    /// Cumulative environment steps including this episode.
    pub env_steps: usize,
    /// Team return divided by the number of agents.
    pub mean_return: f64,
    pub normalized_return: f64,
    /// Fraction of solved episodes among the last 100.
    pub success_rate: f64,
    /// Latest belief-module round, per agent; empty before the first round.
    pub elbo_recon_per_agent: Vec<f64>,
    pub elbo_kl_per_agent: Vec<f64>,
    pub collisions: usize,
}

pub const METRICS_HEADER: &str =
    "episode,env_steps,mean_return,normalized_return,success_rate,elbo_recon_per_agent,elbo_kl_per_agent,collisions";

fn join(v: &[f64]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(";")
}

impl EpisodeMetrics {
    pub fn to_csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{}",
            self.episode,
            self.env_steps,
            self.mean_return,
            self.normalized_return,
            self.success_rate,
            join(&self.elbo_recon_per_agent),
            join(&self.elbo_kl_per_agent),
            self.collisions
        )
    }
}

pub fn write_metrics_csv<W: Write>(mut w: W, rows: &[EpisodeMetrics]) -> io::Result<()> {
    writeln!(w, "{METRICS_HEADER}")?;
    for r in rows {
        writeln!(w, "{}", r.to_csv_row())?;
    }
    Ok(())
}

/// Parses a file written by [`write_metrics_csv`]. Errors carry the 1-based line.
pub fn read_metrics_csv<R: BufRead>(r: R) -> Result<Vec<EpisodeMetrics>, (usize, String)> {
    let mut rows = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let n = i + 1;
        let line = line.map_err(|e| (n, e.to_string()))?;
        if n == 1 {
            if line != METRICS_HEADER {
                return Err((n, format!("unexpected header `{line}`")));
            }
            continue;
        }
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 8 {
            return Err((n, format!("expected 8 fields, found {}", fields.len())));
        }
        let bad = |what: &str, v: &str| (n, format!("bad {what} `{v}`"));
        let int = |k: usize| fields[k].parse::<usize>().map_err(|_| bad("integer", fields[k]));
        let real = |k: usize| fields[k].parse::<f64>().map_err(|_| bad("number", fields[k]));
        let list = |k: usize| -> Result<Vec<f64>, (usize, String)> {
            if fields[k].is_empty() {
                return Ok(Vec::new());
            }
            fields[k].split(';').map(|v| v.parse().map_err(|_| bad("number", v))).collect()
        };
        rows.push(EpisodeMetrics {
            episode: int(0)?,
            env_steps: int(1)?,
            mean_return: real(2)?,
            normalized_return: real(3)?,
            success_rate: real(4)?,
            elbo_recon_per_agent: list(5)?,
            elbo_kl_per_agent: list(6)?,
            collisions: int(7)?,
        });
    }
    Ok(rows)
}

/// Counts of scheduled work done during a run.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ScheduleCounters {
    pub episodes: usize,
    pub env_steps: usize,
    pub policy_updates: usize,
    pub ibm_rounds: usize,
    /// Gradient passes per round, per agent that trained.
    pub ibm_passes: Vec<Vec<usize>>,
    pub checkpoints: usize,
}

pub struct TrainOutcome {
    pub core: AgentCore,
    pub ibms: Vec<IbmModel>,
    pub metrics: Vec<EpisodeMetrics>,
    /// `(episode, stats)` for each belief-module round.
    pub ibm_rounds: Vec<(usize, Vec<IbmRoundStats>)>,
    pub counters: ScheduleCounters,
}

#[derive(Clone, Debug, Default)]
pub struct TrainOptions {
    /// Directory receiving `ep{k}/core.bin` and `ep{k}/ibm{j}.bin` every
    /// `ibm_interval` episodes.
    pub checkpoint_dir: Option<PathBuf>,
}

/// Independent random streams derived from the run seed.
struct Streams {
    init: ChaCha8Rng,
    actions: ChaCha8Rng,
    episodes: ChaCha8Rng,
    ibm: ChaCha8Rng,
}

impl Streams {
    fn new(seed: u64) -> Self {
        let mut s = ChaCha8Rng::seed_from_u64(seed);
        let mut next = || ChaCha8Rng::seed_from_u64(s.gen());
        Self {
            init: next(),
            actions: next(),
            episodes: next(),
            ibm: next(),
        }
    }
}

/// Builds the shared core and one belief module per agent.
pub fn build_models(env: &EnvConfig, config: &TrainConfig) -> (AgentCore, Vec<IbmModel>) {
    let mut streams = Streams::new(config.seed);
    let comm = config.comm_config(env);
    let core = AgentCore::new(comm, Init::Glorot, &mut streams.init);
    let ibms = (0..env.n_agents)
        .map(|j| {
            IbmModel::new(
                j,
                config.message_width,
                env.obs_len() + 1,
                config.ibm.clone(),
                Init::Glorot,
                &mut streams.init,
            )
        })
        .collect();
    (core, ibms)
}

fn save_checkpoint(dir: &Path, episode: usize, core: &AgentCore, ibms: &[IbmModel]) -> Result<(), TrainError> {
    let d = dir.join(format!("ep{episode}"));
    fs::create_dir_all(&d)?;
    core.store().save(BufWriter::new(File::create(d.join("core.bin"))?))?;
    for m in ibms {
        m.store().save(BufWriter::new(File::create(d.join(format!("ibm{}.bin", m.owner())))?))?;
    }
    Ok(())
}

fn check_finite(core: &AgentCore, ibms: &[IbmModel], episode: usize) -> Result<(), TrainError> {
    let bad = core
        .store()
        .first_non_finite()
        .or_else(|| ibms.iter().find_map(|m| m.store().first_non_finite()));
    match bad {
        Some(name) => Err(TrainError::NonFinite {
            name: name.to_string(),
            episode,
        }),
        None => Ok(()),
    }
}

/// The full interleaved loop. Episode `k` (0-based) is followed by a
/// belief-module round when `(k + 1) % ibm_interval == 0`, so `E` episodes
/// give `floor(E / I)` rounds.
pub fn train(env_config: &EnvConfig, config: &TrainConfig, options: &TrainOptions) -> Result<TrainOutcome, TrainError> {
    config.validate()?;
    env_config.validate()?;
    let mut streams = Streams::new(config.seed);
    let (mut core, mut ibms) = build_models(env_config, config);
    let n = env_config.n_agents;
    let mut env = Env::new(env_config.clone(), streams.episodes.gen())?;
    let mut optimizer = Adam::new(config.learning_rate);
    let mut policy_buffer = PolicyBuffer::default();
    let mut ibm_buffers: Vec<IbmBuffer> = (0..n).map(|_| IbmBuffer::new(config.ibm.capacity)).collect();
    let mut counters = ScheduleCounters::default();
    let mut metrics = Vec::new();
    let mut rounds = Vec::new();
    let mut recent = std::collections::VecDeque::with_capacity(100);
    let (mut last_recon, mut last_kl) = (Vec::new(), Vec::new());

    for k in 0..config.episodes {
        if config.max_env_steps.is_some_and(|m| counters.env_steps >= m) {
            break;
        }
        let seed = streams.episodes.gen();
        let (rollout, entries) = run_episode(&mut env, &core, &ibms, seed, Actions::Sample(&mut streams.actions))?;
        counters.episodes += 1;
        counters.env_steps += rollout.len();
        for (buf, es) in ibm_buffers.iter_mut().zip(entries) {
            for e in es {
                buf.push(e);
            }
        }
        if recent.len() == 100 {
            recent.pop_front();
        }
        recent.push_back(rollout.succeeded);
        let row = EpisodeMetrics {
            episode: k,
            env_steps: counters.env_steps,
            mean_return: rollout.team_return / n as f64,
            normalized_return: success_metric(env_config, rollout.team_return)?,
            success_rate: recent.iter().filter(|&&s| s).count() as f64 / recent.len() as f64,
            elbo_recon_per_agent: last_recon.clone(),
            elbo_kl_per_agent: last_kl.clone(),
            collisions: rollout.collisions,
        };
        policy_buffer.push(rollout);
        if policy_buffer.steps() >= config.batch_size {
            update_policy(&mut core, &mut optimizer, &mut policy_buffer, config).map_err(|e| match e {
                TrainError::Nn(NnError::NonFiniteGrad { name }) => TrainError::NonFinite { name, episode: k },
                e => e,
            })?;
            counters.policy_updates += 1;
        }
        if (k + 1) % config.ibm_interval == 0 {
            let stats = if config.ablation == Ablation::NoComm {
                Vec::new()
            } else {
                train_ibms(&mut ibms, &ibm_buffers, &mut streams.ibm)?
            };
            for b in &mut ibm_buffers {
                b.clear();
            }
            counters.ibm_rounds += 1;
            counters.ibm_passes.push(stats.iter().map(|s| s.passes).collect());
            if !stats.is_empty() {
                last_recon = stats.iter().map(|s| s.reconstruction).collect();
                last_kl = stats.iter().map(|s| s.kl).collect();
            }
            rounds.push((k, stats));
            if let Some(dir) = &options.checkpoint_dir {
                save_checkpoint(dir, k + 1, &core, &ibms)?;
                counters.checkpoints += 1;
            }
        }
        check_finite(&core, &ibms, k)?;
        metrics.push(row);
    }
    Ok(TrainOutcome {
        core,
        ibms,
        metrics,
        ibm_rounds: rounds,
        counters,
    })
}

/// Greedy evaluation episodes; returns mean normalized return.
pub fn evaluate(
    env_config: &EnvConfig,
    core: &AgentCore,
    ibms: &[IbmModel],
    episodes: usize,
    seed: u64,
) -> Result<f64, TrainError> {
    let mut env = Env::new(env_config.clone(), seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut total = 0.0;
    for _ in 0..episodes {
        let (r, _) = run_episode::<ChaCha8Rng>(&mut env, core, ibms, rng.gen(), Actions::Greedy)?;
        total += success_metric(env_config, r.team_return)?;
    }
    Ok(total / episodes as f64)
}
