//! Per-agent belief modules: a small VAE from a received message to the
//! sender's next observation and reward.

use std::collections::VecDeque;
use std::io::{self, Write};

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nn::{gaussian_kl, reparameterize, Adam, GaussianParams, Graph, Init, Mlp, NnError, ParamStore, Var};

#[derive(Debug, Error)]
pub enum IbmError {
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("empty batch")]
    EmptyBatch,
    #[error("batch has {inputs} messages but {targets} targets")]
    BatchMismatch { inputs: usize, targets: usize },
    #[error("expected one noise vector per sample ({expected}), got {found}")]
    NoiseCount { expected: usize, found: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IbmConfig {
    pub latent_dim: usize,
    pub hidden: usize,
    /// Multiplier on the KL term of the loss.
    pub kl_weight: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub passes: usize,
    pub capacity: usize,
}

impl Default for IbmConfig {
    fn default() -> Self {
        Self {
            latent_dim: 16,
            hidden: 64,
            kl_weight: 0.01,
            learning_rate: 1e-3,
            batch_size: 500,
            passes: 10,
            capacity: 40_000,
        }
    }
}

/// Decoded `(next observation, next reward)` of one sender.
#[derive(Clone, Debug, PartialEq)]
pub struct BeliefPrediction {
    pub observation: Vec<f64>,
    pub reward: f64,
}

impl BeliefPrediction {
    pub fn from_flat(v: &[f64]) -> Self {
        let (obs, r) = v.split_at(v.len() - 1);
        Self {
            observation: obs.to_vec(),
            reward: r[0],
        }
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut v = self.observation.clone();
        v.push(self.reward);
        v
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct IbmBatch {
    pub messages: Vec<Vec<f64>>,
    /// Sender's next observation with its reward appended.
    pub targets: Vec<Vec<f64>>,
}

impl IbmBatch {
    pub fn len(&self) -> usize {
        self.messages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.messages.is_empty()
    }
}

/// Loss nodes of one `elbo_loss` call, each already averaged over the batch.
#[derive(Clone, Copy, Debug)]
pub struct ElboTerms {
    pub loss: Var,
    pub reconstruction: Var,
    pub kl: Var,
}

#[derive(Clone, Debug)]
pub struct IbmModel {
    owner: usize,
    config: IbmConfig,
    message_width: usize,
    target_width: usize,
    store: ParamStore,
    encoder: Mlp,
    decoder: Mlp,
    optimizer: Adam,
}

impl IbmModel {
    /// `target_width` is the observation length plus one for the reward.
    pub fn new<R: Rng + ?Sized>(
        owner: usize,
        message_width: usize,
        target_width: usize,
        config: IbmConfig,
        init: Init,
        rng: &mut R,
    ) -> Self {
        let mut store = ParamStore::new();
        let (m, h) = (config.latent_dim, config.hidden);
        let encoder = Mlp::new(&mut store, "ibm.encoder", &[message_width, h, 2 * m], init, rng);
        let decoder = Mlp::new(&mut store, "ibm.decoder", &[m, h, target_width], init, rng);
        Self {
            owner,
            optimizer: Adam::new(config.learning_rate),
            config,
            message_width,
            target_width,
            store,
            encoder,
            decoder,
        }
    }

    pub fn owner(&self) -> usize {
        self.owner
    }

    pub fn config(&self) -> &IbmConfig {
        &self.config
    }

    pub fn latent_dim(&self) -> usize {
        self.config.latent_dim
    }

    pub fn message_width(&self) -> usize {
        self.message_width
    }

    pub fn target_width(&self) -> usize {
        self.target_width
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    fn check_width(&self, context: &str, expected: usize, found: usize) -> Result<(), NnError> {
        if expected != found {
            return Err(NnError::Dimension {
                context: format!("ibm {} {context}", self.owner),
                expected,
                found,
            });
        }
        Ok(())
    }

    /// Encoder on a graph. `trainable = false` binds the weights as frozen so
    /// gradients reach the message but not the IBM.
    pub fn encode_on(&self, g: &mut Graph, message: Var, trainable: bool) -> Result<GaussianParams, NnError> {
        self.check_width("message", self.message_width, g.value(message).len())?;
        let out = if trainable {
            self.encoder.forward(g, &self.store, message)?
        } else {
            self.encoder.forward_frozen(g, &self.store, message)?
        };
        GaussianParams::from_concat(g, out)
    }

    pub fn decode_on(&self, g: &mut Graph, z: Var, trainable: bool) -> Result<Var, NnError> {
        self.check_width("latent", self.config.latent_dim, g.value(z).len())?;
        if trainable {
            self.decoder.forward(g, &self.store, z)
        } else {
            self.decoder.forward_frozen(g, &self.store, z)
        }
    }

    /// `decode(mean(encode(message)))` with frozen weights, returning the flat
    /// prediction node.
    pub fn predict_on(&self, g: &mut Graph, message: Var) -> Result<Var, NnError> {
        let q = self.encode_on(g, message, false)?;
        self.decode_on(g, q.mean, false)
    }

    /// Returns `(mean, log_variance)`.
    pub fn encode(&self, message: &[f64]) -> Result<(Vec<f64>, Vec<f64>), NnError> {
        let mut g = Graph::new();
        let x = g.constant(message.to_vec());
        let q = self.encode_on(&mut g, x, false)?;
        Ok((g.value(q.mean).to_vec(), g.value(q.log_variance).to_vec()))
    }

    pub fn decode(&self, z: &[f64]) -> Result<BeliefPrediction, NnError> {
        let mut g = Graph::new();
        let z = g.constant(z.to_vec());
        let out = self.decode_on(&mut g, z, false)?;
        Ok(BeliefPrediction::from_flat(g.value(out)))
    }

    /// Posterior-mean prediction of the sender's next observation and reward.
    pub fn predict_intent(&self, message: &[f64]) -> Result<BeliefPrediction, NnError> {
        let mut g = Graph::new();
        let x = g.constant(message.to_vec());
        let out = self.predict_on(&mut g, x)?;
        Ok(BeliefPrediction::from_flat(g.value(out)))
    }

    /// Batch mean of `MSE(decode(z), target) + kl_weight * KL(q || N(0, I))`
    /// with one reparameterised sample per datum drawn from `noise`.
    pub fn elbo_loss(&self, g: &mut Graph, batch: &IbmBatch, noise: &[Vec<f64>]) -> Result<ElboTerms, IbmError> {
        if batch.is_empty() {
            return Err(IbmError::EmptyBatch);
        }
        if batch.messages.len() != batch.targets.len() {
            return Err(IbmError::BatchMismatch {
                inputs: batch.messages.len(),
                targets: batch.targets.len(),
            });
        }
        if noise.len() != batch.len() {
            return Err(IbmError::NoiseCount {
                expected: batch.len(),
                found: noise.len(),
            });
        }
        let mut recon = Vec::with_capacity(batch.len());
        let mut kls = Vec::with_capacity(batch.len());
        for ((message, target), eps) in batch.messages.iter().zip(&batch.targets).zip(noise) {
            self.check_width("target", self.target_width, target.len())?;
            let x = g.constant(message.clone());
            let q = self.encode_on(g, x, true)?;
            let z = reparameterize(g, &q, eps)?;
            let out = self.decode_on(g, z, true)?;
            let t = g.constant(target.clone());
            let diff = g.sub(out, t)?;
            let sq = g.square(diff);
            recon.push(g.mean(sq));
            kls.push(gaussian_kl(g, &q));
        }
        let inv = 1.0 / batch.len() as f64;
        let r = g.add_n(&recon)?;
        let reconstruction = g.scale(r, inv);
        let k = g.add_n(&kls)?;
        let kl = g.scale(k, inv);
        let weighted = g.scale(kl, self.config.kl_weight);
        let loss = g.add(reconstruction, weighted)?;
        Ok(ElboTerms {
            loss,
            reconstruction,
            kl,
        })
    }

    /// One optimiser step on `batch`; returns `(reconstruction, kl)` before the step.
    pub fn train_step<R: Rng + ?Sized>(&mut self, batch: &IbmBatch, rng: &mut R) -> Result<(f64, f64), IbmError> {
        let m = self.config.latent_dim;
        let noise: Vec<Vec<f64>> = (0..batch.len())
            .map(|_| (0..m).map(|_| rng.sample(StandardNormal)).collect())
            .collect();
        let mut g = Graph::new();
        let terms = self.elbo_loss(&mut g, batch, &noise)?;
        g.backward(terms.loss)?;
        self.store.accumulate_grads(&g);
        self.optimizer.step(&mut self.store)?;
        Ok((g.scalar(terms.reconstruction), g.scalar(terms.kl)))
    }
}

/// One stored pairing of a sender's message with what the sender saw next.
#[derive(Clone, Debug, PartialEq)]
pub struct IbmEntry {
    pub message: Vec<f64>,
    pub target: Vec<f64>,
}

/// Bounded FIFO of training pairs for one receiving agent.
#[derive(Clone, Debug)]
pub struct IbmBuffer {
    capacity: usize,
    entries: VecDeque<IbmEntry>,
}

impl IbmBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "buffer capacity must be positive");
        Self {
            capacity,
            entries: VecDeque::new(),
        }
    }

    pub fn push(&mut self, entry: IbmEntry) {
        if self.entries.len() == self.capacity {
            self.entries.pop_front();
        }
        self.entries.push_back(entry);
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn clear(&mut self) {
        self.entries.clear();
    }

    pub fn iter(&self) -> impl Iterator<Item = &IbmEntry> {
        self.entries.iter()
    }

    /// Uniform draw with replacement.
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> IbmBatch {
        let mut batch = IbmBatch::default();
        for _ in 0..n {
            let e = &self.entries[rng.gen_range(0..self.entries.len())];
            batch.messages.push(e.message.clone());
            batch.targets.push(e.target.clone());
        }
        batch
    }
}

/// Loss components for one agent in one training round, averaged over passes.
#[derive(Clone, Debug, PartialEq)]
pub struct IbmRoundStats {
    pub agent: usize,
    pub passes: usize,
    /// Entries held by the agent's buffer when the round ran.
    pub buffer_len: usize,
    pub reconstruction: f64,
    pub kl: f64,
}

/// Trains each model on its own buffer for `config.passes` steps of
/// `config.batch_size` samples. Empty buffers are skipped with a warning.
pub fn train_ibms<R: Rng + ?Sized>(
    models: &mut [IbmModel],
    buffers: &[IbmBuffer],
    rng: &mut R,
) -> Result<Vec<IbmRoundStats>, IbmError> {
    assert_eq!(models.len(), buffers.len(), "one buffer per model");
    let mut stats = Vec::with_capacity(models.len());
    for (model, buffer) in models.iter_mut().zip(buffers) {
        if buffer.is_empty() {
            log::warn!("ibm {}: empty buffer, skipping round", model.owner());
            continue;
        }
        let (passes, batch_size) = (model.config.passes, model.config.batch_size);
        let (mut recon, mut kl) = (0.0, 0.0);
        for _ in 0..passes {
            let batch = buffer.sample(batch_size, rng);
            let (r, k) = model.train_step(&batch, rng)?;
            recon += r;
            kl += k;
        }
        let p = passes.max(1) as f64;
        stats.push(IbmRoundStats {
            agent: model.owner(),
            passes,
            buffer_len: buffer.len(),
            reconstruction: recon / p,
            kl: kl / p,
        });
    }
    Ok(stats)
}

/// `episode,agent,passes,reconstruction,kl` rows, one per agent per round;
/// `episode` is the episode after which the round ran.
pub fn write_round_csv<W: Write>(mut w: W, rounds: &[(usize, Vec<IbmRoundStats>)]) -> io::Result<()> {
    writeln!(w, "episode,agent,passes,reconstruction,kl")?;
    for (episode, stats) in rounds {
        for s in stats {
            writeln!(w, "{episode},{},{},{},{}", s.agent, s.passes, s.reconstruction, s.kl)?;
        }
    }
    Ok(())
}
