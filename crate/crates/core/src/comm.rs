//! The per-step agent pipeline: decode received messages with the agent's own
//! belief module, fold the predictions and the hidden state into an outgoing
//! message, advance the recurrent state with observation and message, and
//! read out a policy and a value.
//!
//! For agent `j` at step `t`, with inbox `c^k_t` from every other agent `k`:
//!
//! ```text
//! x^k      = IBM_j(c^k_t)                          (posterior-mean decode)
//! c^j_t+1  = C(sum_k P x^k + h_t) / (N - 1)
//! h_t+1    = RNN(E_o o_t + E_c c^j_t+1, h_t)
//! a        ~ softmax(pi(h_t+1)),   v = V(h_t+1)
//! ```
//!
//! `P`, `E_o` and `E_c` are learned linear maps to the hidden width; `C` is a
//! one-hidden-layer tanh network. Core parameters are shared by all agents.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::envs::Observation;
use crate::ibm::{BeliefPrediction, IbmModel};
use crate::nn::{log_softmax, Dense, Graph, Init, Mlp, NnError, ParamStore, RnnCell, Var};

#[derive(Debug, Error)]
pub enum CommError {
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("expected {expected} predictions (one per other agent), got {found}")]
    PredictionCount { expected: usize, found: usize },
    #[error("expected {expected} observations, got {found}")]
    ObservationCount { expected: usize, found: usize },
    #[error("expected {expected} belief modules, got {found}")]
    IbmCount { expected: usize, found: usize },
}

/// Which part of the pipeline is switched off.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    #[default]
    Full,
    /// No messages at all: `h_t+1 = RNN(E_o o_t, h_t)`.
    NoComm,
    /// Messages skip the belief modules: `c^j_t+1 = C(h_t) / (N - 1)` and the
    /// receiver feeds the mean raw inbound message through `E_c`.
    NoIbm,
    /// Messages leave out the hidden state: `c^j_t+1 = C(sum_k P x^k) / (N - 1)`.
    NoHidden,
}

impl Ablation {
    pub fn as_str(self) -> &'static str {
        match self {
            Ablation::Full => "full",
            Ablation::NoComm => "no_comm",
            Ablation::NoIbm => "no_ibm",
            Ablation::NoHidden => "no_hidden",
        }
    }
}

impl std::fmt::Display for Ablation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Ablation {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "full" | "none" => Ok(Ablation::Full),
            "no_comm" => Ok(Ablation::NoComm),
            "no_ibm" => Ok(Ablation::NoIbm),
            "no_hidden" => Ok(Ablation::NoHidden),
            other => Err(format!("unknown ablation `{other}`")),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CommConfig {
    pub n_agents: usize,
    pub obs_len: usize,
    pub n_actions: usize,
    pub hidden: usize,
    pub message_width: usize,
    pub ablation: Ablation,
}

impl CommConfig {
    pub fn prediction_width(&self) -> usize {
        self.obs_len + 1
    }
}

/// Action selection rule.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Selection {
    Sample,
    Greedy,
}

/// Graph handles produced by one agent's step.
#[derive(Clone, Copy, Debug)]
pub struct StepNodes {
    pub message: Var,
    pub hidden: Var,
    pub log_probs: Var,
    pub value: Var,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ActionOutput {
    pub logits: Vec<f64>,
    pub probs: Vec<f64>,
    pub value: f64,
}

/// Parameters shared by every agent.
#[derive(Clone, Debug)]
pub struct AgentCore {
    config: CommConfig,
    store: ParamStore,
    obs_embed: Dense,
    prediction_proj: Dense,
    message_net: Mlp,
    message_embed: Dense,
    rnn: RnnCell,
    policy: Dense,
    value: Dense,
}

impl AgentCore {
    pub fn new<R: Rng + ?Sized>(config: CommConfig, init: Init, rng: &mut R) -> Self {
        let mut store = ParamStore::new();
        let h = config.hidden;
        let obs_embed = Dense::new(&mut store, "core.obs_embed", config.obs_len, h, init, rng);
        let prediction_proj = Dense::new(&mut store, "core.prediction_proj", config.prediction_width(), h, init, rng);
        let message_net = Mlp::new(&mut store, "core.message", &[h, h, config.message_width], init, rng);
        let message_embed = Dense::new(&mut store, "core.message_embed", config.message_width, h, init, rng);
        let rnn = RnnCell::new(&mut store, "core.rnn", h, h, init, rng);
        let policy = Dense::new(&mut store, "core.policy", h, config.n_actions, init, rng);
        let value = Dense::new(&mut store, "core.value", h, 1, init, rng);
        Self {
            config,
            store,
            obs_embed,
            prediction_proj,
            message_net,
            message_embed,
            rnn,
            policy,
            value,
        }
    }

    pub fn config(&self) -> &CommConfig {
        &self.config
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    fn others(&self) -> usize {
        self.config.n_agents - 1
    }

    /// `C(sum_k P x^k + h) / (N - 1)` with the terms the ablation keeps.
    pub fn generate_message_on(&self, g: &mut Graph, predictions: &[Var], hidden: Var) -> Result<Var, CommError> {
        let ablation = self.config.ablation;
        if ablation == Ablation::NoComm {
            return Ok(g.constant(vec![0.0; self.config.message_width]));
        }
        let mut terms = Vec::with_capacity(2);
        if ablation != Ablation::NoIbm {
            if predictions.len() != self.others() {
                return Err(CommError::PredictionCount {
                    expected: self.others(),
                    found: predictions.len(),
                });
            }
            let projected = predictions
                .iter()
                .map(|&p| self.prediction_proj.forward(g, &self.store, p))
                .collect::<Result<Vec<_>, _>>()?;
            terms.push(g.add_n(&projected)?);
        }
        if ablation != Ablation::NoHidden {
            terms.push(hidden);
        }
        let pre = if terms.len() == 1 { terms[0] } else { g.add(terms[0], terms[1])? };
        let out = self.message_net.forward(g, &self.store, pre)?;
        Ok(g.scale(out, 1.0 / self.others() as f64))
    }

    /// `RNN(E_o o + E_c c, h)`; `message` is ignored without communication.
    pub fn advance_hidden_on(&self, g: &mut Graph, observation: Var, message: Var, hidden: Var) -> Result<Var, CommError> {
        let eo = self.obs_embed.forward(g, &self.store, observation)?;
        let input = if self.config.ablation == Ablation::NoComm {
            eo
        } else {
            let ec = self.message_embed.forward(g, &self.store, message)?;
            g.add(eo, ec)?
        };
        Ok(self.rnn.step(g, &self.store, input, hidden)?)
    }

    /// Returns `(log-probabilities, value)`.
    pub fn act_on(&self, g: &mut Graph, hidden: Var) -> Result<(Var, Var), CommError> {
        let logits = self.policy.forward(g, &self.store, hidden)?;
        let log_probs = g.log_softmax(logits);
        let value = self.value.forward(g, &self.store, hidden)?;
        Ok((log_probs, value))
    }

    /// One agent's full step on a graph. Only the agent's own belief module,
    /// inbox, observation and hidden state are inputs.
    pub fn agent_forward(
        &self,
        g: &mut Graph,
        ibm: &IbmModel,
        inbox: &[Var],
        observation: Var,
        hidden: Var,
    ) -> Result<StepNodes, CommError> {
        if inbox.len() != self.others() {
            return Err(CommError::PredictionCount {
                expected: self.others(),
                found: inbox.len(),
            });
        }
        let (message, rnn_message) = match self.config.ablation {
            Ablation::NoComm => {
                let m = self.generate_message_on(g, &[], hidden)?;
                (m, m)
            }
            Ablation::NoIbm => {
                let m = self.generate_message_on(g, &[], hidden)?;
                let sum = g.add_n(inbox)?;
                let mean = g.scale(sum, 1.0 / self.others() as f64);
                (m, mean)
            }
            Ablation::Full | Ablation::NoHidden => {
                let predictions = inbox
                    .iter()
                    .map(|&c| ibm.predict_on(g, c))
                    .collect::<Result<Vec<_>, _>>()?;
                let m = self.generate_message_on(g, &predictions, hidden)?;
                (m, m)
            }
        };
        let hidden = self.advance_hidden_on(g, observation, rnn_message, hidden)?;
        let (log_probs, value) = self.act_on(g, hidden)?;
        Ok(StepNodes {
            message,
            hidden,
            log_probs,
            value,
        })
    }

    pub fn generate_message(&self, predictions: &[BeliefPrediction], hidden: &[f64]) -> Result<Vec<f64>, CommError> {
        let mut g = Graph::new();
        let preds: Vec<Var> = predictions.iter().map(|p| g.constant(p.to_flat())).collect();
        let h = g.constant(hidden.to_vec());
        let m = self.generate_message_on(&mut g, &preds, h)?;
        Ok(g.value(m).to_vec())
    }

    /// Advances `runtime`'s hidden state and returns the new value.
    pub fn advance_hidden(
        &self,
        runtime: &mut AgentRuntime,
        observation: &Observation,
        outbound: &[f64],
    ) -> Result<Vec<f64>, CommError> {
        let mut g = Graph::new();
        let o = g.constant(observation.as_slice().to_vec());
        let c = g.constant(outbound.to_vec());
        let h = g.constant(runtime.hidden.clone());
        let h = self.advance_hidden_on(&mut g, o, c, h)?;
        runtime.hidden = g.value(h).to_vec();
        Ok(runtime.hidden.clone())
    }

    pub fn act(&self, hidden: &[f64]) -> Result<ActionOutput, CommError> {
        let mut g = Graph::new();
        let h = g.constant(hidden.to_vec());
        let logits = self.policy.forward(&mut g, &self.store, h)?;
        let value = self.value.forward(&mut g, &self.store, h)?;
        let logits = g.value(logits).to_vec();
        let probs = log_softmax(&logits).into_iter().map(f64::exp).collect();
        Ok(ActionOutput {
            logits,
            probs,
            value: g.scalar(value),
        })
    }
}

/// Per-agent execution state.
#[derive(Clone, Debug, PartialEq)]
pub struct AgentRuntime {
    pub id: usize,
    pub hidden: Vec<f64>,
    pub outbound: Vec<f64>,
    /// Messages from every other agent in increasing id order.
    pub inbox: Vec<Vec<f64>>,
}

impl AgentRuntime {
    pub fn new(id: usize, config: &CommConfig) -> Self {
        Self {
            id,
            hidden: vec![0.0; config.hidden],
            outbound: vec![0.0; config.message_width],
            inbox: vec![vec![0.0; config.message_width]; config.n_agents - 1],
        }
    }

    pub fn reset(&mut self) {
        self.hidden.iter_mut().for_each(|v| *v = 0.0);
        self.outbound.iter_mut().for_each(|v| *v = 0.0);
        for m in &mut self.inbox {
            m.iter_mut().for_each(|v| *v = 0.0);
        }
    }
}

pub fn runtimes(config: &CommConfig) -> Vec<AgentRuntime> {
    (0..config.n_agents).map(|i| AgentRuntime::new(i, config)).collect()
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Inverse-CDF draw from `probs`.
pub fn sample_categorical<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

/// Agent `j`'s decision from its own state only. Updates the runtime's hidden
/// state and outbound message; returns the chosen action.
pub fn agent_decide<R: Rng + ?Sized>(
    core: &AgentCore,
    runtime: &mut AgentRuntime,
    ibm: &IbmModel,
    observation: &Observation,
    selection: Selection,
    rng: &mut R,
) -> Result<usize, CommError> {
    let mut g = Graph::new();
    let inbox: Vec<Var> = runtime.inbox.iter().map(|m| g.constant(m.clone())).collect();
    let o = g.constant(observation.as_slice().to_vec());
    let h = g.constant(runtime.hidden.clone());
    let nodes = core.agent_forward(&mut g, ibm, &inbox, o, h)?;
    runtime.hidden = g.value(nodes.hidden).to_vec();
    runtime.outbound = g.value(nodes.message).to_vec();
    let log_probs = g.value(nodes.log_probs);
    Ok(match selection {
        Selection::Greedy => argmax(log_probs),
        Selection::Sample => {
            let probs: Vec<f64> = log_probs.iter().map(|l| l.exp()).collect();
            sample_categorical(&probs, rng)
        }
    })
}

/// Copies every agent's outbound message into the others' inboxes.
pub fn deliver(runtimes: &mut [AgentRuntime]) {
    let outbound: Vec<Vec<f64>> = runtimes.iter().map(|r| r.outbound.clone()).collect();
    for r in runtimes.iter_mut() {
        let id = r.id;
        for (slot, (k, m)) in r.inbox.iter_mut().zip(outbound.iter().enumerate().filter(|(k, _)| *k != id)) {
            debug_assert_ne!(k, id);
            slot.clone_from(m);
        }
    }
}

/// All agents act simultaneously on their inboxes, then broadcast. Returns
/// the actions and the messages sent this step.
pub fn agent_step<R: Rng + ?Sized>(
    core: &AgentCore,
    runtimes: &mut [AgentRuntime],
    ibms: &[IbmModel],
    observations: &[Observation],
    selection: Selection,
    rng: &mut R,
) -> Result<(Vec<usize>, Vec<Vec<f64>>), CommError> {
    let n = core.config.n_agents;
    if observations.len() != n {
        return Err(CommError::ObservationCount {
            expected: n,
            found: observations.len(),
        });
    }
    if ibms.len() != n {
        return Err(CommError::IbmCount {
            expected: n,
            found: ibms.len(),
        });
    }
    let mut actions = Vec::with_capacity(n);
    for j in 0..n {
        actions.push(agent_decide(core, &mut runtimes[j], &ibms[j], &observations[j], selection, rng)?);
    }
    deliver(runtimes);
    Ok((actions, runtimes.iter().map(|r| r.outbound.clone()).collect()))
}
