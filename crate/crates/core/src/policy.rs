//! Policy network over the dynamic action space.
//!
//! The state for an object sitting at label `l` is
//! `s = ReLU(W1 ReLU(W2 [e; emb(l)]))`, and the action distribution over
//! candidate labels plus STOP is `softmax(A s)` where the rows of `A` are the
//! candidates' embeddings. The same label table scores per-parent sigmoid
//! decisions during supervised pre-training.

use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::encoder::{init_uniform, Encoder, EncoderConfig, ObjectEmbedding};
use crate::error::ModelError;
use crate::hierarchy::{LabelHierarchy, LabelId};
use crate::numcore::{sigmoid, softmax, ParamId, ParamStore, Tape, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub feature_dim: usize,
    pub hidden_dim: usize,
    pub embedding_dim: usize,
    /// Label embedding size `C`; also the state size.
    pub label_dim: usize,
    /// Width of the first state projection.
    pub state_hidden: usize,
}

impl ModelConfig {
    /// Sizes used for text-style inputs: 50-dim embeddings, 500-wide projection.
    pub fn text(feature_dim: usize) -> Self {
        ModelConfig { feature_dim, hidden_dim: 50, embedding_dim: 50, label_dim: 50, state_hidden: 500 }
    }

    /// Sizes used for raw genomics features: everything 1000 wide.
    pub fn genomics(feature_dim: usize) -> Self {
        ModelConfig {
            feature_dim,
            hidden_dim: 1000,
            embedding_dim: 1000,
            label_dim: 1000,
            state_hidden: 1000,
        }
    }

    pub fn encoder(&self) -> EncoderConfig {
        EncoderConfig {
            feature_dim: self.feature_dim,
            hidden_dim: self.hidden_dim,
            embedding_dim: self.embedding_dim,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Action {
    Label(LabelId),
    Stop,
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Action::Label(l) => write!(f, "{l}"),
            Action::Stop => f.write_str("STOP"),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ActionDistribution {
    pub candidates: Vec<Action>,
    pub probs: Vec<f64>,
}

impl ActionDistribution {
    pub fn from_logits(candidates: Vec<Action>, logits: &[f64]) -> Result<Self, ModelError> {
        if candidates.is_empty() {
            return Err(ModelError::EmptyCandidates);
        }
        debug_assert_eq!(candidates.len(), logits.len());
        Ok(ActionDistribution { candidates, probs: softmax(logits) })
    }
}

/// Draws an index; returns it with the log of its probability.
pub fn sample_action<R: Rng + ?Sized>(dist: &ActionDistribution, rng: &mut R) -> (usize, f64) {
    let u: f64 = rng.random();
    let mut cum = 0.0;
    let mut last_positive = 0;
    for (i, &p) in dist.probs.iter().enumerate() {
        if p <= 0.0 {
            continue;
        }
        last_positive = i;
        cum += p;
        if u < cum {
            return (i, p.ln());
        }
    }
    // rounding left u above the running total
    (last_positive, dist.probs[last_positive].ln())
}

/// Index of the most probable action; the first one wins ties.
pub fn greedy_action(dist: &ActionDistribution) -> usize {
    let mut best = 0;
    for (i, &p) in dist.probs.iter().enumerate().skip(1) {
        if p > dist.probs[best] {
            best = i;
        }
    }
    best
}

/// All trainable pieces: encoder, label table with a root row, STOP
/// embedding, state projections and the flat head.
#[derive(Clone, Debug)]
pub struct PolicyNetwork {
    cfg: ModelConfig,
    num_labels: usize,
    pub encoder: Encoder,
    table: ParamId,
    stop: ParamId,
    w_in: ParamId,
    w_out: ParamId,
    flat: ParamId,
}

const TABLE: &str = "policy.labels";
const STOP: &str = "policy.stop";
const W_IN: &str = "policy.w2";
const W_OUT: &str = "policy.w1";
const FLAT: &str = "flat.w";

impl PolicyNetwork {
    pub fn init<R: Rng + ?Sized>(
        store: &mut ParamStore,
        cfg: ModelConfig,
        num_labels: usize,
        rng: &mut R,
    ) -> Result<Self, ModelError> {
        let encoder = Encoder::init(store, cfg.encoder(), rng)?;
        let (d, c, h) = (cfg.embedding_dim, cfg.label_dim, cfg.state_hidden);
        let table = store.add(TABLE, init_uniform(num_labels + 1, c, c, rng))?;
        let stop = store.add(STOP, init_uniform(1, c, c, rng))?;
        let w_in = store.add(W_IN, init_uniform(h, d + c, d + c, rng))?;
        let w_out = store.add(W_OUT, init_uniform(c, h, h, rng))?;
        let flat = store.add(FLAT, init_uniform(num_labels, d, d, rng))?;
        Ok(PolicyNetwork { cfg, num_labels, encoder, table, stop, w_in, w_out, flat })
    }

    pub fn attach(store: &ParamStore, cfg: ModelConfig, num_labels: usize) -> Result<Self, ModelError> {
        let encoder = Encoder::attach(store, cfg.encoder())?;
        let net = PolicyNetwork {
            cfg,
            num_labels,
            encoder,
            table: store.id(TABLE)?,
            stop: store.id(STOP)?,
            w_in: store.id(W_IN)?,
            w_out: store.id(W_OUT)?,
            flat: store.id(FLAT)?,
        };
        let (d, c, h) = (cfg.embedding_dim, cfg.label_dim, cfg.state_hidden);
        let expect = [
            (net.table, num_labels + 1, c),
            (net.stop, 1, c),
            (net.w_in, h, d + c),
            (net.w_out, c, h),
            (net.flat, num_labels, d),
        ];
        for (id, r, cc) in expect {
            let m = store.value(id);
            if (m.rows(), m.cols()) != (r, cc) {
                return Err(ModelError::Config(format!(
                    "parameter {} is {}x{}, expected {r}x{cc}",
                    store.name(id),
                    m.rows(),
                    m.cols()
                )));
            }
        }
        Ok(net)
    }

    pub fn config(&self) -> ModelConfig {
        self.cfg
    }

    pub fn num_labels(&self) -> usize {
        self.num_labels
    }

    pub fn stop_param(&self) -> ParamId {
        self.stop
    }

    pub fn table_param(&self) -> ParamId {
        self.table
    }

    /// Fresh STOP embedding, drawn like the initial one.
    pub fn reinit_stop<R: Rng + ?Sized>(&self, store: &mut ParamStore, rng: &mut R) -> Result<(), ModelError> {
        let c = self.cfg.label_dim;
        store.set_value(self.stop, init_uniform(1, c, c, rng))?;
        Ok(())
    }

    /// Row of the label table for `l`; the root maps to the last row.
    fn row_of(&self, l: LabelId) -> usize {
        debug_assert!(l.0 <= self.num_labels);
        l.0
    }

    pub fn state_on(&self, store: &ParamStore, tape: &mut Tape, e: Var, l: LabelId) -> Result<Var, ModelError> {
        let emb = tape.row(store, self.table, self.row_of(l))?;
        let x = tape.concat(&[e, emb]);
        let h = tape.affine(store, self.w_in, None, x)?;
        let h = tape.relu(h);
        let s = tape.affine(store, self.w_out, None, h)?;
        Ok(tape.relu(s))
    }

    /// Logits for `labels` followed by STOP when `with_stop`.
    pub fn action_logits_on(
        &self,
        store: &ParamStore,
        tape: &mut Tape,
        state: Var,
        labels: &[LabelId],
        with_stop: bool,
    ) -> Result<Var, ModelError> {
        if labels.is_empty() && !with_stop {
            return Err(ModelError::EmptyCandidates);
        }
        let rows: Vec<usize> = labels.iter().map(|&l| self.row_of(l)).collect();
        Ok(tape.score(store, self.table, &rows, with_stop.then_some(self.stop), state)?)
    }

    /// Per-parent sigmoid logits over `children`.
    pub fn local_logits_on(
        &self,
        store: &ParamStore,
        tape: &mut Tape,
        state: Var,
        children: &[LabelId],
    ) -> Result<Var, ModelError> {
        let rows: Vec<usize> = children.iter().map(|&l| self.row_of(l)).collect();
        Ok(tape.score(store, self.table, &rows, None, state)?)
    }

    pub fn flat_logits_on(&self, store: &ParamStore, tape: &mut Tape, e: Var) -> Result<Var, ModelError> {
        Ok(tape.affine(store, self.flat, None, e)?)
    }

    pub fn state(&self, store: &ParamStore, e: &ObjectEmbedding, l: LabelId) -> Result<Vec<f64>, ModelError> {
        let mut tape = Tape::new();
        let ev = tape.constant(e.0.clone());
        let s = self.state_on(store, &mut tape, ev, l)?;
        Ok(tape.value(s).to_vec())
    }

    /// `softmax(A s)` over `candidates`, which must list labels first and at most one trailing STOP.
    pub fn action_distribution(
        &self,
        store: &ParamStore,
        e: &ObjectEmbedding,
        current: LabelId,
        candidates: &[Action],
    ) -> Result<ActionDistribution, ModelError> {
        let (labels, with_stop) = split_candidates(candidates)?;
        let mut tape = Tape::new();
        let ev = tape.constant(e.0.clone());
        let s = self.state_on(store, &mut tape, ev, current)?;
        let z = self.action_logits_on(store, &mut tape, s, &labels, with_stop)?;
        ActionDistribution::from_logits(candidates.to_vec(), tape.value(z))
    }

    pub fn flat_probs(&self, store: &ParamStore, e: &ObjectEmbedding) -> Result<Vec<f64>, ModelError> {
        let mut tape = Tape::new();
        let ev = tape.constant(e.0.clone());
        let z = self.flat_logits_on(store, &mut tape, ev)?;
        Ok(tape.value(z).iter().map(|&v| sigmoid(v)).collect())
    }

    /// Local sigmoid probabilities for the children of `parent`.
    pub fn local_probs(
        &self,
        store: &ParamStore,
        hierarchy: &LabelHierarchy,
        e: &ObjectEmbedding,
        parent: LabelId,
    ) -> Result<Vec<(LabelId, f64)>, ModelError> {
        let children = hierarchy.children(parent)?;
        if children.is_empty() {
            return Ok(Vec::new());
        }
        let mut tape = Tape::new();
        let ev = tape.constant(e.0.clone());
        let s = self.state_on(store, &mut tape, ev, parent)?;
        let z = self.local_logits_on(store, &mut tape, s, children)?;
        Ok(children.iter().copied().zip(tape.value(z).iter().map(|&v| sigmoid(v))).collect())
    }
}

pub(crate) fn split_candidates(candidates: &[Action]) -> Result<(Vec<LabelId>, bool), ModelError> {
    if candidates.is_empty() {
        return Err(ModelError::EmptyCandidates);
    }
    let mut labels = Vec::with_capacity(candidates.len());
    let mut with_stop = false;
    for (i, a) in candidates.iter().enumerate() {
        match a {
            Action::Label(l) => {
                if with_stop || labels.contains(l) {
                    return Err(ModelError::IllegalAction(format!("candidate list order at {i}")));
                }
                labels.push(*l);
            }
            Action::Stop if !with_stop => with_stop = true,
            Action::Stop => return Err(ModelError::IllegalAction("duplicate STOP".into())),
        }
    }
    Ok((labels, with_stop))
}
