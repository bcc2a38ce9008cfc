//! Losses, training loops for every ablation mode, decoding and evaluation.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{fill_missing, Dataset, Example, Split};
use crate::encoder::{ObjectEmbedding, ObjectFeatures};
use crate::env::{returns, rollout, run_episode, self_critical_rewards, RolloutMode};
use crate::error::ModelError;
use crate::hierarchy::{LabelHierarchy, LabelId, LabelSet};
use crate::metrics::{flat_decode, supported_labels, EvalReport, PredictionRecord};
use crate::numcore::{AdamConfig, ParamStore, Tape, Var};
use crate::policy::{ModelConfig, PolicyNetwork};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    FlatOnly,
    SlNoflat,
    Sl,
    RlNosl,
    RlNoflat,
    RlFull,
}

impl Mode {
    pub const ALL: [Mode; 6] = [Mode::FlatOnly, Mode::SlNoflat, Mode::Sl, Mode::RlNosl, Mode::RlNoflat, Mode::RlFull];

    pub fn is_rl(self) -> bool {
        matches!(self, Mode::RlNosl | Mode::RlNoflat | Mode::RlFull)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::FlatOnly => "flat_only",
            Mode::SlNoflat => "sl_noflat",
            Mode::Sl => "sl",
            Mode::RlNosl => "rl_nosl",
            Mode::RlNoflat => "rl_noflat",
            Mode::RlFull => "rl_full",
        }
    }

    /// How the finished model turns an object into labels.
    pub fn decoder(self) -> Decoder {
        match self {
            Mode::FlatOnly => Decoder::Flat,
            Mode::SlNoflat | Mode::Sl => Decoder::TopDown,
            _ => Decoder::Policy,
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Mode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| ModelError::Config(format!("unknown mode {s:?}")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decoder {
    /// Threshold the flat head.
    Flat,
    /// Threshold local per-parent probabilities level by level from the root.
    TopDown,
    /// Greedy policy rollout.
    Policy,
}

impl Decoder {
    fn as_str(self) -> &'static str {
        match self {
            Decoder::Flat => "flat",
            Decoder::TopDown => "top_down",
            Decoder::Policy => "policy",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub mode: Mode,
    /// Mixing ratio between flat and local losses.
    pub lambda: f64,
    /// Weight of the supervised loss during RL.
    pub alpha: f64,
    pub gamma: f64,
    pub lr: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    /// Supervised epochs.
    pub epochs: usize,
    /// Policy-gradient epochs, RL modes only.
    pub rl_epochs: usize,
    /// Defaults to twice the largest training gold set.
    pub max_steps: Option<usize>,
    pub seed: u64,
    pub threshold: f64,
    pub validation_fraction: f64,
    pub workers: usize,
    pub hidden_dim: usize,
    pub embedding_dim: usize,
    pub label_dim: usize,
    pub state_hidden: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            mode: Mode::RlFull,
            lambda: 0.5,
            alpha: 1.0,
            gamma: 1.0,
            lr: 1e-3,
            weight_decay: 1e-6,
            batch_size: 32,
            epochs: 30,
            rl_epochs: 20,
            max_steps: None,
            seed: 1,
            threshold: 0.5,
            validation_fraction: 0.1,
            workers: 1,
            hidden_dim: 50,
            embedding_dim: 50,
            label_dim: 50,
            state_hidden: 500,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: &str| Err(ModelError::Config(m.to_string()));
        if !(0.0..=1.0).contains(&self.lambda) {
            return bad("lambda must lie in [0, 1]");
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return bad("alpha must be non-negative");
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return bad("gamma must lie in [0, 1]");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) || !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad("lr must be positive and weight_decay non-negative");
        }
        if self.batch_size == 0 || self.workers == 0 {
            return bad("batch_size and workers must be at least 1");
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return bad("threshold must lie in (0, 1)");
        }
        if !(self.validation_fraction >= 0.0 && self.validation_fraction < 1.0) {
            return bad("validation_fraction must lie in [0, 1)");
        }
        if [self.hidden_dim, self.embedding_dim, self.label_dim, self.state_hidden].contains(&0) {
            return bad("layer sizes must be positive");
        }
        Ok(())
    }

    pub fn model_config(&self, feature_dim: usize) -> ModelConfig {
        ModelConfig {
            feature_dim,
            hidden_dim: self.hidden_dim,
            embedding_dim: self.embedding_dim,
            label_dim: self.label_dim,
            state_hidden: self.state_hidden,
        }
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig { lr: self.lr, weight_decay: self.weight_decay, ..AdamConfig::default() }
    }

    pub fn resolved_max_steps(&self, data: &Dataset) -> usize {
        self.max_steps.unwrap_or(2 * data.max_gold_len()).max(1)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    Supervised,
    Reinforce,
}

/// Coefficients of `O_f`, `O_l` and `O_g` in the per-object objective.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub flat: f64,
    pub local: f64,
    pub policy: f64,
}

impl LossWeights {
    pub fn new(mode: Mode, phase: Phase, lambda: f64, alpha: f64) -> Self {
        let w = |flat, local, policy| LossWeights { flat, local, policy };
        match (phase, mode) {
            (Phase::Supervised, Mode::FlatOnly) => w(1.0, 0.0, 0.0),
            (Phase::Supervised, Mode::SlNoflat) => w(0.0, 1.0, 0.0),
            (Phase::Supervised, _) => w(lambda, 1.0 - lambda, 0.0),
            (Phase::Reinforce, Mode::RlNosl) => w(0.0, 0.0, 1.0),
            (Phase::Reinforce, Mode::RlNoflat) => w(0.0, alpha * (1.0 - lambda), 1.0),
            (Phase::Reinforce, Mode::RlFull) => w(alpha * lambda, alpha * (1.0 - lambda), 1.0),
            (Phase::Reinforce, m) => {
                let sl = LossWeights::new(m, Phase::Supervised, lambda, alpha);
                w(sl.flat, sl.local, 0.0)
            }
        }
    }
}

/// Mean per-object loss values over a batch or epoch.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossBreakdown {
    pub o_f: f64,
    pub o_l: f64,
    pub o_g: f64,
    pub total: f64,
}

/// Binary cross-entropy of the flat head against `gold` over all non-root labels.
pub fn flat_loss(
    net: &PolicyNetwork,
    store: &ParamStore,
    tape: &mut Tape,
    e: Var,
    gold: &LabelSet,
) -> Result<Var, ModelError> {
    let z = net.flat_logits_on(store, tape, e)?;
    let targets = (0..net.num_labels()).map(|i| if gold.contains(LabelId(i)) { 1.0 } else { 0.0 }).collect();
    Ok(tape.sigmoid_bce(z, targets)?)
}

/// Per-parent sigmoid cross-entropy along the gold paths: one term for the
/// root and one for every gold label that has children.
pub fn local_loss(
    net: &PolicyNetwork,
    store: &ParamStore,
    tape: &mut Tape,
    hierarchy: &LabelHierarchy,
    e: Var,
    gold: &LabelSet,
    id: &str,
) -> Result<Var, ModelError> {
    if !hierarchy.is_consistent(gold) {
        return Err(ModelError::InconsistentGold(id.to_string()));
    }
    let mut terms = Vec::new();
    for parent in std::iter::once(hierarchy.root()).chain(gold.iter()) {
        let children = hierarchy.children(parent)?;
        if children.is_empty() {
            continue;
        }
        let s = net.state_on(store, tape, e, parent)?;
        let z = net.local_logits_on(store, tape, s, children)?;
        let targets = children.iter().map(|&c| if gold.contains(c) { 1.0 } else { 0.0 }).collect();
        terms.push((tape.sigmoid_bce(z, targets)?, 1.0));
    }
    Ok(tape.linear(&terms)?)
}

/// `-Σ_t log π(a_t) v_t`, the returns entering as constants.
pub fn policy_loss(tape: &mut Tape, log_probs: &[Var], returns: &[f64]) -> Result<Var, ModelError> {
    let terms: Vec<(Var, f64)> = log_probs.iter().zip(returns).map(|(&lp, &v)| (lp, -v)).collect();
    if terms.is_empty() {
        return Ok(tape.constant(vec![0.0]));
    }
    Ok(tape.linear(&terms)?)
}

/// Scalars and graph nodes of one object's objective.
#[derive(Clone, Copy, Debug)]
pub struct ObjectLoss {
    pub total: Var,
    pub o_f: f64,
    pub o_l: f64,
    pub o_g: f64,
}

/// Policy-gradient settings for [`object_loss`].
#[derive(Clone, Copy, Debug)]
pub struct RlSettings {
    pub gamma: f64,
    pub max_steps: usize,
}

/// Builds `flat·O_f + local·O_l + policy·O_g` for one object on `tape`.
/// Terms with zero weight are skipped.
#[allow(clippy::too_many_arguments)]
pub fn object_loss<R: Rng + ?Sized>(
    net: &PolicyNetwork,
    store: &ParamStore,
    tape: &mut Tape,
    hierarchy: &LabelHierarchy,
    feats: &ObjectFeatures,
    gold: &LabelSet,
    weights: LossWeights,
    rl: RlSettings,
    rng: &mut R,
) -> Result<ObjectLoss, ModelError> {
    let e = net.encoder.encode_on(store, tape, feats)?;
    let mut terms = Vec::new();
    let (mut o_f, mut o_l, mut o_g) = (0.0, 0.0, 0.0);
    if weights.flat != 0.0 {
        let v = flat_loss(net, store, tape, e, gold)?;
        o_f = tape.scalar(v);
        terms.push((v, weights.flat));
    }
    if weights.local != 0.0 {
        let v = local_loss(net, store, tape, hierarchy, e, gold, &feats.id)?;
        o_l = tape.scalar(v);
        terms.push((v, weights.local));
    }
    if weights.policy != 0.0 {
        let (sampled, log_probs) =
            run_episode(net, store, hierarchy, tape, e, gold, RolloutMode::Sampled, rl.max_steps, rng)?;
        let ev = tape.value(e).to_vec();
        let greedy = rollout(net, store, hierarchy, &ev, gold, RolloutMode::Greedy, rl.max_steps, rng)?;
        let v = returns(&self_critical_rewards(&sampled, &greedy), rl.gamma);
        let g = policy_loss(tape, &log_probs, &v)?;
        o_g = tape.scalar(g);
        terms.push((g, weights.policy));
    }
    let total = if terms.is_empty() { tape.constant(vec![0.0]) } else { tape.linear(&terms)? };
    Ok(ObjectLoss { total, o_f, o_l, o_g })
}

/// A trained network together with what is needed to decode with it.
#[derive(Clone, Debug)]
pub struct Model {
    pub hierarchy: LabelHierarchy,
    pub config: ModelConfig,
    pub net: PolicyNetwork,
    pub store: ParamStore,
    pub decoder: Decoder,
    pub threshold: f64,
    pub max_steps: usize,
    /// Training-split means used to fill missing feature values.
    pub feature_mean: Vec<f64>,
}

pub fn hierarchy_fingerprint(h: &LabelHierarchy) -> String {
    hex::encode(Sha256::digest(h.to_edge_list().as_bytes()))
}

impl Model {
    pub fn init<R: Rng + ?Sized>(
        hierarchy: LabelHierarchy,
        config: ModelConfig,
        decoder: Decoder,
        threshold: f64,
        max_steps: usize,
        rng: &mut R,
    ) -> Result<Self, ModelError> {
        let mut store = ParamStore::new();
        let net = PolicyNetwork::init(&mut store, config, hierarchy.len(), rng)?;
        Ok(Model { hierarchy, config, net, store, decoder, threshold, max_steps, feature_mean: Vec::new() })
    }

    pub fn embed(&self, feats: &ObjectFeatures) -> Result<ObjectEmbedding, ModelError> {
        let mut feats = feats.clone();
        fill_missing(&mut feats, &self.feature_mean);
        self.net.encoder.encode(&self.store, &feats)
    }

    /// Predicted labels in placement order.
    pub fn predict(&self, feats: &ObjectFeatures) -> Result<Vec<LabelId>, ModelError> {
        let e = self.embed(feats)?;
        match self.decoder {
            Decoder::Flat => {
                let probs = self.net.flat_probs(&self.store, &e)?;
                Ok(flat_decode(&probs, self.threshold).iter().collect())
            }
            Decoder::TopDown => self.decode_top_down(&e),
            Decoder::Policy => {
                // greedy decoding never draws from the generator
                let mut rng = ChaCha8Rng::seed_from_u64(0);
                let r = rollout(
                    &self.net,
                    &self.store,
                    &self.hierarchy,
                    &e.0,
                    &LabelSet::new(),
                    RolloutMode::Greedy,
                    self.max_steps,
                    &mut rng,
                )?;
                Ok(r.placed)
            }
        }
    }

    fn decode_top_down(&self, e: &ObjectEmbedding) -> Result<Vec<LabelId>, ModelError> {
        let mut placed = Vec::new();
        let mut seen = LabelSet::new();
        let mut frontier = vec![self.hierarchy.root()];
        for _ in 0..self.hierarchy.depth() {
            let mut next = Vec::new();
            for &p in &frontier {
                for (c, prob) in self.net.local_probs(&self.store, &self.hierarchy, e, p)? {
                    if prob >= self.threshold && seen.insert(c) {
                        placed.push(c);
                        next.push(c);
                    }
                }
            }
            if next.is_empty() {
                break;
            }
            frontier = next;
        }
        Ok(placed)
    }

    pub fn save<W: Write>(&self, w: &mut W) -> Result<(), ModelError> {
        let c = self.config;
        let meta: BTreeMap<String, String> = [
            ("decoder", self.decoder.as_str().to_string()),
            ("threshold", self.threshold.to_string()),
            ("max_steps", self.max_steps.to_string()),
            ("feature_dim", c.feature_dim.to_string()),
            ("hidden_dim", c.hidden_dim.to_string()),
            ("embedding_dim", c.embedding_dim.to_string()),
            ("label_dim", c.label_dim.to_string()),
            ("state_hidden", c.state_hidden.to_string()),
            ("num_labels", self.hierarchy.len().to_string()),
            ("hierarchy_sha256", hierarchy_fingerprint(&self.hierarchy)),
            ("feature_mean", self.feature_mean.iter().map(f64::to_string).collect::<Vec<_>>().join(" ")),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect();
        self.store.save(&meta, w)?;
        Ok(())
    }

    /// Loads a checkpoint and checks it was trained on `hierarchy`.
    pub fn load<R: Read>(r: &mut R, hierarchy: LabelHierarchy) -> Result<Self, ModelError> {
        let (store, meta) = ParamStore::load(r)?;
        let get = |k: &str| meta.get(k).ok_or_else(|| ModelError::Checkpoint(format!("missing metadata {k:?}")));
        let num = |k: &str| -> Result<usize, ModelError> {
            get(k)?.parse().map_err(|_| ModelError::Checkpoint(format!("bad metadata {k:?}")))
        };
        if get("hierarchy_sha256")? != &hierarchy_fingerprint(&hierarchy) {
            return Err(ModelError::Checkpoint("trained on a different label hierarchy".into()));
        }
        let decoder = match get("decoder")?.as_str() {
            "flat" => Decoder::Flat,
            "top_down" => Decoder::TopDown,
            "policy" => Decoder::Policy,
            other => return Err(ModelError::Checkpoint(format!("unknown decoder {other:?}"))),
        };
        let threshold: f64 =
            get("threshold")?.parse().map_err(|_| ModelError::Checkpoint("bad threshold".into()))?;
        let config = ModelConfig {
            feature_dim: num("feature_dim")?,
            hidden_dim: num("hidden_dim")?,
            embedding_dim: num("embedding_dim")?,
            label_dim: num("label_dim")?,
            state_hidden: num("state_hidden")?,
        };
        let net = PolicyNetwork::attach(&store, config, hierarchy.len())
            .map_err(|e| ModelError::Checkpoint(e.to_string()))?;
        let feature_mean = get("feature_mean")?
            .split_whitespace()
            .map(|v| v.parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|_| ModelError::Checkpoint("bad feature means".into()))?;
        Ok(Model { hierarchy, config, net, store, decoder, threshold, max_steps: num("max_steps")?, feature_mean })
    }
}

/// Generator for one (stream, epoch, index) slot, independent of scheduling.
pub fn stream_rng(seed: u64, stream: u64, epoch: u64, index: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    for (chunk, v) in key.chunks_mut(8).zip([seed, stream, epoch, index]) {
        chunk.copy_from_slice(&v.to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}

const STREAM_INIT: u64 = 0;
const STREAM_SHUFFLE: u64 = 1;
const STREAM_OBJECT: u64 = 2;
const STREAM_STOP: u64 = 3;

/// One row of the training log.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub losses: LossBreakdown,
    pub micro: f64,
    pub macro_f1: f64,
    pub ebf: f64,
}

impl EpochLog {
    pub const CSV_HEADER: &'static str = "epoch,o_f,o_l,o_g,micro,macro,ebf";

    pub fn csv_row(&self) -> String {
        let l = self.losses;
        format!("{},{},{},{},{},{},{}", self.epoch, l.o_f, l.o_l, l.o_g, self.micro, self.macro_f1, self.ebf)
    }
}

pub fn log_csv(log: &[EpochLog]) -> String {
    let mut out = String::from(EpochLog::CSV_HEADER);
    out.push('\n');
    for row in log {
        out.push_str(&row.csv_row());
        out.push('\n');
    }
    out
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: Model,
    pub log: Vec<EpochLog>,
    /// Epoch whose parameters were kept (0 means the initial ones).
    pub best_epoch: usize,
}

fn thread_pool(workers: usize) -> Result<rayon::ThreadPool, ModelError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| ModelError::Config(e.to_string()))
}

/// Greedy-decodes every example of `split`.
pub fn predict_split(model: &Model, data: &Dataset, split: Split, workers: usize) -> Result<Vec<PredictionRecord>, ModelError> {
    let examples = data.split_examples(split);
    predict_examples(model, &examples, workers)
}

pub fn predict_examples(model: &Model, examples: &[&Example], workers: usize) -> Result<Vec<PredictionRecord>, ModelError> {
    let pool = thread_pool(workers)?;
    pool.install(|| {
        examples
            .par_iter()
            .map(|ex| {
                Ok(PredictionRecord {
                    id: ex.features.id.clone(),
                    predicted: model.predict(&ex.features)?.into_iter().collect(),
                    gold: ex.gold.clone(),
                })
            })
            .collect()
    })
}

/// Metrics on `split`. Macro-F1 averages over labels seen in that split's gold
/// sets; popularity groups rank labels by training counts.
pub fn evaluate(model: &Model, data: &Dataset, split: Split, workers: usize) -> Result<EvalReport, ModelError> {
    let records = predict_split(model, data, split, workers)?;
    report(&records, data)
}

pub fn report(records: &[PredictionRecord], data: &Dataset) -> Result<EvalReport, ModelError> {
    let eligible = supported_labels(records);
    Ok(EvalReport::build(records, &data.hierarchy, &eligible, &data.label_support(Split::Train))?)
}

struct Runner<'a> {
    cfg: &'a TrainConfig,
    data: &'a Dataset,
    pool: rayon::ThreadPool,
    train: Vec<usize>,
    select_split: Split,
    rl: RlSettings,
}

impl Runner<'_> {
    fn new<'a>(cfg: &'a TrainConfig, data: &'a Dataset) -> Result<Runner<'a>, ModelError> {
        cfg.validate()?;
        let train = data.indices(Split::Train);
        if train.is_empty() {
            return Err(ModelError::Config("no training examples".into()));
        }
        if data.has_missing() {
            return Err(ModelError::Config("dataset has missing feature values; impute them first".into()));
        }
        let select_split = if data.count(Split::Validation) > 0 { Split::Validation } else { Split::Train };
        Ok(Runner {
            cfg,
            data,
            pool: thread_pool(cfg.workers)?,
            train,
            select_split,
            rl: RlSettings { gamma: cfg.gamma, max_steps: cfg.resolved_max_steps(data) },
        })
    }

    /// One pass over the training split; returns mean per-object losses.
    fn epoch(&self, model: &mut Model, weights: LossWeights, stream_epoch: u64) -> Result<LossBreakdown, ModelError> {
        let mut order = self.train.clone();
        order.shuffle(&mut stream_rng(self.cfg.seed, STREAM_SHUFFLE, stream_epoch, 0));
        let adam = self.cfg.adam();
        let mut sum = LossBreakdown::default();
        for batch in order.chunks(self.cfg.batch_size) {
            let (net, store, h) = (&model.net, &model.store, &model.hierarchy);
            let passes: Vec<(Tape, ObjectLoss)> = self.pool.install(|| {
                batch
                    .par_iter()
                    .map(|&i| {
                        let ex = &self.data.examples[i];
                        let mut rng = stream_rng(self.cfg.seed, STREAM_OBJECT, stream_epoch, i as u64);
                        let mut tape = Tape::new();
                        let loss = object_loss(net, store, &mut tape, h, &ex.features, &ex.gold, weights, self.rl, &mut rng)?;
                        Ok((tape, loss))
                    })
                    .collect::<Result<_, ModelError>>()
            })?;
            let scale = 1.0 / batch.len() as f64;
            for (tape, loss) in &passes {
                tape.backward_scaled(loss.total, scale, &mut model.store)?;
                sum.o_f += loss.o_f;
                sum.o_l += loss.o_l;
                sum.o_g += loss.o_g;
                sum.total += tape.scalar(loss.total);
            }
            model.store.adam_step(&adam);
        }
        let n = order.len() as f64;
        Ok(LossBreakdown { o_f: sum.o_f / n, o_l: sum.o_l / n, o_g: sum.o_g / n, total: sum.total / n })
    }

    /// Runs `epochs` epochs keeping the parameters with the best selection EBF.
    fn run_phase(
        &self,
        model: &mut Model,
        phase: Phase,
        epochs: usize,
        first_epoch: usize,
        log: &mut Vec<EpochLog>,
        on_epoch: &mut dyn FnMut(&EpochLog),
    ) -> Result<usize, ModelError> {
        let weights = LossWeights::new(self.cfg.mode, phase, self.cfg.lambda, self.cfg.alpha);
        let mut best: Option<(f64, usize, ParamStore)> = None;
        for k in 0..epochs {
            let epoch = first_epoch + k;
            let losses = self.epoch(model, weights, epoch as u64)?;
            let rep = evaluate(model, self.data, self.select_split, self.cfg.workers)?;
            let row = EpochLog { epoch, losses, micro: rep.micro_f1, macro_f1: rep.macro_f1, ebf: rep.ebf };
            on_epoch(&row);
            log.push(row);
            if best.as_ref().is_none_or(|(b, _, _)| rep.ebf > *b) {
                best = Some((rep.ebf, epoch, model.store.clone()));
            }
        }
        match best {
            Some((_, epoch, store)) => {
                model.store = store;
                Ok(epoch)
            }
            None => Ok(first_epoch.saturating_sub(1)),
        }
    }
}

/// Supervised pre-training. Keeps the epoch with the best selection-split EBF
/// under top-down (or flat, for `flat_only`) decoding.
pub fn train_sl(
    cfg: &TrainConfig,
    data: &Dataset,
    model: &mut Model,
    log: &mut Vec<EpochLog>,
    on_epoch: &mut dyn FnMut(&EpochLog),
) -> Result<usize, ModelError> {
    let runner = Runner::new(cfg, data)?;
    model.decoder = if cfg.mode == Mode::FlatOnly { Decoder::Flat } else { Decoder::TopDown };
    let first = log.last().map_or(1, |r| r.epoch + 1);
    runner.run_phase(model, Phase::Supervised, cfg.epochs, first, log, on_epoch)
}

/// Policy-gradient fine-tuning from `model`, with a freshly drawn STOP embedding.
pub fn train_rl(
    cfg: &TrainConfig,
    data: &Dataset,
    model: &mut Model,
    log: &mut Vec<EpochLog>,
    on_epoch: &mut dyn FnMut(&EpochLog),
) -> Result<usize, ModelError> {
    if !cfg.mode.is_rl() {
        return Err(ModelError::Config(format!("mode {} has no RL phase", cfg.mode)));
    }
    let runner = Runner::new(cfg, data)?;
    model.net.reinit_stop(&mut model.store, &mut stream_rng(cfg.seed, STREAM_STOP, 0, 0))?;
    model.decoder = Decoder::Policy;
    model.max_steps = runner.rl.max_steps;
    let first = log.last().map_or(1, |r| r.epoch + 1);
    runner.run_phase(model, Phase::Reinforce, cfg.rl_epochs, first, log, on_epoch)
}

/// Full pipeline for `cfg.mode`: supervised phase, then RL for RL modes.
pub fn train(cfg: &TrainConfig, data: &Dataset, on_epoch: &mut dyn FnMut(&EpochLog)) -> Result<TrainOutcome, ModelError> {
    cfg.validate()?;
    let mc = cfg.model_config(data.feature_dim);
    let mut model = Model::init(
        data.hierarchy.clone(),
        mc,
        cfg.mode.decoder(),
        cfg.threshold,
        cfg.resolved_max_steps(data),
        &mut stream_rng(cfg.seed, STREAM_INIT, 0, 0),
    )?;
    model.feature_mean = data.training_means();
    let mut log = Vec::new();
    let mut best_epoch = train_sl(cfg, data, &mut model, &mut log, on_epoch)?;
    if cfg.mode.is_rl() {
        best_epoch = train_rl(cfg, data, &mut model, &mut log, on_epoch)?;
    }
    model.decoder = cfg.mode.decoder();
    Ok(TrainOutcome { model, log, best_epoch })
}
