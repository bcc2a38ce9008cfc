//! Feed-forward base model turning raw feature vectors into object embeddings.

use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::ModelError;
use crate::numcore::{InputVec, Matrix, ParamId, ParamStore, Tape, Var};

#[derive(Clone, Debug, PartialEq)]
pub struct ObjectFeatures {
    pub id: String,
    pub input: Arc<InputVec>,
}

impl ObjectFeatures {
    pub fn dense(id: impl Into<String>, values: Vec<f64>) -> Self {
        ObjectFeatures { id: id.into(), input: Arc::new(InputVec::Dense(values)) }
    }

    pub fn dim(&self) -> usize {
        self.input.dim()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ObjectEmbedding(pub Vec<f64>);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub feature_dim: usize,
    pub hidden_dim: usize,
    pub embedding_dim: usize,
}

/// `e = ReLU(W2 ReLU(W1 x + b1) + b2)`.
#[derive(Clone, Debug)]
pub struct Encoder {
    cfg: EncoderConfig,
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
}

pub(crate) fn init_uniform<R: Rng + ?Sized>(rows: usize, cols: usize, fan_in: usize, rng: &mut R) -> Matrix {
    Matrix::uniform(rows, cols, 1.0 / (fan_in.max(1) as f64).sqrt(), rng)
}

impl Encoder {
    pub fn init<R: Rng + ?Sized>(
        store: &mut ParamStore,
        cfg: EncoderConfig,
        rng: &mut R,
    ) -> Result<Self, ModelError> {
        let (f, h, d) = (cfg.feature_dim, cfg.hidden_dim, cfg.embedding_dim);
        let w1 = store.add("encoder.w1", init_uniform(h, f, f, rng))?;
        let b1 = store.add("encoder.b1", init_uniform(h, 1, f, rng))?;
        let w2 = store.add("encoder.w2", init_uniform(d, h, h, rng))?;
        let b2 = store.add("encoder.b2", init_uniform(d, 1, h, rng))?;
        Ok(Encoder { cfg, w1, b1, w2, b2 })
    }

    /// Binds to parameters already present in `store` (e.g. a loaded checkpoint).
    pub fn attach(store: &ParamStore, cfg: EncoderConfig) -> Result<Self, ModelError> {
        let enc = Encoder {
            cfg,
            w1: store.id("encoder.w1")?,
            b1: store.id("encoder.b1")?,
            w2: store.id("encoder.w2")?,
            b2: store.id("encoder.b2")?,
        };
        let w1 = store.value(enc.w1);
        let w2 = store.value(enc.w2);
        if (w1.rows(), w1.cols(), w2.rows()) != (cfg.hidden_dim, cfg.feature_dim, cfg.embedding_dim) {
            return Err(ModelError::Config(format!(
                "encoder weights are {}x{} / {}x{}, config asks for {:?}",
                w1.rows(),
                w1.cols(),
                w2.rows(),
                w2.cols(),
                cfg
            )));
        }
        Ok(enc)
    }

    pub fn config(&self) -> EncoderConfig {
        self.cfg
    }

    pub fn encode_on(
        &self,
        store: &ParamStore,
        tape: &mut Tape,
        feats: &ObjectFeatures,
    ) -> Result<Var, ModelError> {
        if feats.dim() != self.cfg.feature_dim {
            return Err(ModelError::Dimension {
                id: feats.id.clone(),
                expected: self.cfg.feature_dim,
                got: feats.dim(),
            });
        }
        let h = tape.affine_input(store, self.w1, Some(self.b1), feats.input.clone())?;
        let h = tape.relu(h);
        let e = tape.affine(store, self.w2, Some(self.b2), h)?;
        Ok(tape.relu(e))
    }

    pub fn encode(&self, store: &ParamStore, feats: &ObjectFeatures) -> Result<ObjectEmbedding, ModelError> {
        let mut tape = Tape::new();
        let e = self.encode_on(store, &mut tape, feats)?;
        Ok(ObjectEmbedding(tape.value(e).to_vec()))
    }

    /// Same output as [`Encoder::encode`], computed at most once per object
    /// for a given parameter version.
    pub fn encode_cached(
        &self,
        store: &ParamStore,
        feats: &ObjectFeatures,
        cache: &mut EmbeddingCache,
    ) -> Result<ObjectEmbedding, ModelError> {
        if cache.version != Some(store.version()) {
            cache.entries.clear();
            cache.version = Some(store.version());
        }
        if let Some(e) = cache.entries.get(&feats.id) {
            return Ok(e.clone());
        }
        let e = self.encode(store, feats)?;
        cache.forward_passes += 1;
        cache.entries.insert(feats.id.clone(), e.clone());
        Ok(e)
    }
}

/// Object embeddings keyed by object id; dropped whenever parameters change.
#[derive(Clone, Debug, Default)]
pub struct EmbeddingCache {
    version: Option<u64>,
    entries: HashMap<String, ObjectEmbedding>,
    forward_passes: usize,
}

impl EmbeddingCache {
    pub fn new() -> Self {
        Self::default()
    }

    /// Number of encoder forward passes performed through this cache.
    pub fn forward_passes(&self) -> usize {
        self.forward_passes
    }
}

/// Maps whitespace-separated tokens to sparse count vectors.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct BagOfWords {
    vocab: BTreeMap<String, usize>,
}

impl BagOfWords {
    /// Keeps the `max_vocab` most frequent tokens; ties go to the lexically smaller token.
    pub fn fit<'a, I: IntoIterator<Item = &'a str>>(docs: I, max_vocab: usize) -> Self {
        let mut freq: HashMap<&str, usize> = HashMap::new();
        for doc in docs {
            for tok in doc.split_whitespace() {
                *freq.entry(tok).or_default() += 1;
            }
        }
        let mut ranked: Vec<(&str, usize)> = freq.into_iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
        let vocab = ranked
            .into_iter()
            .take(max_vocab)
            .enumerate()
            .map(|(i, (t, _))| (t.to_string(), i))
            .collect();
        BagOfWords { vocab }
    }

    pub fn len(&self) -> usize {
        self.vocab.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vocab.is_empty()
    }

    pub fn transform(&self, id: impl Into<String>, text: &str) -> ObjectFeatures {
        let mut counts: BTreeMap<usize, f64> = BTreeMap::new();
        for tok in text.split_whitespace() {
            if let Some(&i) = self.vocab.get(tok) {
                *counts.entry(i).or_default() += 1.0;
            }
        }
        let (indices, values) = counts.into_iter().unzip();
        ObjectFeatures {
            id: id.into(),
            input: Arc::new(InputVec::Sparse { dim: self.vocab.len(), indices, values }),
        }
    }
}
