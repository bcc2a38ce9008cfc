//! Small dense numerics: matrices, a parameter store with Adam, and a
//! per-step recording tape for reverse-mode gradients.

use std::collections::{BTreeMap, HashMap};
use std::io::{self, Read, Write};
use std::sync::Arc;

use rand::Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum NumError {
    #[error("shape mismatch in {op}: expected {expected}, got {got}")]
    Shape { op: &'static str, expected: String, got: String },
    #[error("backward called on an empty tape")]
    NoForward,
    #[error("backward target is not a scalar (length {0})")]
    NotScalar(usize),
    #[error("variable {0} is not on this tape")]
    UnknownVar(usize),
    #[error("unknown parameter {0:?}")]
    UnknownParam(String),
    #[error("duplicate parameter {0:?}")]
    DuplicateParam(String),
    #[error("checkpoint format: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

fn shape_err(op: &'static str, expected: impl ToString, got: impl ToString) -> NumError {
    NumError::Shape { op, expected: expected.to_string(), got: got.to_string() }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, NumError> {
        if data.len() != rows * cols {
            return Err(shape_err("Matrix::from_vec", rows * cols, data.len()));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    /// Uniform in `[-bound, bound]`.
    pub fn uniform<R: Rng + ?Sized>(rows: usize, cols: usize, bound: f64, rng: &mut R) -> Self {
        let data = (0..rows * cols).map(|_| rng.random_range(-bound..=bound)).collect();
        Matrix { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.cols);
        self.data.chunks_exact(self.cols).map(|row| dot(row, x)).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn relu(x: &[f64]) -> Vec<f64> {
    x.iter().map(|&v| v.max(0.0)).collect()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)` without overflow.
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

pub fn log_sum_exp(x: &[f64]) -> f64 {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + x.iter().map(|&v| (v - max).exp()).sum::<f64>().ln()
}

/// Max-shifted softmax.
pub fn softmax(x: &[f64]) -> Vec<f64> {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = x.iter().map(|&v| (v - max).exp()).collect();
    let total: f64 = out.iter().sum();
    for v in &mut out {
        *v /= total;
    }
    out
}

/// Lower clamp for probabilities inside binary cross-entropy terms.
pub const PROB_CLAMP: f64 = 1e-12;

/// `-[y ln p + (1-y) ln(1-p)]` for `p = sigmoid(z)` clamped to `[PROB_CLAMP, 1-PROB_CLAMP]`.
pub fn bce_with_logit(z: f64, y: f64) -> f64 {
    let lo = PROB_CLAMP.ln();
    let log_p = (-softplus(-z)).max(lo);
    let log_q = (-softplus(z)).max(lo);
    -(y * log_p + (1.0 - y) * log_q)
}

/// A model input that is not a trainable quantity.
#[derive(Clone, Debug, PartialEq)]
pub enum InputVec {
    Dense(Vec<f64>),
    Sparse { dim: usize, indices: Vec<usize>, values: Vec<f64> },
}

impl InputVec {
    pub fn dim(&self) -> usize {
        match self {
            InputVec::Dense(v) => v.len(),
            InputVec::Sparse { dim, .. } => *dim,
        }
    }

    pub fn to_dense(&self) -> Vec<f64> {
        match self {
            InputVec::Dense(v) => v.clone(),
            InputVec::Sparse { dim, indices, values } => {
                let mut out = vec![0.0; *dim];
                for (&i, &v) in indices.iter().zip(values) {
                    out[i] += v;
                }
                out
            }
        }
    }

    fn nonzeros(&self) -> Box<dyn Iterator<Item = (usize, f64)> + '_> {
        match self {
            InputVec::Dense(v) => Box::new(v.iter().copied().enumerate()),
            InputVec::Sparse { indices, values, .. } => {
                Box::new(indices.iter().copied().zip(values.iter().copied()))
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

#[derive(Clone, Debug)]
struct Param {
    name: String,
    value: Matrix,
    grad: Matrix,
    m: Matrix,
    v: Matrix,
    steps: u64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 1e-3, weight_decay: 1e-6, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Named trainable matrices with gradient accumulators and Adam moments.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    params: Vec<Param>,
    index: HashMap<String, ParamId>,
    version: u64,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: &str, value: Matrix) -> Result<ParamId, NumError> {
        if self.index.contains_key(name) {
            return Err(NumError::DuplicateParam(name.to_string()));
        }
        let id = ParamId(self.params.len());
        let (r, c) = (value.rows, value.cols);
        self.params.push(Param {
            name: name.to_string(),
            value,
            grad: Matrix::zeros(r, c),
            m: Matrix::zeros(r, c),
            v: Matrix::zeros(r, c),
            steps: 0,
        });
        self.index.insert(name.to_string(), id);
        Ok(id)
    }

    pub fn id(&self, name: &str) -> Result<ParamId, NumError> {
        self.index.get(name).copied().ok_or_else(|| NumError::UnknownParam(name.to_string()))
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.params[id.0].name
    }

    pub fn value(&self, id: ParamId) -> &Matrix {
        &self.params[id.0].value
    }

    /// Replaces a value; Adam moments for it are reset.
    pub fn set_value(&mut self, id: ParamId, value: Matrix) -> Result<(), NumError> {
        let p = &mut self.params[id.0];
        if (value.rows, value.cols) != (p.value.rows, p.value.cols) {
            return Err(shape_err(
                "ParamStore::set_value",
                format!("{}x{}", p.value.rows, p.value.cols),
                format!("{}x{}", value.rows, value.cols),
            ));
        }
        p.value = value;
        p.m = Matrix::zeros(p.value.rows, p.value.cols);
        p.v = Matrix::zeros(p.value.rows, p.value.cols);
        p.steps = 0;
        self.version += 1;
        Ok(())
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Matrix {
        self.version += 1;
        &mut self.params[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> &Matrix {
        &self.params[id.0].grad
    }

    fn grad_mut(&mut self, id: ParamId) -> &mut [f64] {
        &mut self.params[id.0].grad.data
    }

    /// Bumped whenever parameter values change.
    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.data.iter_mut().for_each(|g| *g = 0.0);
        }
    }

    pub fn grad_norm(&self) -> f64 {
        self.params.iter().flat_map(|p| p.grad.data.iter()).map(|g| g * g).sum::<f64>().sqrt()
    }

    /// Bias-corrected Adam with decoupled weight decay, then zeroes gradients.
    pub fn adam_step(&mut self, cfg: &AdamConfig) {
        for p in &mut self.params {
            p.steps += 1;
            let t = p.steps as i32;
            let bc1 = 1.0 - cfg.beta1.powi(t);
            let bc2 = 1.0 - cfg.beta2.powi(t);
            let decay = 1.0 - cfg.lr * cfg.weight_decay;
            for i in 0..p.value.data.len() {
                let g = p.grad.data[i];
                let m = cfg.beta1 * p.m.data[i] + (1.0 - cfg.beta1) * g;
                let v = cfg.beta2 * p.v.data[i] + (1.0 - cfg.beta2) * g * g;
                p.m.data[i] = m;
                p.v.data[i] = v;
                let update = (m / bc1) / ((v / bc2).sqrt() + cfg.eps);
                p.value.data[i] = p.value.data[i] * decay - cfg.lr * update;
                p.grad.data[i] = 0.0;
            }
        }
        self.version += 1;
    }

    /// Writes parameter values (not optimizer state) plus string metadata.
    ///
    /// Layout, all integers little-endian: magic `TXPOLICY`, u32 version,
    /// u32 metadata count, then `(u32 len, key, u32 len, value)` pairs, u32
    /// parameter count, then per parameter `(u32 len, name, u64 rows, u64 cols,
    /// rows*cols f64)`.
    pub fn save<W: Write>(&self, meta: &BTreeMap<String, String>, w: &mut W) -> Result<(), NumError> {
        w.write_all(CHECKPOINT_MAGIC)?;
        w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        w.write_all(&(meta.len() as u32).to_le_bytes())?;
        for (k, v) in meta {
            write_str(w, k)?;
            write_str(w, v)?;
        }
        w.write_all(&(self.params.len() as u32).to_le_bytes())?;
        for p in &self.params {
            write_str(w, &p.name)?;
            w.write_all(&(p.value.rows as u64).to_le_bytes())?;
            w.write_all(&(p.value.cols as u64).to_le_bytes())?;
            for v in &p.value.data {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn load<R: Read>(r: &mut R) -> Result<(ParamStore, BTreeMap<String, String>), NumError> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(NumError::Format("bad magic".into()));
        }
        let version = read_u32(r)?;
        if version != CHECKPOINT_VERSION {
            return Err(NumError::Format(format!("unsupported version {version}")));
        }
        let mut meta = BTreeMap::new();
        for _ in 0..read_u32(r)? {
            let k = read_str(r)?;
            let v = read_str(r)?;
            meta.insert(k, v);
        }
        let mut store = ParamStore::new();
        for _ in 0..read_u32(r)? {
            let name = read_str(r)?;
            let rows = read_u64(r)? as usize;
            let cols = read_u64(r)? as usize;
            let n = rows.checked_mul(cols).ok_or_else(|| NumError::Format("size overflow".into()))?;
            let mut bytes = vec![0u8; n.checked_mul(8).ok_or_else(|| NumError::Format("size overflow".into()))?];
            r.read_exact(&mut bytes)?;
            let data = bytes
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            store.add(&name, Matrix::from_vec(rows, cols, data)?)?;
        }
        Ok((store, meta))
    }
}

const CHECKPOINT_MAGIC: &[u8; 8] = b"TXPOLICY";
const CHECKPOINT_VERSION: u32 = 1;

fn write_str<W: Write>(w: &mut W, s: &str) -> io::Result<()> {
    w.write_all(&(s.len() as u32).to_le_bytes())?;
    w.write_all(s.as_bytes())
}

fn read_u32<R: Read>(r: &mut R) -> io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> io::Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_str<R: Read>(r: &mut R) -> Result<String, NumError> {
    let len = read_u32(r)? as usize;
    let mut b = vec![0u8; len];
    r.read_exact(&mut b)?;
    String::from_utf8(b).map_err(|e| NumError::Format(e.to_string()))
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Param(ParamId),
    Row { table: ParamId, row: usize },
    Affine { w: ParamId, b: Option<ParamId>, x: Var },
    AffineInput { w: ParamId, b: Option<ParamId>, input: Arc<InputVec> },
    Concat(Vec<Var>),
    Relu(Var),
    Sigmoid(Var),
    Softmax(Var),
    Score { table: ParamId, rows: Vec<usize>, extra: Option<ParamId>, state: Var },
    LogSoftmaxAt { logits: Var, index: usize },
    SigmoidBce { logits: Var, targets: Vec<f64> },
    Linear(Vec<(Var, f64)>),
    Sum(Var),
}

#[derive(Clone, Debug)]
struct Node {
    value: Vec<f64>,
    op: Op,
}

/// Records one forward computation so that [`Tape::backward`] can push
/// gradients into a [`ParamStore`].
#[derive(Clone, Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[0]
    }

    fn push(&mut self, value: Vec<f64>, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// A constant; gradients stop here.
    pub fn constant(&mut self, value: Vec<f64>) -> Var {
        self.push(value, Op::Leaf)
    }

    /// The whole parameter, flattened row-major.
    pub fn param(&mut self, store: &ParamStore, p: ParamId) -> Var {
        self.push(store.value(p).data.clone(), Op::Param(p))
    }

    pub fn row(&mut self, store: &ParamStore, table: ParamId, row: usize) -> Result<Var, NumError> {
        let m = store.value(table);
        if row >= m.rows {
            return Err(shape_err("row", format!("< {}", m.rows), row));
        }
        Ok(self.push(m.row(row).to_vec(), Op::Row { table, row }))
    }

    fn check_bias(store: &ParamStore, b: Option<ParamId>, rows: usize) -> Result<(), NumError> {
        if let Some(b) = b {
            let bm = store.value(b);
            if bm.data.len() != rows {
                return Err(shape_err("affine bias", rows, bm.data.len()));
            }
        }
        Ok(())
    }

    /// `W x (+ b)`.
    pub fn affine(
        &mut self,
        store: &ParamStore,
        w: ParamId,
        b: Option<ParamId>,
        x: Var,
    ) -> Result<Var, NumError> {
        let wm = store.value(w);
        let xv = &self.nodes[x.0].value;
        if xv.len() != wm.cols {
            return Err(shape_err("affine", wm.cols, xv.len()));
        }
        Self::check_bias(store, b, wm.rows)?;
        let mut out = wm.matvec(xv);
        if let Some(b) = b {
            axpy(1.0, &store.value(b).data, &mut out);
        }
        Ok(self.push(out, Op::Affine { w, b, x }))
    }

    /// `W x (+ b)` where `x` is a fixed model input (dense or sparse).
    pub fn affine_input(
        &mut self,
        store: &ParamStore,
        w: ParamId,
        b: Option<ParamId>,
        input: Arc<InputVec>,
    ) -> Result<Var, NumError> {
        let wm = store.value(w);
        if input.dim() != wm.cols {
            return Err(shape_err("affine_input", wm.cols, input.dim()));
        }
        Self::check_bias(store, b, wm.rows)?;
        let mut out = match b {
            Some(b) => store.value(b).data.clone(),
            None => vec![0.0; wm.rows],
        };
        match input.as_ref() {
            InputVec::Dense(x) => {
                for (o, row) in out.iter_mut().zip(wm.data.chunks_exact(wm.cols)) {
                    *o += dot(row, x);
                }
            }
            InputVec::Sparse { indices, values, .. } => {
                for (r, o) in out.iter_mut().enumerate() {
                    let row = wm.row(r);
                    *o += indices.iter().zip(values).map(|(&i, &v)| row[i] * v).sum::<f64>();
                }
            }
        }
        Ok(self.push(out, Op::AffineInput { w, b, input }))
    }

    pub fn concat(&mut self, parts: &[Var]) -> Var {
        let value = parts.iter().flat_map(|v| self.nodes[v.0].value.iter().copied()).collect();
        self.push(value, Op::Concat(parts.to_vec()))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let value = relu(&self.nodes[x.0].value);
        self.push(value, Op::Relu(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let value = self.nodes[x.0].value.iter().map(|&v| sigmoid(v)).collect();
        self.push(value, Op::Sigmoid(x))
    }

    pub fn softmax(&mut self, x: Var) -> Var {
        let value = softmax(&self.nodes[x.0].value);
        self.push(value, Op::Softmax(x))
    }

    /// Logits `[row_i · state]` for the listed table rows, then `extra · state`
    /// if an extra single-row parameter is given.
    pub fn score(
        &mut self,
        store: &ParamStore,
        table: ParamId,
        rows: &[usize],
        extra: Option<ParamId>,
        state: Var,
    ) -> Result<Var, NumError> {
        let tm = store.value(table);
        let s = &self.nodes[state.0].value;
        if s.len() != tm.cols {
            return Err(shape_err("score", tm.cols, s.len()));
        }
        let mut out = Vec::with_capacity(rows.len() + 1);
        for &r in rows {
            if r >= tm.rows {
                return Err(shape_err("score row", format!("< {}", tm.rows), r));
            }
            out.push(dot(tm.row(r), s));
        }
        if let Some(e) = extra {
            let em = store.value(e);
            if em.data.len() != s.len() {
                return Err(shape_err("score extra", s.len(), em.data.len()));
            }
            out.push(dot(&em.data, s));
        }
        Ok(self.push(out, Op::Score { table, rows: rows.to_vec(), extra, state }))
    }

    /// `log softmax(logits)[index]`.
    pub fn log_softmax_at(&mut self, logits: Var, index: usize) -> Result<Var, NumError> {
        let z = &self.nodes[logits.0].value;
        if index >= z.len() {
            return Err(shape_err("log_softmax_at", format!("< {}", z.len()), index));
        }
        let value = z[index] - log_sum_exp(z);
        Ok(self.push(vec![value], Op::LogSoftmaxAt { logits, index }))
    }

    /// Summed binary cross-entropy of `sigmoid(logits)` against `targets`.
    pub fn sigmoid_bce(&mut self, logits: Var, targets: Vec<f64>) -> Result<Var, NumError> {
        let z = &self.nodes[logits.0].value;
        if z.len() != targets.len() {
            return Err(shape_err("sigmoid_bce", z.len(), targets.len()));
        }
        let value = z.iter().zip(&targets).map(|(&z, &y)| bce_with_logit(z, y)).sum();
        Ok(self.push(vec![value], Op::SigmoidBce { logits, targets }))
    }

    /// `Σ c_i x_i` over equal-length nodes.
    pub fn linear(&mut self, terms: &[(Var, f64)]) -> Result<Var, NumError> {
        let len = terms.first().map(|(v, _)| self.nodes[v.0].value.len()).unwrap_or(1);
        let mut out = vec![0.0; len];
        for &(v, c) in terms {
            let x = &self.nodes[v.0].value;
            if x.len() != len {
                return Err(shape_err("linear", len, x.len()));
            }
            axpy(c, x, &mut out);
        }
        Ok(self.push(out, Op::Linear(terms.to_vec())))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let value = self.nodes[x.0].value.iter().sum();
        self.push(vec![value], Op::Sum(x))
    }

    /// Accumulates `d loss / d param` into the store's gradient buffers.
    pub fn backward(&self, loss: Var, store: &mut ParamStore) -> Result<(), NumError> {
        self.backward_scaled(loss, 1.0, store)
    }

    pub fn backward_scaled(&self, loss: Var, seed: f64, store: &mut ParamStore) -> Result<(), NumError> {
        if self.nodes.is_empty() {
            return Err(NumError::NoForward);
        }
        let node = self.nodes.get(loss.0).ok_or(NumError::UnknownVar(loss.0))?;
        if node.value.len() != 1 {
            return Err(NumError::NotScalar(node.value.len()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![seed]);

        fn acc(grads: &mut [Option<Vec<f64>>], v: Var, len: usize) -> &mut Vec<f64> {
            grads[v.0].get_or_insert_with(|| vec![0.0; len])
        }

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Leaf => {}
                Op::Param(p) => axpy(1.0, &g, store.grad_mut(*p)),
                Op::Row { table, row } => {
                    let cols = store.value(*table).cols;
                    axpy(1.0, &g, &mut store.grad_mut(*table)[row * cols..(row + 1) * cols]);
                }
                Op::Affine { w, b, x } => {
                    let xv = &self.nodes[x.0].value;
                    let cols = xv.len();
                    let gx = {
                        let wm = &store.params[w.0].value;
                        let mut gx = vec![0.0; cols];
                        for (r, &gr) in g.iter().enumerate() {
                            if gr != 0.0 {
                                axpy(gr, wm.row(r), &mut gx);
                            }
                        }
                        gx
                    };
                    let gw = store.grad_mut(*w);
                    for (r, &gr) in g.iter().enumerate() {
                        if gr != 0.0 {
                            axpy(gr, xv, &mut gw[r * cols..(r + 1) * cols]);
                        }
                    }
                    if let Some(b) = b {
                        axpy(1.0, &g, store.grad_mut(*b));
                    }
                    axpy(1.0, &gx, acc(&mut grads, *x, cols));
                }
                Op::AffineInput { w, b, input } => {
                    let cols = input.dim();
                    let gw = store.grad_mut(*w);
                    for (r, &gr) in g.iter().enumerate() {
                        if gr == 0.0 {
                            continue;
                        }
                        let row = &mut gw[r * cols..(r + 1) * cols];
                        for (j, v) in input.nonzeros() {
                            row[j] += gr * v;
                        }
                    }
                    if let Some(b) = b {
                        axpy(1.0, &g, store.grad_mut(*b));
                    }
                }
                Op::Concat(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let len = self.nodes[p.0].value.len();
                        axpy(1.0, &g[offset..offset + len], acc(&mut grads, p, len));
                        offset += len;
                    }
                }
                Op::Relu(x) => {
                    let xv = &self.nodes[x.0].value;
                    let gx = acc(&mut grads, *x, xv.len());
                    for ((gxi, &gi), &xi) in gx.iter_mut().zip(&g).zip(xv) {
                        if xi > 0.0 {
                            *gxi += gi;
                        }
                    }
                }
                Op::Sigmoid(x) => {
                    let y = &node.value;
                    let gx = acc(&mut grads, *x, y.len());
                    for ((gxi, &gi), &yi) in gx.iter_mut().zip(&g).zip(y) {
                        *gxi += gi * yi * (1.0 - yi);
                    }
                }
                Op::Softmax(x) => {
                    let y = &node.value;
                    let inner = dot(&g, y);
                    let gx = acc(&mut grads, *x, y.len());
                    for ((gxi, &gi), &yi) in gx.iter_mut().zip(&g).zip(y) {
                        *gxi += yi * (gi - inner);
                    }
                }
                Op::Score { table, rows, extra, state } => {
                    let s = &self.nodes[state.0].value;
                    let c = s.len();
                    let mut gs = vec![0.0; c];
                    {
                        let tm = &store.params[table.0].value;
                        for (k, &r) in rows.iter().enumerate() {
                            axpy(g[k], tm.row(r), &mut gs);
                        }
                        if let Some(e) = extra {
                            axpy(g[rows.len()], &store.params[e.0].value.data, &mut gs);
                        }
                    }
                    let gt = store.grad_mut(*table);
                    for (k, &r) in rows.iter().enumerate() {
                        axpy(g[k], s, &mut gt[r * c..(r + 1) * c]);
                    }
                    if let Some(e) = extra {
                        axpy(g[rows.len()], s, store.grad_mut(*e));
                    }
                    axpy(1.0, &gs, acc(&mut grads, *state, c));
                }
                Op::LogSoftmaxAt { logits, index } => {
                    let z = &self.nodes[logits.0].value;
                    let p = softmax(z);
                    let gz = acc(&mut grads, *logits, z.len());
                    for (k, (gzk, pk)) in gz.iter_mut().zip(p).enumerate() {
                        let onehot = if k == *index { 1.0 } else { 0.0 };
                        *gzk += g[0] * (onehot - pk);
                    }
                }
                Op::SigmoidBce { logits, targets } => {
                    let z = &self.nodes[logits.0].value;
                    let gz = acc(&mut grads, *logits, z.len());
                    for ((gzk, &zk), &y) in gz.iter_mut().zip(z).zip(targets) {
                        let p = sigmoid(zk);
                        // clamped region is flat
                        let dp = if p > PROB_CLAMP && p < 1.0 - PROB_CLAMP { p - y } else { 0.0 };
                        *gzk += g[0] * dp;
                    }
                }
                Op::Linear(terms) => {
                    for &(v, c) in terms {
                        axpy(c, &g, acc(&mut grads, v, g.len()));
                    }
                }
                Op::Sum(x) => {
                    let len = self.nodes[x.0].value.len();
                    let gx = acc(&mut grads, *x, len);
                    gx.iter_mut().for_each(|v| *v += g[0]);
                }
            }
        }
        Ok(())
    }
}

/// Compares tape gradients with central finite differences over every
/// parameter entry and returns the largest relative error, where the
/// denominator is `max(|analytic|, |numeric|, 1e-6)`.
pub fn grad_check<F, E>(store: &mut ParamStore, eps: f64, f: F) -> Result<f64, E>
where
    F: Fn(&ParamStore, &mut Tape) -> Result<Var, E>,
    E: From<NumError>,
{
    store.zero_grad();
    let mut tape = Tape::new();
    let loss = f(store, &mut tape)?;
    tape.backward(loss, store)?;
    let analytic: Vec<Vec<f64>> = store.params.iter().map(|p| p.grad.data.clone()).collect();
    store.zero_grad();

    let eval = |store: &ParamStore| -> Result<f64, E> {
        let mut t = Tape::new();
        let v = f(store, &mut t)?;
        Ok(t.scalar(v))
    };
    let mut worst: f64 = 0.0;
    for (pi, grads) in analytic.iter().enumerate() {
        for (k, &a) in grads.iter().enumerate() {
            let orig = store.params[pi].value.data[k];
            store.params[pi].value.data[k] = orig + eps;
            let up = eval(store)?;
            store.params[pi].value.data[k] = orig - eps;
            let down = eval(store)?;
            store.params[pi].value.data[k] = orig;
            let numeric = (up - down) / (2.0 * eps);
            let denom = a.abs().max(numeric.abs()).max(1e-6);
            worst = worst.max((a - numeric).abs() / denom);
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(7)
    }

    #[test]
    fn affine_examples() {
        let mut store = ParamStore::new();
        let id = store.add("id", Matrix::identity(3)).unwrap();
        let zb = store.add("zb", Matrix::zeros(3, 1)).unwrap();
        let w = store.add("w", Matrix::from_vec(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap()).unwrap();
        let mut tape = Tape::new();
        let x = tape.constant(vec![0.3, -1.0, 2.5]);
        let y = tape.affine(&store, id, Some(zb), x).unwrap();
        assert_eq!(tape.value(y), &[0.3, -1.0, 2.5]);
        let x2 = tape.constant(vec![1.0, 1.0]);
        let y2 = tape.affine(&store, w, None, x2).unwrap();
        assert_eq!(tape.value(y2), &[3.0, 7.0]);
        assert!(matches!(tape.affine(&store, w, None, x), Err(NumError::Shape { .. })));
    }

    #[test]
    fn affine_wide_projection_shape() {
        let (d, c) = (40, 50);
        let mut store = ParamStore::new();
        let w2 = store.add("w2", Matrix::uniform(500, d + c, 0.1, &mut rng())).unwrap();
        let mut tape = Tape::new();
        let e = tape.constant(vec![0.1; d]);
        let l = tape.constant(vec![0.2; c]);
        let x = tape.concat(&[e, l]);
        let y = tape.affine(&store, w2, None, x).unwrap();
        assert_eq!(tape.value(y).len(), 500);
    }

    #[test]
    fn sparse_and_dense_inputs_agree() {
        let mut store = ParamStore::new();
        let w = store.add("w", Matrix::uniform(4, 6, 1.0, &mut rng())).unwrap();
        let b = store.add("b", Matrix::uniform(4, 1, 1.0, &mut rng())).unwrap();
        let sparse = InputVec::Sparse { dim: 6, indices: vec![1, 4], values: vec![2.0, -0.5] };
        let dense = InputVec::Dense(sparse.to_dense());
        let mut tape = Tape::new();
        let a = tape.affine_input(&store, w, Some(b), Arc::new(sparse)).unwrap();
        let c = tape.affine_input(&store, w, Some(b), Arc::new(dense)).unwrap();
        for (x, y) in tape.value(a).iter().zip(tape.value(c)) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn activation_examples() {
        assert_eq!(softmax(&[0.0, 0.0]), vec![0.5, 0.5]);
        assert_eq!(sigmoid(0.0), 0.5);
        let p = softmax(&[1000.0, 0.0]);
        assert!(p.iter().all(|v| v.is_finite()));
        // log-sum-exp oracle: p1 = exp(0 - lse)
        let lse = 1000.0 + (1.0 + (-1000.0f64).exp()).ln();
        assert!((p[0] - (1000.0 - lse).exp()).abs() < 1e-15);
        assert!(p[1] < 1e-300);
        assert_eq!(relu(&[-1.0, 0.0, 2.0]), vec![0.0, 0.0, 2.0]);
        assert!(sigmoid(-800.0) > 0.0 || sigmoid(-800.0) == 0.0);
        assert!(sigmoid(40.0) <= 1.0);
    }

    #[test]
    fn bce_matches_plain_formula_and_clamps() {
        for &(z, y) in &[(0.3, 1.0), (-2.0, 0.0), (1.5, 0.0)] {
            let p = sigmoid(z);
            let plain = -(y * p.ln() + (1.0 - y) * (1.0 - p).ln());
            assert!((bce_with_logit(z, y) - plain).abs() < 1e-12);
        }
        assert!((bce_with_logit(-100.0, 1.0) - (-PROB_CLAMP.ln())).abs() < 1e-9);
        assert!((bce_with_logit(0.0, 1.0) - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn adam_null_update_and_descent() {
        let mut store = ParamStore::new();
        let w = store.add("w", Matrix::from_vec(1, 1, vec![1.0]).unwrap()).unwrap();
        let cfg = AdamConfig { weight_decay: 0.0, ..AdamConfig::default() };
        store.adam_step(&cfg);
        assert_eq!(store.value(w).data(), &[1.0]);

        // f(w) = w * w
        let mut tape = Tape::new();
        let x = tape.param(&store, w);
        let sq = tape.score(&store, w, &[0], None, x).unwrap();
        let loss = tape.sum(sq);
        tape.backward(loss, &mut store).unwrap();
        assert_eq!(store.grad(w).data(), &[2.0]);
        store.adam_step(&cfg);
        assert!(store.value(w).data()[0] < 1.0);
        assert_eq!(store.grad(w).data(), &[0.0]);
    }

    #[test]
    fn adam_defaults() {
        let cfg = AdamConfig::default();
        assert_eq!((cfg.lr, cfg.weight_decay), (1e-3, 1e-6));
        assert_eq!((cfg.beta1, cfg.beta2, cfg.eps), (0.9, 0.999, 1e-8));
    }

    #[test]
    fn decoupled_decay_shrinks_without_gradient() {
        let mut store = ParamStore::new();
        let w = store.add("w", Matrix::from_vec(1, 1, vec![2.0]).unwrap()).unwrap();
        store.adam_step(&AdamConfig { lr: 0.1, weight_decay: 0.5, ..AdamConfig::default() });
        assert!((store.value(w).data()[0] - 2.0 * (1.0 - 0.05)).abs() < 1e-15);
    }

    #[test]
    fn backward_errors() {
        let mut store = ParamStore::new();
        let tape = Tape::new();
        assert!(matches!(tape.backward(Var(0), &mut store), Err(NumError::NoForward)));
        let mut tape = Tape::new();
        let v = tape.constant(vec![1.0, 2.0]);
        assert!(matches!(tape.backward(v, &mut store), Err(NumError::NotScalar(2))));
    }

    #[test]
    fn grad_check_every_op() {
        let mut r = rng();
        let mut store = ParamStore::new();
        let w1 = store.add("w1", Matrix::uniform(5, 3, 1.0, &mut r)).unwrap();
        let b1 = store.add("b1", Matrix::uniform(5, 1, 1.0, &mut r)).unwrap();
        let w2 = store.add("w2", Matrix::uniform(4, 9, 1.0, &mut r)).unwrap();
        let table = store.add("table", Matrix::uniform(3, 4, 1.0, &mut r)).unwrap();
        let stop = store.add("stop", Matrix::uniform(1, 4, 1.0, &mut r)).unwrap();
        let input = Arc::new(InputVec::Sparse { dim: 3, indices: vec![0, 2], values: vec![1.3, -0.7] });
        let err = grad_check(&mut store, 1e-5, |s, t| -> Result<Var, NumError> {
            let h = t.affine_input(s, w1, Some(b1), input.clone())?;
            let h = t.sigmoid(h);
            let row = t.row(s, table, 1)?;
            let hh = t.concat(&[h, row]);
            let hh = t.relu(hh);
            let hh = t.concat(&[hh]);
            let h2 = t.affine(s, w2, None, hh)?;
            let st = t.relu(h2);
            let logits = t.score(s, table, &[0, 2], Some(stop), st)?;
            let lp = t.log_softmax_at(logits, 1)?;
            let bce = t.sigmoid_bce(logits, vec![1.0, 0.0, 1.0])?;
            let sm = t.softmax(logits);
            let sm = t.sum(sm);
            let sq = t.linear(&[(h2, 0.5), (st, -0.25)])?;
            let sq = t.sigmoid(sq);
            let sq = t.sum(sq);
            t.linear(&[(lp, -1.3), (bce, 0.7), (sm, 2.0), (sq, 1.1)])
        })
        .unwrap();
        assert!(err < 1e-6, "max relative error {err}");
    }

    #[test]
    fn grad_check_quadratic_form() {
        let mut r = rng();
        let mut store = ParamStore::new();
        let a = store.add("a", Matrix::uniform(4, 4, 1.0, &mut r)).unwrap();
        let x = store.add("x", Matrix::uniform(1, 4, 1.0, &mut r)).unwrap();
        let err = grad_check(&mut store, 1e-5, |s, t| -> Result<Var, NumError> {
            let xv = t.param(s, x);
            let ax = t.affine(s, a, None, xv)?;
            let q = t.score(s, x, &[0], None, ax)?;
            Ok(t.sum(q))
        })
        .unwrap();
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn constant_function_has_zero_gradient() {
        let mut store = ParamStore::new();
        let w = store.add("w", Matrix::uniform(2, 2, 1.0, &mut rng())).unwrap();
        let err = grad_check(&mut store, 1e-5, |_, t| -> Result<Var, NumError> {
            let c = t.constant(vec![3.0]);
            Ok(t.sum(c))
        })
        .unwrap();
        assert_eq!(err, 0.0);
        assert!(store.grad(w).data().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let mut store = ParamStore::new();
        store.add("enc.w1", Matrix::uniform(3, 5, 1.0, &mut rng())).unwrap();
        store
            .add("odd", Matrix::from_vec(1, 3, vec![f64::MIN_POSITIVE, -0.0, 1.0 / 3.0]).unwrap())
            .unwrap();
        let meta = BTreeMap::from([("mode".to_string(), "rl_full".to_string())]);
        let mut buf = Vec::new();
        store.save(&meta, &mut buf).unwrap();
        let (loaded, meta2) = ParamStore::load(&mut buf.as_slice()).unwrap();
        assert_eq!(meta, meta2);
        assert_eq!(loaded.len(), 2);
        for id in store.ids() {
            let a: Vec<u64> = store.value(id).data().iter().map(|v| v.to_bits()).collect();
            let b: Vec<u64> = loaded.value(id).data().iter().map(|v| v.to_bits()).collect();
            assert_eq!(a, b);
            assert_eq!(store.name(id), loaded.name(id));
        }
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(ParamStore::load(&mut bad.as_slice()), Err(NumError::Format(_))));
    }
}
