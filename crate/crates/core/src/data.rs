//! Dataset files, validation splits and the synthetic benchmark.
//!
//! Example files hold one object per line:
//!
//! ```text
//! #dim=6
//! doc-1<TAB>Restaurants,Mexican<TAB>0:1.5 3:? 5:-2
//! ```
//!
//! Labels are hierarchy names separated by commas (the field may be empty),
//! features are sparse `index:value` pairs and `?` marks a missing value.
//! The `#dim=N` header is optional; without it the dimension is inferred from
//! the largest index seen.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::sync::Arc;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Normal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::encoder::ObjectFeatures;
use crate::hierarchy::{HierarchyError, LabelHierarchy, LabelId, LabelSet};
use crate::numcore::InputVec;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("line {line}: expected `id<TAB>labels<TAB>features`, got {text:?}")]
    Malformed { line: usize, text: String },
    #[error("line {line}: unknown label {name:?}")]
    UnknownLabel { line: usize, name: String },
    #[error("line {line}: malformed feature token {token:?}")]
    MalformedFeature { line: usize, token: String },
    #[error("feature dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid synthetic spec: {0}")]
    Spec(String),
    #[error("validation fraction must lie in (0, 1), got {0}")]
    Fraction(f64),
    #[error(transparent)]
    Hierarchy(#[from] HierarchyError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
    Test,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub features: ObjectFeatures,
    /// Ancestor-closed, root excluded.
    pub gold: LabelSet,
    pub split: Split,
}

/// Parsed contents of one examples file.
#[derive(Clone, Debug, PartialEq)]
pub struct ExampleFile {
    pub examples: Vec<Example>,
    pub dim: usize,
    /// Whether `dim` came from a `#dim=` header.
    pub declared: bool,
}

pub fn parse_examples(text: &str, hierarchy: &LabelHierarchy, split: Split) -> Result<ExampleFile, DataError> {
    let mut declared = None;
    let mut examples = Vec::new();
    let mut max_index = None::<usize>;
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let trimmed = raw.trim_end_matches('\r');
        if let Some(rest) = trimmed.strip_prefix("#dim=") {
            let d = rest
                .trim()
                .parse()
                .map_err(|_| DataError::Malformed { line, text: trimmed.to_string() })?;
            declared = Some(d);
            continue;
        }
        if trimmed.trim().is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = trimmed.split('\t').collect();
        if fields.len() != 3 || fields[0].is_empty() {
            return Err(DataError::Malformed { line, text: trimmed.to_string() });
        }
        let mut gold = LabelSet::new();
        for name in fields[1].split(',').map(str::trim).filter(|s| !s.is_empty()) {
            let id = hierarchy
                .id(name)
                .map_err(|_| DataError::UnknownLabel { line, name: name.to_string() })?;
            if !hierarchy.is_root(id) {
                gold.insert(id);
            }
        }
        let mut feats = BTreeMap::new();
        for token in fields[2].split_whitespace() {
            let bad = || DataError::MalformedFeature { line, token: token.to_string() };
            let (k, v) = token.split_once(':').ok_or_else(bad)?;
            let k: usize = k.parse().map_err(|_| bad())?;
            let v = if v == "?" {
                f64::NAN
            } else {
                let v: f64 = v.parse().map_err(|_| bad())?;
                if !v.is_finite() {
                    return Err(bad());
                }
                v
            };
            if feats.insert(k, v).is_some() {
                return Err(bad());
            }
            max_index = max_index.max(Some(k));
        }
        if let (Some(d), Some(&k)) = (declared, feats.keys().next_back()) {
            if k >= d {
                return Err(DataError::Dimension(format!("line {line}: index {k} outside declared dim {d}")));
            }
        }
        let (indices, values) = feats.into_iter().unzip();
        examples.push(Example {
            features: ObjectFeatures {
                id: fields[0].to_string(),
                input: Arc::new(InputVec::Sparse { dim: 0, indices, values }),
            },
            gold: hierarchy.ancestor_closure(&gold),
            split,
        });
    }
    let inferred = max_index.map_or(0, |k| k + 1);
    let dim = declared.unwrap_or(inferred);
    for ex in &mut examples {
        set_dim(&mut ex.features, dim);
    }
    Ok(ExampleFile { examples, dim, declared: declared.is_some() })
}

fn set_dim(feats: &mut ObjectFeatures, new_dim: usize) {
    if let InputVec::Sparse { dim, .. } = Arc::make_mut(&mut feats.input) {
        *dim = new_dim;
    }
}

/// Resolves the common dimension of several files.
pub fn common_dim(files: &[&ExampleFile]) -> Result<usize, DataError> {
    let declared: BTreeSet<usize> = files.iter().filter(|f| f.declared).map(|f| f.dim).collect();
    let widest = files.iter().map(|f| f.dim).max().unwrap_or(0);
    match declared.len() {
        0 => Ok(widest),
        1 => {
            let d = *declared.iter().next().unwrap();
            if widest > d {
                Err(DataError::Dimension(format!("a file uses {widest} features, header declares {d}")))
            } else {
                Ok(d)
            }
        }
        _ => Err(DataError::Dimension(format!("files declare different dimensions {declared:?}"))),
    }
}

/// Rewrites a file's examples to `dim` features; fails if any is wider.
pub fn conform(file: ExampleFile, dim: usize) -> Result<Vec<Example>, DataError> {
    if file.dim > dim || (file.declared && file.dim != dim) {
        return Err(DataError::Dimension(format!("file has {} features, expected {dim}", file.dim)));
    }
    Ok(file
        .examples
        .into_iter()
        .map(|mut ex| {
            set_dim(&mut ex.features, dim);
            ex
        })
        .collect())
}

/// Writes examples in the format read by [`parse_examples`].
pub fn write_examples(examples: &[Example], hierarchy: &LabelHierarchy, dim: usize) -> Result<String, DataError> {
    let mut out = format!("#dim={dim}\n");
    for ex in examples {
        let names = ex
            .gold
            .iter()
            .map(|l| hierarchy.name(l))
            .collect::<Result<Vec<_>, _>>()?
            .join(",");
        let feats = match ex.features.input.as_ref() {
            InputVec::Sparse { indices, values, .. } => indices
                .iter()
                .zip(values)
                .map(|(k, v)| fmt_feature(*k, *v))
                .collect::<Vec<_>>(),
            InputVec::Dense(v) => v
                .iter()
                .enumerate()
                .filter(|(_, v)| **v != 0.0)
                .map(|(k, v)| fmt_feature(k, *v))
                .collect(),
        };
        let _ = writeln!(out, "{}\t{}\t{}", ex.features.id, names, feats.join(" "));
    }
    Ok(out)
}

fn fmt_feature(k: usize, v: f64) -> String {
    if v.is_nan() {
        format!("{k}:?")
    } else {
        format!("{k}:{v}")
    }
}

fn for_each_entry(input: &InputVec, mut f: impl FnMut(usize, f64)) {
    match input {
        InputVec::Sparse { indices, values, .. } => indices.iter().zip(values).for_each(|(&k, &v)| f(k, v)),
        InputVec::Dense(v) => v.iter().enumerate().for_each(|(k, &x)| f(k, x)),
    }
}

/// Fills `?` entries from `mean` (0 where `mean` is too short).
pub fn fill_missing(feats: &mut ObjectFeatures, mean: &[f64]) {
    let mut any = false;
    for_each_entry(&feats.input, |_, v| any |= v.is_nan());
    if !any {
        return;
    }
    let fill = |k: usize, v: &mut f64| {
        if v.is_nan() {
            *v = mean.get(k).copied().unwrap_or(0.0);
        }
    };
    match Arc::make_mut(&mut feats.input) {
        InputVec::Sparse { indices, values, .. } => {
            indices.iter().zip(values.iter_mut()).for_each(|(&k, v)| fill(k, v))
        }
        InputVec::Dense(v) => v.iter_mut().enumerate().for_each(|(k, x)| fill(k, x)),
    }
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub hierarchy: LabelHierarchy,
    pub examples: Vec<Example>,
    pub feature_dim: usize,
}

impl Dataset {
    /// Combines a training file and a test file under one hierarchy.
    pub fn from_files(hierarchy: LabelHierarchy, train: ExampleFile, test: ExampleFile) -> Result<Self, DataError> {
        let dim = common_dim(&[&train, &test])?;
        let mut examples = conform(train, dim)?;
        examples.extend(conform(test, dim)?);
        Ok(Dataset { hierarchy, examples, feature_dim: dim })
    }

    pub fn load(hierarchy_text: &str, train_text: &str, test_text: &str) -> Result<Self, DataError> {
        let h = LabelHierarchy::parse(hierarchy_text)?;
        let train = parse_examples(train_text, &h, Split::Train)?;
        let test = parse_examples(test_text, &h, Split::Test)?;
        Self::from_files(h, train, test)
    }

    pub fn indices(&self, split: Split) -> Vec<usize> {
        (0..self.examples.len()).filter(|&i| self.examples[i].split == split).collect()
    }

    pub fn split_examples(&self, split: Split) -> Vec<&Example> {
        self.examples.iter().filter(|e| e.split == split).collect()
    }

    pub fn count(&self, split: Split) -> usize {
        self.examples.iter().filter(|e| e.split == split).count()
    }

    /// Largest gold set among training examples.
    pub fn max_gold_len(&self) -> usize {
        self.examples.iter().filter(|e| e.split == Split::Train).map(|e| e.gold.len()).max().unwrap_or(0)
    }

    /// Number of examples carrying each label within `split`.
    pub fn label_support(&self, split: Split) -> BTreeMap<LabelId, usize> {
        let mut support: BTreeMap<LabelId, usize> = self.hierarchy.labels().map(|l| (l, 0)).collect();
        for ex in self.examples.iter().filter(|e| e.split == split) {
            for l in ex.gold.iter() {
                *support.entry(l).or_default() += 1;
            }
        }
        support
    }

    /// Moves a seeded random `fraction` of the training examples to validation.
    pub fn split_validation(&mut self, fraction: f64, seed: u64) -> Result<(), DataError> {
        if !(fraction > 0.0 && fraction < 1.0) {
            return Err(DataError::Fraction(fraction));
        }
        let mut train = self.indices(Split::Train);
        train.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let n = (fraction * train.len() as f64).round() as usize;
        for &i in &train[..n] {
            self.examples[i].split = Split::Validation;
        }
        Ok(())
    }

    /// Per-feature mean over the training split, skipping missing values.
    /// Absent sparse entries count as zeros; features never observed get 0.
    pub fn training_means(&self) -> Vec<f64> {
        let d = self.feature_dim;
        let mut sum = vec![0.0; d];
        let mut missing = vec![0usize; d];
        let mut n = 0usize;
        for ex in self.examples.iter().filter(|e| e.split == Split::Train) {
            n += 1;
            for_each_entry(&ex.features.input, |k, v| {
                if v.is_nan() {
                    missing[k] += 1;
                } else {
                    sum[k] += v;
                }
            });
        }
        (0..d)
            .map(|k| {
                let observed = n - missing[k];
                if observed == 0 {
                    0.0
                } else {
                    sum[k] / observed as f64
                }
            })
            .collect()
    }

    /// Replaces missing values by the training means; returns the means used.
    pub fn impute_missing(&mut self) -> Vec<f64> {
        let mean = self.training_means();
        for ex in &mut self.examples {
            fill_missing(&mut ex.features, &mean);
        }
        mean
    }

    pub fn has_missing(&self) -> bool {
        self.examples.iter().any(|e| {
            let mut any = false;
            for_each_entry(&e.features.input, |_, v| any |= v.is_nan());
            any
        })
    }
}

/// Parameters of the synthetic benchmark.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub depth: usize,
    pub branching: usize,
    pub feature_dim: usize,
    /// Standard deviation of the Gaussian feature noise.
    pub noise: f64,
    pub train: usize,
    pub test: usize,
    /// Chance of adding each further path to an example's label set.
    pub extra_path_prob: f64,
    pub max_paths: usize,
    /// Chance of descending one more level along a path.
    pub continue_prob: f64,
    /// Exponent of the rank weights used when picking a child.
    pub zipf: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            depth: 3,
            branching: 3,
            feature_dim: 32,
            noise: 1.0,
            train: 2000,
            test: 500,
            extra_path_prob: 0.35,
            max_paths: 3,
            continue_prob: 0.85,
            zipf: 2.0,
            seed: 7,
        }
    }
}

impl SyntheticSpec {
    fn validate(&self) -> Result<(), DataError> {
        let prob = |p: f64| (0.0..=1.0).contains(&p);
        if self.depth == 0 || self.branching == 0 || self.feature_dim == 0 || self.max_paths == 0 {
            return Err(DataError::Spec("depth, branching, feature_dim and max_paths must be positive".into()));
        }
        if self.train == 0 || self.test == 0 {
            return Err(DataError::Spec("example counts must be positive".into()));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite() && self.zipf >= 0.0 && self.zipf.is_finite()) {
            return Err(DataError::Spec("noise and zipf must be finite and non-negative".into()));
        }
        if !prob(self.extra_path_prob) || !prob(self.continue_prob) {
            return Err(DataError::Spec("probabilities must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

/// Full `branching`-ary hierarchy of the given depth, labels named by their path (`n2.1.3`).
pub fn full_tree(depth: usize, branching: usize) -> Result<LabelHierarchy, DataError> {
    let mut edges = Vec::new();
    let mut frontier = vec![String::from("root")];
    for _ in 0..depth {
        let mut next = Vec::new();
        for parent in &frontier {
            for c in 1..=branching {
                let child = if parent == "root" { format!("n{c}") } else { format!("{parent}.{c}") };
                edges.push((parent.clone(), child.clone()));
                next.push(child);
            }
        }
        frontier = next;
    }
    Ok(LabelHierarchy::from_edges(edges)?)
}

/// Seeded synthetic dataset: consistent multi-path gold sets and noisy sums of label signatures.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Dataset, DataError> {
    spec.validate()?;
    let hierarchy = full_tree(spec.depth, spec.branching)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let unit = Normal::new(0.0, 1.0).expect("valid normal");
    let signatures: Vec<Vec<f64>> = (0..hierarchy.len())
        .map(|_| (0..spec.feature_dim).map(|_| unit.sample(&mut rng)).collect())
        .collect();
    let weights: Vec<f64> = (0..spec.branching).map(|i| 1.0 / ((i + 1) as f64).powf(spec.zipf)).collect();
    let pick = WeightedIndex::new(&weights).expect("positive weights");
    let noise = Normal::new(0.0, spec.noise).map_err(|e| DataError::Spec(e.to_string()))?;

    let mut examples = Vec::with_capacity(spec.train + spec.test);
    for i in 0..spec.train + spec.test {
        let gold = sample_gold(&hierarchy, spec, &pick, &mut rng);
        let mut x = vec![0.0; spec.feature_dim];
        for l in gold.iter() {
            for (xk, sk) in x.iter_mut().zip(&signatures[l.0]) {
                *xk += sk;
            }
        }
        if spec.noise > 0.0 {
            for xk in &mut x {
                *xk += noise.sample(&mut rng);
            }
        }
        let split = if i < spec.train { Split::Train } else { Split::Test };
        examples.push(Example { features: ObjectFeatures::dense(format!("s{i}"), x), gold, split });
    }
    Ok(Dataset { hierarchy, examples, feature_dim: spec.feature_dim })
}

fn sample_gold<R: Rng + ?Sized>(
    hierarchy: &LabelHierarchy,
    spec: &SyntheticSpec,
    pick: &WeightedIndex<f64>,
    rng: &mut R,
) -> LabelSet {
    let mut gold = LabelSet::new();
    let mut paths = 1;
    while paths < spec.max_paths && rng.random_bool(spec.extra_path_prob) {
        paths += 1;
    }
    for _ in 0..paths {
        let mut node = hierarchy.root();
        for level in 0..spec.depth {
            if level > 0 && !rng.random_bool(spec.continue_prob) {
                break;
            }
            let children = hierarchy.children(node).expect("valid node");
            node = children[pick.sample(rng)];
            gold.insert(node);
        }
    }
    gold
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const YELP: &str = "Restaurants\tCaribbean\nRestaurants\tChinese\nRestaurants\tMexican\n\
                        Bars\tBeer Bars\nBars\tWine Bars\nCaribbean\tDominican\n";

    #[test]
    fn leaf_only_labels_are_closed() {
        let h = LabelHierarchy::parse(YELP).unwrap();
        let f = parse_examples("d1\tDominican\t0:1 2:3\n", &h, Split::Train).unwrap();
        let ex = &f.examples[0];
        let names: BTreeSet<&str> = ex.gold.iter().map(|l| h.name(l).unwrap()).collect();
        assert_eq!(names, ["Caribbean", "Dominican", "Restaurants"].into_iter().collect());
        assert!(h.is_consistent(&ex.gold));
        assert_eq!(f.dim, 3);
        assert_eq!(ex.features.input.to_dense(), vec![1.0, 0.0, 3.0]);
    }

    #[test]
    fn parse_errors() {
        let h = LabelHierarchy::parse(YELP).unwrap();
        assert!(matches!(
            parse_examples("d\tPizza\t0:1\n", &h, Split::Train),
            Err(DataError::UnknownLabel { line: 1, .. })
        ));
        for bad in ["d\tBars\t0=1\n", "d\tBars\tx:1\n", "d\tBars\t0:abc\n", "d\tBars\t0:1 0:2\n", "d\tBars\t0:inf\n"] {
            assert!(matches!(parse_examples(bad, &h, Split::Train), Err(DataError::MalformedFeature { .. })), "{bad}");
        }
        assert!(matches!(parse_examples("d\tBars\n", &h, Split::Train), Err(DataError::Malformed { .. })));
        assert!(matches!(
            parse_examples("#dim=2\nd\tBars\t5:1\n", &h, Split::Train),
            Err(DataError::Dimension(_))
        ));
    }

    #[test]
    fn empty_labels_and_comments() {
        let h = LabelHierarchy::parse(YELP).unwrap();
        let f = parse_examples("# note\n\nd\t\t1:2\n", &h, Split::Test).unwrap();
        assert_eq!(f.examples.len(), 1);
        assert!(f.examples[0].gold.is_empty());
        assert_eq!(f.examples[0].split, Split::Test);
    }

    #[test]
    fn dimensions_reconcile() {
        let h = LabelHierarchy::parse(YELP).unwrap();
        let a = parse_examples("a\tBars\t0:1\n", &h, Split::Train).unwrap();
        let b = parse_examples("b\tBars\t4:1\n", &h, Split::Test).unwrap();
        let ds = Dataset::from_files(h.clone(), a.clone(), b).unwrap();
        assert_eq!(ds.feature_dim, 5);
        assert!(ds.examples.iter().all(|e| e.features.dim() == 5));

        let c = parse_examples("#dim=3\nc\tBars\t0:1\n", &h, Split::Test).unwrap();
        let d = parse_examples("#dim=4\nd\tBars\t0:1\n", &h, Split::Test).unwrap();
        assert!(Dataset::from_files(h.clone(), c.clone(), d).is_err());
        let wide = parse_examples("w\tBars\t3:1\n", &h, Split::Train).unwrap();
        assert!(Dataset::from_files(h, wide, c).is_err());
    }

    #[test]
    fn write_read_round_trip() {
        let h = LabelHierarchy::parse(YELP).unwrap();
        let text = "#dim=6\nd1\tDominican,Bars\t0:1.5 3:? 5:-0.1\nd2\t\t\nd3\tWine Bars\t2:0.30000000000000004\n";
        let f = parse_examples(text, &h, Split::Train).unwrap();
        let written = write_examples(&f.examples, &h, 6).unwrap();
        let again = parse_examples(&written, &h, Split::Train).unwrap();
        assert_eq!(again.dim, 6);
        assert_eq!(again.examples.len(), 3);
        for (a, b) in f.examples.iter().zip(&again.examples) {
            assert_eq!(a.gold, b.gold);
            assert_eq!(a.features.id, b.features.id);
            let bits = |e: &Example| e.features.input.to_dense().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(a), bits(b));
        }
        assert_eq!(write_examples(&again.examples, &h, 6).unwrap(), written);
    }

    #[test]
    fn imputation_uses_training_mean_only() {
        let h = LabelHierarchy::parse(YELP).unwrap();
        let train = parse_examples("a\tBars\t0:1 1:?\nb\tBars\t0:3 1:4\nc\tBars\t0:? 1:2\n", &h, Split::Train).unwrap();
        let test = parse_examples("t\tBars\t0:? 1:100\n", &h, Split::Test).unwrap();
        let mut ds = Dataset::from_files(h, train, test).unwrap();
        assert!(ds.has_missing());
        assert_eq!(ds.impute_missing(), vec![2.0, 3.0]);
        assert!(!ds.has_missing());
        assert_eq!(ds.examples[0].features.input.to_dense(), vec![1.0, 3.0]);
        assert_eq!(ds.examples[2].features.input.to_dense(), vec![2.0, 2.0]);
        // test value 100 must not leak into the mean
        assert_eq!(ds.examples[3].features.input.to_dense(), vec![2.0, 100.0]);
    }

    #[test]
    fn validation_split() {
        let mut ds = generate_synthetic(&SyntheticSpec { train: 2, test: 1, ..Default::default() }).unwrap();
        ds.split_validation(0.5, 1).unwrap();
        assert_eq!((ds.count(Split::Train), ds.count(Split::Validation), ds.count(Split::Test)), (1, 1, 1));
        assert!(ds.split_validation(1.0, 1).is_err());
        assert!(ds.split_validation(0.0, 1).is_err());

        let spec = SyntheticSpec { train: 23_149, test: 1, feature_dim: 1, ..Default::default() };
        let mut a = generate_synthetic(&spec).unwrap();
        let mut b = a.clone();
        a.split_validation(0.1, 9).unwrap();
        b.split_validation(0.1, 9).unwrap();
        assert_eq!(a.count(Split::Validation), 2315);
        assert_eq!(a.indices(Split::Validation), b.indices(Split::Validation));
        assert_eq!(a.count(Split::Test), 1);
    }

    #[test]
    fn synthetic_shape() {
        let h = full_tree(3, 3).unwrap();
        assert_eq!(h.len(), 39);
        assert_eq!(h.depth(), 3);
        let spec = SyntheticSpec { train: 50, test: 10, ..Default::default() };
        let a = generate_synthetic(&spec).unwrap();
        let b = generate_synthetic(&spec).unwrap();
        assert_eq!(a.examples, b.examples);
        assert_eq!(a.count(Split::Train), 50);
        assert_eq!(a.count(Split::Test), 10);
        assert!(a.examples.iter().all(|e| e.features.dim() == 32));
    }

    #[test]
    fn deeper_labels_are_rarer() {
        let ds = generate_synthetic(&SyntheticSpec { train: 3000, ..Default::default() }).unwrap();
        let support = ds.label_support(Split::Train);
        let mut by_level = [0usize; 4];
        for (l, n) in support {
            by_level[ds.hierarchy.level(l)] += n;
        }
        let mean = |lvl: usize, count: usize| by_level[lvl] as f64 / count as f64;
        assert!(mean(1, 3) > mean(2, 9));
        assert!(mean(2, 9) > mean(3, 27));
    }

    #[test]
    fn zero_noise_identical_gold_identical_features() {
        let ds = generate_synthetic(&SyntheticSpec { noise: 0.0, train: 400, ..Default::default() }).unwrap();
        let mut by_gold: BTreeMap<Vec<LabelId>, Vec<f64>> = BTreeMap::new();
        let mut repeats = 0;
        for ex in &ds.examples {
            let key: Vec<LabelId> = ex.gold.iter().collect();
            let x = ex.features.input.to_dense();
            if let Some(prev) = by_gold.get(&key) {
                assert_eq!(prev, &x);
                repeats += 1;
            } else {
                by_gold.insert(key, x);
            }
        }
        assert!(repeats > 0);
    }

    #[test]
    fn invalid_specs() {
        for spec in [
            SyntheticSpec { depth: 0, ..Default::default() },
            SyntheticSpec { train: 0, ..Default::default() },
            SyntheticSpec { noise: -1.0, ..Default::default() },
            SyntheticSpec { continue_prob: 1.5, ..Default::default() },
        ] {
            assert!(matches!(generate_synthetic(&spec), Err(DataError::Spec(_))));
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(20))]
        #[test]
        fn synthetic_gold_always_consistent(
            seed in 0u64..1000,
            depth in 1usize..5,
            branching in 1usize..4,
            extra in 0.0f64..1.0,
            cont in 0.0f64..1.0,
        ) {
            let spec = SyntheticSpec {
                depth, branching, seed, feature_dim: 2, train: 500, test: 1,
                extra_path_prob: extra, continue_prob: cont, ..Default::default()
            };
            let ds = generate_synthetic(&spec).unwrap();
            for ex in &ds.examples {
                prop_assert!(ds.hierarchy.is_consistent(&ex.gold));
                prop_assert!(!ex.gold.is_empty());
            }
        }
    }
}
