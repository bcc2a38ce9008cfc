#![allow(dead_code)]

use rand::Rng;
use taxopolicy::hierarchy::{LabelHierarchy, LabelSet};

/// Random hierarchy of depth 1..=5 rooted at `root`. With `dag`, some labels
/// get a second parent from an earlier level.
pub fn random_hierarchy<R: Rng>(rng: &mut R, dag: bool) -> LabelHierarchy {
    let depth = rng.random_range(1..=5);
    let mut levels: Vec<Vec<String>> = vec![vec!["root".to_string()]];
    let mut edges = Vec::new();
    let mut next_id = 0;
    for lvl in 1..=depth {
        let width = if lvl == 1 { rng.random_range(1..=4) } else { rng.random_range(1..=6) };
        let mut names = Vec::new();
        for _ in 0..width {
            let name = format!("v{next_id}");
            next_id += 1;
            let prev = &levels[lvl - 1];
            let parent = prev[rng.random_range(0..prev.len())].clone();
            edges.push((parent.clone(), name.clone()));
            if dag && lvl >= 2 && rng.random_bool(0.3) {
                let earlier = rng.random_range(1..lvl);
                let cand = &levels[earlier][rng.random_range(0..levels[earlier].len())];
                if *cand != parent {
                    edges.push((cand.clone(), name.clone()));
                }
            }
            names.push(name);
        }
        levels.push(names);
    }
    LabelHierarchy::from_edges(edges).expect("generated hierarchy is valid")
}

/// Ancestor-closed random label set, empty with some probability.
pub fn random_gold<R: Rng>(rng: &mut R, h: &LabelHierarchy) -> LabelSet {
    let mut seed = LabelSet::new();
    if !rng.random_bool(0.15) {
        for l in h.labels() {
            if rng.random_bool(0.2) {
                seed.insert(l);
            }
        }
    }
    h.ancestor_closure(&seed)
}

/// Any random label subset, not necessarily consistent.
pub fn random_subset<R: Rng>(rng: &mut R, h: &LabelHierarchy, p: f64) -> LabelSet {
    h.labels().filter(|_| rng.random_bool(p)).collect()
}
