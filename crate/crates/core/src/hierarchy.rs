//! Label hierarchy: a tree or DAG of labels hanging off a single root.
//!
//! Non-root labels get dense ids `0..len()` in first-appearance order; the
//! root always takes id `len()` and is never a member of a [`LabelSet`].

use std::collections::{BTreeSet, HashMap, HashSet, VecDeque};
use std::fmt;

use thiserror::Error;

/// Name given to the synthetic root when the input has several top-level labels.
pub const SYNTHETIC_ROOT: &str = "<root>";

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct LabelId(pub usize);

impl LabelId {
    pub fn index(self) -> usize {
        self.0
    }
}

impl fmt::Display for LabelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum HierarchyError {
    #[error("hierarchy has no edges")]
    Empty,
    #[error("line {line}: expected `parent<TAB>child`, got {text:?}")]
    Malformed { line: usize, text: String },
    #[error("duplicate edge {parent} -> {child}")]
    DuplicateEdge { parent: String, child: String },
    #[error("cycle detected through label {0:?}")]
    Cycle(String),
    #[error("unknown label {0}")]
    UnknownLabel(LabelId),
    #[error("unknown label name {0:?}")]
    UnknownName(String),
}

/// A set of non-root labels.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash)]
pub struct LabelSet {
    members: BTreeSet<LabelId>,
}

impl LabelSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, l: LabelId) -> bool {
        self.members.insert(l)
    }

    pub fn contains(&self, l: LabelId) -> bool {
        self.members.contains(&l)
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    /// Members in ascending id order.
    pub fn iter(&self) -> impl Iterator<Item = LabelId> + '_ {
        self.members.iter().copied()
    }

    pub fn intersection_len(&self, other: &LabelSet) -> usize {
        self.members.intersection(&other.members).count()
    }
}

impl FromIterator<LabelId> for LabelSet {
    fn from_iter<I: IntoIterator<Item = LabelId>>(iter: I) -> Self {
        LabelSet { members: iter.into_iter().collect() }
    }
}

#[derive(Clone, Debug)]
pub struct LabelHierarchy {
    names: Vec<String>,
    root_name: String,
    index: HashMap<String, LabelId>,
    // Indexed by id, root included at position `names.len()`.
    children: Vec<Vec<LabelId>>,
    parents: Vec<Vec<LabelId>>,
    levels: Vec<usize>,
}

impl LabelHierarchy {
    /// Parses `parent<TAB>child` lines. Blank lines and `#` comments are skipped.
    pub fn parse(source: &str) -> Result<Self, HierarchyError> {
        let mut edges = Vec::new();
        for (i, raw) in source.lines().enumerate() {
            let line = raw.trim_end_matches('\r');
            if line.trim().is_empty() || line.trim_start().starts_with('#') {
                continue;
            }
            let mut parts = line.split('\t');
            match (parts.next(), parts.next(), parts.next()) {
                (Some(p), Some(c), None) if !p.is_empty() && !c.is_empty() => {
                    edges.push((p.to_string(), c.to_string()))
                }
                _ => {
                    return Err(HierarchyError::Malformed { line: i + 1, text: line.to_string() })
                }
            }
        }
        Self::from_edges(edges)
    }

    pub fn from_edges<I, S>(edges: I) -> Result<Self, HierarchyError>
    where
        I: IntoIterator<Item = (S, S)>,
        S: Into<String>,
    {
        let mut order: Vec<String> = Vec::new();
        let mut raw_index: HashMap<String, usize> = HashMap::new();
        let mut raw_edges: Vec<(usize, usize)> = Vec::new();
        let mut seen: HashSet<(usize, usize)> = HashSet::new();
        let mut intern = |name: String, order: &mut Vec<String>| -> usize {
            *raw_index.entry(name.clone()).or_insert_with(|| {
                order.push(name);
                order.len() - 1
            })
        };
        for (p, c) in edges {
            let p = intern(p.into(), &mut order);
            let c = intern(c.into(), &mut order);
            if p == c {
                return Err(HierarchyError::Cycle(order[p].clone()));
            }
            if !seen.insert((p, c)) {
                return Err(HierarchyError::DuplicateEdge {
                    parent: order[p].clone(),
                    child: order[c].clone(),
                });
            }
            raw_edges.push((p, c));
        }
        if raw_edges.is_empty() {
            return Err(HierarchyError::Empty);
        }

        let n_raw = order.len();
        let mut has_parent = vec![false; n_raw];
        for &(_, c) in &raw_edges {
            has_parent[c] = true;
        }
        let tops: Vec<usize> = (0..n_raw).filter(|&i| !has_parent[i]).collect();
        if tops.is_empty() {
            // every label has a parent, so the graph must loop somewhere
            return Err(HierarchyError::Cycle(order[raw_edges[0].0].clone()));
        }

        // Map raw indices to final ids: real labels first, root last.
        let (root_raw, root_name) = if tops.len() == 1 {
            (Some(tops[0]), order[tops[0]].clone())
        } else {
            (None, SYNTHETIC_ROOT.to_string())
        };
        let mut remap = vec![0usize; n_raw];
        let mut names = Vec::with_capacity(n_raw);
        for (raw, name) in order.iter().enumerate() {
            if Some(raw) == root_raw {
                continue;
            }
            remap[raw] = names.len();
            names.push(name.clone());
        }
        let n = names.len();
        if let Some(r) = root_raw {
            remap[r] = n;
        }
        let mut children = vec![Vec::new(); n + 1];
        let mut parents = vec![Vec::new(); n + 1];
        for &(p, c) in &raw_edges {
            children[remap[p]].push(LabelId(remap[c]));
            parents[remap[c]].push(LabelId(remap[p]));
        }
        if root_raw.is_none() {
            for &t in &tops {
                children[n].push(LabelId(remap[t]));
                parents[remap[t]].push(LabelId(n));
            }
        }
        for list in children.iter_mut().chain(parents.iter_mut()) {
            list.sort_unstable();
        }

        // Kahn's algorithm from the root; anything left over sits on a cycle.
        let mut indegree: Vec<usize> = parents.iter().map(Vec::len).collect();
        let mut queue = VecDeque::from([n]);
        let mut visited = 0;
        while let Some(u) = queue.pop_front() {
            visited += 1;
            for &c in &children[u] {
                indegree[c.0] -= 1;
                if indegree[c.0] == 0 {
                    queue.push_back(c.0);
                }
            }
        }
        if visited != n + 1 {
            let stuck = (0..n).find(|&i| indegree[i] > 0).unwrap_or(0);
            return Err(HierarchyError::Cycle(names[stuck].clone()));
        }

        let index = names.iter().enumerate().map(|(i, s)| (s.clone(), LabelId(i))).collect();
        let levels = bfs_levels(&children, n);
        Ok(LabelHierarchy { names, root_name, index, children, parents, levels })
    }

    /// Number of non-root labels, |L|.
    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn root(&self) -> LabelId {
        LabelId(self.names.len())
    }

    pub fn is_root(&self, l: LabelId) -> bool {
        l.0 == self.names.len()
    }

    /// Non-root labels in id order.
    pub fn labels(&self) -> impl Iterator<Item = LabelId> {
        (0..self.names.len()).map(LabelId)
    }

    pub fn name(&self, l: LabelId) -> Result<&str, HierarchyError> {
        if self.is_root(l) {
            Ok(&self.root_name)
        } else {
            self.names.get(l.0).map(String::as_str).ok_or(HierarchyError::UnknownLabel(l))
        }
    }

    pub fn id(&self, name: &str) -> Result<LabelId, HierarchyError> {
        self.index
            .get(name)
            .copied()
            .ok_or_else(|| HierarchyError::UnknownName(name.to_string()))
    }

    fn check(&self, l: LabelId) -> Result<(), HierarchyError> {
        if l.0 <= self.names.len() {
            Ok(())
        } else {
            Err(HierarchyError::UnknownLabel(l))
        }
    }

    /// Children in ascending id order.
    pub fn children(&self, l: LabelId) -> Result<&[LabelId], HierarchyError> {
        self.check(l)?;
        Ok(&self.children[l.0])
    }

    pub fn parents(&self, l: LabelId) -> Result<&[LabelId], HierarchyError> {
        self.check(l)?;
        Ok(&self.parents[l.0])
    }

    /// Every member has at least one parent that is either the root or a member.
    pub fn is_consistent(&self, set: &LabelSet) -> bool {
        set.iter().all(|l| {
            l.0 < self.names.len()
                && self.parents[l.0].iter().any(|&p| self.is_root(p) || set.contains(p))
        })
    }

    /// Shortest-path depth from the root, indexed by id (root included, depth 0).
    pub fn levels(&self) -> &[usize] {
        &self.levels
    }

    pub fn level(&self, l: LabelId) -> usize {
        self.levels[l.0]
    }

    /// Depth of the deepest label.
    pub fn depth(&self) -> usize {
        self.levels.iter().copied().max().unwrap_or(0)
    }

    pub fn is_tree(&self) -> bool {
        self.parents[..self.names.len()].iter().all(|p| p.len() == 1)
    }

    /// Adds every ancestor of every member (all parents, transitively).
    pub fn ancestor_closure(&self, set: &LabelSet) -> LabelSet {
        let mut out = set.clone();
        let mut stack: Vec<LabelId> = set.iter().collect();
        while let Some(l) = stack.pop() {
            for &p in &self.parents[l.0] {
                if !self.is_root(p) && out.insert(p) {
                    stack.push(p);
                }
            }
        }
        out
    }

    /// Edges in `parent<TAB>child` form; a synthetic root is written out by name.
    pub fn to_edge_list(&self) -> String {
        let mut out = String::new();
        for (p, kids) in self.children.iter().enumerate() {
            let pname = self.name(LabelId(p)).expect("valid id");
            for &c in kids {
                out.push_str(pname);
                out.push('\t');
                out.push_str(&self.names[c.0]);
                out.push('\n');
            }
        }
        out
    }
}

fn bfs_levels(children: &[Vec<LabelId>], root: usize) -> Vec<usize> {
    let mut levels = vec![usize::MAX; children.len()];
    levels[root] = 0;
    let mut queue = VecDeque::from([root]);
    while let Some(u) = queue.pop_front() {
        for &c in &children[u] {
            if levels[c.0] == usize::MAX {
                levels[c.0] = levels[u] + 1;
                queue.push_back(c.0);
            }
        }
    }
    levels
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(h: &LabelHierarchy, names: &[&str]) -> LabelSet {
        names.iter().map(|n| h.id(n).unwrap()).collect()
    }

    fn yelp_fragment() -> LabelHierarchy {
        LabelHierarchy::parse(
            "Restaurants\tCaribbean\nRestaurants\tChinese\nRestaurants\tMexican\n\
             Bars\tBeer Bars\nBars\tWine Bars\nCaribbean\tDominican\n",
        )
        .unwrap()
    }

    #[test]
    fn minimal_hierarchy() {
        let h = LabelHierarchy::parse("root\tA\n").unwrap();
        assert_eq!(h.len(), 1);
        assert_eq!(h.children(h.root()).unwrap(), &[h.id("A").unwrap()]);
        assert_eq!(h.name(h.root()).unwrap(), "root");
    }

    #[test]
    fn explicit_cycle_rejected() {
        let err = LabelHierarchy::parse("root\tA\nA\tB\nB\tA\n").unwrap_err();
        assert!(matches!(err, HierarchyError::Cycle(_)));
    }

    #[test]
    fn disconnected_cycle_rejected() {
        // C and D loop on each other below nothing reachable from the root
        let err = LabelHierarchy::parse("root\tA\nC\tD\nD\tC\n").unwrap_err();
        assert!(matches!(err, HierarchyError::Cycle(_)));
    }

    #[test]
    fn duplicate_and_empty() {
        assert_eq!(
            LabelHierarchy::parse("r\tA\nr\tA\n").unwrap_err(),
            HierarchyError::DuplicateEdge { parent: "r".into(), child: "A".into() }
        );
        assert_eq!(LabelHierarchy::parse("# nothing\n\n").unwrap_err(), HierarchyError::Empty);
        assert!(matches!(
            LabelHierarchy::parse("a b\n").unwrap_err(),
            HierarchyError::Malformed { line: 1, .. }
        ));
    }

    #[test]
    fn synthetic_root_for_several_tops() {
        let h = yelp_fragment();
        assert_eq!(h.len(), 8);
        assert_eq!(h.name(h.root()).unwrap(), SYNTHETIC_ROOT);
        let top = h.children(h.root()).unwrap();
        assert_eq!(top, &[h.id("Restaurants").unwrap(), h.id("Bars").unwrap()]);
        assert_eq!(h.children(h.id("Restaurants").unwrap()).unwrap().len(), 3);
        assert!(h.children(h.id("Dominican").unwrap()).unwrap().is_empty());
        // first-appearance ids
        assert_eq!(h.id("Restaurants").unwrap(), LabelId(0));
        assert_eq!(h.id("Caribbean").unwrap(), LabelId(1));
    }

    #[test]
    fn unknown_label_errors() {
        let h = yelp_fragment();
        assert_eq!(h.children(LabelId(99)).unwrap_err(), HierarchyError::UnknownLabel(LabelId(99)));
        assert!(h.id("Pubs").is_err());
    }

    #[test]
    fn consistency_examples() {
        let h = yelp_fragment();
        assert!(h.is_consistent(&ids(&h, &["Bars", "Beer Bars"])));
        assert!(!h.is_consistent(&ids(&h, &["Beer Bars"])));
        assert!(h.is_consistent(&LabelSet::new()));

        let chain = LabelHierarchy::parse("root\tA\nA\tB\n").unwrap();
        assert!(chain.is_consistent(&ids(&chain, &["A", "B"])));
        assert!(!chain.is_consistent(&ids(&chain, &["B"])));
    }

    #[test]
    fn dag_needs_one_parent_only() {
        let h = LabelHierarchy::parse("r\tA\nr\tB\nA\tC\nB\tC\n").unwrap();
        assert!(h.is_consistent(&ids(&h, &["A", "C"])));
        assert!(h.is_consistent(&ids(&h, &["B", "C"])));
        assert!(!h.is_consistent(&ids(&h, &["C"])));
        assert!(!h.is_tree());
    }

    #[test]
    fn levels_use_shortest_path() {
        let chain = LabelHierarchy::parse("root\tA\nA\tB\n").unwrap();
        assert_eq!(chain.level(chain.id("A").unwrap()), 1);
        assert_eq!(chain.level(chain.id("B").unwrap()), 2);
        assert_eq!(chain.level(chain.root()), 0);

        // C has parents at depths 1 (A) and 2 (B)
        let h = LabelHierarchy::parse("r\tA\nA\tB\nA\tC\nB\tC\nC\tD\n").unwrap();
        assert_eq!(h.level(h.id("C").unwrap()), 2);
        assert_eq!(h.level(h.id("D").unwrap()), 3);
        assert_eq!(h.levels(), h.clone().levels());
    }

    #[test]
    fn rcv1_shaped_hierarchy() {
        // 4 top-level topics x 6 x 3 = 100 labels over three levels, plus 3 at level four
        let mut edges = Vec::new();
        for t in 0..4 {
            let top = format!("T{t}");
            for m in 0..6 {
                let mid = format!("{top}.{m}");
                edges.push((top.clone(), mid.clone()));
                for k in 0..3 {
                    edges.push((mid.clone(), format!("{mid}.{k}")));
                }
            }
        }
        for k in 0..3 {
            edges.push(("T0.0.0".to_string(), format!("T0.0.0.{k}")));
        }
        let h = LabelHierarchy::from_edges(edges).unwrap();
        assert_eq!(h.len(), 103);
        assert_eq!(h.depth(), 4);
        assert!(h.is_tree());
    }

    #[test]
    fn closure_adds_all_ancestors() {
        let h = LabelHierarchy::parse("r\tA\nr\tB\nA\tC\nB\tC\nC\tD\n").unwrap();
        let closed = h.ancestor_closure(&ids(&h, &["D"]));
        assert_eq!(closed, ids(&h, &["A", "B", "C", "D"]));
        assert!(h.is_consistent(&closed));
    }

    #[test]
    fn edge_list_round_trip() {
        let h = yelp_fragment();
        let again = LabelHierarchy::parse(&h.to_edge_list()).unwrap();
        assert_eq!(again.len(), h.len());
        for l in h.labels() {
            let name = h.name(l).unwrap();
            let l2 = again.id(name).unwrap();
            let kids: Vec<_> = h.children(l).unwrap().iter().map(|&c| h.name(c).unwrap()).collect();
            let kids2: Vec<_> =
                again.children(l2).unwrap().iter().map(|&c| again.name(c).unwrap()).collect();
            assert_eq!(kids, kids2);
        }
    }
}
