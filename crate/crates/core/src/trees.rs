//! Leaf-labelled unrooted binary trees.
//!
//! An [`UnrootedTree`] stores nodes in a flat arena: leaves carry string labels,
//! internal nodes are anonymous and have degree exactly three. Edge weights are
//! optional and, when present, are read as adjacent-node similarities in `(0, 1)`.
//!
//! Besides Newick I/O the module provides what the recursive reconstruction needs:
//! bipartitions, clan tests, Robinson-Foulds distance and the root-and-join surgery
//! used to glue two subtrees together.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt;

use fixedbitset::FixedBitSet;
use thiserror::Error;

pub type NodeId = usize;
pub type EdgeId = usize;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TreeError {
    #[error("newick parse error at byte {offset}: {message}")]
    Parse { offset: usize, message: String },
    #[error("invalid tree structure: {0}")]
    Structure(String),
    #[error("invalid edge weight {0}: weights must lie in (0, 1)")]
    InvalidWeight(f64),
    #[error("invalid leaf label {0:?}")]
    InvalidLabel(String),
    #[error("duplicate leaf label {0:?}")]
    DuplicateLabel(String),
    #[error("unknown leaf label {0:?}")]
    UnknownLabel(String),
    #[error("leaf sets of the two trees differ")]
    LeafSetMismatch,
    #[error("leaf sets overlap on label {0:?}")]
    OverlappingLabels(String),
    #[error("edge {0} does not exist")]
    MissingEdge(EdgeId),
    #[error("operation needs at least {needed} leaves, tree has {found}")]
    TooFewLeaves { needed: usize, found: usize },
    #[error("empty leaf set")]
    EmptyLeafSet,
}

pub type Result<T> = std::result::Result<T, TreeError>;

/// A nonempty set of leaf labels.
#[derive(Clone, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct LeafSet(BTreeSet<String>);

impl LeafSet {
    pub fn new() -> Self {
        Self(BTreeSet::new())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, label: &str) -> bool {
        self.0.contains(label)
    }

    pub fn insert(&mut self, label: impl Into<String>) -> bool {
        self.0.insert(label.into())
    }

    pub fn iter(&self) -> impl Iterator<Item = &String> {
        self.0.iter()
    }

    pub fn as_set(&self) -> &BTreeSet<String> {
        &self.0
    }

    pub fn is_disjoint(&self, other: &LeafSet) -> bool {
        self.0.is_disjoint(&other.0)
    }

    pub fn union(&self, other: &LeafSet) -> LeafSet {
        LeafSet(self.0.union(&other.0).cloned().collect())
    }

    pub fn difference(&self, other: &LeafSet) -> LeafSet {
        LeafSet(self.0.difference(&other.0).cloned().collect())
    }
}

impl<S: Into<String>> FromIterator<S> for LeafSet {
    fn from_iter<I: IntoIterator<Item = S>>(iter: I) -> Self {
        LeafSet(iter.into_iter().map(Into::into).collect())
    }
}

impl fmt::Display for LeafSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{")?;
        for (i, l) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{l}")?;
        }
        write!(f, "}}")
    }
}

/// A split of the leaves induced by removing one edge.
///
/// `side` is the part that does not contain the lexicographically smallest label,
/// which makes equal splits compare equal regardless of how they were produced.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Bipartition {
    side: LeafSet,
    rest: LeafSet,
}

impl Bipartition {
    /// Builds the canonical form of the split `a | b`.
    pub fn new(a: LeafSet, b: LeafSet) -> Result<Self> {
        if a.is_empty() || b.is_empty() {
            return Err(TreeError::EmptyLeafSet);
        }
        if let Some(l) = a.iter().find(|l| b.contains(l)) {
            return Err(TreeError::OverlappingLabels(l.clone()));
        }
        let a_min = a.iter().next().unwrap();
        let b_min = b.iter().next().unwrap();
        Ok(if a_min < b_min {
            Self { side: b, rest: a }
        } else {
            Self { side: a, rest: b }
        })
    }

    /// The side without the smallest label.
    pub fn side(&self) -> &LeafSet {
        &self.side
    }

    /// The side holding the smallest label.
    pub fn rest(&self) -> &LeafSet {
        &self.rest
    }

    pub fn is_trivial(&self) -> bool {
        self.side.len() == 1 || self.rest.len() == 1
    }
}

impl fmt::Display for Bipartition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}|{}", self.rest, self.side)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Edge {
    pub a: NodeId,
    pub b: NodeId,
    pub weight: Option<f64>,
}

impl Edge {
    pub fn other(&self, n: NodeId) -> NodeId {
        if n == self.a {
            self.b
        } else {
            self.a
        }
    }
}

/// Leaf-labelled unrooted binary tree.
#[derive(Clone, Debug)]
pub struct UnrootedTree {
    labels: Vec<Option<String>>,
    edges: Vec<Edge>,
    adj: Vec<Vec<(NodeId, EdgeId)>>,
    /// Leaf nodes ordered by label.
    leaves: Vec<NodeId>,
}

pub(crate) fn valid_label(s: &str) -> bool {
    !s.is_empty()
        && s.bytes()
            .all(|c| c.is_ascii_alphanumeric() || c == b'_' || c == b'.' || c == b'-')
}

fn build_adjacency(n: usize, edges: &[Edge]) -> Result<Vec<Vec<(NodeId, EdgeId)>>> {
    let mut adj = vec![Vec::new(); n];
    for (i, e) in edges.iter().enumerate() {
        if e.a >= n || e.b >= n || e.a == e.b {
            return Err(TreeError::Structure(format!(
                "edge {i} has invalid endpoints ({}, {})",
                e.a, e.b
            )));
        }
        adj[e.a].push((e.b, i));
        adj[e.b].push((e.a, i));
    }
    Ok(adj)
}

fn check_connected(adj: &[Vec<(NodeId, EdgeId)>]) -> bool {
    if adj.is_empty() {
        return false;
    }
    let mut seen = vec![false; adj.len()];
    let mut stack = vec![0];
    seen[0] = true;
    let mut count = 1;
    while let Some(v) = stack.pop() {
        for &(w, _) in &adj[v] {
            if !seen[w] {
                seen[w] = true;
                count += 1;
                stack.push(w);
            }
        }
    }
    count == adj.len()
}

impl UnrootedTree {
    /// Builds a tree from a node arena (`Some(label)` for leaves) and an edge list,
    /// checking every structural invariant.
    pub fn from_parts(labels: Vec<Option<String>>, edges: Vec<Edge>) -> Result<Self> {
        let n = labels.len();
        if n == 0 {
            return Err(TreeError::EmptyLeafSet);
        }
        if edges.len() + 1 != n {
            return Err(TreeError::Structure(format!(
                "{} nodes need {} edges, got {}",
                n,
                n - 1,
                edges.len()
            )));
        }
        let adj = build_adjacency(n, &edges)?;
        if !check_connected(&adj) {
            return Err(TreeError::Structure("graph is not connected".into()));
        }
        let mut seen = HashSet::new();
        let mut leaves = Vec::new();
        for (v, l) in labels.iter().enumerate() {
            match l {
                Some(l) => {
                    if !valid_label(l) {
                        return Err(TreeError::InvalidLabel(l.clone()));
                    }
                    if !seen.insert(l.as_str()) {
                        return Err(TreeError::DuplicateLabel(l.clone()));
                    }
                    if n > 1 && adj[v].len() != 1 {
                        return Err(TreeError::Structure(format!(
                            "leaf {l:?} has degree {}",
                            adj[v].len()
                        )));
                    }
                    leaves.push(v);
                }
                None => {
                    if adj[v].len() != 3 {
                        return Err(TreeError::Structure(format!(
                            "internal node {v} has degree {}",
                            adj[v].len()
                        )));
                    }
                }
            }
        }
        for e in &edges {
            if let Some(w) = e.weight {
                if !(w > 0.0 && w < 1.0) {
                    return Err(TreeError::InvalidWeight(w));
                }
            }
        }
        leaves.sort_by(|&a, &b| labels[a].cmp(&labels[b]));
        Ok(Self {
            labels,
            edges,
            adj,
            leaves,
        })
    }

    /// The unique tree on at most three leaves: a single node, an edge or a star.
    pub fn trivial<S: AsRef<str>>(labels: &[S]) -> Result<Self> {
        let mut nodes: Vec<Option<String>> = labels
            .iter()
            .map(|l| Some(l.as_ref().to_string()))
            .collect();
        let edges = match labels.len() {
            0 => return Err(TreeError::EmptyLeafSet),
            1 => vec![],
            2 => vec![Edge {
                a: 0,
                b: 1,
                weight: None,
            }],
            3 => {
                nodes.push(None);
                (0..3)
                    .map(|i| Edge {
                        a: i,
                        b: 3,
                        weight: None,
                    })
                    .collect()
            }
            k => {
                return Err(TreeError::Structure(format!(
                    "trivial tree needs at most 3 leaves, got {k}"
                )))
            }
        };
        Self::from_parts(nodes, edges)
    }

    pub fn leaf_count(&self) -> usize {
        self.leaves.len()
    }

    pub fn node_count(&self) -> usize {
        self.labels.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn edge(&self, e: EdgeId) -> Result<&Edge> {
        self.edges.get(e).ok_or(TreeError::MissingEdge(e))
    }

    pub fn neighbors(&self, v: NodeId) -> &[(NodeId, EdgeId)] {
        &self.adj[v]
    }

    pub fn label(&self, v: NodeId) -> Option<&str> {
        self.labels[v].as_deref()
    }

    pub fn is_leaf(&self, v: NodeId) -> bool {
        self.labels[v].is_some()
    }

    /// Leaf nodes ordered by label.
    pub fn leaf_nodes(&self) -> &[NodeId] {
        &self.leaves
    }

    /// Leaf labels in sorted order.
    pub fn leaf_labels(&self) -> Vec<String> {
        self.leaves
            .iter()
            .map(|&v| self.labels[v].clone().unwrap())
            .collect()
    }

    pub fn leaf_set(&self) -> LeafSet {
        self.leaf_labels().into_iter().collect()
    }

    pub fn node_of_label(&self, label: &str) -> Option<NodeId> {
        self.leaves
            .binary_search_by(|&v| self.labels[v].as_deref().unwrap().cmp(label))
            .ok()
            .map(|i| self.leaves[i])
    }

    pub fn is_weighted(&self) -> bool {
        !self.edges.is_empty() && self.edges.iter().all(|e| e.weight.is_some())
    }

    /// The same topology with every weight removed.
    pub fn without_weights(&self) -> Self {
        let mut t = self.clone();
        for e in &mut t.edges {
            e.weight = None;
        }
        t
    }

    /// For every edge, the leaves on the side that does not contain the smallest
    /// label, as a bitset over [`leaf_nodes`](Self::leaf_nodes) positions.
    pub(crate) fn edge_bitsets(&self) -> Vec<FixedBitSet> {
        let m = self.leaf_count();
        let mut sets = vec![FixedBitSet::with_capacity(m); self.edges.len()];
        if self.edges.is_empty() {
            return sets;
        }
        let mut leaf_pos = vec![usize::MAX; self.node_count()];
        for (i, &v) in self.leaves.iter().enumerate() {
            leaf_pos[v] = i;
        }
        let root = self.leaves[0];
        let (order, parent_edge) = self.dfs_order(root);
        let mut node_sets: Vec<Option<FixedBitSet>> = vec![None; self.node_count()];
        for &v in order.iter().rev() {
            let mut s = FixedBitSet::with_capacity(m);
            if leaf_pos[v] != usize::MAX && v != root {
                s.insert(leaf_pos[v]);
            }
            for &(w, e) in &self.adj[v] {
                if Some(e) != parent_edge[v] {
                    let child = node_sets[w].take().unwrap();
                    s.union_with(&child);
                    sets[e] = child;
                }
            }
            node_sets[v] = Some(s);
        }
        sets
    }

    /// Preorder traversal from `root` with the edge to each node's parent.
    pub(crate) fn dfs_order(&self, root: NodeId) -> (Vec<NodeId>, Vec<Option<EdgeId>>) {
        let n = self.node_count();
        let mut parent_edge = vec![None; n];
        let mut visited = vec![false; n];
        let mut order = Vec::with_capacity(n);
        let mut stack = vec![root];
        visited[root] = true;
        while let Some(v) = stack.pop() {
            order.push(v);
            for &(w, e) in self.adj[v].iter().rev() {
                if !visited[w] {
                    visited[w] = true;
                    parent_edge[w] = Some(e);
                    stack.push(w);
                }
            }
        }
        (order, parent_edge)
    }

    fn bitset_to_leafset(&self, s: &FixedBitSet) -> LeafSet {
        s.ones()
            .map(|i| self.labels[self.leaves[i]].clone().unwrap())
            .collect()
    }

    /// Leaves on each side of edge `e`: the side of endpoint `a`, then the side of `b`.
    pub fn edge_sides(&self, e: EdgeId) -> Result<(LeafSet, LeafSet)> {
        let edge = self.edge(e)?;
        let mut seen = vec![false; self.node_count()];
        seen[edge.b] = true;
        let mut side_a = LeafSet::new();
        let mut stack = vec![edge.a];
        seen[edge.a] = true;
        while let Some(v) = stack.pop() {
            if let Some(l) = &self.labels[v] {
                side_a.insert(l.clone());
            }
            for &(w, _) in &self.adj[v] {
                if !seen[w] {
                    seen[w] = true;
                    stack.push(w);
                }
            }
        }
        let side_b = self.leaf_set().difference(&side_a);
        Ok((side_a, side_b))
    }

    /// The induced subtree on `keep`, with unary nodes suppressed.
    ///
    /// Weights of suppressed paths are multiplied, matching the multiplicativity
    /// of similarities along paths.
    pub fn restrict(&self, keep: &LeafSet) -> Result<Self> {
        if keep.is_empty() {
            return Err(TreeError::EmptyLeafSet);
        }
        for l in keep.iter() {
            if self.node_of_label(l).is_none() {
                return Err(TreeError::UnknownLabel(l.clone()));
            }
        }
        let n = self.node_count();
        let mut alive_edge = vec![true; self.edges.len()];
        let mut degree: Vec<usize> = self.adj.iter().map(Vec::len).collect();
        let mut alive = vec![true; n];
        let mut stack: Vec<NodeId> = (0..n)
            .filter(|&v| degree[v] <= 1 && !self.is_kept(v, keep))
            .collect();
        while let Some(v) = stack.pop() {
            if !alive[v] {
                continue;
            }
            alive[v] = false;
            for &(w, e) in &self.adj[v] {
                if alive_edge[e] {
                    alive_edge[e] = false;
                    degree[w] -= 1;
                    if degree[w] <= 1 && alive[w] && !self.is_kept(w, keep) {
                        stack.push(w);
                    }
                }
            }
        }
        // Rebuild the surviving graph, then suppress nodes of degree two.
        let mut graph = SurgeryGraph::default();
        let mut map = vec![usize::MAX; n];
        for v in 0..n {
            if alive[v] {
                map[v] = graph.add_node(self.labels[v].clone());
            }
        }
        for (i, e) in self.edges.iter().enumerate() {
            if alive_edge[i] {
                graph.add_edge(map[e.a], map[e.b], e.weight);
            }
        }
        graph.suppress_unary();
        graph.into_tree()
    }

    fn is_kept(&self, v: NodeId, keep: &LeafSet) -> bool {
        self.labels[v].as_ref().is_some_and(|l| keep.contains(l))
    }
}

/// Mutable scratch graph used while rewiring trees.
#[derive(Default, Debug, Clone)]
pub(crate) struct SurgeryGraph {
    labels: Vec<Option<String>>,
    edges: Vec<Option<Edge>>,
}

impl SurgeryGraph {
    pub(crate) fn from_tree(t: &UnrootedTree) -> Self {
        Self {
            labels: t.labels.clone(),
            edges: t.edges.iter().cloned().map(Some).collect(),
        }
    }

    pub(crate) fn add_node(&mut self, label: Option<String>) -> NodeId {
        self.labels.push(label);
        self.labels.len() - 1
    }

    pub(crate) fn add_edge(&mut self, a: NodeId, b: NodeId, weight: Option<f64>) -> EdgeId {
        self.edges.push(Some(Edge { a, b, weight }));
        self.edges.len() - 1
    }

    /// Removes edge `e` and returns it.
    pub(crate) fn take_edge(&mut self, e: EdgeId) -> Option<Edge> {
        self.edges.get_mut(e).and_then(Option::take)
    }

    /// Merges the two edges of every unlabeled node of degree two into one edge.
    pub(crate) fn suppress_unary(&mut self) {
        loop {
            let mut incident: Vec<Vec<EdgeId>> = vec![Vec::new(); self.labels.len()];
            for (i, e) in self.edges.iter().enumerate() {
                if let Some(e) = e {
                    incident[e.a].push(i);
                    incident[e.b].push(i);
                }
            }
            let Some(v) = (0..self.labels.len())
                .find(|&v| self.labels[v].is_none() && incident[v].len() == 2)
            else {
                break;
            };
            let e1 = self.edges[incident[v][0]].take().unwrap();
            let e2 = self.edges[incident[v][1]].take().unwrap();
            let weight = match (e1.weight, e2.weight) {
                (Some(x), Some(y)) => Some(x * y),
                (Some(x), None) | (None, Some(x)) => Some(x),
                (None, None) => None,
            };
            self.edges.push(Some(Edge {
                a: e1.other(v),
                b: e2.other(v),
                weight,
            }));
            // Orphan the node; into_tree drops isolated unlabeled nodes.
        }
    }

    /// Compacts the arena and validates the result as an [`UnrootedTree`].
    pub(crate) fn into_tree(self) -> Result<UnrootedTree> {
        let mut used = vec![false; self.labels.len()];
        for e in self.edges.iter().flatten() {
            used[e.a] = true;
            used[e.b] = true;
        }
        let mut map = vec![usize::MAX; self.labels.len()];
        let mut labels = Vec::new();
        for (v, l) in self.labels.into_iter().enumerate() {
            if used[v] || l.is_some() {
                map[v] = labels.len();
                labels.push(l);
            }
        }
        let edges = self
            .edges
            .into_iter()
            .flatten()
            .map(|e| Edge {
                a: map[e.a],
                b: map[e.b],
                weight: e.weight,
            })
            .collect();
        UnrootedTree::from_parts(labels, edges)
    }
}

/// A tree with a designated root: either a degree-two node subdividing an edge or,
/// for a single-leaf tree, the leaf itself.
#[derive(Clone, Debug)]
pub struct RootedTree {
    graph: SurgeryGraph,
    root: NodeId,
    leaves: LeafSet,
}

impl RootedTree {
    /// Roots a one-leaf tree at its only node.
    pub fn single_leaf(t: &UnrootedTree) -> Result<Self> {
        if t.leaf_count() != 1 {
            return Err(TreeError::Structure(format!(
                "expected a single leaf, found {}",
                t.leaf_count()
            )));
        }
        Ok(Self {
            graph: SurgeryGraph::from_tree(t),
            root: 0,
            leaves: t.leaf_set(),
        })
    }

    pub fn root(&self) -> NodeId {
        self.root
    }

    pub fn leaf_set(&self) -> &LeafSet {
        &self.leaves
    }

    /// Leaf sets hanging below the root (one set for a single leaf, two otherwise).
    pub fn root_clans(&self) -> Vec<LeafSet> {
        let mut out = Vec::new();
        for e in self.graph.edges.iter().flatten() {
            if e.a == self.root || e.b == self.root {
                let start = e.other(self.root);
                out.push(self.collect_leaves(start, self.root));
            }
        }
        if out.is_empty() {
            out.push(self.leaves.clone());
        }
        out.sort();
        out
    }

    fn collect_leaves(&self, start: NodeId, blocked: NodeId) -> LeafSet {
        let n = self.graph.labels.len();
        let mut adj = vec![Vec::new(); n];
        for e in self.graph.edges.iter().flatten() {
            adj[e.a].push(e.b);
            adj[e.b].push(e.a);
        }
        let mut seen = vec![false; n];
        seen[blocked] = true;
        seen[start] = true;
        let mut stack = vec![start];
        let mut out = LeafSet::new();
        while let Some(v) = stack.pop() {
            if let Some(l) = &self.graph.labels[v] {
                out.insert(l.clone());
            }
            for &w in &adj[v] {
                if !seen[w] {
                    seen[w] = true;
                    stack.push(w);
                }
            }
        }
        out
    }

    /// Forgets the root, merging its two edges back into one.
    pub fn to_unrooted(&self) -> Result<UnrootedTree> {
        let mut g = self.graph.clone();
        g.suppress_unary();
        g.into_tree()
    }
}

/// Inserts a new degree-two root subdividing edge `e`.
///
/// A weight `w` on `e` is split as `sqrt(w)` on both halves so the product along
/// the path is unchanged.
pub fn root_at_edge(tree: &UnrootedTree, e: EdgeId) -> Result<RootedTree> {
    let mut graph = SurgeryGraph::from_tree(tree);
    let old = graph.take_edge(e).ok_or(TreeError::MissingEdge(e))?;
    let root = graph.add_node(None);
    let half = old.weight.map(f64::sqrt);
    graph.add_edge(old.a, root, half);
    graph.add_edge(root, old.b, half);
    Ok(RootedTree {
        graph,
        root,
        leaves: tree.leaf_set(),
    })
}

/// Connects the roots of two rooted trees with a new unweighted edge.
pub fn join_rooted(r1: &RootedTree, r2: &RootedTree) -> Result<UnrootedTree> {
    if let Some(l) = r1.leaves.iter().find(|l| r2.leaves.contains(l)) {
        return Err(TreeError::OverlappingLabels(l.clone()));
    }
    let mut graph = r1.graph.clone();
    let offset = graph.labels.len();
    graph.labels.extend(r2.graph.labels.iter().cloned());
    graph.edges.extend(r2.graph.edges.iter().map(|e| {
        e.as_ref().map(|e| Edge {
            a: e.a + offset,
            b: e.b + offset,
            weight: e.weight,
        })
    }));
    graph.add_edge(r1.root, r2.root + offset, None);
    graph.into_tree()
}

/// Roots `t1` at `e1` and `t2` at `e2` and connects the two roots.
pub fn join_at_edges(
    t1: &UnrootedTree,
    e1: EdgeId,
    t2: &UnrootedTree,
    e2: EdgeId,
) -> Result<UnrootedTree> {
    join_rooted(&root_at_edge(t1, e1)?, &root_at_edge(t2, e2)?)
}

/// Nontrivial bipartitions, one per internal edge.
pub fn bipartitions(tree: &UnrootedTree) -> BTreeSet<Bipartition> {
    let m = tree.leaf_count();
    let all = tree.leaf_set();
    tree.edge_bitsets()
        .into_iter()
        .filter(|s| {
            let k = s.count_ones(..);
            k >= 2 && k + 2 <= m
        })
        .map(|s| {
            let side = tree.bitset_to_leafset(&s);
            let rest = all.difference(&side);
            Bipartition { side, rest }
        })
        .collect()
}

fn check_subset(tree: &UnrootedTree, s: &LeafSet) -> Result<()> {
    if s.is_empty() {
        return Err(TreeError::EmptyLeafSet);
    }
    match s.iter().find(|l| tree.node_of_label(l).is_none()) {
        Some(l) => Err(TreeError::UnknownLabel(l.clone())),
        None => Ok(()),
    }
}

/// Whether `s` is separated from the other leaves by a single edge.
pub fn is_clan(tree: &UnrootedTree, s: &LeafSet) -> Result<bool> {
    check_subset(tree, s)?;
    let m = tree.leaf_count();
    let k = s.len();
    if k == 1 || k + 1 >= m {
        return Ok(true);
    }
    let mut bits = FixedBitSet::with_capacity(m);
    for (i, &v) in tree.leaf_nodes().iter().enumerate() {
        if s.contains(tree.label(v).unwrap()) {
            bits.insert(i);
        }
    }
    if bits.contains(0) {
        bits.toggle_range(..);
    }
    Ok(tree.edge_bitsets().contains(&bits))
}

fn nontrivial_split_bits(tree: &UnrootedTree) -> HashSet<FixedBitSet> {
    let m = tree.leaf_count();
    tree.edge_bitsets()
        .into_iter()
        .filter(|s| {
            let k = s.count_ones(..);
            k >= 2 && k + 2 <= m
        })
        .collect()
}

/// Robinson-Foulds distance: size of the symmetric difference of nontrivial splits.
pub fn rf_distance(t1: &UnrootedTree, t2: &UnrootedTree) -> Result<usize> {
    if t1.leaf_labels() != t2.leaf_labels() {
        return Err(TreeError::LeafSetMismatch);
    }
    let m = t1.leaf_count();
    if m < 4 {
        return Err(TreeError::TooFewLeaves {
            needed: 4,
            found: m,
        });
    }
    let s1 = nontrivial_split_bits(t1);
    let s2 = nontrivial_split_bits(t2);
    Ok(s1.symmetric_difference(&s2).count())
}

/// RF distance divided by its maximum `2m - 6`.
pub fn normalized_rf(t1: &UnrootedTree, t2: &UnrootedTree) -> Result<f64> {
    let rf = rf_distance(t1, t2)?;
    let m = t1.leaf_count();
    Ok(if m == 4 && rf == 0 {
        0.0
    } else {
        rf as f64 / (2 * m - 6) as f64
    })
}

// ---------------------------------------------------------------------------
// Newick

struct RawNode {
    label: Option<String>,
    length: Option<f64>,
    children: Vec<usize>,
}

struct Parser<'a> {
    s: &'a [u8],
    pos: usize,
}

impl<'a> Parser<'a> {
    fn err<T>(&self, message: impl Into<String>) -> Result<T> {
        Err(TreeError::Parse {
            offset: self.pos,
            message: message.into(),
        })
    }

    fn skip_ws(&mut self) {
        while self.pos < self.s.len() && self.s[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.s.get(self.pos).copied()
    }

    fn label(&mut self) -> Option<String> {
        self.skip_ws();
        let start = self.pos;
        while self.pos < self.s.len() {
            let c = self.s[self.pos];
            if c.is_ascii_alphanumeric() || c == b'_' || c == b'.' || c == b'-' {
                self.pos += 1;
            } else {
                break;
            }
        }
        (self.pos > start).then(|| String::from_utf8_lossy(&self.s[start..self.pos]).into_owned())
    }

    fn length(&mut self) -> Result<Option<f64>> {
        if self.peek() != Some(b':') {
            return Ok(None);
        }
        self.pos += 1;
        self.skip_ws();
        let start = self.pos;
        while self.pos < self.s.len() {
            let c = self.s[self.pos];
            if c.is_ascii_digit() || matches!(c, b'.' | b'e' | b'E' | b'+' | b'-') {
                self.pos += 1;
            } else {
                break;
            }
        }
        let text = std::str::from_utf8(&self.s[start..self.pos]).unwrap_or("");
        match text.parse::<f64>() {
            Ok(v) if v.is_finite() => Ok(Some(v)),
            _ => {
                self.pos = start;
                self.err(format!("invalid branch length {text:?}"))
            }
        }
    }

    /// Parses the whole string into a rooted node arena; returns the root index.
    fn parse(&mut self, nodes: &mut Vec<RawNode>) -> Result<usize> {
        // Stack of open internal nodes.
        let mut open: Vec<usize> = Vec::new();
        let mut root: Option<usize>;
        loop {
            match self.peek() {
                Some(b'(') => {
                    self.pos += 1;
                    nodes.push(RawNode {
                        label: None,
                        length: None,
                        children: Vec::new(),
                    });
                    open.push(nodes.len() - 1);
                    continue;
                }
                Some(_) => {
                    let Some(label) = self.label() else {
                        return self.err("expected a label or '('");
                    };
                    let length = self.length()?;
                    nodes.push(RawNode {
                        label: Some(label),
                        length,
                        children: Vec::new(),
                    });
                }
                None => return self.err("unexpected end of input"),
            }
            // A subtree just finished; attach it and close parents as needed.
            let mut finished = nodes.len() - 1;
            loop {
                let Some(&parent) = open.last() else {
                    root = Some(finished);
                    break;
                };
                nodes[parent].children.push(finished);
                match self.peek() {
                    Some(b',') => {
                        self.pos += 1;
                        root = None;
                        break;
                    }
                    Some(b')') => {
                        self.pos += 1;
                        if nodes[parent].children.len() < 2 {
                            return self.err("internal node with a single child");
                        }
                        open.pop();
                        // Internal labels (e.g. support values) are ignored.
                        let _ = self.label();
                        nodes[parent].length = self.length()?;
                        finished = parent;
                    }
                    _ => return self.err("expected ',' or ')'"),
                }
            }
            if let Some(r) = root {
                if self.peek() != Some(b';') {
                    return self.err("expected ';'");
                }
                self.pos += 1;
                if self.peek().is_some() {
                    return self.err("trailing characters after ';'");
                }
                return Ok(r);
            }
        }
    }
}

fn parse_impl(text: &str, keep_lengths: bool) -> Result<UnrootedTree> {
    let mut parser = Parser {
        s: text.as_bytes(),
        pos: 0,
    };
    let mut raw = Vec::new();
    let root = parser.parse(&mut raw)?;
    let mut graph = SurgeryGraph::default();
    for node in &raw {
        graph.add_node(node.label.clone());
    }
    for (v, node) in raw.iter().enumerate() {
        for &c in &node.children {
            let w = if keep_lengths { raw[c].length } else { None };
            graph.add_edge(v, c, w);
        }
    }
    if raw[root].children.len() == 2 {
        graph.suppress_unary();
    }
    let tree = graph.into_tree()?;
    Ok(tree)
}

/// Parses a Newick string. A degree-two root is suppressed and branch lengths are
/// kept as edge weights, so they must lie in `(0, 1)`.
pub fn parse_newick(text: &str) -> Result<UnrootedTree> {
    parse_impl(text, true)
}

/// Parses a Newick string keeping only the topology; branch lengths are discarded.
pub fn parse_newick_topology(text: &str) -> Result<UnrootedTree> {
    parse_impl(text, false)
}

/// Serialises a tree as Newick. The output is rooted at the neighbour of the
/// smallest leaf and children are ordered by their smallest label, so equal
/// trees produce equal strings.
pub fn write_newick(tree: &UnrootedTree) -> String {
    let m = tree.leaf_count();
    let leaf0 = tree.leaf_nodes()[0];
    let fmt_w = |w: Option<f64>| w.map(|w| format!(":{w}")).unwrap_or_default();
    match m {
        1 => return format!("{};", tree.label(leaf0).unwrap()),
        2 => {
            let e = &tree.edges()[0];
            let other = e.other(leaf0);
            return format!(
                "({}{},{});",
                tree.label(leaf0).unwrap(),
                fmt_w(e.weight),
                tree.label(other).unwrap()
            );
        }
        _ => {}
    }
    let top = tree.neighbors(leaf0)[0].0;
    let (order, parent_edge) = tree.dfs_order(top);
    let n = tree.node_count();
    let mut text: Vec<Option<String>> = vec![None; n];
    let mut min_label: Vec<Option<String>> = vec![None; n];
    for &v in order.iter().rev() {
        if let Some(l) = tree.label(v) {
            text[v] = Some(l.to_string());
            min_label[v] = Some(l.to_string());
        } else {
            let mut kids: Vec<(String, String)> = tree
                .neighbors(v)
                .iter()
                .filter(|&&(_, e)| Some(e) != parent_edge[v])
                .map(|&(w, e)| {
                    let s = format!(
                        "{}{}",
                        text[w].take().unwrap(),
                        fmt_w(tree.edges()[e].weight)
                    );
                    (min_label[w].take().unwrap(), s)
                })
                .collect();
            kids.sort();
            min_label[v] = Some(kids[0].0.clone());
            let body: Vec<String> = kids.into_iter().map(|k| k.1).collect();
            text[v] = Some(format!("({})", body.join(",")));
        }
    }
    format!("{};", text[top].take().unwrap())
}

/// Maps labels to their row index in `labels`.
pub(crate) fn label_index(labels: &[String]) -> HashMap<&str, usize> {
    labels
        .iter()
        .enumerate()
        .map(|(i, l)| (l.as_str(), i))
        .collect()
}
