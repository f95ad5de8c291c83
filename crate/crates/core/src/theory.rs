//! Numerical companions to the correctness and sample-complexity results:
//! Schur complements of Laplacians, the twin-tree construction, tree statistics
//! and the closed-form bounds.

use nalgebra::DMatrix;
use thiserror::Error;

use crate::genmodel::{self, GenerativeTreeModel, ModelError};
use crate::similarity;
use crate::trees::{EdgeId, UnrootedTree};

#[derive(Debug, Error)]
pub enum TheoryError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("node {node} has degree {degree}; a binary tree is required")]
    NotBinary { node: usize, degree: usize },
    #[error("pivot {pivot:e} at node {node} is numerically zero")]
    SingularPivot { node: usize, pivot: f64 },
    #[error("twin-tree update broke down at node {node}: {reason}")]
    Breakdown { node: usize, reason: String },
    #[error(transparent)]
    Model(#[from] ModelError),
}

pub type Result<T> = std::result::Result<T, TheoryError>;

// ---------------------------------------------------------------------------
// Weighted trees with explicit internal nodes

/// A tree on all of its nodes with positive edge weights (not capped at one).
#[derive(Clone, Debug, PartialEq)]
pub struct WeightedTreeGraph {
    labels: Vec<Option<String>>,
    edges: Vec<(usize, usize, f64)>,
    adj: Vec<Vec<(usize, EdgeId)>>,
}

impl WeightedTreeGraph {
    pub fn new(labels: Vec<Option<String>>, edges: Vec<(usize, usize, f64)>) -> Result<Self> {
        let n = labels.len();
        if n == 0 || edges.len() + 1 != n {
            return Err(TheoryError::InvalidInput(format!(
                "{n} nodes need {} edges, got {}",
                n.saturating_sub(1),
                edges.len()
            )));
        }
        let mut adj = vec![Vec::new(); n];
        for (e, &(a, b, w)) in edges.iter().enumerate() {
            if a >= n || b >= n || a == b {
                return Err(TheoryError::InvalidInput(format!("bad edge ({a}, {b})")));
            }
            if !(w > 0.0 && w.is_finite()) {
                return Err(TheoryError::InvalidInput(format!("weight {w} on edge {e}")));
            }
            adj[a].push((b, e));
            adj[b].push((a, e));
        }
        let g = Self { labels, edges, adj };
        if g.dfs(0).0.len() != n {
            return Err(TheoryError::InvalidInput("graph is disconnected".into()));
        }
        Ok(g)
    }

    /// The generating tree with similarity weights, degree-two root included.
    pub fn from_model(model: &GenerativeTreeModel) -> Result<Self> {
        let n = model.node_count();
        let labels = (0..n).map(|v| model.label(v).map(str::to_string)).collect();
        let edges = (0..n)
            .filter_map(|v| model.parent(v).map(|p| (p, v, model.edge_similarity(v))))
            .collect();
        Self::new(labels, edges)
    }

    /// An unrooted tree with a weight on every edge.
    pub fn from_unrooted(t: &UnrootedTree) -> Result<Self> {
        let labels = (0..t.node_count())
            .map(|v| t.label(v).map(str::to_string))
            .collect();
        let edges = t
            .edges()
            .iter()
            .map(|e| {
                e.weight
                    .map(|w| (e.a, e.b, w))
                    .ok_or_else(|| TheoryError::InvalidInput("unweighted edge".into()))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(labels, edges)
    }

    pub fn node_count(&self) -> usize {
        self.labels.len()
    }

    pub fn edges(&self) -> &[(usize, usize, f64)] {
        &self.edges
    }

    pub fn weight(&self, e: EdgeId) -> f64 {
        self.edges[e].2
    }

    pub fn set_weight(&mut self, e: EdgeId, w: f64) -> Result<()> {
        if !(w > 0.0 && w.is_finite()) || e >= self.edges.len() {
            return Err(TheoryError::InvalidInput(format!("weight {w} on edge {e}")));
        }
        self.edges[e].2 = w;
        Ok(())
    }

    pub fn neighbors(&self, v: usize) -> &[(usize, EdgeId)] {
        &self.adj[v]
    }

    pub fn label(&self, v: usize) -> Option<&str> {
        self.labels[v].as_deref()
    }

    /// Labelled nodes in increasing node order.
    pub fn leaf_nodes(&self) -> Vec<usize> {
        (0..self.node_count())
            .filter(|&v| self.labels[v].is_some())
            .collect()
    }

    /// Unlabelled nodes in increasing node order.
    pub fn internal_nodes(&self) -> Vec<usize> {
        (0..self.node_count())
            .filter(|&v| self.labels[v].is_none())
            .collect()
    }

    fn dfs(&self, root: usize) -> (Vec<usize>, Vec<Option<(usize, EdgeId)>>) {
        let n = self.node_count();
        let mut parent = vec![None; n];
        let mut seen = vec![false; n];
        let mut order = Vec::with_capacity(n);
        let mut stack = vec![root];
        seen[root] = true;
        while let Some(v) = stack.pop() {
            order.push(v);
            for &(w, e) in &self.adj[v] {
                if !seen[w] {
                    seen[w] = true;
                    parent[w] = Some((v, e));
                    stack.push(w);
                }
            }
        }
        (order, parent)
    }

    /// Products of weights along the path from `source` to every node.
    pub fn multiplicative_weights(&self, source: usize) -> Vec<f64> {
        let (order, parent) = self.dfs(source);
        let mut out = vec![1.0; self.node_count()];
        for &v in &order {
            if let Some((p, e)) = parent[v] {
                out[v] = out[p] * self.edges[e].2;
            }
        }
        out
    }

    /// The graph Laplacian over all nodes, in node order.
    pub fn laplacian(&self) -> DMatrix<f64> {
        let n = self.node_count();
        let mut l = DMatrix::zeros(n, n);
        for &(a, b, w) in &self.edges {
            l[(a, b)] -= w;
            l[(b, a)] -= w;
            l[(a, a)] += w;
            l[(b, b)] += w;
        }
        l
    }

    /// Multiplicative weights between the labelled nodes, with a unit diagonal.
    pub fn leaf_similarity(&self) -> DMatrix<f64> {
        let leaves = self.leaf_nodes();
        let mut s = DMatrix::identity(leaves.len(), leaves.len());
        for (i, &a) in leaves.iter().enumerate() {
            let alpha = self.multiplicative_weights(a);
            for (j, &b) in leaves.iter().enumerate() {
                if i != j {
                    s[(i, j)] = alpha[b];
                }
            }
        }
        s
    }
}

// ---------------------------------------------------------------------------
// Schur complements

/// `M / D` for the principal block `D` on the indices not in `keep`, computed by
/// eliminating one index at a time, fewest remaining neighbours first. The
/// result is indexed in the order of `keep`.
pub fn schur_complement(l: &DMatrix<f64>, keep: &[usize]) -> Result<DMatrix<f64>> {
    let n = l.nrows();
    if !l.is_square() {
        return Err(TheoryError::InvalidInput("matrix is not square".into()));
    }
    let mut kept = vec![false; n];
    for &k in keep {
        if k >= n || kept[k] {
            return Err(TheoryError::InvalidInput(format!(
                "bad or repeated index {k}"
            )));
        }
        kept[k] = true;
    }
    let scale = l.iter().fold(0.0f64, |a, x| a.max(x.abs()));
    let mut work = l.clone();
    let mut alive = vec![true; n];
    let mut pending: Vec<usize> = (0..n).filter(|&i| !kept[i]).collect();
    while !pending.is_empty() {
        let degree = |v: usize, work: &DMatrix<f64>| {
            (0..n)
                .filter(|&j| j != v && alive[j] && work[(v, j)] != 0.0)
                .count()
        };
        let (pos, &v) = pending
            .iter()
            .enumerate()
            .min_by_key(|&(_, &v)| (degree(v, &work), v))
            .unwrap();
        pending.swap_remove(pos);
        let pivot = work[(v, v)];
        if pivot.abs() <= 1e-14 * scale.max(f64::MIN_POSITIVE) {
            return Err(TheoryError::SingularPivot { node: v, pivot });
        }
        alive[v] = false;
        let nbrs: Vec<usize> = (0..n)
            .filter(|&j| alive[j] && work[(v, j)] != 0.0)
            .collect();
        for &i in &nbrs {
            let f = work[(i, v)] / pivot;
            for &j in &nbrs {
                work[(i, j)] -= f * work[(v, j)];
            }
        }
    }
    Ok(DMatrix::from_fn(keep.len(), keep.len(), |i, j| {
        work[(keep[i], keep[j])]
    }))
}

// ---------------------------------------------------------------------------
// Twin tree

/// One iteration of the twin-tree construction.
#[derive(Clone, Debug)]
pub struct TwinStep {
    /// The internal node added to the graph.
    pub added: usize,
    /// The two active neighbours it absorbs.
    pub absorbed: (usize, usize),
    pub d: f64,
    /// Weights of the graph after the step, over all tree nodes (zero where a
    /// node has not been added yet).
    pub graph: DMatrix<f64>,
    /// Tree weights after the step, indexed by edge.
    pub tree_weights: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct TwinTree {
    pub tree: WeightedTreeGraph,
    pub steps: Vec<TwinStep>,
}

/// Reweights `t` so that eliminating its internal nodes from the Laplacian gives
/// the Laplacian of the leaf similarity graph.
///
/// Each step adds the smallest-numbered internal node with at least two active
/// neighbours and absorbs its two smallest-numbered active neighbours.
pub fn twin_tree(t: &WeightedTreeGraph) -> Result<TwinTree> {
    let n = t.node_count();
    for v in 0..n {
        let deg = t.adj[v].len();
        let ok = if t.labels[v].is_some() {
            deg <= 1
        } else {
            deg == 2 || deg == 3
        };
        if !ok {
            return Err(TheoryError::NotBinary {
                node: v,
                degree: deg,
            });
        }
    }
    let mut tree = t.clone();
    let mut active: Vec<bool> = (0..n).map(|v| t.labels[v].is_some()).collect();
    let mut added = active.clone();
    let mut graph = DMatrix::zeros(n, n);
    let leaves = t.leaf_nodes();
    for &a in &leaves {
        let alpha = t.multiplicative_weights(a);
        for &b in &leaves {
            if a != b {
                graph[(a, b)] = alpha[b];
            }
        }
    }
    let mut steps = Vec::new();
    for _ in 0..t.internal_nodes().len() {
        let pick = (0..n).find_map(|h| {
            if added[h] {
                return None;
            }
            let mut act: Vec<usize> = tree.adj[h]
                .iter()
                .map(|&(w, _)| w)
                .filter(|&w| active[w])
                .collect();
            act.sort_unstable();
            (act.len() >= 2).then_some((h, act))
        });
        let (h, act) = pick.ok_or_else(|| TheoryError::Breakdown {
            node: n,
            reason: "no internal node has two active neighbours".into(),
        })?;
        let alpha = tree.multiplicative_weights(h);
        let members: Vec<usize> = (0..n).filter(|&x| active[x]).collect();
        let d: f64 = members.iter().map(|&x| alpha[x]).sum();
        let (v1, v2) = (act[0], act[1]);

        for (p, &x) in members.iter().enumerate() {
            for &y in &members[p + 1..] {
                let w = if x == v1 || x == v2 || y == v1 || y == v2 {
                    0.0
                } else {
                    graph[(x, y)] - alpha[x] * alpha[y]
                };
                graph[(x, y)] = w;
                graph[(y, x)] = w;
            }
            graph[(h, x)] = d * alpha[x];
            graph[(x, h)] = d * alpha[x];
        }

        let edge_to = |v: usize| tree.adj[h].iter().find(|&&(w, _)| w == v).unwrap().1;
        if act.len() == 3 {
            // The last internal node: all three neighbours are active.
            for &v in &act {
                let e = edge_to(v);
                tree.edges[e].2 *= d;
            }
        } else {
            let e1 = edge_to(v1);
            let e2 = edge_to(v2);
            tree.edges[e1].2 *= d;
            tree.edges[e2].2 *= d;
            let third = tree.adj[h]
                .iter()
                .copied()
                .find(|&(w, _)| w != v1 && w != v2);
            if let Some((x, ex)) = third {
                let shrink = |v: usize| -> Result<f64> {
                    let s = 1.0 - alpha[v] * alpha[v];
                    if s <= 0.0 {
                        return Err(TheoryError::Breakdown {
                            node: v,
                            reason: format!(
                                "path weight {} to the new node is not below one",
                                alpha[v]
                            ),
                        });
                    }
                    Ok(s.sqrt())
                };
                let mut updates = vec![(ex, d * tree.edges[ex].2 / shrink(x)?)];
                let mut stack = vec![(x, h)];
                while let Some((p, from)) = stack.pop() {
                    for &(c, e) in &tree.adj[p] {
                        if c == from {
                            continue;
                        }
                        let w = tree.edges[e].2;
                        if active[c] {
                            updates.push((e, w * shrink(p)?));
                        } else {
                            updates.push((e, w * shrink(p)? / shrink(c)?));
                            stack.push((c, p));
                        }
                    }
                }
                for (e, w) in updates {
                    tree.edges[e].2 = w;
                }
            }
        }
        active[v1] = false;
        active[v2] = false;
        if act.len() == 3 {
            active[act[2]] = false;
        }
        active[h] = true;
        added[h] = true;
        steps.push(TwinStep {
            added: h,
            absorbed: (v1, v2),
            d,
            graph: graph.clone(),
            tree_weights: tree.edges.iter().map(|e| e.2).collect(),
        });
    }
    for (e, &(_, _, w)) in tree.edges.iter().enumerate() {
        if !(w > 0.0 && w.is_finite()) {
            return Err(TheoryError::Breakdown {
                node: e,
                reason: format!("edge weight {w}"),
            });
        }
    }
    Ok(TwinTree { tree, steps })
}

/// Largest entrywise gap between the Laplacian of `t` with internal nodes
/// eliminated and the Laplacian of `g`, the similarity graph on the leaves.
pub fn twin_residual(twin: &WeightedTreeGraph, g: &DMatrix<f64>) -> Result<f64> {
    let reduced = schur_complement(&twin.laplacian(), &twin.leaf_nodes())?;
    let lg = similarity::laplacian_of(g);
    Ok((reduced - lg.matrix()).amax())
}

// ---------------------------------------------------------------------------
// Tree statistics

/// Which partition hierarchy `eta` was measured on.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Hierarchy {
    /// The generating tree's own root splits; used for ultrametric models.
    Generation,
    /// Splits of the tree rooted at its most balanced edge.
    Centroid,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TreeStats {
    /// Balancedness: largest size ratio of the two sides of a hierarchy split.
    pub eta: f64,
    /// Diameter, `max -log S` over leaf pairs.
    pub r: f64,
    /// Depth: over edges, the larger of the two closest-leaf distances.
    pub h: f64,
    pub hierarchy: Hierarchy,
    pub ultrametric: bool,
}

fn split_ratio(sizes: &[usize]) -> f64 {
    // More than two children: the largest against the rest.
    let total: usize = sizes.iter().sum();
    let big = *sizes.iter().max().unwrap();
    let (a, b) = if sizes.len() == 2 {
        (sizes[0], sizes[1])
    } else {
        (big, total - big)
    };
    a.max(b) as f64 / a.min(b) as f64
}

/// `eta` of the hierarchy obtained by rooting `t` at edge `e`.
pub fn balance_ratio(t: &UnrootedTree, e: EdgeId) -> Result<f64> {
    let edge = t
        .edge(e)
        .map_err(|err| TheoryError::InvalidInput(err.to_string()))?;
    let mut eta = 1.0f64;
    let mut sizes = [0usize; 2];
    for (k, (start, from)) in [(edge.a, edge.b), (edge.b, edge.a)].into_iter().enumerate() {
        // Post-order leaf counts below `start` with `from` as its parent.
        let mut order = vec![(start, from)];
        let mut i = 0;
        while i < order.len() {
            let (v, p) = order[i];
            for &(w, _) in t.neighbors(v) {
                if w != p {
                    order.push((w, v));
                }
            }
            i += 1;
        }
        let mut count = vec![0usize; t.node_count()];
        for &(v, p) in order.iter().rev() {
            let kids: Vec<usize> = t
                .neighbors(v)
                .iter()
                .filter(|&&(w, _)| w != p)
                .map(|&(w, _)| count[w])
                .collect();
            if kids.is_empty() {
                count[v] = 1;
            } else {
                count[v] = kids.iter().sum();
                if kids.len() >= 2 {
                    eta = eta.max(split_ratio(&kids));
                }
            }
        }
        sizes[k] = count[start];
    }
    Ok(eta.max(split_ratio(&sizes)))
}

/// `eta`, `r` and `h` of a generating model.
pub fn tree_stats(model: &GenerativeTreeModel) -> Result<TreeStats> {
    let m = model.leaf_count();
    if m < 2 {
        return Err(TheoryError::InvalidInput("need at least two leaves".into()));
    }
    let s = genmodel::exact_similarity(model);
    let mut r = 0.0f64;
    for i in 0..m {
        for j in i + 1..m {
            r = r.max(-s.get(i, j).ln());
        }
    }

    let n = model.node_count();
    let len = |v: usize| -model.edge_similarity(v).ln();
    let order = model.topology().preorder();
    let is_leaf = |v: usize| model.label(v).is_some();
    let mut down = vec![f64::INFINITY; n];
    for &v in order.iter().rev() {
        if is_leaf(v) {
            down[v] = 0.0;
        }
        for &c in model.children(v) {
            down[v] = down[v].min(down[c] + len(c));
        }
    }
    // Closest leaf from each node when leaving its subtree through the parent.
    let mut up = vec![f64::INFINITY; n];
    let mut h = 0.0f64;
    for &v in &order {
        let kids = model.children(v);
        for &c in kids {
            let mut outside = if is_leaf(v) { 0.0 } else { up[v] };
            for &o in kids {
                if o != c {
                    outside = outside.min(down[o] + len(o));
                }
            }
            up[c] = outside + len(c);
            h = h.max(down[c]).max(outside);
        }
    }

    let depths = model_depths(model);
    let leaf_depths: Vec<f64> = model.leaf_nodes().iter().map(|&v| depths[v]).collect();
    let hi = leaf_depths
        .iter()
        .cloned()
        .fold(f64::NEG_INFINITY, f64::max);
    let lo = leaf_depths.iter().cloned().fold(f64::INFINITY, f64::min);
    let ultrametric = hi - lo <= 1e-9 * hi.max(1.0);
    let (eta, hierarchy) = if ultrametric {
        let mut count = vec![0usize; n];
        let mut eta = 1.0f64;
        for &v in order.iter().rev() {
            let kids: Vec<usize> = model.children(v).iter().map(|&c| count[c]).collect();
            count[v] = if kids.is_empty() {
                1
            } else {
                kids.iter().sum()
            };
            if kids.len() >= 2 {
                eta = eta.max(split_ratio(&kids));
            }
        }
        (eta, Hierarchy::Generation)
    } else {
        let t = model.unrooted_tree()?;
        let e = centroid_edge(&t);
        (balance_ratio(&t, e)?, Hierarchy::Centroid)
    };
    Ok(TreeStats {
        eta,
        r,
        h,
        hierarchy,
        ultrametric,
    })
}

fn model_depths(model: &GenerativeTreeModel) -> Vec<f64> {
    let mut depth = vec![0.0; model.node_count()];
    for v in model.topology().preorder() {
        if let Some(p) = model.parent(v) {
            depth[v] = depth[p] - model.edge_similarity(v).ln();
        }
    }
    depth
}

/// The edge whose larger side is smallest; ties go to the lower edge id.
pub fn centroid_edge(t: &UnrootedTree) -> EdgeId {
    let m = t.leaf_count();
    let sets = t.edge_bitsets();
    (0..sets.len())
        .min_by_key(|&e| {
            let k = sets[e].count_ones(..);
            (k.max(m - k), e)
        })
        .unwrap_or(0)
}

// ---------------------------------------------------------------------------
// Bounds

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PartitionBound {
    pub samples: f64,
    /// Set when the tree is not ultrametric, so the constant-block assumption
    /// behind the bound does not hold.
    pub out_of_model: bool,
}

/// Samples sufficient for the top-level partition to produce two clans with
/// probability `1 - eps`.
pub fn partition_sample_bound(
    m: usize,
    l: usize,
    eps: f64,
    stats: &TreeStats,
) -> Result<PartitionBound> {
    if !(eps > 0.0 && eps < 1.0) {
        return Err(TheoryError::InvalidInput(format!(
            "eps {eps} outside (0, 1)"
        )));
    }
    let mf = m as f64;
    let lf = l as f64;
    let gap = (stats.r - stats.h).exp_m1();
    let tail = if gap <= 0.0 {
        f64::INFINITY
    } else {
        (1.0f64).max((1.0 + stats.eta).powi(2) / (gap * gap))
    };
    let samples = 4.0
        * (2.0 * mf * mf / eps).ln()
        * stats.eta
        * lf
        * lf
        * mf
        * (mf.sqrt() + 1.0).powi(2)
        * (2.0 * stats.r).exp()
        * tail;
    Ok(PartitionBound {
        samples,
        out_of_model: !stats.ultrametric,
    })
}

fn check_delta_xi(delta: f64, xi: f64) -> Result<()> {
    if !(delta > 0.0 && delta <= xi && xi < 1.0) {
        return Err(TheoryError::InvalidInput(format!(
            "need 0 < delta <= xi < 1, got delta {delta}, xi {xi}"
        )));
    }
    Ok(())
}

/// Samples sufficient for the merge step to find the correct placeholder edge
/// with probability `1 - eps`; `d_stat` is the smaller Frobenius norm of the two
/// relevant blocks.
pub fn merge_sample_bound(
    m: usize,
    l: usize,
    eps: f64,
    d_stat: f64,
    delta: f64,
    xi: f64,
) -> Result<f64> {
    check_delta_xi(delta, xi)?;
    if !(d_stat > 0.0) || !(eps > 0.0 && eps < 1.0) {
        return Err(TheoryError::InvalidInput(format!("D {d_stat}, eps {eps}")));
    }
    let mf = m as f64;
    let lf = l as f64;
    let inner = 2.0 / d_stat + 2.5 / d_stat.powi(2) + (1.0 + 10.0 * 2f64.sqrt()) / d_stat.powi(3);
    let shape = xi.powi(4) / (delta.powi(6) * (1.0 - xi * xi).powi(2));
    Ok(8.0 * lf * lf * mf.powi(3) * inner * inner * shape * (2.0 * mf * mf / eps).ln())
}

/// Lower bound on the score of any incorrect placeholder edge on exact
/// similarities. The logarithm in the small-`delta` branch is base 2.
pub fn incorrect_edge_lower_bound(m: usize, delta: f64, xi: f64) -> Result<f64> {
    check_delta_xi(delta, xi)?;
    let mf = m as f64;
    let tail = 1.0 - xi * xi;
    Ok(if delta * delta > 0.5 {
        delta.powi(3) * tail / ((2.0 * mf).sqrt() * xi * xi)
    } else {
        (2f64.sqrt() * delta).powf(mf.log2()) * delta * delta * tail / (2.0 * mf.sqrt() * xi * xi)
    })
}

/// Spectrum facts for the complete binary tree with `m` leaves, a degree-two
/// root and similarity `delta` on every edge.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SymmetricSpectrum {
    pub lambda2: f64,
    pub lambda3: f64,
    /// The general lower bound `m (eta e^-r + e^-h) / (1 + eta)` with `eta = 1`.
    pub lambda3_lower: f64,
    /// Lower bound on `|v2(i)|`.
    pub v2_lower: f64,
}

/// Laplacian eigenvalue of the symmetric tree for the eigenvector supported on a
/// clan with children of size `a` each (so `a = m/2` gives `lambda2`).
pub fn symmetric_eigenvalue(m: usize, a: usize, delta: f64) -> Result<f64> {
    if !m.is_power_of_two() || !a.is_power_of_two() || a >= m {
        return Err(TheoryError::InvalidInput(format!(
            "m {m}, a {a} must be powers of two with a < m"
        )));
    }
    let depth = m.trailing_zeros() as i32;
    let la = a.trailing_zeros() as i32;
    let x = 2.0 * delta * delta;
    // delta^2 x^a (1 + sum_{k < depth - la} x^k): the closed form with the
    // removable singularity at x = 1 cancelled.
    let geometric: f64 = (0..depth - la).map(|k| x.powi(k)).sum();
    Ok(delta * delta * x.powi(la) * (1.0 + geometric))
}

pub fn symmetric_spectrum(m: usize, delta: f64) -> Result<SymmetricSpectrum> {
    if m < 4 || !m.is_power_of_two() {
        return Err(TheoryError::InvalidInput(format!(
            "m = {m} is not a power of two >= 4"
        )));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(TheoryError::InvalidInput(format!(
            "delta {delta} outside (0, 1)"
        )));
    }
    let depth = m.trailing_zeros() as f64;
    let mf = m as f64;
    let r = -2.0 * depth * delta.ln();
    let h = -depth * delta.ln();
    let eta = 1.0;
    Ok(SymmetricSpectrum {
        lambda2: symmetric_eigenvalue(m, m / 2, delta)?,
        lambda3: symmetric_eigenvalue(m, m / 4, delta)?,
        lambda3_lower: mf / (1.0 + eta) * (eta * (-r).exp() + (-h).exp()),
        v2_lower: 1.0 / (mf * eta).sqrt(),
    })
}
