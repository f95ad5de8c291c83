//! Generative latent tree models.
//!
//! A [`GenerativeTreeModel`] is a rooted tree whose edges carry column-stochastic
//! [`TransitionMatrix`] values (`P[b, a] = Pr[child = b | parent = a]`). Leaves are
//! observed; internal nodes are latent. The module also samples random topologies
//! (Kingman coalescent, birth-death), evolves sequences down a model and computes
//! exact pairwise similarities.

use std::fmt::Write as _;
use std::io::{BufRead, BufReader, Read};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use rayon::prelude::*;
use thiserror::Error;

use crate::similarity::SimilarityMatrix;
use crate::trees::{self, Edge, TreeError, UnrootedTree};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("alignment format error: {0}")]
    Format(String),
    #[error("symbol {symbol:?} is outside an alphabet of size {alphabet}")]
    Symbol { symbol: char, alphabet: usize },
    #[error(transparent)]
    Tree(#[from] TreeError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, ModelError>;

fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(ModelError::InvalidParameter(msg.into()))
}

/// Similarities produced from branch lengths are clamped into this interval.
pub const MIN_SIMILARITY: f64 = 1e-6;
pub const MAX_SIMILARITY: f64 = 1.0 - 1e-6;

/// Column-stochastic `l x l` matrix: entry `(b, a)` is `Pr[child = b | parent = a]`.
#[derive(Clone, Debug, PartialEq)]
pub struct TransitionMatrix(DMatrix<f64>);

impl TransitionMatrix {
    /// Validates column sums and entry ranges.
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if !m.is_square() || m.nrows() < 2 {
            return invalid("transition matrix must be square with at least 2 states");
        }
        for c in 0..m.ncols() {
            let col = m.column(c);
            if col.iter().any(|&x| !(-1e-12..=1.0 + 1e-12).contains(&x)) {
                return invalid(format!("column {c} has entries outside [0, 1]"));
            }
            if (col.sum() - 1.0).abs() > 1e-9 {
                return invalid(format!("column {c} sums to {}", col.sum()));
            }
        }
        Ok(Self(m))
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn alphabet(&self) -> usize {
        self.0.nrows()
    }

    pub fn det(&self) -> f64 {
        self.0.determinant()
    }
}

/// Jukes-Cantor matrix: `1 - theta` on the diagonal, `theta / (l - 1)` elsewhere.
pub fn jc_matrix(theta: f64, l: usize) -> Result<TransitionMatrix> {
    if l < 2 {
        return invalid("alphabet size must be at least 2");
    }
    let max = (l as f64 - 1.0) / l as f64;
    if !(0.0..max).contains(&theta) {
        return invalid(format!("theta {theta} outside [0, {max})"));
    }
    let off = theta / (l as f64 - 1.0);
    Ok(TransitionMatrix(DMatrix::from_fn(l, l, |i, j| {
        if i == j {
            1.0 - theta
        } else {
            off
        }
    })))
}

/// Similarity of a Jukes-Cantor edge, `(1 - l theta / (l - 1))^(l - 1)`.
pub fn jc_similarity(theta: f64, l: usize) -> f64 {
    let lf = l as f64;
    (1.0 - lf * theta / (lf - 1.0)).powi(l as i32 - 1)
}

/// Mutation probability whose Jukes-Cantor edge has similarity `delta`.
pub fn delta_to_theta(delta: f64, l: usize) -> Result<f64> {
    if l < 2 {
        return invalid("alphabet size must be at least 2");
    }
    if !(delta > 0.0 && delta <= 1.0) {
        return invalid(format!("target similarity {delta} outside (0, 1]"));
    }
    let lf = l as f64;
    Ok((lf - 1.0) / lf * (1.0 - delta.powf(1.0 / (lf - 1.0))))
}

fn check_freqs(freqs: &[f64; 4]) -> Result<()> {
    if freqs.iter().any(|&f| !(f > 0.0)) || (freqs.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return invalid(format!(
            "base frequencies {freqs:?} must be positive and sum to 1"
        ));
    }
    Ok(())
}

/// HKY rate matrix in row convention (`Q[i][j]` is the rate `i -> j`) for states
/// A, C, G, T, normalised to one expected substitution per unit time.
pub fn hky_rate_matrix(kappa: f64, freqs: &[f64; 4]) -> Result<DMatrix<f64>> {
    if !(kappa > 0.0) {
        return invalid(format!("kappa {kappa} must be positive"));
    }
    check_freqs(freqs)?;
    // Transitions are A<->G (0,2) and C<->T (1,3).
    let is_transition = |i: usize, j: usize| (i % 2) == (j % 2);
    let mut q = DMatrix::from_fn(4, 4, |i, j| {
        if i == j {
            0.0
        } else if is_transition(i, j) {
            kappa * freqs[j]
        } else {
            freqs[j]
        }
    });
    for i in 0..4 {
        let s: f64 = q.row(i).sum();
        q[(i, i)] = -s;
    }
    let rate: f64 = -(0..4).map(|i| freqs[i] * q[(i, i)]).sum::<f64>();
    Ok(q / rate)
}

/// `exp(Q t)` for a reversible rate matrix, via the symmetrised eigenproblem.
fn reversible_expm(q: &DMatrix<f64>, freqs: &[f64], t: f64) -> DMatrix<f64> {
    let n = q.nrows();
    let sq: Vec<f64> = freqs.iter().map(|f| f.sqrt()).collect();
    let sym = DMatrix::from_fn(n, n, |i, j| sq[i] * q[(i, j)] / sq[j]);
    let sym = (&sym + sym.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let v = &eig.eigenvectors;
    let e = DVector::from_iterator(n, eig.eigenvalues.iter().map(|l| (l * t).exp()));
    let mid = v * DMatrix::from_diagonal(&e) * v.transpose();
    DMatrix::from_fn(n, n, |i, j| mid[(i, j)] * sq[j] / sq[i])
}

/// HKY transition matrix after `branch_scale` expected substitutions per site.
pub fn hky_matrix(branch_scale: f64, kappa: f64, freqs: &[f64; 4]) -> Result<TransitionMatrix> {
    if !(branch_scale >= 0.0) || !branch_scale.is_finite() {
        return invalid(format!("branch scale {branch_scale} must be nonnegative"));
    }
    let q = hky_rate_matrix(kappa, freqs)?;
    let p_row = reversible_expm(&q, freqs, branch_scale);
    // Clean rounding so columns are exactly stochastic.
    let mut p = p_row.transpose();
    for c in 0..4 {
        for r in 0..4 {
            p[(r, c)] = p[(r, c)].max(0.0);
        }
        let s: f64 = p.column(c).sum();
        p.column_mut(c).scale_mut(1.0 / s);
    }
    TransitionMatrix::new(p)
}

/// Substitution model used to realise edge similarities as transition matrices.
#[derive(Clone, Debug, PartialEq)]
pub enum Substitution {
    Jc { alphabet: usize },
    Hky { kappa: f64, freqs: [f64; 4] },
}

impl Substitution {
    pub fn jc4() -> Self {
        Substitution::Jc { alphabet: 4 }
    }

    pub fn hky_default() -> Self {
        Substitution::Hky {
            kappa: 2.0,
            freqs: [0.25; 4],
        }
    }

    pub fn alphabet(&self) -> usize {
        match self {
            Substitution::Jc { alphabet } => *alphabet,
            Substitution::Hky { .. } => 4,
        }
    }

    fn stationary(&self) -> Vec<f64> {
        match self {
            Substitution::Jc { alphabet } => vec![1.0 / *alphabet as f64; *alphabet],
            Substitution::Hky { freqs, .. } => freqs.to_vec(),
        }
    }

    /// Matrix for an edge whose similarity under the stationary root is `s`.
    fn matrix_for(&self, s: f64) -> Result<(TransitionMatrix, Option<f64>)> {
        match self {
            Substitution::Jc { alphabet } => {
                let theta = delta_to_theta(s, *alphabet)?;
                Ok((jc_matrix(theta, *alphabet)?, Some(theta)))
            }
            Substitution::Hky { kappa, freqs } => {
                let q = hky_rate_matrix(*kappa, freqs)?;
                // det exp(Qt) = exp(t tr Q).
                let t = -s.ln() / -q.trace();
                Ok((hky_matrix(t, *kappa, freqs)?, None))
            }
        }
    }
}

/// Rooted topology over an arena of nodes; leaves carry labels.
#[derive(Clone, Debug, PartialEq)]
pub struct RootedTopology {
    pub parent: Vec<Option<usize>>,
    pub labels: Vec<Option<String>>,
}

impl RootedTopology {
    pub fn root(&self) -> usize {
        self.parent.iter().position(Option::is_none).unwrap()
    }

    pub fn children(&self) -> Vec<Vec<usize>> {
        let mut ch = vec![Vec::new(); self.parent.len()];
        for (v, p) in self.parent.iter().enumerate() {
            if let Some(p) = p {
                ch[*p].push(v);
            }
        }
        ch
    }

    fn validate(&self) -> Result<()> {
        let n = self.parent.len();
        if n == 0 || self.labels.len() != n {
            return invalid("topology arrays are empty or of different lengths");
        }
        if self.parent.iter().filter(|p| p.is_none()).count() != 1 {
            return invalid("topology needs exactly one root");
        }
        let ch = self.children();
        for v in 0..n {
            let is_leaf = ch[v].is_empty();
            if is_leaf != self.labels[v].is_some() {
                return invalid(format!("node {v}: leaves and only leaves carry labels"));
            }
        }
        // Every node must reach the root.
        let root = self.root();
        for mut v in 0..n {
            let mut steps = 0;
            while let Some(p) = self.parent[v] {
                v = p;
                steps += 1;
                if steps > n {
                    return invalid("topology has a cycle");
                }
            }
            if v != root {
                return invalid("topology is disconnected");
            }
        }
        Ok(())
    }

    /// Preorder of the nodes.
    pub fn preorder(&self) -> Vec<usize> {
        let ch = self.children();
        let mut order = Vec::with_capacity(self.parent.len());
        let mut stack = vec![self.root()];
        while let Some(v) = stack.pop() {
            order.push(v);
            stack.extend(ch[v].iter().rev());
        }
        order
    }

    pub fn leaves(&self) -> Vec<usize> {
        (0..self.labels.len())
            .filter(|&v| self.labels[v].is_some())
            .collect()
    }

    /// Unrooted tree with the given per-node (edge to parent) weights.
    fn to_unrooted(&self, weights: Option<&[f64]>) -> Result<UnrootedTree> {
        let mut g = trees::SurgeryGraph::default();
        for l in &self.labels {
            g.add_node(l.clone());
        }
        for (v, p) in self.parent.iter().enumerate() {
            if let Some(p) = p {
                g.add_edge(*p, v, weights.map(|w| w[v]));
            }
        }
        g.suppress_unary();
        Ok(g.into_tree()?)
    }
}

/// A rooted tree with branch lengths, as produced by the simulators.
#[derive(Clone, Debug, PartialEq)]
pub struct RootedPhylogeny {
    pub topology: RootedTopology,
    /// Length of the edge above each node (zero for the root).
    pub lengths: Vec<f64>,
}

impl RootedPhylogeny {
    pub fn leaf_count(&self) -> usize {
        self.topology.leaves().len()
    }

    /// Root-to-node path lengths.
    pub fn depths(&self) -> Vec<f64> {
        let mut d = vec![0.0; self.lengths.len()];
        for v in self.topology.preorder() {
            if let Some(p) = self.topology.parent[v] {
                d[v] = d[p] + self.lengths[v];
            }
        }
        d
    }

    /// Per-edge similarities `exp(-length * rate)`, clamped.
    pub fn similarities(&self, rate: f64) -> Vec<f64> {
        self.lengths
            .iter()
            .map(|l| (-l * rate).exp().clamp(MIN_SIMILARITY, MAX_SIMILARITY))
            .collect()
    }

    /// Number of edges whose similarity had to be clamped.
    pub fn clamp_count(&self, rate: f64) -> usize {
        let root = self.topology.root();
        self.lengths
            .iter()
            .enumerate()
            .filter(|&(v, l)| {
                let s = (-l * rate).exp();
                v != root && !(MIN_SIMILARITY..=MAX_SIMILARITY).contains(&s)
            })
            .count()
    }

    /// Unrooted tree whose weights are the clamped edge similarities.
    pub fn to_similarity_tree(&self, rate: f64) -> Result<UnrootedTree> {
        self.topology.to_unrooted(Some(&self.similarities(rate)))
    }

    pub fn to_model(&self, rate: f64, subst: &Substitution) -> Result<GenerativeTreeModel> {
        GenerativeTreeModel::from_similarities(
            self.topology.clone(),
            &self.similarities(rate),
            subst,
        )
    }
}

pub(crate) fn leaf_label(i: usize, m: usize) -> String {
    let width = m.to_string().len();
    format!("x{:0width$}", i + 1)
}

/// Kingman coalescent: with `k` lineages the next merger comes after an
/// exponential time with rate `k (k - 1) / 2` and joins a uniformly random pair.
pub fn sample_coalescent<R: Rng + ?Sized>(m: usize, rng: &mut R) -> Result<RootedPhylogeny> {
    if m < 3 {
        return invalid(format!("coalescent needs m >= 3, got {m}"));
    }
    let n = 2 * m - 1;
    let mut parent = vec![None; n];
    let mut labels: Vec<Option<String>> = (0..m).map(|i| Some(leaf_label(i, m))).collect();
    labels.resize(n, None);
    let mut height = vec![0.0; n];
    let mut lineages: Vec<usize> = (0..m).collect();
    let mut t = 0.0;
    let mut next = m;
    while lineages.len() > 1 {
        let k = lineages.len() as f64;
        t += Exp::new(k * (k - 1.0) / 2.0).unwrap().sample(rng);
        let i = rng.random_range(0..lineages.len());
        let a = lineages.swap_remove(i);
        let j = rng.random_range(0..lineages.len());
        let b = lineages.swap_remove(j);
        parent[a] = Some(next);
        parent[b] = Some(next);
        height[next] = t;
        lineages.push(next);
        next += 1;
    }
    let lengths = (0..n)
        .map(|v| parent[v].map_or(0.0, |p: usize| height[p] - height[v]))
        .collect();
    Ok(RootedPhylogeny {
        topology: RootedTopology { parent, labels },
        lengths,
    })
}

/// Birth-death process started from one lineage and run forward until `m`
/// lineages are alive; extinct runs are restarted. After the `m`-th lineage
/// appears every tip is extended by one more exponential waiting time, extinct
/// lineages are pruned and unary nodes suppressed.
pub fn sample_birth_death<R: Rng + ?Sized>(
    m: usize,
    birth: f64,
    death: f64,
    rng: &mut R,
) -> Result<RootedPhylogeny> {
    if m < 3 {
        return invalid(format!("birth-death needs m >= 3, got {m}"));
    }
    if !(birth > death && death >= 0.0) {
        return invalid(format!("need birth > death >= 0, got {birth}, {death}"));
    }
    loop {
        // Each arena entry is a lineage segment with its start and end time.
        let mut parent: Vec<Option<usize>> = vec![None];
        let mut start = vec![0.0];
        let mut end = vec![f64::NAN];
        let mut extinct = vec![false];
        let mut alive = vec![0usize];
        let mut t = 0.0;
        while !alive.is_empty() && alive.len() < m {
            let k = alive.len() as f64;
            t += Exp::new((birth + death) * k).unwrap().sample(rng);
            let i = rng.random_range(0..alive.len());
            let v = alive[i];
            end[v] = t;
            if rng.random::<f64>() < birth / (birth + death) {
                let c1 = parent.len();
                for _ in 0..2 {
                    parent.push(Some(v));
                    start.push(t);
                    end.push(f64::NAN);
                    extinct.push(false);
                }
                alive[i] = c1;
                alive.push(c1 + 1);
            } else {
                extinct[v] = true;
                alive.swap_remove(i);
            }
        }
        if alive.is_empty() {
            continue;
        }
        let t_end = t + Exp::new((birth + death) * m as f64).unwrap().sample(rng);
        for &v in &alive {
            end[v] = t_end;
        }
        return Ok(prune_extinct(&parent, &start, &end, &extinct, m));
    }
}

fn prune_extinct(
    parent: &[Option<usize>],
    start: &[f64],
    end: &[f64],
    extinct: &[bool],
    m: usize,
) -> RootedPhylogeny {
    let n = parent.len();
    let mut children = vec![Vec::new(); n];
    for (v, p) in parent.iter().enumerate() {
        if let Some(p) = p {
            children[*p].push(v);
        }
    }
    // Nodes with an extant descendant (children have larger indices).
    let mut live = vec![false; n];
    for v in (0..n).rev() {
        live[v] = if children[v].is_empty() {
            !extinct[v]
        } else {
            children[v].iter().any(|&c| live[c])
        };
    }
    let live_children =
        |v: usize| -> Vec<usize> { children[v].iter().copied().filter(|&c| live[c]).collect() };
    // Descend from the origin to the first node with two live children.
    let mut root = 0;
    loop {
        let lc = live_children(root);
        if lc.len() == 1 {
            root = lc[0];
        } else {
            break;
        }
    }
    let mut out_parent = Vec::new();
    let mut out_len = Vec::new();
    let mut out_labels = Vec::new();
    let mut leaf_count = 0;
    // (old node, new parent, accumulated length)
    let mut stack = vec![(root, None, 0.0)];
    while let Some((v, p, acc)) = stack.pop() {
        let lc = live_children(v);
        let len = end[v] - start[v] + acc;
        if lc.len() == 1 && v != root {
            stack.push((lc[0], p, len));
            continue;
        }
        let id = out_parent.len();
        out_parent.push(p);
        out_len.push(if p.is_none() { 0.0 } else { len });
        if lc.is_empty() {
            out_labels.push(Some(leaf_label(leaf_count, m)));
            leaf_count += 1;
        } else {
            out_labels.push(None);
        }
        for &c in lc.iter().rev() {
            stack.push((c, Some(id), 0.0));
        }
    }
    RootedPhylogeny {
        topology: RootedTopology {
            parent: out_parent,
            labels: out_labels,
        },
        lengths: out_len,
    }
}

/// Tree, root distribution and per-edge transition matrices.
#[derive(Clone, Debug)]
pub struct GenerativeTreeModel {
    topology: RootedTopology,
    children: Vec<Vec<usize>>,
    alphabet: usize,
    root_distribution: Vec<f64>,
    /// Matrix on the edge above each node (`None` at the root).
    matrices: Vec<Option<TransitionMatrix>>,
    /// Jukes-Cantor mutation probabilities when applicable.
    thetas: Vec<Option<f64>>,
    /// Similarity of the edge above each node (1 at the root).
    edge_similarity: Vec<f64>,
    substitution: Option<Substitution>,
}

impl GenerativeTreeModel {
    /// Builds a model from explicit matrices and root distribution.
    pub fn from_matrices(
        topology: RootedTopology,
        root_distribution: Vec<f64>,
        matrices: Vec<Option<TransitionMatrix>>,
    ) -> Result<Self> {
        topology.validate()?;
        let n = topology.parent.len();
        let root = topology.root();
        let l = root_distribution.len();
        if l < 2
            || root_distribution.iter().any(|&p| !(p > 0.0))
            || (root_distribution.iter().sum::<f64>() - 1.0).abs() > 1e-9
        {
            return invalid("root distribution must be positive and sum to 1");
        }
        if matrices.len() != n {
            return invalid("one matrix slot per node is required");
        }
        for v in 0..n {
            match (&matrices[v], v == root) {
                (Some(p), false) if p.alphabet() == l => {}
                (None, true) => {}
                _ => return invalid(format!("node {v}: missing or mismatched matrix")),
            }
        }
        // Propagate marginals to compute the two-sided edge similarities.
        let mut marginal = vec![DVector::zeros(l); n];
        marginal[root] = DVector::from_vec(root_distribution.clone());
        let mut edge_similarity = vec![1.0; n];
        for v in topology.preorder() {
            if let Some(p) = topology.parent[v] {
                let pm = matrices[v].as_ref().unwrap().matrix();
                marginal[v] = pm * &marginal[p];
                let log_ratio: f64 = marginal[p].iter().map(|x| x.ln()).sum::<f64>()
                    - marginal[v].iter().map(|x| x.ln()).sum::<f64>();
                let s = pm.determinant().abs() * (0.5 * log_ratio).exp();
                if !(s > 0.0 && s < 1.0) {
                    return invalid(format!(
                        "edge above node {v} has similarity {s}, outside (0, 1)"
                    ));
                }
                edge_similarity[v] = s;
            }
        }
        let children = topology.children();
        Ok(Self {
            topology,
            children,
            alphabet: l,
            root_distribution,
            matrices,
            thetas: vec![None; n],
            edge_similarity,
            substitution: None,
        })
    }

    /// Builds a model whose edge above node `v` has similarity `similarity[v]`,
    /// realised through `subst` with its stationary root distribution.
    pub fn from_similarities(
        topology: RootedTopology,
        similarity: &[f64],
        subst: &Substitution,
    ) -> Result<Self> {
        topology.validate()?;
        let root = topology.root();
        let n = topology.parent.len();
        if similarity.len() != n {
            return invalid("one similarity per node is required");
        }
        let mut matrices = vec![None; n];
        let mut thetas = vec![None; n];
        for v in 0..n {
            if v != root {
                let s = similarity[v];
                if !(s > 0.0 && s < 1.0) {
                    return invalid(format!("similarity {s} outside (0, 1)"));
                }
                let (p, theta) = subst.matrix_for(s)?;
                matrices[v] = Some(p);
                thetas[v] = theta;
            }
        }
        let mut model = Self::from_matrices(topology, subst.stationary(), matrices)?;
        model.thetas = thetas;
        model.substitution = Some(subst.clone());
        Ok(model)
    }

    /// Roots a weighted unrooted tree at internal node `root` and realises its
    /// weights as edge similarities.
    pub fn from_weighted_tree(
        tree: &UnrootedTree,
        root: usize,
        subst: &Substitution,
    ) -> Result<Self> {
        if !tree.is_weighted() {
            return invalid("tree needs a weight on every edge");
        }
        let (order, parent_edge) = tree.dfs_order(root);
        let n = tree.node_count();
        let mut parent = vec![None; n];
        let mut sims = vec![1.0; n];
        for &v in &order {
            if let Some(e) = parent_edge[v] {
                let edge: &Edge = &tree.edges()[e];
                parent[v] = Some(edge.other(v));
                sims[v] = edge.weight.unwrap();
            }
        }
        let labels = (0..n).map(|v| tree.label(v).map(str::to_string)).collect();
        Self::from_similarities(RootedTopology { parent, labels }, &sims, subst)
    }

    pub fn topology(&self) -> &RootedTopology {
        &self.topology
    }

    pub fn root(&self) -> usize {
        self.topology.root()
    }

    pub fn node_count(&self) -> usize {
        self.topology.parent.len()
    }

    pub fn parent(&self, v: usize) -> Option<usize> {
        self.topology.parent[v]
    }

    pub fn children(&self, v: usize) -> &[usize] {
        &self.children[v]
    }

    pub fn label(&self, v: usize) -> Option<&str> {
        self.topology.labels[v].as_deref()
    }

    pub fn alphabet(&self) -> usize {
        self.alphabet
    }

    pub fn root_distribution(&self) -> &[f64] {
        &self.root_distribution
    }

    pub fn matrix(&self, v: usize) -> Option<&TransitionMatrix> {
        self.matrices[v].as_ref()
    }

    pub fn theta(&self, v: usize) -> Option<f64> {
        self.thetas[v]
    }

    pub fn substitution(&self) -> Option<&Substitution> {
        self.substitution.as_ref()
    }

    /// Similarity of the edge between `v` and its parent.
    pub fn edge_similarity(&self, v: usize) -> f64 {
        self.edge_similarity[v]
    }

    /// Leaf nodes in arena order.
    pub fn leaf_nodes(&self) -> Vec<usize> {
        self.topology.leaves()
    }

    pub fn leaf_labels(&self) -> Vec<String> {
        self.leaf_nodes()
            .into_iter()
            .map(|v| self.topology.labels[v].clone().unwrap())
            .collect()
    }

    pub fn leaf_count(&self) -> usize {
        self.leaf_nodes().len()
    }

    /// Undirected adjacency with edge similarities.
    pub fn adjacency(&self) -> Vec<Vec<(usize, f64)>> {
        let mut adj = vec![Vec::new(); self.node_count()];
        for v in 0..self.node_count() {
            if let Some(p) = self.parent(v) {
                adj[v].push((p, self.edge_similarity[v]));
                adj[p].push((v, self.edge_similarity[v]));
            }
        }
        adj
    }

    /// Similarities from `source` to every node: products along tree paths.
    pub fn similarities_from(&self, source: usize) -> Vec<f64> {
        let adj = self.adjacency();
        similarities_from_adjacency(&adj, source)
    }

    /// Similarity between every pair of nodes, leaves and internal nodes alike.
    pub fn node_similarity_matrix(&self) -> DMatrix<f64> {
        let adj = self.adjacency();
        let n = self.node_count();
        let mut s = DMatrix::zeros(n, n);
        for i in 0..n {
            let row = similarities_from_adjacency(&adj, i);
            for j in 0..n {
                s[(i, j)] = row[j];
            }
        }
        s
    }

    /// Unrooted topology with similarities as weights; a degree-two root is
    /// suppressed and its two edge similarities multiplied.
    pub fn unrooted_tree(&self) -> Result<UnrootedTree> {
        self.topology.to_unrooted(Some(&self.edge_similarity))
    }
}

fn similarities_from_adjacency(adj: &[Vec<(usize, f64)>], source: usize) -> Vec<f64> {
    let mut s = vec![f64::NAN; adj.len()];
    s[source] = 1.0;
    let mut stack = vec![source];
    while let Some(v) = stack.pop() {
        for &(w, sim) in &adj[v] {
            if s[w].is_nan() {
                s[w] = s[v] * sim;
                stack.push(w);
            }
        }
    }
    s
}

/// Pairwise leaf similarities: the product of edge similarities along each path.
pub fn exact_similarity(model: &GenerativeTreeModel) -> SimilarityMatrix {
    let adj = model.adjacency();
    let leaves = model.leaf_nodes();
    let m = leaves.len();
    let rows: Vec<Vec<f64>> = leaves
        .par_iter()
        .map(|&v| {
            let all = similarities_from_adjacency(&adj, v);
            leaves.iter().map(|&w| all[w]).collect()
        })
        .collect();
    let data = DMatrix::from_fn(m, m, |i, j| if i == j { 1.0 } else { rows[i][j] });
    let data = (&data + data.transpose()) * 0.5;
    SimilarityMatrix::from_parts(model.leaf_labels(), data).expect("exact similarities are valid")
}

fn complete_binary(depth: usize) -> RootedTopology {
    let m = 1usize << depth;
    let n = 2 * m - 1;
    // Heap layout: node i has children 2i+1, 2i+2; leaves are the last m nodes.
    let parent = (0..n)
        .map(|i| if i == 0 { None } else { Some((i - 1) / 2) })
        .collect();
    let labels = (0..n)
        .map(|i| (i >= m - 1).then(|| leaf_label(i - (m - 1), m)))
        .collect();
    RootedTopology { parent, labels }
}

/// Complete binary tree with `2^depth` leaves, rooted at a degree-two node, with
/// similarity `delta` on every edge.
pub fn make_binary_symmetric(
    depth: usize,
    delta: f64,
    subst: &Substitution,
) -> Result<GenerativeTreeModel> {
    if depth < 2 {
        return invalid(format!("depth must be at least 2, got {depth}"));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return invalid(format!("delta {delta} outside (0, 1)"));
    }
    let top = complete_binary(depth);
    let n = top.parent.len();
    GenerativeTreeModel::from_similarities(top, &vec![delta; n], subst)
}

/// Caterpillar with `m` leaves: internal nodes form a path, every edge has
/// similarity `delta`. The generation root is the internal node holding `x1`.
pub fn make_caterpillar(m: usize, delta: f64, subst: &Substitution) -> Result<GenerativeTreeModel> {
    if m < 4 {
        return invalid(format!("caterpillar needs m >= 4, got {m}"));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return invalid(format!("delta {delta} outside (0, 1)"));
    }
    // Internal nodes h_0..h_{m-3} are 0..m-2; leaves follow.
    let k = m - 2;
    let mut parent: Vec<Option<usize>> = (0..k).map(|i| i.checked_sub(1)).collect();
    let mut labels: Vec<Option<String>> = vec![None; k];
    for i in 0..m {
        let attach = if i < 2 { 0 } else { (i - 1).min(k - 1) };
        parent.push(Some(attach));
        labels.push(Some(leaf_label(i, m)));
    }
    let n = parent.len();
    GenerativeTreeModel::from_similarities(
        RootedTopology { parent, labels },
        &vec![delta; n],
        subst,
    )
}

// ---------------------------------------------------------------------------
// Alignments

/// Symbols used when writing alignments; DNA uses the first four.
pub const SYMBOLS: &[u8] = b"ACGTBDEFHIJKLMNOPQRSUVWXYZ";

/// Observed data: one row per leaf, states stored zero-based.
#[derive(Clone, Debug, PartialEq)]
pub struct Alignment {
    labels: Vec<String>,
    alphabet: usize,
    columns: usize,
    data: Vec<u8>,
}

impl Alignment {
    pub fn new(labels: Vec<String>, alphabet: usize, rows: Vec<Vec<u8>>) -> Result<Self> {
        if alphabet < 2 || alphabet > SYMBOLS.len() {
            return invalid(format!("alphabet size {alphabet} unsupported"));
        }
        if labels.len() != rows.len() || rows.is_empty() {
            return Err(ModelError::Format("need one nonempty row per label".into()));
        }
        let columns = rows[0].len();
        if columns == 0 {
            return Err(ModelError::Format("empty alignment".into()));
        }
        let mut data = Vec::with_capacity(columns * rows.len());
        for (l, r) in labels.iter().zip(&rows) {
            if !trees::valid_label(l) {
                return Err(ModelError::Format(format!("invalid label {l:?}")));
            }
            if r.len() != columns {
                return Err(ModelError::Format(format!(
                    "row {l:?} has {} columns, expected {columns}",
                    r.len()
                )));
            }
            if let Some(&x) = r.iter().find(|&&x| x as usize >= alphabet) {
                return Err(ModelError::Symbol {
                    symbol: char::from(SYMBOLS.get(x as usize).copied().unwrap_or(b'?')),
                    alphabet,
                });
            }
            data.extend_from_slice(r);
        }
        let mut seen = std::collections::HashSet::new();
        if let Some(l) = labels.iter().find(|l| !seen.insert(l.as_str())) {
            return Err(ModelError::Format(format!("duplicate label {l:?}")));
        }
        Ok(Self {
            labels,
            alphabet,
            columns,
            data,
        })
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn alphabet(&self) -> usize {
        self.alphabet
    }

    pub fn rows(&self) -> usize {
        self.labels.len()
    }

    pub fn columns(&self) -> usize {
        self.columns
    }

    pub fn row(&self, i: usize) -> &[u8] {
        &self.data[i * self.columns..(i + 1) * self.columns]
    }

    /// The rows at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Alignment {
        let mut data = Vec::with_capacity(indices.len() * self.columns);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        Alignment {
            labels: indices.iter().map(|&i| self.labels[i].clone()).collect(),
            alphabet: self.alphabet,
            columns: self.columns,
            data,
        }
    }

    fn row_string(&self, i: usize) -> String {
        self.row(i)
            .iter()
            .map(|&x| char::from(SYMBOLS[x as usize]))
            .collect()
    }

    pub fn to_fasta(&self) -> String {
        let mut s = String::new();
        for i in 0..self.rows() {
            let _ = writeln!(s, ">{}", self.labels[i]);
            let row = self.row_string(i);
            for chunk in row.as_bytes().chunks(80) {
                s.push_str(std::str::from_utf8(chunk).unwrap());
                s.push('\n');
            }
        }
        s
    }

    /// `m n` header followed by one `label sequence` line per row.
    pub fn to_phylip(&self) -> String {
        let mut s = format!("{} {}\n", self.rows(), self.columns);
        for i in 0..self.rows() {
            let _ = writeln!(s, "{} {}", self.labels[i], self.row_string(i));
        }
        s
    }

    fn decode(seq: &str, alphabet: usize) -> Result<Vec<u8>> {
        seq.chars()
            .map(|c| {
                let up = c.to_ascii_uppercase() as u8;
                match SYMBOLS[..alphabet].iter().position(|&s| s == up) {
                    Some(i) => Ok(i as u8),
                    None => Err(ModelError::Symbol {
                        symbol: c,
                        alphabet,
                    }),
                }
            })
            .collect()
    }

    pub fn read_fasta<R: Read>(reader: R, alphabet: usize) -> Result<Self> {
        let mut labels = Vec::new();
        let mut seqs: Vec<String> = Vec::new();
        for line in BufReader::new(reader).lines() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(l) = line.strip_prefix('>') {
                labels.push(l.split_whitespace().next().unwrap_or("").to_string());
                seqs.push(String::new());
            } else {
                match seqs.last_mut() {
                    Some(s) => s.push_str(line),
                    None => return Err(ModelError::Format("sequence before first header".into())),
                }
            }
        }
        let rows = seqs
            .iter()
            .map(|s| Self::decode(s, alphabet))
            .collect::<Result<Vec<_>>>()?;
        Self::new(labels, alphabet, rows)
    }

    pub fn read_phylip<R: Read>(reader: R, alphabet: usize) -> Result<Self> {
        let mut lines = BufReader::new(reader).lines();
        let header = lines
            .next()
            .ok_or_else(|| ModelError::Format("missing header".into()))??;
        let dims: Vec<usize> = header
            .split_whitespace()
            .map(|x| x.parse::<usize>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| ModelError::Format(format!("bad header {header:?}")))?;
        if dims.len() != 2 {
            return Err(ModelError::Format(format!("bad header {header:?}")));
        }
        let mut labels = Vec::new();
        let mut rows = Vec::new();
        for line in lines {
            let line = line?;
            let mut it = line.split_whitespace();
            let Some(label) = it.next() else { continue };
            let seq: String = it.collect();
            labels.push(label.to_string());
            rows.push(Self::decode(&seq, alphabet)?);
        }
        if rows.len() != dims[0] || rows.first().map_or(0, Vec::len) != dims[1] {
            return Err(ModelError::Format(format!(
                "header says {}x{}, found {} rows",
                dims[0],
                dims[1],
                rows.len()
            )));
        }
        Self::new(labels, alphabet, rows)
    }
}

const BLOCK: usize = 1024;

/// Samples `n` independent columns: a root state from the root distribution,
/// then Markov transitions down every edge. Only leaf rows are returned.
///
/// Columns are generated in fixed-size blocks, each with its own stream of a
/// seeded ChaCha generator, so the result does not depend on thread count.
pub fn evolve_sequences(model: &GenerativeTreeModel, n: usize, seed: u64) -> Result<Alignment> {
    if n == 0 {
        return invalid("sequence length must be at least 1");
    }
    let l = model.alphabet();
    let order = model.topology.preorder();
    let root = model.root();
    let cumulative = |p: &[f64]| -> Vec<f64> {
        let mut acc = 0.0;
        let mut c: Vec<f64> = p
            .iter()
            .map(|x| {
                acc += x;
                acc
            })
            .collect();
        *c.last_mut().unwrap() = 1.0;
        c
    };
    let root_cdf = cumulative(&model.root_distribution);
    // cdf[v][a] is the cumulative distribution of v's state given parent state a.
    let cdf: Vec<Vec<Vec<f64>>> = (0..model.node_count())
        .map(|v| match model.matrix(v) {
            Some(p) => (0..l)
                .map(|a| cumulative(p.matrix().column(a).as_slice()))
                .collect(),
            None => Vec::new(),
        })
        .collect();
    let draw = |c: &[f64], u: f64| c.iter().position(|&x| u < x).unwrap_or(c.len() - 1) as u8;
    let leaves = model.leaf_nodes();
    let blocks = n.div_ceil(BLOCK);
    let chunks: Vec<Vec<u8>> = (0..blocks)
        .into_par_iter()
        .map(|b| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(b as u64);
            let cols = BLOCK.min(n - b * BLOCK);
            let mut state = vec![0u8; model.node_count()];
            let mut out = vec![0u8; cols * leaves.len()];
            for c in 0..cols {
                for &v in &order {
                    let u: f64 = rng.random();
                    state[v] = if v == root {
                        draw(&root_cdf, u)
                    } else {
                        let p = model.parent(v).unwrap();
                        draw(&cdf[v][state[p] as usize], u)
                    };
                }
                for (i, &leaf) in leaves.iter().enumerate() {
                    out[i * cols + c] = state[leaf];
                }
            }
            out
        })
        .collect();
    let rows = (0..leaves.len())
        .map(|i| {
            let mut r = Vec::with_capacity(n);
            for (b, chunk) in chunks.iter().enumerate() {
                let cols = BLOCK.min(n - b * BLOCK);
                r.extend_from_slice(&chunk[i * cols..(i + 1) * cols]);
            }
            r
        })
        .collect();
    Alignment::new(model.leaf_labels(), l, rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jc_basics() {
        let id = jc_matrix(0.0, 4).unwrap();
        assert_eq!(id.matrix(), &DMatrix::identity(4, 4));
        assert!((id.det() - 1.0).abs() < 1e-15);
        let p = jc_matrix(0.1, 4).unwrap();
        assert!((p.matrix()[(0, 0)] - 0.9).abs() < 1e-15);
        assert!((p.matrix()[(1, 0)] - 0.1 / 3.0).abs() < 1e-15);
        assert!((jc_similarity(0.1, 4) - 0.650963).abs() < 1e-6);
        assert!((p.det() - jc_similarity(0.1, 4)).abs() < 1e-12);
        assert!(jc_matrix(0.75, 4).is_err());
        assert!(jc_matrix(-0.1, 4).is_err());
    }

    #[test]
    fn delta_inversion() {
        assert_eq!(delta_to_theta(1.0, 4).unwrap(), 0.0);
        let t = delta_to_theta(0.65, 4).unwrap();
        assert!((t - 0.75 * (1.0 - 0.65f64.powf(1.0 / 3.0))).abs() < 1e-15);
        assert!((t - 0.100321).abs() < 1e-6);
        assert!((delta_to_theta(0.81, 4).unwrap() - 0.0508727).abs() < 1e-6);
        for &d in &[0.1, 0.5, 0.9, 0.999] {
            for l in 2..6 {
                let th = delta_to_theta(d, l).unwrap();
                assert!((jc_similarity(th, l) - d).abs() < 1e-12);
            }
        }
        assert!(delta_to_theta(0.0, 4).is_err());
        assert!(delta_to_theta(1.5, 4).is_err());
    }

    /// Truncated Taylor series with scaling and squaring.
    fn expm_series(a: &DMatrix<f64>) -> DMatrix<f64> {
        let s = 10;
        let b = a / 2f64.powi(s);
        let mut term = DMatrix::identity(a.nrows(), a.nrows());
        let mut sum = term.clone();
        for k in 1..30 {
            term = &term * &b / k as f64;
            sum += &term;
        }
        for _ in 0..s {
            sum = &sum * &sum;
        }
        sum
    }

    #[test]
    fn hky_reduces_to_jc() {
        let p = hky_matrix(0.3, 1.0, &[0.25; 4]).unwrap();
        let theta = 0.75 * (1.0 - (-4.0 * 0.3f64 / 3.0).exp());
        let jc = jc_matrix(theta, 4).unwrap();
        assert!((p.matrix() - jc.matrix()).abs().max() < 1e-9);
    }

    #[test]
    fn hky_matches_series() {
        let freqs = [0.1, 0.2, 0.3, 0.4];
        let q = hky_rate_matrix(2.0, &freqs).unwrap();
        let p = hky_matrix(0.7, 2.0, &freqs).unwrap();
        let oracle = expm_series(&(q * 0.7)).transpose();
        assert!((p.matrix() - oracle).abs().max() < 1e-10);
    }

    #[test]
    fn hky_stochastic() {
        let p = hky_matrix(0.1, 2.0, &[0.25; 4]).unwrap();
        for c in 0..4 {
            assert!((p.matrix().column(c).sum() - 1.0).abs() < 1e-12);
        }
        assert!(p.det() > 0.0 && p.det() < 1.0);
        // Uniform frequencies: det = exp(-4t) whatever kappa is.
        assert!((p.det() - (-0.4f64).exp()).abs() < 1e-12);
        let id = hky_matrix(0.0, 2.0, &[0.25; 4]).unwrap();
        assert!((id.matrix() - DMatrix::identity(4, 4)).abs().max() < 1e-12);
        assert!(hky_matrix(0.1, 2.0, &[0.5, 0.5, 0.5, 0.5]).is_err());
        assert!(hky_matrix(0.1, -1.0, &[0.25; 4]).is_err());
    }

    #[test]
    fn hky_similarity_hits_target() {
        let freqs = [0.1, 0.2, 0.3, 0.4];
        let subst = Substitution::Hky { kappa: 3.0, freqs };
        let model = make_binary_symmetric(2, 0.7, &subst).unwrap();
        for v in 1..model.node_count() {
            assert!((model.edge_similarity(v) - 0.7).abs() < 1e-10);
        }
    }

    #[test]
    fn coalescent_small_and_deterministic() {
        let mut r1 = ChaCha8Rng::seed_from_u64(3);
        let mut r2 = ChaCha8Rng::seed_from_u64(3);
        let a = sample_coalescent(8, &mut r1).unwrap();
        let b = sample_coalescent(8, &mut r2).unwrap();
        assert_eq!(a, b);
        let t = sample_coalescent(3, &mut r1)
            .unwrap()
            .to_similarity_tree(1.0)
            .unwrap();
        assert_eq!(t.leaf_count(), 3);
        assert_eq!(t.edge_count(), 3);
        assert!(sample_coalescent(2, &mut r1).is_err());
    }

    #[test]
    fn coalescent_is_ultrametric() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let p = sample_coalescent(512, &mut rng).unwrap();
        let d = p.depths();
        let leaf_depths: Vec<f64> = p.topology.leaves().iter().map(|&v| d[v]).collect();
        let max = leaf_depths.iter().cloned().fold(f64::MIN, f64::max);
        let min = leaf_depths.iter().cloned().fold(f64::MAX, f64::min);
        assert!(max - min < 1e-9);
        let t = p.to_similarity_tree(1.0).unwrap();
        assert_eq!(t.leaf_count(), 512);
        assert_eq!(t.edge_count(), 2 * 512 - 3);
    }

    #[test]
    fn birth_death_structure() {
        let mut r1 = ChaCha8Rng::seed_from_u64(5);
        let mut r2 = ChaCha8Rng::seed_from_u64(5);
        assert_eq!(
            sample_birth_death(4, 1.0, 0.0, &mut r1).unwrap(),
            sample_birth_death(4, 1.0, 0.0, &mut r2).unwrap()
        );
        let p = sample_birth_death(64, 1.0, 0.3, &mut r1).unwrap();
        let t = p.to_similarity_tree(1.0).unwrap();
        assert_eq!(t.leaf_count(), 64);
        assert_eq!(t.edge_count(), 125);
        let p = sample_birth_death(128, 1.0, 0.5, &mut r1).unwrap();
        let root = p.topology.root();
        assert!(p
            .lengths
            .iter()
            .enumerate()
            .all(|(v, &l)| v == root || l > 0.0));
        assert!(sample_birth_death(8, 1.0, 1.0, &mut r1).is_err());
    }

    #[test]
    fn symmetric_quartet_similarities() {
        let m = make_binary_symmetric(2, 0.5, &Substitution::jc4()).unwrap();
        let s = exact_similarity(&m);
        assert!((s.get(0, 1) - 0.25).abs() < 1e-12);
        assert!((s.get(0, 2) - 0.0625).abs() < 1e-12);
        let m3 = make_binary_symmetric(3, 0.8, &Substitution::jc4()).unwrap();
        let s = exact_similarity(&m3);
        assert!((s.get(0, 1) - 0.8f64.powi(2)).abs() < 1e-12);
        assert!((s.get(0, 2) - 0.8f64.powi(4)).abs() < 1e-12);
        assert!((s.get(0, 7) - 0.8f64.powi(6)).abs() < 1e-12);
        let m7 = make_binary_symmetric(7, 0.65, &Substitution::jc4()).unwrap();
        assert_eq!(m7.leaf_count(), 128);
        for v in 1..m7.node_count() {
            assert!((m7.edge_similarity(v) - 0.65).abs() < 1e-12);
        }
    }

    #[test]
    fn caterpillar_four_is_quartet() {
        let m = make_caterpillar(4, 0.7, &Substitution::jc4()).unwrap();
        let t = m.unrooted_tree().unwrap();
        let q = trees::parse_newick("((x1,x2),(x3,x4));").unwrap();
        assert_eq!(trees::rf_distance(&t, &q).unwrap(), 0);
        let m6 = make_caterpillar(6, 0.7, &Substitution::jc4()).unwrap();
        let t6 = m6.unrooted_tree().unwrap();
        let c6 = trees::parse_newick("((((x1,x2),x3),x4),(x5,x6));").unwrap();
        assert_eq!(trees::rf_distance(&t6, &c6).unwrap(), 0);
        assert!(t6
            .edges()
            .iter()
            .all(|e| (e.weight.unwrap() - 0.7).abs() < 1e-12));
    }

    #[test]
    fn no_mutation_gives_constant_columns() {
        let top = complete_binary(3);
        let n = top.parent.len();
        let matrices = (0..n)
            .map(|v| (v != 0).then(|| jc_matrix(0.0, 4).unwrap()))
            .collect();
        let model = GenerativeTreeModel::from_matrices(top, vec![0.25; 4], matrices);
        // Identity edges have similarity 1, outside the open interval.
        assert!(model.is_err());
        let model = make_binary_symmetric(3, 1.0 - 1e-12, &Substitution::jc4()).unwrap();
        let x = evolve_sequences(&model, 500, 1).unwrap();
        for c in 0..500 {
            let first = x.row(0)[c];
            assert!((0..8).all(|r| x.row(r)[c] == first));
        }
    }

    #[test]
    fn evolve_is_reproducible() {
        let model = make_binary_symmetric(3, 0.8, &Substitution::jc4()).unwrap();
        let a = evolve_sequences(&model, 3000, 9).unwrap();
        let b = evolve_sequences(&model, 3000, 9).unwrap();
        assert_eq!(a, b);
        let c = evolve_sequences(&model, 3000, 10).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn fasta_and_phylip_round_trip() {
        let model = make_binary_symmetric(2, 0.8, &Substitution::jc4()).unwrap();
        let a = evolve_sequences(&model, 200, 2).unwrap();
        let f = Alignment::read_fasta(a.to_fasta().as_bytes(), 4).unwrap();
        assert_eq!(a, f);
        let p = Alignment::read_phylip(a.to_phylip().as_bytes(), 4).unwrap();
        assert_eq!(a, p);
        assert!(matches!(
            Alignment::read_fasta(">a\nACGX\n>b\nACGT\n".as_bytes(), 4),
            Err(ModelError::Symbol { symbol: 'X', .. })
        ));
        assert!(Alignment::read_fasta(">a\nACG\n>b\nACGT\n".as_bytes(), 4).is_err());
    }

    #[test]
    fn non_stationary_edge_similarity() {
        // Two-state chain with a skewed root: similarity uses both directions.
        let top = RootedTopology {
            parent: vec![None, Some(0), Some(0)],
            labels: vec![None, Some("a".into()), Some("b".into())],
        };
        let p =
            TransitionMatrix::new(DMatrix::from_row_slice(2, 2, &[0.9, 0.2, 0.1, 0.8])).unwrap();
        let model = GenerativeTreeModel::from_matrices(
            top,
            vec![0.7, 0.3],
            vec![None, Some(p.clone()), Some(p)],
        )
        .unwrap();
        // Direct evaluation from the joint distribution of (parent, child).
        let pi = [0.7, 0.3];
        let pm = model.matrix(1).unwrap().matrix().clone();
        let joint = DMatrix::from_fn(2, 2, |b, a| pm[(b, a)] * pi[a]);
        let child: Vec<f64> = (0..2).map(|b| joint.row(b).sum()).collect();
        let back = DMatrix::from_fn(2, 2, |a, b| joint[(b, a)] / child[b]);
        let want = (pm.determinant() * back.determinant()).sqrt();
        assert!((model.edge_similarity(1) - want).abs() < 1e-12);
    }
}
