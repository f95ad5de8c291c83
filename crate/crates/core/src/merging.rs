//! The merge step: find the placeholder edge of each subtree and join them.
//!
//! For an edge `e` of `T1` splitting its leaves into `A` and `B`, the score is the
//! relative residual of the best rank-one fit `S(A, B) ~ alpha * u_A u_B^T`, where
//! `u` is the leading left singular vector of `S(C1, C2)`. The correct edge has a
//! score of zero on exact similarities.

use std::collections::HashMap;

use fixedbitset::FixedBitSet;
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use thiserror::Error;

use crate::similarity::{self, SimilarityError, SimilarityMatrix};
use crate::trees::{self, Bipartition, EdgeId, LeafSet, RootedTree, TreeError, UnrootedTree};

#[derive(Debug, Error)]
pub enum MergeError {
    #[error("label {0} is not in the similarity matrix")]
    UnknownLabel(String),
    #[error("block S(A, B) for edge {edge} is zero")]
    DegenerateBlock { edge: EdgeId },
    #[error("singular vector has {found} entries, subtree has {expected} leaves")]
    VectorLength { expected: usize, found: usize },
    #[error(transparent)]
    Tree(#[from] TreeError),
    #[error(transparent)]
    Similarity(#[from] SimilarityError),
}

pub type Result<T> = std::result::Result<T, MergeError>;

/// Score of one candidate placeholder edge.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EdgeScore {
    pub edge: EdgeId,
    /// Relative residual in `[0, 1]`; `+inf` for a zero block.
    pub distance: f64,
    pub alpha: f64,
    pub size_a: usize,
    pub size_b: usize,
}

/// Scores within this absolute distance are treated as tied.
const SCORE_TIE: f64 = 1e-12;

/// The leaf sets on either side of `e`; `A` is the smaller side, or the side
/// holding the smallest label when both have equal size.
pub fn edge_partitions(t: &UnrootedTree, e: EdgeId) -> Result<(LeafSet, LeafSet)> {
    let (x, y) = t.edge_sides(e)?;
    let x_first = match x.len().cmp(&y.len()) {
        std::cmp::Ordering::Less => true,
        std::cmp::Ordering::Greater => false,
        std::cmp::Ordering::Equal => x.iter().next() < y.iter().next(),
    };
    Ok(if x_first { (x, y) } else { (y, x) })
}

/// Least-squares `alpha` and relative residual of `block ~ alpha * ua ub^T`, or
/// `None` when the block is zero.
fn fit_rank_one(
    s: &DMatrix<f64>,
    a: &[usize],
    b: &[usize],
    ua: &[f64],
    ub: &[f64],
) -> Option<(f64, f64)> {
    let mut norm2 = 0.0;
    let mut cross = 0.0;
    for (&i, &ui) in a.iter().zip(ua) {
        let mut row = 0.0;
        for (&j, &vj) in b.iter().zip(ub) {
            let x = s[(i, j)];
            norm2 += x * x;
            row += x * vj;
        }
        cross += ui * row;
    }
    if norm2 == 0.0 {
        return None;
    }
    let na: f64 = ua.iter().map(|x| x * x).sum();
    let nb: f64 = ub.iter().map(|x| x * x).sum();
    if na == 0.0 || nb == 0.0 {
        return Some((0.0, 1.0));
    }
    let alpha = cross / (na * nb);
    // The residual is summed directly instead of via norm2 - alpha * cross, which
    // cancels catastrophically near the correct edge.
    let mut res = 0.0;
    for (&i, &ui) in a.iter().zip(ua) {
        for (&j, &vj) in b.iter().zip(ub) {
            let r = s[(i, j)] - alpha * ui * vj;
            res += r * r;
        }
    }
    Some((alpha, (res / norm2).sqrt()))
}

/// Scores edge `e` of `t1`. `u` is indexed in the sorted label order of `C1`.
pub fn edge_score(
    s: &SimilarityMatrix,
    c1: &LeafSet,
    t1: &UnrootedTree,
    e: EdgeId,
    u: &DVector<f64>,
) -> Result<EdgeScore> {
    if u.len() != c1.len() {
        return Err(MergeError::VectorLength {
            expected: c1.len(),
            found: u.len(),
        });
    }
    let index = trees::label_index(s.labels());
    let pos: HashMap<&str, usize> = c1
        .iter()
        .enumerate()
        .map(|(p, l)| (l.as_str(), p))
        .collect();
    let (a, b) = edge_partitions(t1, e)?;
    let lookup = |set: &LeafSet| -> Result<(Vec<usize>, Vec<f64>)> {
        let mut g = Vec::with_capacity(set.len());
        let mut w = Vec::with_capacity(set.len());
        for l in set.iter() {
            let i = *index
                .get(l.as_str())
                .ok_or_else(|| MergeError::UnknownLabel(l.clone()))?;
            let p = *pos
                .get(l.as_str())
                .ok_or_else(|| MergeError::UnknownLabel(l.clone()))?;
            g.push(i);
            w.push(u[p]);
        }
        Ok((g, w))
    };
    let (ga, ua) = lookup(&a)?;
    let (gb, ub) = lookup(&b)?;
    let (alpha, distance) = fit_rank_one(s.matrix(), &ga, &gb, &ua, &ub)
        .ok_or(MergeError::DegenerateBlock { edge: e })?;
    Ok(EdgeScore {
        edge: e,
        distance,
        alpha,
        size_a: a.len(),
        size_b: b.len(),
    })
}

/// The placeholder edge picked in one subtree.
#[derive(Clone, Debug)]
pub struct PlaceholderChoice {
    /// `None` for a single-leaf subtree.
    pub edge: Option<EdgeId>,
    pub split: Option<Bipartition>,
    /// Score of the chosen edge; `None` for a single leaf or when every block was
    /// degenerate and the centroid edge was used.
    pub score: Option<EdgeScore>,
    /// Scores of all edges, indexed by edge id.
    pub scores: Vec<EdgeScore>,
}

fn split_of(t: &UnrootedTree, e: EdgeId) -> Result<Bipartition> {
    let (a, b) = t.edge_sides(e)?;
    Ok(Bipartition::new(a, b)?)
}

fn smallest_split(t: &UnrootedTree, edges: &[EdgeId]) -> Result<(EdgeId, Bipartition)> {
    let mut best: Option<(EdgeId, Bipartition)> = None;
    for &e in edges {
        let s = split_of(t, e)?;
        if best.as_ref().is_none_or(|(_, b)| s < *b) {
            best = Some((e, s));
        }
    }
    Ok(best.expect("at least one edge"))
}

/// Scores every edge of `t` and returns the argmin. `rows[p]` is the matrix index
/// of the leaf at position `p` of `t` and `u[p]` its singular-vector entry.
fn choose_edge(
    s: &DMatrix<f64>,
    rows: &[usize],
    t: &UnrootedTree,
    u: Option<&[f64]>,
) -> Result<PlaceholderChoice> {
    let k = t.leaf_count();
    if t.edge_count() == 0 {
        return Ok(PlaceholderChoice {
            edge: None,
            split: None,
            score: None,
            scores: Vec::new(),
        });
    }
    let sets = t.edge_bitsets();
    let full = {
        let mut f = FixedBitSet::with_capacity(k);
        f.insert_range(..);
        f
    };
    let scores: Vec<EdgeScore> = sets
        .par_iter()
        .enumerate()
        .map(|(e, side)| {
            let mut other = full.clone();
            other.difference_with(side);
            let (a, b) = if side.count_ones(..) <= other.count_ones(..) {
                (
                    side.ones().collect::<Vec<_>>(),
                    other.ones().collect::<Vec<_>>(),
                )
            } else {
                (other.ones().collect(), side.ones().collect())
            };
            let ga: Vec<usize> = a.iter().map(|&p| rows[p]).collect();
            let gb: Vec<usize> = b.iter().map(|&p| rows[p]).collect();
            let fit = u.and_then(|u| {
                let ua: Vec<f64> = a.iter().map(|&p| u[p]).collect();
                let ub: Vec<f64> = b.iter().map(|&p| u[p]).collect();
                fit_rank_one(s, &ga, &gb, &ua, &ub)
            });
            let (alpha, distance) = fit.unwrap_or((f64::NAN, f64::INFINITY));
            EdgeScore {
                edge: e,
                distance,
                alpha,
                size_a: a.len(),
                size_b: b.len(),
            }
        })
        .collect();

    let best = scores
        .iter()
        .map(|s| s.distance)
        .fold(f64::INFINITY, f64::min);
    if best.is_infinite() {
        // Every block is zero: fall back to the most balanced edge.
        let least = scores.iter().map(|s| s.size_a.max(s.size_b)).min().unwrap();
        let edges: Vec<EdgeId> = scores
            .iter()
            .filter(|s| s.size_a.max(s.size_b) == least)
            .map(|s| s.edge)
            .collect();
        let (edge, split) = smallest_split(t, &edges)?;
        return Ok(PlaceholderChoice {
            edge: Some(edge),
            split: Some(split),
            score: None,
            scores,
        });
    }
    let tied: Vec<EdgeId> = scores
        .iter()
        .filter(|s| s.distance <= best + SCORE_TIE)
        .map(|s| s.edge)
        .collect();
    let (edge, split) = if tied.len() == 1 {
        (tied[0], split_of(t, tied[0])?)
    } else {
        smallest_split(t, &tied)?
    };
    Ok(PlaceholderChoice {
        edge: Some(edge),
        split: Some(split),
        score: Some(scores[edge]),
        scores,
    })
}

fn matrix_rows(index: &HashMap<&str, usize>, t: &UnrootedTree) -> Result<Vec<usize>> {
    t.leaf_nodes()
        .iter()
        .map(|&v| {
            let l = t.label(v).unwrap();
            index
                .get(l)
                .copied()
                .ok_or_else(|| MergeError::UnknownLabel(l.to_string()))
        })
        .collect()
}

fn check_leaves(c: &LeafSet, t: &UnrootedTree) -> Result<()> {
    if t.leaf_set() != *c {
        return Err(TreeError::LeafSetMismatch.into());
    }
    Ok(())
}

/// Finds the placeholder edge of `t1`, the subtree on `C1`, using the leading
/// left singular vector of `S(C1, C2)`.
pub fn find_placeholder_edge(
    s: &SimilarityMatrix,
    c1: &LeafSet,
    c2: &LeafSet,
    t1: &UnrootedTree,
) -> Result<PlaceholderChoice> {
    check_leaves(c1, t1)?;
    let index = trees::label_index(s.labels());
    let rows = matrix_rows(&index, t1)?;
    let cols = c2
        .iter()
        .map(|l| {
            index
                .get(l.as_str())
                .copied()
                .ok_or_else(|| MergeError::UnknownLabel(l.clone()))
        })
        .collect::<Result<Vec<_>>>()?;
    let block = s.block(&rows, &cols);
    let (u, _, _) = similarity::leading_singular_triplet(&block)?;
    choose_edge(s.matrix(), &rows, t1, Some(u.as_slice()))
}

/// Result of a merge with the choices made on both sides.
#[derive(Clone, Debug)]
pub struct MergeOutcome {
    pub tree: UnrootedTree,
    /// Leading singular value of `S(C1, C2)`; zero when the block vanished.
    pub sigma1: f64,
    pub left: PlaceholderChoice,
    pub right: PlaceholderChoice,
}

fn rooted(t: &UnrootedTree, choice: &PlaceholderChoice) -> Result<RootedTree> {
    Ok(match choice.edge {
        Some(e) => trees::root_at_edge(t, e)?,
        None => RootedTree::single_leaf(t)?,
    })
}

/// Merges `t1` and `t2` using similarities looked up through `index`.
pub(crate) fn merge_indexed(
    s: &DMatrix<f64>,
    index: &HashMap<&str, usize>,
    t1: &UnrootedTree,
    t2: &UnrootedTree,
) -> Result<MergeOutcome> {
    let rows = matrix_rows(index, t1)?;
    let cols = matrix_rows(index, t2)?;
    let block = DMatrix::from_fn(rows.len(), cols.len(), |i, j| s[(rows[i], cols[j])]);
    let (u, sigma1, v) = match similarity::leading_singular_triplet(&block) {
        Ok((u, s1, v)) => (Some(u), s1, Some(v)),
        // A vanishing cross block carries no information; both sides fall back
        // to their centroid edges.
        Err(SimilarityError::Linalg(crate::linalg::LinalgError::ZeroMatrix)) => (None, 0.0, None),
        Err(e) => return Err(e.into()),
    };
    let left = choose_edge(s, &rows, t1, u.as_ref().map(|x| x.as_slice()))?;
    let right = choose_edge(s, &cols, t2, v.as_ref().map(|x| x.as_slice()))?;
    let tree = trees::join_rooted(&rooted(t1, &left)?, &rooted(t2, &right)?)?;
    Ok(MergeOutcome {
        tree,
        sigma1,
        left,
        right,
    })
}

/// Merges the subtrees on `C1` and `C2`, reporting the scores on both sides.
pub fn merge_with_scores(
    s: &SimilarityMatrix,
    c1: &LeafSet,
    t1: &UnrootedTree,
    c2: &LeafSet,
    t2: &UnrootedTree,
) -> Result<MergeOutcome> {
    check_leaves(c1, t1)?;
    check_leaves(c2, t2)?;
    let index = trees::label_index(s.labels());
    merge_indexed(s.matrix(), &index, t1, t2)
}

/// Merges the subtrees on `C1` and `C2` into one tree on `C1 + C2`.
pub fn merge(
    s: &SimilarityMatrix,
    c1: &LeafSet,
    t1: &UnrootedTree,
    c2: &LeafSet,
    t2: &UnrootedTree,
) -> Result<UnrootedTree> {
    Ok(merge_with_scores(s, c1, t1, c2, t2)?.tree)
}
