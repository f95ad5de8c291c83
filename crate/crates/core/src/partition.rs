//! The partition step: split the leaves into two clans.
//!
//! Candidates come from thresholding the Fiedler vector at zero ([`sign_partition`])
//! and at its largest gap ([`gap_partition`]); [`choose_partition`] keeps the one
//! whose cross-similarity block is closest to rank one. Brute-force min-cut and the
//! distance-based spectral split are included as baselines.
//!
//! Index sets refer to rows of whatever matrix the caller passes in.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::linalg;
use crate::similarity::{self, SimilarityError};
use crate::trees::LeafSet;

#[derive(Debug, Error)]
pub enum PartitionError {
    #[error("degenerate partition: {0}")]
    Degenerate(String),
    #[error("brute-force min-cut is limited to {max} leaves, got {m}")]
    TooLarge { m: usize, max: usize },
    #[error(transparent)]
    Similarity(#[from] SimilarityError),
}

pub type Result<T> = std::result::Result<T, PartitionError>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Strategy {
    Sign,
    Gap,
    MinCut,
    Distance,
    /// Fallback for a disconnected similarity graph: one component against the rest.
    Component,
    /// Last-resort fallback: the leaf with the smallest row sum against the rest.
    MinRowSum,
}

impl Strategy {
    pub fn name(self) -> &'static str {
        match self {
            Strategy::Sign => "sign",
            Strategy::Gap => "gap",
            Strategy::MinCut => "mincut",
            Strategy::Distance => "distance",
            Strategy::Component => "component",
            Strategy::MinRowSum => "min-row-sum",
        }
    }
}

/// Two disjoint, nonempty index sets covering `0..m`, both sorted.
#[derive(Clone, Debug, PartialEq)]
pub struct PartitionResult {
    pub c1: Vec<usize>,
    pub c2: Vec<usize>,
    pub strategy: Strategy,
    /// Second singular value of the cross block, when it was evaluated.
    pub sigma2: Option<f64>,
}

impl PartitionResult {
    fn from_mask(mask: &[bool], strategy: Strategy) -> Result<Self> {
        let c1: Vec<usize> = (0..mask.len()).filter(|&i| mask[i]).collect();
        let c2: Vec<usize> = (0..mask.len()).filter(|&i| !mask[i]).collect();
        if c1.is_empty() || c2.is_empty() {
            return Err(PartitionError::Degenerate(format!(
                "{} produced an empty side",
                strategy.name()
            )));
        }
        Ok(Self {
            c1,
            c2,
            strategy,
            sigma2: None,
        })
    }

    /// Both sides as label sets.
    pub fn leaf_sets(&self, labels: &[String]) -> (LeafSet, LeafSet) {
        (
            self.c1.iter().map(|&i| labels[i].clone()).collect(),
            self.c2.iter().map(|&i| labels[i].clone()).collect(),
        )
    }

    fn same_split(&self, other: &PartitionResult) -> bool {
        (self.c1 == other.c1 && self.c2 == other.c2) || (self.c1 == other.c2 && self.c2 == other.c1)
    }
}

/// `C1 = {i : v(i) >= 0}`.
pub fn sign_partition(v: &DVector<f64>) -> Result<PartitionResult> {
    let mask: Vec<bool> = v.iter().map(|&x| x >= 0.0).collect();
    PartitionResult::from_mask(&mask, Strategy::Sign)
}

/// Splits the sorted entries at the largest gap between consecutive values;
/// the upper part becomes `C1`. Ties go to the gap nearest the bottom.
pub fn gap_partition(v: &DVector<f64>) -> Result<PartitionResult> {
    let m = v.len();
    if m < 2 {
        return Err(PartitionError::Degenerate(
            "need at least two entries".into(),
        ));
    }
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| v[a].total_cmp(&v[b]).then(a.cmp(&b)));
    let mut best = 0;
    let mut best_gap = f64::NEG_INFINITY;
    for k in 0..m - 1 {
        let gap = v[order[k + 1]] - v[order[k]];
        if gap > best_gap {
            best_gap = gap;
            best = k;
        }
    }
    if best_gap <= 0.0 {
        return Err(PartitionError::Degenerate("constant vector".into()));
    }
    let mut mask = vec![false; m];
    for &i in &order[best + 1..] {
        mask[i] = true;
    }
    PartitionResult::from_mask(&mask, Strategy::Gap)
}

/// Relative tolerance below which two sigma2 values count as tied.
const SIGMA_TIE: f64 = 1e-12;

/// Keeps the candidate whose cross block `S(C1, C2)` has the smallest second
/// singular value; ties go to the earlier candidate.
pub fn choose_partition(
    s: &DMatrix<f64>,
    candidates: Vec<PartitionResult>,
) -> Result<PartitionResult> {
    let mut best: Option<(PartitionResult, f64, f64)> = None;
    for mut cand in candidates {
        if let Some((b, _, _)) = &best {
            if b.same_split(&cand) {
                continue;
            }
        }
        let block = DMatrix::from_fn(cand.c1.len(), cand.c2.len(), |i, j| {
            s[(cand.c1[i], cand.c2[j])]
        });
        let (sigma1, sigma2) = if block.nrows() == 1 || block.ncols() == 1 {
            (block.norm(), 0.0)
        } else if block.iter().all(|&x| x == 0.0) {
            (0.0, 0.0)
        } else {
            let top = linalg::top_singular(&block, 2).map_err(SimilarityError::from)?;
            (top.values[0], top.values[1].max(0.0))
        };
        cand.sigma2 = Some(sigma2);
        let replace = match &best {
            None => true,
            Some((_, b1, b2)) => sigma2 < b2 - SIGMA_TIE * sigma1.max(*b1),
        };
        if replace {
            best = Some((cand, sigma1, sigma2));
        }
    }
    best.map(|b| b.0)
        .ok_or_else(|| PartitionError::Degenerate("no candidates".into()))
}

fn min_row_sum_split(s: &DMatrix<f64>) -> Result<PartitionResult> {
    let m = s.nrows();
    let sums: Vec<f64> = (0..m).map(|i| s.row(i).sum()).collect();
    let leaf = (0..m).min_by(|&a, &b| sums[a].total_cmp(&sums[b])).unwrap();
    let mut mask = vec![true; m];
    mask[leaf] = false;
    PartitionResult::from_mask(&mask, Strategy::MinRowSum)
}

fn component_split(s: &DMatrix<f64>) -> Option<PartitionResult> {
    let m = s.nrows();
    let scale = s.iter().cloned().fold(0.0, f64::max);
    let mut seen = vec![false; m];
    seen[0] = true;
    let mut stack = vec![0];
    while let Some(v) = stack.pop() {
        for w in 0..m {
            if !seen[w] && s[(v, w)] > 1e-10 * scale {
                seen[w] = true;
                stack.push(w);
            }
        }
    }
    PartitionResult::from_mask(&seen, Strategy::Component).ok()
}

/// The full partition step on a similarity matrix: Fiedler vector, the sign and
/// gap candidates, selection by the rank-one criterion, and fallbacks for
/// degenerate spectra.
pub fn spectral_partition(s: &DMatrix<f64>) -> Result<PartitionResult> {
    let m = s.nrows();
    if m < 2 {
        return Err(PartitionError::Degenerate(
            "need at least two leaves".into(),
        ));
    }
    let lap = similarity::laplacian_of(s);
    let fiedler = match similarity::fiedler_vector(&lap) {
        Ok(f) => f,
        Err(SimilarityError::Disconnected { .. }) => {
            return Ok(match component_split(s) {
                Some(p) => p,
                None => min_row_sum_split(s)?,
            })
        }
        Err(e) => return Err(e.into()),
    };
    let mut candidates = Vec::new();
    if let Ok(p) = sign_partition(&fiedler.vector) {
        candidates.push(p);
    }
    if let Ok(p) = gap_partition(&fiedler.vector) {
        candidates.push(p);
    }
    if candidates.is_empty() {
        return min_row_sum_split(s);
    }
    choose_partition(s, candidates)
}

/// Largest leaf count accepted by [`mincut_partition_bruteforce`].
pub const MINCUT_MAX: usize = 20;

/// Exhaustive minimiser of `sum_{i in A, j in B} S(i, j)` over nontrivial
/// bipartitions. The side holding index 0 is `C1`.
pub fn mincut_partition_bruteforce(s: &DMatrix<f64>) -> Result<PartitionResult> {
    let m = s.nrows();
    if m > MINCUT_MAX {
        return Err(PartitionError::TooLarge { m, max: MINCUT_MAX });
    }
    if m < 2 {
        return Err(PartitionError::Degenerate(
            "need at least two leaves".into(),
        ));
    }
    let cut_of = |mask: &[bool]| -> f64 {
        let mut c = 0.0;
        for i in 0..m {
            for j in 0..m {
                if mask[i] && !mask[j] {
                    c += s[(i, j)];
                }
            }
        }
        c
    };
    // Gray-code walk over subsets of 1..m joined with {0}; the full set is skipped.
    let mut mask = vec![false; m];
    mask[0] = true;
    let mut in_a: Vec<f64> = (0..m).map(|k| s[(k, 0)]).collect();
    let total: Vec<f64> = (0..m).map(|k| s.row(k).sum() - s[(k, k)]).collect();
    let mut cut = cut_of(&mask);
    let mut best = (cut, mask.clone());
    let steps = 1usize << (m - 1);
    for g in 1..steps {
        let k = g.trailing_zeros() as usize + 1;
        let entering = !mask[k];
        // Edges from k to A (excluding itself) and to B.
        let to_a = in_a[k] - if mask[k] { s[(k, k)] } else { 0.0 };
        let to_b = total[k] - to_a;
        cut += if entering { to_b - to_a } else { to_a - to_b };
        mask[k] = entering;
        let sign = if entering { 1.0 } else { -1.0 };
        for (j, acc) in in_a.iter_mut().enumerate() {
            *acc += sign * s[(j, k)];
        }
        if g % 4096 == 0 {
            cut = cut_of(&mask);
        }
        let full = mask.iter().all(|&x| x);
        if !full && cut < best.0 {
            let exact = cut_of(&mask);
            if exact < best.0 {
                best = (exact, mask.clone());
            }
        }
    }
    PartitionResult::from_mask(&best.1, Strategy::MinCut)
}

/// Baseline split from distances: the sign pattern of the eigenvector of the
/// doubly centred distance matrix with the largest-magnitude eigenvalue.
pub fn distance_spectral_partition(d: &DMatrix<f64>) -> Result<PartitionResult> {
    let m = d.nrows();
    if m < 2 || !d.is_square() {
        return Err(PartitionError::Degenerate(
            "need a square matrix with two rows".into(),
        ));
    }
    let mean_row: Vec<f64> = (0..m).map(|i| d.row(i).mean()).collect();
    let mean_col: Vec<f64> = (0..m).map(|j| d.column(j).mean()).collect();
    let mean_all = d.mean();
    let b = DMatrix::from_fn(m, m, |i, j| {
        -(d[(i, j)] - mean_row[i] - mean_col[j] + mean_all)
    });
    let b = (&b + b.transpose()) * 0.5;
    let (vals, vecs) = linalg::sym_eigen_sorted(&b);
    let k = (0..m)
        .max_by(|&x, &y| vals[x].abs().total_cmp(&vals[y].abs()))
        .unwrap();
    let scale = d.iter().fold(0.0f64, |a, x| a.max(x.abs()));
    if vals[k].abs() <= 1e-12 * scale.max(f64::MIN_POSITIVE) {
        return Err(PartitionError::Degenerate(
            "centred distance matrix is zero".into(),
        ));
    }
    let mut v = vecs.column(k).into_owned();
    linalg::canonical_sign(&mut v);
    let mut p = sign_partition(&v)?;
    p.strategy = Strategy::Distance;
    Ok(p)
}
