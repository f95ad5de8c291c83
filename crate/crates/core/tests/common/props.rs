//! Seed-driven properties, shared by the proptest suite and the acceptance runner.

use std::collections::BTreeSet;

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use proptest::test_runner::TestCaseError;
use rand::seq::IndexedRandom;
use rand::Rng;
use stdr_core::genmodel::{self, Alignment, Substitution};
use stdr_core::merging;
use stdr_core::partition;
use stdr_core::recovery::{self, Input, ReconstructionConfig};
use stdr_core::similarity::{self, SimilarityMatrix};
use stdr_core::theory::{self, TreeStats, WeightedTreeGraph};
use stdr_core::trees::{self, Bipartition, LeafSet, UnrootedTree};

use super::{both_clans, random_model, rng, truth, Family, FAMILIES};

pub type Prop = fn(u64) -> Result<(), TestCaseError>;

pub const ALL: &[(&str, Prop)] = &[
    ("rf_is_a_metric", rf_is_a_metric),
    ("edge_sides_are_clans", edge_sides_are_clans),
    ("surgery_restores_tree", surgery_restores_tree),
    ("newick_round_trip", newick_round_trip),
    ("similarity_is_multiplicative", similarity_is_multiplicative),
    (
        "exact_similarity_is_well_formed",
        exact_similarity_is_well_formed,
    ),
    ("jc_determinant", jc_determinant),
    (
        "clock_models_have_constant_blocks",
        clock_models_have_constant_blocks,
    ),
    (
        "laplacian_is_psd_with_zero_rows",
        laplacian_is_psd_with_zero_rows,
    ),
    ("rank_one_detection", rank_one_detection),
    (
        "sigma2_marks_complementary_clans",
        sigma2_marks_complementary_clans,
    ),
    ("partition_sides_nonempty", partition_sides_nonempty),
    (
        "placeholder_argmin_scale_invariant",
        placeholder_argmin_scale_invariant,
    ),
    ("zero_score_iff_correct_edge", zero_score_iff_correct_edge),
    ("scores_are_bounded", scores_are_bounded),
    (
        "stdr_parallel_is_deterministic",
        stdr_parallel_is_deterministic,
    ),
    (
        "stdr_output_is_binary_on_input_leaves",
        stdr_output_is_binary_on_input_leaves,
    ),
    ("schur_closure", schur_closure),
    ("twin_tree_identity", twin_tree_identity),
    ("bounds_are_monotone", bounds_are_monotone),
];

fn random_tree(m: usize, seed: u64) -> UnrootedTree {
    let mut r = rng(seed);
    let family = FAMILIES[r.random_range(0..3)];
    truth(&random_model(family, m, 0.5, 0.95, &mut r))
}

/// Estimated similarities from a short alignment, so the data are noisy.
fn noisy(model: &genmodel::GenerativeTreeModel, n: usize, seed: u64) -> SimilarityMatrix {
    let x: Alignment = genmodel::evolve_sequences(model, n, seed).unwrap();
    similarity::estimate_similarity(&x).unwrap()
}

pub fn rf_is_a_metric(seed: u64) -> Result<(), TestCaseError> {
    let t: Vec<UnrootedTree> = (0..3)
        .map(|i| random_tree(8, seed.wrapping_add(i)))
        .collect();
    let rf = |a: &UnrootedTree, b: &UnrootedTree| trees::rf_distance(a, b).unwrap();
    for a in &t {
        prop_assert_eq!(rf(a, a), 0);
        for b in &t {
            let (sa, sb) = (trees::bipartitions(a), trees::bipartitions(b));
            prop_assert_eq!(rf(a, b), sa.symmetric_difference(&sb).count());
            prop_assert_eq!(rf(a, b), rf(b, a));
            prop_assert_eq!(rf(a, b) == 0, sa == sb);
            for c in &t {
                prop_assert!(rf(a, c) <= rf(a, b) + rf(b, c));
            }
        }
    }
    let n = trees::normalized_rf(&t[0], &t[1]).unwrap();
    prop_assert!((0.0..=1.0).contains(&n));
    Ok(())
}

pub fn edge_sides_are_clans(seed: u64) -> Result<(), TestCaseError> {
    let t = random_tree(4 + (seed % 20) as usize, seed);
    for e in 0..t.edge_count() {
        let (a, b) = t.edge_sides(e).unwrap();
        prop_assert!(both_clans(&t, &a, &b));
    }
    prop_assert_eq!(trees::bipartitions(&t).len(), t.leaf_count() - 3);
    Ok(())
}

fn check_binary(t: &UnrootedTree) -> Result<(), TestCaseError> {
    let m = t.leaf_count();
    prop_assert_eq!(t.edge_count(), 2 * m - 3);
    for v in 0..t.node_count() {
        let d = t.neighbors(v).len();
        prop_assert!(
            if t.is_leaf(v) { d == 1 } else { d == 3 },
            "node {} has degree {}",
            v,
            d
        );
    }
    Ok(())
}

/// Splitting a tree at an internal edge and joining the two halves at the
/// placeholder edges gives back the same tree.
pub fn surgery_restores_tree(seed: u64) -> Result<(), TestCaseError> {
    let mut r = rng(seed);
    let t = random_tree(6 + (seed % 20) as usize, seed);
    let internal: Vec<usize> = (0..t.edge_count())
        .filter(|&e| {
            let edge = &t.edges()[e];
            !t.is_leaf(edge.a) && !t.is_leaf(edge.b)
        })
        .collect();
    let e = *internal.choose(&mut r).unwrap();
    let (a, b) = t.edge_sides(e).unwrap();
    let placeholder = |side: &LeafSet, other: &LeafSet| -> (UnrootedTree, usize) {
        let sub = t.restrict(side).unwrap();
        if sub.leaf_count() < 2 {
            return (sub, usize::MAX);
        }
        let e = (0..sub.edge_count())
            .find(|&e| {
                let (x, y) = sub.edge_sides(e).unwrap();
                both_clans(&t, &x.union(other), &y.union(other))
            })
            .unwrap();
        (sub, e)
    };
    let (t1, e1) = placeholder(&a, &b);
    let (t2, e2) = placeholder(&b, &a);
    let root = |s: &UnrootedTree, e: usize| {
        if e == usize::MAX {
            trees::RootedTree::single_leaf(s).unwrap()
        } else {
            trees::root_at_edge(s, e).unwrap()
        }
    };
    let joined = trees::join_rooted(&root(&t1, e1), &root(&t2, e2)).unwrap();
    check_binary(&joined)?;
    prop_assert_eq!(trees::rf_distance(&joined, &t).unwrap(), 0);
    Ok(())
}

pub fn newick_round_trip(seed: u64) -> Result<(), TestCaseError> {
    let t = random_tree(4 + (seed % 30) as usize, seed);
    let text = trees::write_newick(&t);
    let back = trees::parse_newick(&text).unwrap();
    prop_assert_eq!(back.leaf_set(), t.leaf_set());
    if t.leaf_count() >= 4 {
        prop_assert_eq!(trees::rf_distance(&back, &t).unwrap(), 0);
    }
    let weights = |u: &UnrootedTree| -> BTreeSet<(Bipartition, u64)> {
        (0..u.edge_count())
            .map(|e| {
                let (x, y) = u.edge_sides(e).unwrap();
                let w = u.edges()[e].weight.unwrap();
                (Bipartition::new(x, y).unwrap(), (w * 1e9).round() as u64)
            })
            .collect()
    };
    prop_assert_eq!(weights(&back), weights(&t));
    Ok(())
}

pub fn similarity_is_multiplicative(seed: u64) -> Result<(), TestCaseError> {
    let mut r = rng(seed);
    let model = random_model(
        FAMILIES[(seed % 3) as usize],
        4 + (seed % 17) as usize,
        0.3,
        0.99,
        &mut r,
    );
    let s = model.node_similarity_matrix();
    let n = model.node_count();
    let ancestors = |mut v: usize| {
        let mut path = vec![v];
        while let Some(p) = model.parent(v) {
            path.push(p);
            v = p;
        }
        path
    };
    for _ in 0..20 {
        let (i, j) = (r.random_range(0..n), r.random_range(0..n));
        let (pi, pj) = (ancestors(i), ancestors(j));
        let lca = *pi.iter().find(|v| pj.contains(v)).unwrap();
        let mut path: Vec<usize> = pi.iter().take_while(|&&v| v != lca).copied().collect();
        path.push(lca);
        path.extend(pj.iter().take_while(|&&v| v != lca));
        let h = *path.choose(&mut r).unwrap();
        prop_assert!((s[(i, j)] - s[(i, h)] * s[(h, j)]).abs() <= 1e-14);
    }
    Ok(())
}

pub fn exact_similarity_is_well_formed(seed: u64) -> Result<(), TestCaseError> {
    let mut r = rng(seed);
    let model = random_model(
        FAMILIES[(seed % 3) as usize],
        4 + (seed % 29) as usize,
        0.3,
        0.99,
        &mut r,
    );
    let s = genmodel::exact_similarity(&model);
    let m = s.matrix();
    for i in 0..s.len() {
        prop_assert_eq!(m[(i, i)], 1.0);
        for j in 0..s.len() {
            prop_assert!(m[(i, j)] > 0.0 && m[(i, j)] <= 1.0);
            prop_assert_eq!(m[(i, j)], m[(j, i)]);
        }
    }
    Ok(())
}

pub fn jc_determinant(seed: u64) -> Result<(), TestCaseError> {
    let mut r = rng(seed);
    let l = r.random_range(2..=20usize);
    let theta = r.random_range(0.0..(l as f64 - 1.0) / l as f64 * 0.999);
    let p = genmodel::jc_matrix(theta, l).unwrap();
    let lf = l as f64;
    let formula = (1.0 - lf * theta / (lf - 1.0)).powi(l as i32 - 1);
    let lu = p.matrix().clone().lu().determinant();
    prop_assert!(
        (lu - formula).abs() <= 1e-12,
        "l {} theta {}: {} vs {}",
        l,
        theta,
        lu,
        formula
    );
    prop_assert!((genmodel::jc_similarity(theta, l) - formula).abs() <= 1e-12);
    Ok(())
}

/// Under a molecular clock, the cross block of the root split is one constant
/// and every within-block similarity is larger.
pub fn clock_models_have_constant_blocks(seed: u64) -> Result<(), TestCaseError> {
    let mut r = rng(seed);
    let m = 4 + (seed % 30) as usize;
    let phy = genmodel::sample_coalescent(m, &mut r).unwrap();
    let model = phy.to_model(0.5, &Substitution::jc4()).unwrap();
    let s = genmodel::exact_similarity(&model);
    let (a, b) = super::sibling_clades(&model).pop().unwrap();
    prop_assert_eq!(a.len() + b.len(), m);
    let idx =
        |set: &LeafSet| -> Vec<usize> { set.iter().map(|l| s.index_of(l).unwrap()).collect() };
    let (ia, ib) = (idx(&a), idx(&b));
    let c = s.get(ia[0], ib[0]);
    for &i in &ia {
        for &j in &ib {
            prop_assert!((s.get(i, j) - c).abs() <= 1e-12 * c);
        }
    }
    for block in [&ia, &ib] {
        for &i in block {
            for &j in block {
                if i != j {
                    prop_assert!(s.get(i, j) > c);
                }
            }
        }
    }
    Ok(())
}

pub fn laplacian_is_psd_with_zero_rows(seed: u64) -> Result<(), TestCaseError> {
    let mut r = rng(seed);
    let model = random_model(
        FAMILIES[(seed % 3) as usize],
        4 + (seed % 40) as usize,
        0.4,
        0.95,
        &mut r,
    );
    let s = genmodel::exact_similarity(&model);
    let l = similarity::laplacian(&s);
    let trace = l.matrix().trace();
    for row in l.matrix().row_iter() {
        prop_assert!(row.sum().abs() <= 1e-12 * trace);
    }
    let (vals, _) = stdr_core::linalg::sym_eigen_sorted(l.matrix());
    prop_assert!(vals[0] >= -1e-9 * trace);
    let f = similarity::fiedler_vector(&l).unwrap();
    prop_assert!(f.vector.sum().abs() <= 1e-8);
    prop_assert!((f.vector.norm() - 1.0).abs() <= 1e-10);
    Ok(())
}

pub fn rank_one_detection(seed: u64) -> Result<(), TestCaseError> {
    let mut r = rng(seed);
    let (p, q) = (r.random_range(2..40), r.random_range(2..40));
    let u = DVector::from_fn(p, |_, _| r.random_range(0.01..1.0));
    let v = DVector::from_fn(q, |_, _| r.random_range(0.01..1.0));
    let m = &u * v.transpose();
    let (lu, s1, lv) = similarity::leading_singular_triplet(&m).unwrap();
    prop_assert!((s1 - u.norm() * v.norm()).abs() <= 1e-12 * s1);
    prop_assert!((lu.dot(&u) / u.norm() - 1.0).abs() <= 1e-12);
    prop_assert!((lv.dot(&v) / v.norm() - 1.0).abs() <= 1e-12);
    prop_assert!(similarity::second_singular_value(&m).unwrap() <= 1e-12 * s1);
    // A second independent direction is detected.
    let w = DVector::from_fn(p, |i, _| if i % 2 == 0 { 1.0 } else { -1.0 });
    let z = DVector::from_fn(q, |j, _| (j as f64 + 1.0).sin());
    let two = &m + &w * z.transpose() * 0.1;
    prop_assert!(similarity::second_singular_value(&two).unwrap() > 1e-6 * s1);
    Ok(())
}

/// On exact similarities of an 8-leaf tree, `S(C1, C2)` has rank one exactly for
/// the bipartitions of the tree, checked over all 127 splits.
pub fn sigma2_marks_complementary_clans(seed: u64) -> Result<(), TestCaseError> {
    let mut r = rng(seed);
    let model = random_model(FAMILIES[(seed % 3) as usize], 8, 0.5, 0.95, &mut r);
    let s = genmodel::exact_similarity(&model);
    let t = truth(&model);
    for mask in 1u32..(1 << 7) {
        let c1: Vec<usize> = (0..8).filter(|&i| i < 7 && mask >> i & 1 == 1).collect();
        let c2: Vec<usize> = (0..8).filter(|i| !c1.contains(i)).collect();
        let block = s.block(&c1, &c2);
        let s1 = similarity::leading_singular_triplet(&block).unwrap().1;
        let s2 = similarity::second_singular_value(&block).unwrap();
        let a = super::labels_of(s.labels(), &c1);
        let is_split = trees::is_clan(&t, &a).unwrap();
        prop_assert_eq!(
            s2 <= 1e-9 * s1,
            is_split,
            "mask {:07b}: s2/s1 = {:e}",
            mask,
            s2 / s1
        );
    }
    Ok(())
}

pub fn partition_sides_nonempty(seed: u64) -> Result<(), TestCaseError> {
    let mut r = rng(seed);
    let m = r.random_range(2..30);
    let sparse = r.random_bool(0.3);
    let mut s = DMatrix::from_fn(m, m, |_, _| {
        if sparse && r.random_bool(0.7) {
            0.0
        } else {
            r.random_range(0.0..1.0)
        }
    });
    s = (&s + s.transpose()) * 0.5;
    s.fill_diagonal(1.0);
    match partition::spectral_partition(&s) {
        Ok(p) => {
            prop_assert!(!p.c1.is_empty() && !p.c2.is_empty());
            prop_assert_eq!(p.c1.len() + p.c2.len(), m);
        }
        Err(partition::PartitionError::Degenerate(_)) => {}
        Err(e) => return Err(TestCaseError::fail(format!("unexpected error {e}"))),
    }
    Ok(())
}

fn noisy_split(
    seed: u64,
) -> (
    SimilarityMatrix,
    LeafSet,
    LeafSet,
    UnrootedTree,
    UnrootedTree,
) {
    let mut r = rng(seed);
    let model = random_model(
        FAMILIES[(seed % 3) as usize],
        12 + (seed % 12) as usize,
        0.6,
        0.95,
        &mut r,
    );
    let s = noisy(&model, 300, seed);
    let t = truth(&model);
    let (c1, c2) = super::sibling_clades(&model).pop().unwrap();
    let (t1, t2) = (t.restrict(&c1).unwrap(), t.restrict(&c2).unwrap());
    (s, c1, c2, t1, t2)
}

pub fn placeholder_argmin_scale_invariant(seed: u64) -> Result<(), TestCaseError> {
    let (s, c1, c2, t1, _) = noisy_split(seed);
    if t1.leaf_count() < 2 {
        return Ok(());
    }
    // Scaling up would push entries past the clamp at 1.
    let c = 0.01 + (seed % 1000) as f64 / 1010.0;
    let scaled = SimilarityMatrix::from_parts(s.labels().to_vec(), s.matrix() * c).unwrap();
    let a = merging::find_placeholder_edge(&s, &c1, &c2, &t1).unwrap();
    let b = merging::find_placeholder_edge(&scaled, &c1, &c2, &t1).unwrap();
    prop_assert_eq!(a.edge, b.edge);
    for (x, y) in a.scores.iter().zip(&b.scores) {
        prop_assert!((x.distance - y.distance).abs() <= 1e-9);
    }
    Ok(())
}

pub fn zero_score_iff_correct_edge(seed: u64) -> Result<(), TestCaseError> {
    let mut r = rng(seed);
    let model = random_model(
        FAMILIES[(seed % 3) as usize],
        4 + (seed % 13) as usize,
        0.5,
        0.95,
        &mut r,
    );
    let s = genmodel::exact_similarity(&model);
    let t = truth(&model);
    for (c1, c2) in super::sibling_clades(&model) {
        let whole = t.restrict(&c1.union(&c2)).unwrap();
        for (a, b) in [(&c1, &c2), (&c2, &c1)] {
            if a.len() < 2 {
                continue;
            }
            let ta = t.restrict(a).unwrap();
            let choice = merging::find_placeholder_edge(&s, a, b, &ta).unwrap();
            for score in &choice.scores {
                let (x, y) = merging::edge_partitions(&ta, score.edge).unwrap();
                let correct = both_clans(&whole, &x.union(b), &y.union(b));
                prop_assert_eq!(score.distance <= 1e-9, correct, "d = {:e}", score.distance);
            }
        }
    }
    Ok(())
}

pub fn scores_are_bounded(seed: u64) -> Result<(), TestCaseError> {
    let (s, c1, c2, t1, t2) = noisy_split(seed);
    let out = merging::merge_with_scores(&s, &c1, &t1, &c2, &t2).unwrap();
    for score in out.left.scores.iter().chain(&out.right.scores) {
        prop_assert!(
            score.distance >= 0.0 && score.distance <= 1.0 + 1e-9,
            "d = {}",
            score.distance
        );
    }
    Ok(())
}

pub fn stdr_parallel_is_deterministic(seed: u64) -> Result<(), TestCaseError> {
    let mut r = rng(seed);
    let model = random_model(
        FAMILIES[(seed % 3) as usize],
        30 + (seed % 40) as usize,
        0.6,
        0.95,
        &mut r,
    );
    let x = genmodel::evolve_sequences(&model, 200, seed).unwrap();
    let cfg = |parallelism| ReconstructionConfig {
        tau: 8,
        parallelism,
        ..ReconstructionConfig::default()
    };
    let serial = recovery::stdr(Input::Alignment(&x), &cfg(1)).unwrap();
    let parallel = recovery::stdr_parallel(Input::Alignment(&x), &cfg(3)).unwrap();
    let again = recovery::stdr_parallel(Input::Alignment(&x), &cfg(3)).unwrap();
    let newick = |t: &UnrootedTree| trees::write_newick(t);
    prop_assert_eq!(newick(&serial.tree), newick(&parallel.tree));
    prop_assert_eq!(newick(&parallel.tree), newick(&again.tree));
    prop_assert_eq!(
        &serial.diagnostics.partitions,
        &parallel.diagnostics.partitions
    );
    prop_assert_eq!(&serial.diagnostics.merges, &parallel.diagnostics.merges);
    Ok(())
}

pub fn stdr_output_is_binary_on_input_leaves(seed: u64) -> Result<(), TestCaseError> {
    let mut r = rng(seed);
    let family: Family = FAMILIES[(seed % 3) as usize];
    let model = random_model(family, 4 + (seed % 60) as usize, 0.3, 0.95, &mut r);
    let s = noisy(&model, 50 + (seed % 200) as usize, seed);
    let cfg = ReconstructionConfig {
        tau: 3 + (seed % 10) as usize,
        ..ReconstructionConfig::default()
    };
    let out = recovery::stdr(Input::Similarity(&s), &cfg).unwrap();
    prop_assert_eq!(out.tree.leaf_set(), truth(&model).leaf_set());
    check_binary(&out.tree)
}

pub fn schur_closure(seed: u64) -> Result<(), TestCaseError> {
    let mut r = rng(seed);
    let model = random_model(
        FAMILIES[(seed % 3) as usize],
        4 + (seed % 29) as usize,
        0.1,
        0.99,
        &mut r,
    );
    let g = WeightedTreeGraph::from_model(&model).unwrap();
    let keep: Vec<usize> = (0..g.node_count())
        .filter(|&v| g.label(v).is_some() || r.random_bool(0.5))
        .collect();
    let l = theory::schur_complement(&g.laplacian(), &keep).unwrap();
    let scale = l.diagonal().amax();
    for row in l.row_iter() {
        prop_assert!(row.sum().abs() <= 1e-9 * scale);
    }
    prop_assert!((&l - l.transpose()).amax() <= 1e-12 * scale);
    let (vals, _) = stdr_core::linalg::sym_eigen_sorted(&l);
    prop_assert!(vals[0] >= -1e-9 * scale);
    Ok(())
}

pub fn twin_tree_identity(seed: u64) -> Result<(), TestCaseError> {
    let mut r = rng(seed);
    let model = random_model(
        FAMILIES[(seed % 3) as usize],
        4 + (seed % 29) as usize,
        0.3,
        0.95,
        &mut r,
    );
    let g = WeightedTreeGraph::from_model(&model).unwrap();
    let twin = theory::twin_tree(&g).unwrap();
    let s = genmodel::exact_similarity(&model);
    let res = theory::twin_residual(&twin.tree, s.matrix()).unwrap();
    prop_assert!(res <= 1e-9, "residual {:e}", res);
    Ok(())
}

pub fn bounds_are_monotone(seed: u64) -> Result<(), TestCaseError> {
    let mut r = rng(seed);
    let m = r.random_range(4..2000usize);
    let eps = r.random_range(0.001..0.5);
    let delta = r.random_range(0.3..0.95);
    let xi = r.random_range(delta..0.99);
    let stats = TreeStats {
        eta: r.random_range(1.0..4.0),
        r: r.random_range(1.0..10.0),
        h: r.random_range(0.1..0.9),
        hierarchy: theory::Hierarchy::Generation,
        ultrametric: true,
    };
    let pb = |m, eps| {
        theory::partition_sample_bound(m, 4, eps, &stats)
            .unwrap()
            .samples
    };
    prop_assert!(pb(m + 1, eps) > pb(m, eps));
    prop_assert!(pb(m, eps / 2.0) > pb(m, eps));
    let mb = |m, eps| theory::merge_sample_bound(m, 4, eps, 0.5, delta, xi).unwrap();
    prop_assert!(mb(m + 1, eps) > mb(m, eps));
    prop_assert!(mb(m, eps / 2.0) > mb(m, eps));
    let lb = |m| theory::incorrect_edge_lower_bound(m, delta, xi).unwrap();
    prop_assert!(lb(m + 1) < lb(m));
    Ok(())
}
