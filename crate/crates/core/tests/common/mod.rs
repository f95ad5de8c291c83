#![allow(dead_code)]

pub mod props;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stdr_core::genmodel::{self, GenerativeTreeModel, RootedTopology, Substitution};
use stdr_core::trees::{self, LeafSet, UnrootedTree};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Family {
    Coalescent,
    BirthDeath,
    Caterpillar,
}

pub const FAMILIES: [Family; 3] = [Family::Coalescent, Family::BirthDeath, Family::Caterpillar];

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn topology(family: Family, m: usize, rng: &mut ChaCha8Rng) -> RootedTopology {
    match family {
        Family::Coalescent => genmodel::sample_coalescent(m, rng).unwrap().topology,
        Family::BirthDeath => {
            genmodel::sample_birth_death(m, 1.0, 0.3, rng)
                .unwrap()
                .topology
        }
        Family::Caterpillar => genmodel::make_caterpillar(m, 0.5, &Substitution::jc4())
            .unwrap()
            .topology()
            .clone(),
    }
}

/// Topology from `family` with edge similarities uniform on `[lo, hi]`.
pub fn random_model(
    family: Family,
    m: usize,
    lo: f64,
    hi: f64,
    rng: &mut ChaCha8Rng,
) -> GenerativeTreeModel {
    let top = topology(family, m, rng);
    let n = top.preorder().len();
    let sims: Vec<f64> = (0..n).map(|_| rng.random_range(lo..=hi)).collect();
    GenerativeTreeModel::from_similarities(top, &sims, &Substitution::jc4()).unwrap()
}

/// Simulated branch lengths turned into similarities: coalescent at rate 1,
/// birth-death (1, 0.3) at rate 0.3; the caterpillar gets random similarities.
pub fn branch_length_model(family: Family, m: usize, rng: &mut ChaCha8Rng) -> GenerativeTreeModel {
    let subst = Substitution::jc4();
    match family {
        Family::Coalescent => genmodel::sample_coalescent(m, rng)
            .unwrap()
            .to_model(1.0, &subst)
            .unwrap(),
        Family::BirthDeath => genmodel::sample_birth_death(m, 1.0, 0.3, rng)
            .unwrap()
            .to_model(0.3, &subst)
            .unwrap(),
        Family::Caterpillar => random_model(Family::Caterpillar, m, 0.6, 0.95, rng),
    }
}

/// Coalescent topology with the same similarity on every edge.
pub fn constant_coalescent(m: usize, delta: f64, rng: &mut ChaCha8Rng) -> GenerativeTreeModel {
    let top = genmodel::sample_coalescent(m, rng).unwrap().topology;
    let n = top.preorder().len();
    GenerativeTreeModel::from_similarities(top, &vec![delta; n], &Substitution::jc4()).unwrap()
}

pub fn truth(model: &GenerativeTreeModel) -> UnrootedTree {
    model.unrooted_tree().unwrap()
}

pub fn both_clans(t: &UnrootedTree, a: &LeafSet, b: &LeafSet) -> bool {
    trees::is_clan(t, a).unwrap() && trees::is_clan(t, b).unwrap()
}

/// Leaf sets below each pair of sibling nodes of the generating tree.
pub fn sibling_clades(model: &GenerativeTreeModel) -> Vec<(LeafSet, LeafSet)> {
    let mut below: Vec<LeafSet> = vec![LeafSet::new(); model.node_count()];
    let mut order = model.topology().preorder();
    order.reverse();
    let mut out = Vec::new();
    for v in order {
        if let Some(l) = model.label(v) {
            below[v].insert(l);
            continue;
        }
        let kids = model.children(v);
        for (i, &a) in kids.iter().enumerate() {
            for &b in &kids[i + 1..] {
                out.push((below[a].clone(), below[b].clone()));
            }
        }
        below[v] = kids
            .iter()
            .fold(LeafSet::new(), |acc, &c| acc.union(&below[c]));
    }
    out
}

pub fn labels_of(labels: &[String], idx: &[usize]) -> LeafSet {
    idx.iter().map(|&i| labels[i].clone()).collect()
}

fn ranks(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut r = vec![0.0; xs.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && xs[idx[j + 1]] == xs[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            r[k] = avg;
        }
        i = j + 1;
    }
    r
}

fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    sxy / (sxx * syy).sqrt()
}

/// Spearman rank correlation with average ranks for ties; NaN for constant input.
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    pearson(&ranks(x), &ranks(y))
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}
