//! Numerical checks of the population-level results, reported as a pass/fail table.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stdr_core::genmodel::{self, GenerativeTreeModel, Substitution};
use stdr_core::linalg;
use stdr_core::merging;
use stdr_core::partition;
use stdr_core::recovery::{self, Input, ReconstructionConfig};
use stdr_core::similarity::{self, LaplacianMatrix};
use stdr_core::theory::{self, WeightedTreeGraph};
use stdr_core::trees::{self, LeafSet, UnrootedTree};

use crate::error::{CliError, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct CheckRow {
    pub check: &'static str,
    pub params: String,
    pub residual: f64,
    pub tolerance: f64,
}

impl CheckRow {
    pub fn passed(&self) -> bool {
        self.residual <= self.tolerance
    }
}

#[derive(Clone, Debug)]
pub struct ValidateConfig {
    pub seed: u64,
    pub trials: usize,
    /// Added to one twin-tree weight before the Schur identity is checked.
    pub perturb_twin: f64,
}

/// A random binary model: coalescent, birth-death or caterpillar topology with
/// edge similarities drawn uniformly from `[0.55, 0.95]`.
pub fn random_model(m: usize, family: usize, rng: &mut ChaCha8Rng) -> Result<GenerativeTreeModel> {
    let subst = Substitution::jc4();
    let topology = match family % 3 {
        0 => genmodel::sample_coalescent(m, rng)?.topology,
        1 => genmodel::sample_birth_death(m, 1.0, 0.3, rng)?.topology,
        _ => genmodel::make_caterpillar(m, 0.5, &subst)?
            .topology()
            .clone(),
    };
    let n = topology.preorder().len();
    let sims: Vec<f64> = (0..n).map(|_| rng.random_range(0.55..0.95)).collect();
    Ok(GenerativeTreeModel::from_similarities(
        topology, &sims, &subst,
    )?)
}

fn truth(model: &GenerativeTreeModel) -> Result<UnrootedTree> {
    model
        .unrooted_tree()
        .map_err(|e| CliError::Numerical(e.to_string()))
}

fn both_clans(t: &UnrootedTree, a: &LeafSet, b: &LeafSet) -> Result<bool> {
    Ok(trees::is_clan(t, a)? && trees::is_clan(t, b)?)
}

fn max_abs_sorted(mut got: Vec<f64>, want: &[f64]) -> f64 {
    got.sort_by(f64::total_cmp);
    if got.len() != want.len() {
        return f64::INFINITY;
    }
    got.iter()
        .zip(want)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max)
}

fn figure_five() -> Result<Vec<CheckRow>> {
    let labels = ["x1", "x2", "x3", "x4"]
        .iter()
        .map(|l| Some(l.to_string()))
        .chain([None, None])
        .collect();
    let g = WeightedTreeGraph::new(
        labels,
        vec![
            (4, 0, 0.5),
            (4, 1, 0.5),
            (5, 2, 0.5),
            (5, 3, 0.5),
            (4, 5, 0.5),
        ],
    )?;
    let twin = theory::twin_tree(&g)?;
    let g1 = &twin.steps[0].graph;
    let n = g1.nrows();
    let g1_weights = (0..n)
        .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
        .map(|(i, j)| g1[(i, j)])
        .filter(|&w| w != 0.0)
        .collect();
    let t2 = twin.tree.edges().iter().map(|e| e.2).collect();
    let params = "quartet, all weights 1/2".to_string();
    Ok(vec![
        CheckRow {
            check: "figure5_g1_weights",
            params: params.clone(),
            residual: max_abs_sorted(g1_weights, &[3.0 / 16.0, 3.0 / 8.0, 3.0 / 8.0, 0.75, 0.75]),
            tolerance: 1e-12,
        },
        CheckRow {
            check: "figure5_twin_weights",
            params,
            residual: max_abs_sorted(t2, &[0.75, 0.75, 0.75, 0.75, 1.5]),
            tolerance: 1e-12,
        },
    ])
}

fn twin_checks(cfg: &ValidateConfig) -> Result<Vec<CheckRow>> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut identity: f64 = 0.0;
    let mut closure: f64 = 0.0;
    let mut failures = 0usize;
    for trial in 0..cfg.trials {
        let m = rng.random_range(4..=32);
        let model = random_model(m, trial, &mut rng)?;
        let g = WeightedTreeGraph::from_model(&model)?;
        let s = genmodel::exact_similarity(&model);

        let mut twin = theory::twin_tree(&g)?.tree;
        if cfg.perturb_twin != 0.0 {
            let w = twin.weight(0);
            twin.set_weight(0, w + cfg.perturb_twin)?;
        }
        identity = identity.max(theory::twin_residual(&twin, s.matrix())?);

        // Partition through the Schur complement of the twin tree.
        let leaves = twin.leaf_nodes();
        let reduced = theory::schur_complement(&twin.laplacian(), &leaves)?;
        let f = similarity::fiedler_vector(&LaplacianMatrix::from_matrix_unchecked(reduced))?;
        let p = partition::sign_partition(&f.vector)?;
        let labels: Vec<String> = leaves
            .iter()
            .map(|&v| twin.label(v).unwrap_or("").to_string())
            .collect();
        let (a, b) = p.leaf_sets(&labels);
        if !both_clans(&truth(&model)?, &a, &b)? {
            failures += 1;
        }

        // Eliminate a random subset of internal nodes.
        let keep: Vec<usize> = (0..g.node_count())
            .filter(|&v| g.label(v).is_some() || rng.random_bool(0.5))
            .collect();
        let red = theory::schur_complement(&g.laplacian(), &keep)?;
        closure = closure.max(laplacian_defect(&red));
    }
    let params = format!(
        "{} random models, m in 4..=32, perturb {}",
        cfg.trials, cfg.perturb_twin
    );
    Ok(vec![
        CheckRow {
            check: "twin_schur_identity",
            params: params.clone(),
            residual: identity,
            tolerance: 1e-9,
        },
        CheckRow {
            check: "twin_schur_partition_clans",
            params: params.clone(),
            residual: failures as f64,
            tolerance: 0.0,
        },
        CheckRow {
            check: "schur_closure",
            params,
            residual: closure,
            tolerance: 1e-9,
        },
    ])
}

/// Largest violation of "symmetric, zero row sums, nonpositive off-diagonal,
/// positive semidefinite", relative to the diagonal scale.
pub fn laplacian_defect(l: &DMatrix<f64>) -> f64 {
    let scale = l.diagonal().amax().max(f64::MIN_POSITIVE);
    let asym = (l - l.transpose()).amax();
    let rows = l.row_iter().map(|r| r.sum().abs()).fold(0.0, f64::max);
    let offdiag = (0..l.nrows())
        .flat_map(|i| (0..l.ncols()).map(move |j| (i, j)))
        .filter(|(i, j)| i != j)
        .map(|(i, j)| l[(i, j)].max(0.0))
        .fold(0.0, f64::max);
    let (vals, _) = linalg::sym_eigen_sorted(&((l + l.transpose()) * 0.5));
    let neg = (-vals[0]).max(0.0);
    asym.max(rows).max(offdiag).max(neg) / scale
}

fn spectrum_checks() -> Result<Vec<CheckRow>> {
    let mut rows = Vec::new();
    for depth in 2..=5 {
        let m = 1usize << depth;
        for delta in [0.5, 0.65, 0.8] {
            let model = genmodel::make_binary_symmetric(depth, delta, &Substitution::jc4())?;
            let s = genmodel::exact_similarity(&model);
            let (vals, vecs) = linalg::sym_eigen_sorted(similarity::laplacian(&s).matrix());
            let mf = m as f64;
            let lambda2 = mf.powf(2.0 * delta.log2() + 1.0);
            let lambda3 = lambda2 * (0.5 + 0.5 / (delta * delta));
            let calc = theory::symmetric_spectrum(m, delta)?;
            let rel = |a: f64, b: f64| ((a - b) / b).abs();
            let v2 = vecs
                .column(1)
                .iter()
                .map(|x| (x.abs() - 1.0 / mf.sqrt()).abs() * mf.sqrt())
                .fold(0.0, f64::max);
            let residual = [
                rel(vals[1], lambda2),
                rel(vals[2], lambda3),
                rel(calc.lambda2, lambda2),
                rel(calc.lambda3, lambda3),
                v2,
            ]
            .into_iter()
            .fold(0.0, f64::max);
            rows.push(CheckRow {
                check: "symmetric_spectrum",
                params: format!("m {m}, delta {delta}"),
                residual,
                tolerance: 1e-9,
            });
        }
    }
    Ok(rows)
}

/// Scores of every edge on both sides of every split of the symmetric tree.
fn merge_checks() -> Result<Vec<CheckRow>> {
    let mut rows = Vec::new();
    for depth in 3..=5 {
        let m = 1usize << depth;
        for delta in [0.75, 0.8, 0.9] {
            let model = genmodel::make_binary_symmetric(depth, delta, &Substitution::jc4())?;
            let s = genmodel::exact_similarity(&model);
            let t = truth(&model)?;
            let mut correct: f64 = 0.0;
            let mut shortfall: f64 = 0.0;
            for (c1, c2) in sibling_clades(&model) {
                let sub = c1.union(&c2);
                let whole = t.restrict(&sub)?;
                let bound = theory::incorrect_edge_lower_bound(sub.len(), delta, delta)?;
                for (a, b) in [(&c1, &c2), (&c2, &c1)] {
                    if a.len() < 2 {
                        continue;
                    }
                    let ta = t.restrict(a)?;
                    let choice = merging::find_placeholder_edge(&s, a, b, &ta)?;
                    for score in &choice.scores {
                        let (x, y) = merging::edge_partitions(&ta, score.edge)?;
                        if both_clans(&whole, &x.union(b), &y.union(b))? {
                            correct = correct.max(score.distance);
                        } else {
                            shortfall = shortfall.max(bound - score.distance);
                        }
                    }
                }
            }
            let params = format!("m {m}, delta = xi = {delta}");
            rows.push(CheckRow {
                check: "merge_correct_edge_zero",
                params: params.clone(),
                residual: correct,
                tolerance: 1e-9,
            });
            rows.push(CheckRow {
                check: "incorrect_edge_lower_bound",
                params,
                residual: shortfall.max(0.0),
                tolerance: 0.0,
            });
        }
    }
    Ok(rows)
}

/// Leaf sets of the two children of every internal node of the generating tree.
pub fn sibling_clades(model: &GenerativeTreeModel) -> Vec<(LeafSet, LeafSet)> {
    let n = model.node_count();
    let mut below: Vec<LeafSet> = vec![LeafSet::new(); n];
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

fn population_checks(cfg: &ValidateConfig) -> Result<Vec<CheckRow>> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed);
    let mut split_failures = 0usize;
    let mut mincut_failures = 0usize;
    let mut worst_rf = 0usize;
    for trial in 0..cfg.trials {
        let model = random_model(rng.random_range(4..=32), trial, &mut rng)?;
        let s = genmodel::exact_similarity(&model);
        let t = truth(&model)?;
        let f = similarity::fiedler_vector(&similarity::laplacian(&s))?;
        let (a, b) = partition::sign_partition(&f.vector)?.leaf_sets(s.labels());
        if !both_clans(&t, &a, &b)? {
            split_failures += 1;
        }

        let small = random_model(rng.random_range(4..=10), trial, &mut rng)?;
        let ss = genmodel::exact_similarity(&small);
        let (a, b) = partition::mincut_partition_bruteforce(ss.matrix())?.leaf_sets(ss.labels());
        if !both_clans(&truth(&small)?, &a, &b)? {
            mincut_failures += 1;
        }

        let big = random_model(rng.random_range(16..=64), trial, &mut rng)?;
        let sb = genmodel::exact_similarity(&big);
        for tau in [4, 8, 16] {
            let cfg = ReconstructionConfig {
                tau,
                diagnostics: false,
                ..ReconstructionConfig::default()
            };
            let out = recovery::stdr(Input::Similarity(&sb), &cfg)?;
            worst_rf = worst_rf.max(trees::rf_distance(&out.tree, &truth(&big)?)?);
        }
    }
    let n = cfg.trials;
    Ok(vec![
        CheckRow {
            check: "fiedler_sign_split_clans",
            params: format!("{n} random models, m in 4..=32"),
            residual: split_failures as f64,
            tolerance: 0.0,
        },
        CheckRow {
            check: "mincut_split_clans",
            params: format!("{n} random models, m in 4..=10"),
            residual: mincut_failures as f64,
            tolerance: 0.0,
        },
        CheckRow {
            check: "stdr_exact_recovery",
            params: format!("{n} random models, m in 16..=64, tau 4/8/16"),
            residual: worst_rf as f64,
            tolerance: 0.0,
        },
    ])
}

pub fn run(cfg: &ValidateConfig) -> Result<Vec<CheckRow>> {
    if cfg.trials == 0 {
        return Err(CliError::Usage("--trials must be at least 1".into()));
    }
    let mut rows = figure_five()?;
    rows.extend(twin_checks(cfg)?);
    rows.extend(spectrum_checks()?);
    rows.extend(merge_checks()?);
    rows.extend(population_checks(cfg)?);
    Ok(rows)
}

pub fn write_table<W: std::io::Write>(rows: &[CheckRow], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["check", "params", "residual", "tolerance", "pass"])?;
    for r in rows {
        out.write_record([
            r.check.to_string(),
            r.params.clone(),
            format!("{:e}", r.residual),
            format!("{:e}", r.tolerance),
            r.passed().to_string(),
        ])?;
    }
    out.flush().map_err(CliError::io("theory table"))
}
