//! The recursive reconstruction driver and its base-case subroutines.
//!
//! The similarity matrix is computed once; the recursion works on index subsets of
//! it. Sets of at most `tau` leaves go to the subroutine, larger sets are split by
//! the partition step, reconstructed recursively and merged.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::io::Write;
use std::path::PathBuf;
use std::process::{Command, Stdio};
use std::time::{Duration, Instant};

use nalgebra::DMatrix;
use thiserror::Error;

use crate::genmodel::{Alignment, ModelError};
use crate::merging::{self, MergeError, MergeOutcome, PlaceholderChoice};
use crate::partition::{self, PartitionError, PartitionResult, Strategy};
use crate::similarity::{self, SimilarityError, SimilarityMatrix};
use crate::trees::{self, Edge, LeafSet, TreeError, UnrootedTree};

#[derive(Debug, Error)]
pub enum RecoveryError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("need at least {needed} leaves, got {found}")]
    TooFewLeaves { needed: usize, found: usize },
    #[error("distance matrix: {0}")]
    Distance(String),
    #[error("the external subroutine needs an alignment, not only similarities")]
    MissingAlignment,
    #[error("could not run external command: {0}")]
    Spawn(#[source] std::io::Error),
    #[error("external command exited with {status}: {stderr}")]
    ExitStatus { status: String, stderr: String },
    #[error("external command timed out after {0:?}")]
    Timeout(Duration),
    #[error("external command output: {0}")]
    ExternalOutput(String),
    #[error("recursion deeper than {0} levels")]
    DepthExceeded(usize),
    #[error(transparent)]
    Partition(#[from] PartitionError),
    #[error(transparent)]
    Merge(#[from] MergeError),
    #[error(transparent)]
    Tree(#[from] TreeError),
    #[error(transparent)]
    Similarity(#[from] SimilarityError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

pub type Result<T> = std::result::Result<T, RecoveryError>;

// ---------------------------------------------------------------------------
// Distances and neighbor joining

/// Symmetric nonnegative distances with a zero diagonal.
#[derive(Clone, Debug, PartialEq)]
pub struct DistanceMatrix {
    labels: Vec<String>,
    data: DMatrix<f64>,
}

impl DistanceMatrix {
    pub fn new(labels: Vec<String>, data: DMatrix<f64>) -> Result<Self> {
        let m = labels.len();
        if data.shape() != (m, m) {
            return Err(RecoveryError::Distance(format!(
                "shape {:?} does not match {m} labels",
                data.shape()
            )));
        }
        for i in 0..m {
            if data[(i, i)] != 0.0 {
                return Err(RecoveryError::Distance(format!("nonzero diagonal at {i}")));
            }
            for j in 0..m {
                let x = data[(i, j)];
                if !x.is_finite() || x < 0.0 {
                    return Err(RecoveryError::Distance(format!(
                        "bad entry {x} at ({i}, {j})"
                    )));
                }
                if (x - data[(j, i)]).abs() > 1e-12 * x.abs().max(1.0) {
                    return Err(RecoveryError::Distance(format!("asymmetric at ({i}, {j})")));
                }
            }
        }
        Ok(Self { labels, data })
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Smallest similarity used before taking logarithms.
pub const SIMILARITY_FLOOR: f64 = 1e-12;

fn distances_of(s: &DMatrix<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(s.nrows(), s.ncols(), |i, j| {
        if i == j {
            0.0
        } else {
            -s[(i, j)].max(SIMILARITY_FLOOR).min(1.0).ln()
        }
    })
}

/// `D = -log S` entrywise, with `S` floored at [`SIMILARITY_FLOOR`].
pub fn similarity_to_distance(s: &SimilarityMatrix) -> DistanceMatrix {
    DistanceMatrix {
        labels: s.labels().to_vec(),
        data: distances_of(s.matrix()),
    }
}

/// Neighbor joining on `d`, returning the topology only.
///
/// Ties in the Q criterion go to the first pair in row-major order of the
/// remaining rows.
pub fn neighbor_joining(d: &DistanceMatrix) -> Result<UnrootedTree> {
    nj_core(&d.labels, |i, j| d.data[(i, j)])
}

fn nj_core(labels: &[String], dist: impl Fn(usize, usize) -> f64) -> Result<UnrootedTree> {
    let m = labels.len();
    if m < 3 {
        return Err(RecoveryError::TooFewLeaves {
            needed: 3,
            found: m,
        });
    }
    // Row-major working copy; slot i is reused for the node created from (i, j).
    let mut w = vec![0.0; m * m];
    for i in 0..m {
        for j in 0..m {
            w[i * m + j] = dist(i, j);
        }
    }
    let mut node: Vec<usize> = (0..m).collect();
    let mut names: Vec<Option<String>> = labels.iter().cloned().map(Some).collect();
    let mut edges = Vec::with_capacity(2 * m - 3);
    let mut active: Vec<usize> = (0..m).collect();
    let mut rowsum: Vec<f64> = (0..m).map(|i| w[i * m..(i + 1) * m].iter().sum()).collect();

    while active.len() > 3 {
        let r = active.len() as f64;
        let mut best = (f64::INFINITY, 0, 0);
        for (x, &i) in active.iter().enumerate() {
            let row = &w[i * m..(i + 1) * m];
            let ri = rowsum[i];
            for &j in &active[x + 1..] {
                let q = (r - 2.0) * row[j] - ri - rowsum[j];
                if q < best.0 {
                    best = (q, i, j);
                }
            }
        }
        let (_, i, j) = best;
        let u = names.len();
        names.push(None);
        edges.push(Edge {
            a: u,
            b: node[i],
            weight: None,
        });
        edges.push(Edge {
            a: u,
            b: node[j],
            weight: None,
        });
        let dij = w[i * m + j];
        active.retain(|&k| k != j);
        let mut sum_i = 0.0;
        for &k in &active {
            if k == i {
                continue;
            }
            let dik = w[i * m + k];
            let djk = w[j * m + k];
            let new = 0.5 * (dik + djk - dij);
            rowsum[k] += new - dik - djk;
            w[i * m + k] = new;
            w[k * m + i] = new;
            sum_i += new;
        }
        rowsum[i] = sum_i;
        node[i] = u;
    }
    let c = names.len();
    names.push(None);
    for &k in &active {
        edges.push(Edge {
            a: c,
            b: node[k],
            weight: None,
        });
    }
    Ok(UnrootedTree::from_parts(names, edges)?)
}

/// The unique unrooted topology on at most three leaves.
pub fn trivial_tree(labels: &LeafSet) -> Result<UnrootedTree> {
    if labels.is_empty() {
        return Err(RecoveryError::TooFewLeaves {
            needed: 1,
            found: 0,
        });
    }
    let v: Vec<&str> = labels.iter().map(String::as_str).collect();
    Ok(UnrootedTree::trivial(&v)?)
}

// ---------------------------------------------------------------------------
// External subroutine

/// Default limit on one external subroutine call.
pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(600);

/// Environment variable overriding the directory for temporary files.
pub const TMPDIR_VAR: &str = "STDR_TMPDIR";

/// A shell command that reads a FASTA alignment and writes a Newick tree.
///
/// `{in}` and `{out}` in the template are replaced by the two paths; a template
/// without them is called as `{cmd} --in <fasta> --out <newick>`.
#[derive(Clone, Debug, PartialEq)]
pub struct ExternalCommand {
    pub template: String,
    pub timeout: Duration,
    /// Keep the temporary directory for inspection.
    pub keep_files: bool,
}

impl ExternalCommand {
    pub fn new(template: impl Into<String>) -> Self {
        Self {
            template: template.into(),
            timeout: DEFAULT_TIMEOUT,
            keep_files: false,
        }
    }

    fn expand(&self, input: &str, output: &str) -> String {
        let quote = |p: &str| format!("'{}'", p.replace('\'', r"'\''"));
        if self.template.contains("{in}") || self.template.contains("{out}") {
            self.template
                .replace("{in}", &quote(input))
                .replace("{out}", &quote(output))
        } else {
            format!(
                "{} --in {} --out {}",
                self.template,
                quote(input),
                quote(output)
            )
        }
    }
}

fn temp_root() -> PathBuf {
    std::env::var_os(TMPDIR_VAR)
        .map(PathBuf::from)
        .unwrap_or_else(std::env::temp_dir)
}

/// Runs the external command on `x` and parses the tree it writes.
pub fn external_subroutine(x: &Alignment, cmd: &ExternalCommand) -> Result<UnrootedTree> {
    let dir = tempfile::Builder::new()
        .prefix("stdr-")
        .tempdir_in(temp_root())
        .map_err(RecoveryError::Spawn)?;
    let fasta = dir.path().join("input.fasta");
    let newick = dir.path().join("output.nwk");
    let stdout_path = dir.path().join("stdout.txt");
    let stderr_path = dir.path().join("stderr.txt");
    std::fs::File::create(&fasta)
        .and_then(|mut f| f.write_all(x.to_fasta().as_bytes()))
        .map_err(RecoveryError::Spawn)?;
    let line = cmd.expand(&fasta.to_string_lossy(), &newick.to_string_lossy());
    let mut child = Command::new("sh")
        .arg("-c")
        .arg(&line)
        .stdin(Stdio::null())
        .stdout(std::fs::File::create(&stdout_path).map_err(RecoveryError::Spawn)?)
        .stderr(std::fs::File::create(&stderr_path).map_err(RecoveryError::Spawn)?)
        .spawn()
        .map_err(RecoveryError::Spawn)?;
    let start = Instant::now();
    let status = loop {
        if let Some(status) = child.try_wait().map_err(RecoveryError::Spawn)? {
            break status;
        }
        if start.elapsed() > cmd.timeout {
            let _ = child.kill();
            let _ = child.wait();
            return Err(RecoveryError::Timeout(cmd.timeout));
        }
        std::thread::sleep(Duration::from_millis(5));
    };
    let result = (|| {
        if !status.success() {
            let mut stderr = std::fs::read_to_string(&stderr_path).unwrap_or_default();
            if stderr.trim().is_empty() {
                stderr = std::fs::read_to_string(&stdout_path).unwrap_or_default();
            }
            return Err(RecoveryError::ExitStatus {
                status: status.to_string(),
                stderr: stderr.trim().to_string(),
            });
        }
        let text = std::fs::read_to_string(&newick).map_err(|e| {
            RecoveryError::ExternalOutput(format!("reading {}: {e}", newick.display()))
        })?;
        let tree = trees::parse_newick_topology(&text)
            .map_err(|e| RecoveryError::ExternalOutput(e.to_string()))?;
        let expected: LeafSet = x.labels().iter().cloned().collect();
        if tree.leaf_set() != expected {
            return Err(RecoveryError::ExternalOutput(format!(
                "leaf labels {} do not match the input {}",
                tree.leaf_set(),
                expected
            )));
        }
        Ok(tree)
    })();
    if cmd.keep_files {
        let _ = dir.keep();
    }
    result
}

// ---------------------------------------------------------------------------
// Driver

/// How small subsets are reconstructed.
#[derive(Clone, Debug, PartialEq)]
pub enum Subroutine {
    NeighborJoining,
    /// Only valid with `tau = 3`, where every base case has a unique topology.
    Trivial,
    External(ExternalCommand),
}

/// Which partition rule the driver applies.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PartitionMethod {
    /// Sign and gap thresholds of the Fiedler vector, chosen by the rank-one criterion.
    Spectral,
    Sign,
    Gap,
    /// Exhaustive min-cut; only usable while every split set has at most 20 leaves.
    MinCut,
    /// Spectral split of the centred distance matrix.
    Distance,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReconstructionConfig {
    pub tau: usize,
    pub subroutine: Subroutine,
    pub partition: PartitionMethod,
    /// Unused by the deterministic driver; kept so runs record their seed.
    pub seed: u64,
    pub parallelism: usize,
    pub diagnostics: bool,
}

impl Default for ReconstructionConfig {
    fn default() -> Self {
        Self {
            tau: 32,
            subroutine: Subroutine::NeighborJoining,
            partition: PartitionMethod::Spectral,
            seed: 0,
            parallelism: 1,
            diagnostics: true,
        }
    }
}

impl ReconstructionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.tau < 3 {
            return Err(RecoveryError::Config(format!(
                "tau must be at least 3, got {}",
                self.tau
            )));
        }
        if self.parallelism == 0 {
            return Err(RecoveryError::Config(
                "parallelism must be at least 1".into(),
            ));
        }
        if self.subroutine == Subroutine::Trivial && self.tau != 3 {
            return Err(RecoveryError::Config(
                "the trivial subroutine needs tau = 3".into(),
            ));
        }
        Ok(())
    }
}

/// Input to the driver.
#[derive(Clone, Copy, Debug)]
pub enum Input<'a> {
    Alignment(&'a Alignment),
    Similarity(&'a SimilarityMatrix),
}

/// One partition decision.
#[derive(Clone, Debug, PartialEq)]
pub struct PartitionRecord {
    pub depth: usize,
    pub size: usize,
    pub c1_size: usize,
    pub c2_size: usize,
    pub strategy: Strategy,
    pub sigma2: Option<f64>,
}

/// One placeholder choice of a merge.
#[derive(Clone, Debug, PartialEq)]
pub struct MergeRecord {
    pub depth: usize,
    /// `"left"` for the `C1` subtree, `"right"` for `C2`.
    pub side: &'static str,
    pub subtree_size: usize,
    pub sigma1: f64,
    /// The chosen edge's split written as `a|b|c`, or empty for a single leaf.
    pub split: String,
    pub distance: Option<f64>,
    pub alpha: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Diagnostics {
    pub partitions: Vec<PartitionRecord>,
    pub merges: Vec<MergeRecord>,
    pub similarity_secs: f64,
    pub partition_secs: f64,
    pub merge_secs: f64,
    pub subroutine_secs: f64,
    pub subroutine_calls: usize,
    pub clamp_events: usize,
}

impl Diagnostics {
    /// Time spent in partition and merge steps, summed over recursion branches.
    pub fn driver_secs(&self) -> f64 {
        self.partition_secs + self.merge_secs
    }

    fn absorb(&mut self, other: Diagnostics) {
        self.partitions.extend(other.partitions);
        self.merges.extend(other.merges);
        self.partition_secs += other.partition_secs;
        self.merge_secs += other.merge_secs;
        self.subroutine_secs += other.subroutine_secs;
        self.subroutine_calls += other.subroutine_calls;
    }

    pub fn write_partitions_csv<W: std::io::Write>(&self, w: W) -> std::io::Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["depth", "size", "c1_size", "c2_size", "strategy", "sigma2"])?;
        for p in &self.partitions {
            out.write_record([
                p.depth.to_string(),
                p.size.to_string(),
                p.c1_size.to_string(),
                p.c2_size.to_string(),
                p.strategy.name().to_string(),
                p.sigma2.map(|x| format!("{x:e}")).unwrap_or_default(),
            ])?;
        }
        out.flush()
    }

    pub fn write_merges_csv<W: std::io::Write>(&self, w: W) -> std::io::Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record([
            "depth",
            "side",
            "subtree_size",
            "sigma1",
            "split",
            "distance",
            "alpha",
        ])?;
        for r in &self.merges {
            out.write_record([
                r.depth.to_string(),
                r.side.to_string(),
                r.subtree_size.to_string(),
                format!("{:e}", r.sigma1),
                r.split.clone(),
                r.distance.map(|x| format!("{x:e}")).unwrap_or_default(),
                r.alpha.map(|x| format!("{x:e}")).unwrap_or_default(),
            ])?;
        }
        out.flush()
    }
}

#[derive(Clone, Debug)]
pub struct Reconstruction {
    pub tree: UnrootedTree,
    pub diagnostics: Diagnostics,
}

struct Context<'a> {
    s: &'a DMatrix<f64>,
    labels: &'a [String],
    index: HashMap<&'a str, usize>,
    alignment: Option<&'a Alignment>,
    cfg: &'a ReconstructionConfig,
    parallel: bool,
}

fn leaf_set(ctx: &Context, idx: &[usize]) -> LeafSet {
    idx.iter().map(|&i| ctx.labels[i].clone()).collect()
}

fn run_subroutine(ctx: &Context, idx: &[usize]) -> Result<UnrootedTree> {
    match &ctx.cfg.subroutine {
        Subroutine::NeighborJoining => {
            let labels: Vec<String> = idx.iter().map(|&i| ctx.labels[i].clone()).collect();
            let floor = |x: f64| -x.max(SIMILARITY_FLOOR).min(1.0).ln();
            nj_core(&labels, |a, b| {
                if a == b {
                    0.0
                } else {
                    floor(ctx.s[(idx[a], idx[b])])
                }
            })
        }
        Subroutine::Trivial => trivial_tree(&leaf_set(ctx, idx)),
        Subroutine::External(cmd) => {
            let x = ctx.alignment.ok_or(RecoveryError::MissingAlignment)?;
            // Similarities were estimated from `x`, so rows line up with `idx`.
            external_subroutine(&x.subset(idx), cmd)
        }
    }
}

fn partition_step(s: &DMatrix<f64>, method: PartitionMethod) -> Result<PartitionResult> {
    let p = match method {
        PartitionMethod::Spectral => partition::spectral_partition(s)?,
        PartitionMethod::Sign | PartitionMethod::Gap => {
            let f = similarity::fiedler_vector(&similarity::laplacian_of(s))?;
            let p = if method == PartitionMethod::Sign {
                partition::sign_partition(&f.vector)
            } else {
                partition::gap_partition(&f.vector)
            };
            match p {
                Ok(p) => partition::choose_partition(s, vec![p])?,
                // A one-signed or flat vector falls back to the full rule.
                Err(_) => partition::spectral_partition(s)?,
            }
        }
        PartitionMethod::MinCut => partition::mincut_partition_bruteforce(s)?,
        PartitionMethod::Distance => partition::distance_spectral_partition(&distances_of(s))?,
    };
    Ok(p)
}

fn describe(choice: &PlaceholderChoice) -> String {
    choice
        .split
        .as_ref()
        .map(|b| {
            let mut out = String::new();
            for (k, l) in b.side().iter().enumerate() {
                if k > 0 {
                    out.push(' ');
                }
                let _ = write!(out, "{l}");
            }
            out
        })
        .unwrap_or_default()
}

fn merge_records(depth: usize, out: &MergeOutcome, t1: usize, t2: usize) -> [MergeRecord; 2] {
    let rec = |side, choice: &PlaceholderChoice, size| MergeRecord {
        depth,
        side,
        subtree_size: size,
        sigma1: out.sigma1,
        split: describe(choice),
        distance: choice.score.map(|s| s.distance),
        alpha: choice.score.map(|s| s.alpha),
    };
    [rec("left", &out.left, t1), rec("right", &out.right, t2)]
}

fn recurse(ctx: &Context, idx: &[usize], depth: usize) -> Result<(UnrootedTree, Diagnostics)> {
    let mut diag = Diagnostics::default();
    let k = idx.len();
    if depth > ctx.labels.len() {
        return Err(RecoveryError::DepthExceeded(ctx.labels.len()));
    }
    if k <= 3 {
        return Ok((trivial_tree(&leaf_set(ctx, idx))?, diag));
    }
    if k <= ctx.cfg.tau {
        let start = Instant::now();
        let t = run_subroutine(ctx, idx)?;
        diag.subroutine_secs += start.elapsed().as_secs_f64();
        diag.subroutine_calls += 1;
        return Ok((t, diag));
    }

    let start = Instant::now();
    let sub = DMatrix::from_fn(k, k, |i, j| ctx.s[(idx[i], idx[j])]);
    let p = partition_step(&sub, ctx.cfg.partition)?;
    drop(sub);
    let c1: Vec<usize> = p.c1.iter().map(|&i| idx[i]).collect();
    let c2: Vec<usize> = p.c2.iter().map(|&i| idx[i]).collect();
    diag.partition_secs += start.elapsed().as_secs_f64();
    if ctx.cfg.diagnostics {
        diag.partitions.push(PartitionRecord {
            depth,
            size: k,
            c1_size: c1.len(),
            c2_size: c2.len(),
            strategy: p.strategy,
            sigma2: p.sigma2,
        });
    }

    let (left, right) = if ctx.parallel {
        rayon::join(
            || recurse(ctx, &c1, depth + 1),
            || recurse(ctx, &c2, depth + 1),
        )
    } else {
        (recurse(ctx, &c1, depth + 1), recurse(ctx, &c2, depth + 1))
    };
    let (t1, d1) = left?;
    let (t2, d2) = right?;
    diag.absorb(d1);
    diag.absorb(d2);

    let start = Instant::now();
    let out = merging::merge_indexed(ctx.s, &ctx.index, &t1, &t2)?;
    diag.merge_secs += start.elapsed().as_secs_f64();
    if ctx.cfg.diagnostics {
        diag.merges
            .extend(merge_records(depth, &out, t1.leaf_count(), t2.leaf_count()));
    }
    Ok((out.tree, diag))
}

fn run(input: Input, cfg: &ReconstructionConfig, parallel: bool) -> Result<Reconstruction> {
    cfg.validate()?;
    let start = Instant::now();
    let (estimated, alignment) = match input {
        Input::Alignment(x) => (Some(similarity::estimate_similarity(x)?), Some(x)),
        Input::Similarity(_) => (None, None),
    };
    let similarity_secs = start.elapsed().as_secs_f64();
    let s = match (&estimated, input) {
        (Some(s), _) => s,
        (None, Input::Similarity(s)) => s,
        (None, Input::Alignment(_)) => unreachable!(),
    };
    let m = s.len();
    if m < 3 {
        return Err(RecoveryError::TooFewLeaves {
            needed: 3,
            found: m,
        });
    }
    let ctx = Context {
        s: s.matrix(),
        labels: s.labels(),
        index: trees::label_index(s.labels()),
        alignment,
        cfg,
        parallel,
    };
    let all: Vec<usize> = (0..m).collect();
    let (tree, mut diagnostics) = recurse(&ctx, &all, 0)?;
    diagnostics.similarity_secs = similarity_secs;
    diagnostics.clamp_events = s.clamp_events();
    Ok(Reconstruction { tree, diagnostics })
}

/// Reconstructs the tree serially.
pub fn stdr(input: Input, cfg: &ReconstructionConfig) -> Result<Reconstruction> {
    run(input, cfg, false)
}

/// Reconstructs the tree with the two recursive calls of each split running
/// concurrently on `cfg.parallelism` threads. The output equals that of [`stdr`].
pub fn stdr_parallel(input: Input, cfg: &ReconstructionConfig) -> Result<Reconstruction> {
    if cfg.parallelism <= 1 {
        return stdr(input, cfg);
    }
    cfg.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.parallelism)
        .build()
        .map_err(|e| RecoveryError::Config(e.to_string()))?;
    pool.install(|| run(input, cfg, true))
}
