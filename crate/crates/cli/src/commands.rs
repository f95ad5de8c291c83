//! `simulate`, `reconstruct` and `evaluate`.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use stdr_core::genmodel::{self, Alignment};
use stdr_core::recovery::Input;
use stdr_core::similarity::SimilarityMatrix;
use stdr_core::trees::{self, UnrootedTree};

use crate::error::{CliError, Result};
use crate::methods::{self, Method, MethodOptions};
use crate::models::{self, ModelSpec};

pub fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(CliError::io(format!("creating {}", dir.display())))
}

pub fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(CliError::io(format!("writing {}", path.display())))
}

pub fn create_csv(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(CliError::io(format!("writing {}", path.display())))
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(CliError::io(format!("reading {}", path.display())))
}

pub fn write_key_values(path: &Path, rows: &[(&str, String)]) -> Result<()> {
    let mut w = csv::Writer::from_writer(create_csv(path)?);
    w.write_record(["key", "value"])?;
    for (k, v) in rows {
        w.write_record([*k, v.as_str()])?;
    }
    w.flush()
        .map_err(CliError::io(format!("writing {}", path.display())))
}

pub fn simulate(spec: &ModelSpec, n: usize, seed: u64, out: &Path) -> Result<()> {
    if n == 0 {
        return Err(CliError::Usage("--n must be at least 1".into()));
    }
    let (tree_seed, seq_seed) = models::replicate_seeds(seed, spec.m, n, 0);
    let model = spec.build(tree_seed)?;
    let x = genmodel::evolve_sequences(&model, n, seq_seed)?;
    ensure_dir(out)?;
    let tree = model
        .unrooted_tree()
        .map_err(|e| CliError::Numerical(e.to_string()))?;
    write_file(
        &out.join("tree.newick"),
        &format!("{}\n", trees::write_newick(&tree)),
    )?;
    write_file(&out.join("alignment.fasta"), &x.to_fasta())?;
    let mut meta = spec.describe();
    meta.extend([
        ("n", n.to_string()),
        ("seed", seed.to_string()),
        ("tree_seed", tree_seed.to_string()),
        ("sequence_seed", seq_seed.to_string()),
        ("alphabet", x.alphabet().to_string()),
    ]);
    write_key_values(&out.join("meta.csv"), &meta)
}

pub enum LoadedInput {
    Alignment(Alignment),
    Similarity(SimilarityMatrix),
}

impl LoadedInput {
    pub fn as_input(&self) -> Input<'_> {
        match self {
            LoadedInput::Alignment(x) => Input::Alignment(x),
            LoadedInput::Similarity(s) => Input::Similarity(s),
        }
    }

    fn describe(&self) -> (usize, Option<usize>) {
        match self {
            LoadedInput::Alignment(x) => (x.rows(), Some(x.columns())),
            LoadedInput::Similarity(s) => (s.len(), None),
        }
    }
}

pub fn load_input(
    alignment: Option<&Path>,
    similarity: Option<&Path>,
    alphabet: usize,
) -> Result<LoadedInput> {
    match (alignment, similarity) {
        (Some(p), None) => Alignment::read_fasta(open(p)?, alphabet)
            .map(LoadedInput::Alignment)
            .map_err(|e| CliError::Input(format!("{}: {e}", p.display()))),
        (None, Some(p)) => SimilarityMatrix::read_csv(open(p)?)
            .map(LoadedInput::Similarity)
            .map_err(|e| CliError::Input(format!("{}: {e}", p.display()))),
        _ => Err(CliError::Usage(
            "give exactly one of --input and --similarity".into(),
        )),
    }
}

pub fn reconstruct(
    input: &LoadedInput,
    method: Method,
    opts: &MethodOptions,
    out: Option<&Path>,
) -> Result<UnrootedTree> {
    let run = methods::run(method, input.as_input(), opts)?;
    let newick = trees::write_newick(&run.tree);
    let Some(dir) = out else {
        println!("{newick}");
        return Ok(run.tree);
    };
    ensure_dir(dir)?;
    write_file(&dir.join("tree.newick"), &format!("{newick}\n"))?;
    let (m, n) = input.describe();
    let d = run.diagnostics.unwrap_or_default();
    let mut rows = vec![
        ("method", method.name().to_string()),
        ("m", m.to_string()),
        ("n", n.map(|n| n.to_string()).unwrap_or_default()),
        ("tau", opts.tau.to_string()),
        ("partition", format!("{:?}", opts.partition).to_lowercase()),
        ("threads", opts.threads.to_string()),
        ("seed", opts.seed.to_string()),
        ("total_secs", run.seconds.to_string()),
    ];
    if method.is_top_down() {
        rows.extend([
            ("similarity_secs", d.similarity_secs.to_string()),
            ("partition_secs", d.partition_secs.to_string()),
            ("merge_secs", d.merge_secs.to_string()),
            ("subroutine_secs", d.subroutine_secs.to_string()),
            ("subroutine_calls", d.subroutine_calls.to_string()),
            ("clamp_events", d.clamp_events.to_string()),
        ]);
        let io = |p: &Path| CliError::io(format!("writing {}", p.display()));
        let path = dir.join("partitions.csv");
        d.write_partitions_csv(create_csv(&path)?)
            .map_err(io(&path))?;
        let path = dir.join("merges.csv");
        d.write_merges_csv(create_csv(&path)?).map_err(io(&path))?;
    }
    write_key_values(&dir.join("run.csv"), &rows)?;
    Ok(run.tree)
}

pub fn read_tree(path: &Path) -> Result<UnrootedTree> {
    let text =
        fs::read_to_string(path).map_err(CliError::io(format!("reading {}", path.display())))?;
    trees::parse_newick_topology(&text)
        .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

pub fn evaluate(est: &Path, reference: &Path) -> Result<(usize, f64)> {
    let a = read_tree(est)?;
    let b = read_tree(reference)?;
    let rf = trees::rf_distance(&a, &b)?;
    let nrf = trees::normalized_rf(&a, &b)?;
    let mut out = std::io::stdout().lock();
    writeln!(out, "rf,normalized_rf\n{rf},{nrf}").map_err(CliError::io("stdout"))?;
    Ok((rf, nrf))
}
