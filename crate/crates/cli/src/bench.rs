//! Grid benchmark: every (m, n, replicate) dataset is simulated once and
//! reconstructed by every method and threshold.

use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;
use stdr_core::genmodel;
use stdr_core::partition;
use stdr_core::recovery::Input;
use stdr_core::similarity;
use stdr_core::trees::{self, LeafSet, UnrootedTree};

use crate::commands::{create_csv, ensure_dir};
use crate::error::{CliError, Result};
use crate::methods::{self, Method, MethodOptions};
use crate::models::{self, ModelSpec};

#[derive(Clone, Debug)]
pub struct BenchConfig {
    pub model: ModelSpec,
    pub ms: Vec<usize>,
    pub ns: Vec<usize>,
    pub taus: Vec<usize>,
    pub methods: Vec<Method>,
    pub reps: usize,
    pub seed: u64,
    pub threads: usize,
    pub options: MethodOptions,
}

impl BenchConfig {
    pub fn validate(&self) -> Result<()> {
        let usage = |msg: &str| Err(CliError::Usage(msg.into()));
        if self.methods.is_empty() {
            return usage("the method list is empty");
        }
        if self.ms.is_empty() || self.ns.is_empty() || self.taus.is_empty() {
            return usage("--m, --n and --tau need at least one value");
        }
        if self.reps == 0 {
            return usage("--reps must be at least 1");
        }
        if self.ns.contains(&0) {
            return usage("--n values must be at least 1");
        }
        if self.threads == 0 {
            return usage("--threads must be at least 1");
        }
        if self.methods.iter().any(|m| m.needs_command()) && self.options.command.is_none() {
            return usage("external methods need --subroutine-cmd");
        }
        Ok(())
    }
}

/// One reconstruction of one dataset.
#[derive(Clone, Debug, PartialEq)]
pub struct BenchRow {
    pub method: Method,
    pub m: usize,
    pub n: usize,
    /// `None` for methods without a threshold.
    pub tau: Option<usize>,
    pub rep: usize,
    pub tree_seed: u64,
    pub sequence_seed: u64,
    pub rf: Option<usize>,
    pub normalized_rf: Option<f64>,
    pub seconds: Option<f64>,
    pub driver_secs: Option<f64>,
    pub subroutine_secs: Option<f64>,
    /// Whether the spectral split of the estimated similarities is a pair of clans.
    pub top_split_clan: Option<bool>,
    pub error: Option<String>,
}

/// Mean and sample standard deviation over the successful rows of one cell.
#[derive(Clone, Debug, PartialEq)]
pub struct SummaryRow {
    pub method: Method,
    pub m: usize,
    pub n: usize,
    pub tau: Option<usize>,
    pub runs: usize,
    pub failures: usize,
    pub rf_mean: f64,
    pub rf_sd: f64,
    pub secs_mean: f64,
    pub secs_sd: f64,
    pub clan_rate: Option<f64>,
}

pub fn mean_sd(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() == 1 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn top_split_is_clan(truth: &UnrootedTree, x: &genmodel::Alignment) -> Option<bool> {
    let s = similarity::estimate_similarity(x).ok()?;
    let p = partition::spectral_partition(s.matrix()).ok()?;
    let (a, b): (LeafSet, LeafSet) = p.leaf_sets(s.labels());
    Some(trees::is_clan(truth, &a).ok()? && trees::is_clan(truth, &b).ok()?)
}

fn run_dataset(cfg: &BenchConfig, m: usize, n: usize, rep: usize) -> Vec<BenchRow> {
    let (tree_seed, sequence_seed) = models::replicate_seeds(cfg.seed, m, n, rep);
    let mut cells = Vec::new();
    for &method in &cfg.methods {
        if method.is_top_down() {
            cells.extend(cfg.taus.iter().map(|&t| (method, Some(t))));
        } else {
            cells.push((method, None));
        }
    }
    let blank = |method, tau, error: Option<String>| BenchRow {
        method,
        m,
        n,
        tau,
        rep,
        tree_seed,
        sequence_seed,
        rf: None,
        normalized_rf: None,
        seconds: None,
        driver_secs: None,
        subroutine_secs: None,
        top_split_clan: None,
        error,
    };
    let spec = ModelSpec {
        m,
        ..cfg.model.clone()
    };
    let data = spec.build(tree_seed).and_then(|model| {
        let truth = model
            .unrooted_tree()
            .map_err(|e| CliError::Numerical(e.to_string()))?;
        let x = genmodel::evolve_sequences(&model, n, sequence_seed)?;
        Ok((truth, x))
    });
    let (truth, x) = match data {
        Ok(d) => d,
        Err(e) => {
            let msg = e.to_string();
            return cells
                .into_iter()
                .map(|(me, t)| blank(me, t, Some(msg.clone())))
                .collect();
        }
    };
    let clan = top_split_is_clan(&truth, &x);
    cells
        .into_iter()
        .map(|(method, tau)| {
            let opts = MethodOptions {
                tau: tau.unwrap_or(cfg.options.tau),
                threads: 1,
                ..cfg.options.clone()
            };
            let result = methods::run(method, Input::Alignment(&x), &opts).and_then(|run| {
                let rf = trees::rf_distance(&run.tree, &truth)?;
                let nrf = trees::normalized_rf(&run.tree, &truth)?;
                Ok((run, rf, nrf))
            });
            let mut row = blank(method, tau, None);
            row.top_split_clan = clan;
            match result {
                Ok((run, rf, nrf)) => {
                    row.rf = Some(rf);
                    row.normalized_rf = Some(nrf);
                    row.seconds = Some(run.seconds);
                    row.driver_secs = run.diagnostics.as_ref().map(|d| d.driver_secs());
                    row.subroutine_secs = run.diagnostics.as_ref().map(|d| d.subroutine_secs);
                }
                Err(e) => row.error = Some(e.to_string()),
            }
            row
        })
        .collect()
}

/// Runs the whole grid. Failed reconstructions are reported in their rows and do
/// not stop the run.
pub fn run(cfg: &BenchConfig) -> Result<Vec<BenchRow>> {
    cfg.validate()?;
    let mut grid = Vec::new();
    for &m in &cfg.ms {
        for &n in &cfg.ns {
            for rep in 0..cfg.reps {
                grid.push((m, n, rep));
            }
        }
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads)
        .build()
        .map_err(|e| CliError::Usage(format!("thread pool: {e}")))?;
    let rows: Vec<Vec<BenchRow>> = pool.install(|| {
        grid.par_iter()
            .map(|&(m, n, rep)| run_dataset(cfg, m, n, rep))
            .collect()
    });
    Ok(rows.into_iter().flatten().collect())
}

pub fn summarize(rows: &[BenchRow]) -> Vec<SummaryRow> {
    let mut cells: BTreeMap<(usize, usize, String, Option<usize>), Vec<&BenchRow>> =
        BTreeMap::new();
    for r in rows {
        cells
            .entry((r.m, r.n, r.method.name().to_string(), r.tau))
            .or_default()
            .push(r);
    }
    cells
        .into_values()
        .map(|group| {
            let ok: Vec<&&BenchRow> = group.iter().filter(|r| r.error.is_none()).collect();
            let rf: Vec<f64> = ok.iter().filter_map(|r| r.normalized_rf).collect();
            let secs: Vec<f64> = ok.iter().filter_map(|r| r.seconds).collect();
            let clans: Vec<bool> = group.iter().filter_map(|r| r.top_split_clan).collect();
            let (rf_mean, rf_sd) = mean_sd(&rf);
            let (secs_mean, secs_sd) = mean_sd(&secs);
            let first = group[0];
            SummaryRow {
                method: first.method,
                m: first.m,
                n: first.n,
                tau: first.tau,
                runs: ok.len(),
                failures: group.len() - ok.len(),
                rf_mean,
                rf_sd,
                secs_mean,
                secs_sd,
                clan_rate: (!clans.is_empty())
                    .then(|| clans.iter().filter(|&&c| c).count() as f64 / clans.len() as f64),
            }
        })
        .collect()
}

fn opt<T: ToString>(x: Option<T>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

fn model_fields(cfg: &BenchConfig) -> Vec<String> {
    cfg.model
        .describe()
        .into_iter()
        .filter(|(k, _)| *k != "m")
        .map(|(_, v)| v)
        .collect()
}

fn model_header(cfg: &BenchConfig) -> Vec<&'static str> {
    cfg.model
        .describe()
        .into_iter()
        .map(|(k, _)| k)
        .filter(|k| *k != "m")
        .collect()
}

pub fn write_rows<W: std::io::Write>(cfg: &BenchConfig, rows: &[BenchRow], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let mut header = vec![
        "method",
        "m",
        "n",
        "tau",
        "rep",
        "seed",
        "tree_seed",
        "sequence_seed",
    ];
    header.extend(model_header(cfg));
    header.extend([
        "rf",
        "normalized_rf",
        "seconds",
        "driver_secs",
        "subroutine_secs",
        "top_split_clan",
        "status",
    ]);
    out.write_record(&header)?;
    for r in rows {
        let mut rec = vec![
            r.method.name().to_string(),
            r.m.to_string(),
            r.n.to_string(),
            opt(r.tau),
            r.rep.to_string(),
            cfg.seed.to_string(),
            r.tree_seed.to_string(),
            r.sequence_seed.to_string(),
        ];
        rec.extend(model_fields(cfg));
        rec.extend([
            opt(r.rf),
            opt(r.normalized_rf),
            opt(r.seconds),
            opt(r.driver_secs),
            opt(r.subroutine_secs),
            opt(r.top_split_clan),
            r.error
                .clone()
                .map(|e| format!("error: {e}"))
                .unwrap_or_else(|| "ok".into()),
        ]);
        out.write_record(&rec)?;
    }
    out.flush().map_err(CliError::io("bench rows"))
}

pub fn write_summary<W: std::io::Write>(
    cfg: &BenchConfig,
    rows: &[SummaryRow],
    w: W,
) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let mut header = vec!["method", "m", "n", "tau", "reps", "seed"];
    header.extend(model_header(cfg));
    header.extend([
        "runs",
        "failures",
        "normalized_rf_mean",
        "normalized_rf_sd",
        "seconds_mean",
        "seconds_sd",
        "top_split_clan_rate",
    ]);
    out.write_record(&header)?;
    for r in rows {
        let mut rec = vec![
            r.method.name().to_string(),
            r.m.to_string(),
            r.n.to_string(),
            opt(r.tau),
            cfg.reps.to_string(),
            cfg.seed.to_string(),
        ];
        rec.extend(model_fields(cfg));
        rec.extend([
            r.runs.to_string(),
            r.failures.to_string(),
            r.rf_mean.to_string(),
            r.rf_sd.to_string(),
            r.secs_mean.to_string(),
            r.secs_sd.to_string(),
            opt(r.clan_rate),
        ]);
        out.write_record(&rec)?;
    }
    out.flush().map_err(CliError::io("bench summary"))
}

/// Runs the grid and writes `runs.csv` and `summary.csv` into `out`, or the
/// summary to stdout when no directory is given.
pub fn bench(cfg: &BenchConfig, out: Option<&Path>) -> Result<Vec<SummaryRow>> {
    let rows = run(cfg)?;
    let summary = summarize(&rows);
    match out {
        Some(dir) => {
            ensure_dir(dir)?;
            write_rows(cfg, &rows, create_csv(&dir.join("runs.csv"))?)?;
            write_summary(cfg, &summary, create_csv(&dir.join("summary.csv"))?)?;
        }
        None => write_summary(cfg, &summary, std::io::stdout().lock())?,
    }
    Ok(summary)
}
