//! `stdr`: simulate latent tree models, reconstruct trees by spectral top-down
//! recovery, score them and run benchmark grids and theory checks.

mod bench;
mod commands;
mod error;
mod methods;
mod models;
mod validate;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};
use stdr_core::recovery::{ExternalCommand, PartitionMethod};

use crate::error::{CliError, Result};
use crate::methods::{Method, MethodOptions};
use crate::models::{ModelKind, ModelSpec};

#[derive(Parser)]
#[command(
    name = "stdr",
    version,
    about = "Spectral top-down recovery of latent trees"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a model and write tree.newick, alignment.fasta and meta.csv.
    Simulate(SimulateArgs),
    /// Reconstruct a tree from a FASTA alignment or a similarity CSV.
    Reconstruct(ReconstructArgs),
    /// Robinson-Foulds distance between two Newick trees.
    Evaluate(EvaluateArgs),
    /// Run a grid of simulations and reconstructions.
    Bench(BenchArgs),
    /// Check the population-level identities and bounds numerically.
    ValidateTheory(ValidateArgs),
}

#[derive(Args, Clone)]
struct ModelArgs {
    #[arg(long, value_enum, default_value = "coalescent")]
    model: ModelKind,
    /// Edge similarity of the fixed shapes; also of random topologies without --rate.
    #[arg(long, default_value_t = 0.9)]
    delta: f64,
    /// HKY transition/transversion ratio; Jukes-Cantor when omitted.
    #[arg(long)]
    kappa: Option<f64>,
    /// Turn simulated branch lengths t into similarities exp(-rate t).
    #[arg(long)]
    rate: Option<f64>,
    #[arg(long, default_value_t = 1.0)]
    birth: f64,
    #[arg(long, default_value_t = 0.0)]
    death: f64,
}

impl ModelArgs {
    fn spec(&self, m: usize) -> ModelSpec {
        ModelSpec {
            kind: self.model,
            m,
            delta: self.delta,
            kappa: self.kappa,
            rate: self.rate,
            birth: self.birth,
            death: self.death,
        }
    }
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long)]
    m: usize,
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum PartitionArg {
    Spectral,
    Sign,
    Gap,
    Mincut,
    Distance,
}

impl From<PartitionArg> for PartitionMethod {
    fn from(p: PartitionArg) -> Self {
        match p {
            PartitionArg::Spectral => PartitionMethod::Spectral,
            PartitionArg::Sign => PartitionMethod::Sign,
            PartitionArg::Gap => PartitionMethod::Gap,
            PartitionArg::Mincut => PartitionMethod::MinCut,
            PartitionArg::Distance => PartitionMethod::Distance,
        }
    }
}

#[derive(Args, Clone)]
struct SubroutineArgs {
    /// Shell command for the external subroutine; `{in}` and `{out}` are replaced
    /// by the FASTA and Newick paths, otherwise `--in` and `--out` are appended.
    #[arg(long)]
    subroutine_cmd: Option<String>,
    /// Seconds before the external command is killed.
    #[arg(long, default_value_t = 600)]
    timeout: u64,
    /// Keep the temporary files of external calls.
    #[arg(long)]
    keep_files: bool,
    #[arg(long, value_enum, default_value = "spectral")]
    partition: PartitionArg,
}

impl SubroutineArgs {
    fn options(&self, tau: usize, threads: usize, seed: u64) -> MethodOptions {
        MethodOptions {
            tau,
            threads,
            partition: self.partition.into(),
            command: self.subroutine_cmd.as_ref().map(|c| ExternalCommand {
                template: c.clone(),
                timeout: Duration::from_secs(self.timeout),
                keep_files: self.keep_files,
            }),
            seed,
        }
    }
}

#[derive(Args)]
struct ReconstructArgs {
    /// FASTA alignment.
    #[arg(long)]
    input: Option<PathBuf>,
    /// Similarity matrix CSV, used instead of an alignment.
    #[arg(long, conflicts_with = "input")]
    similarity: Option<PathBuf>,
    #[arg(long, default_value_t = 4)]
    alphabet: usize,
    #[arg(long, value_enum, default_value = "stdr+nj")]
    method: Method,
    #[arg(long, default_value_t = 32)]
    tau: usize,
    #[command(flatten)]
    sub: SubroutineArgs,
    #[arg(long, default_value_t = 1)]
    threads: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory; the tree is printed when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    est: PathBuf,
    #[arg(long = "ref")]
    reference: PathBuf,
}

#[derive(Args)]
struct BenchArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long, value_delimiter = ',', required = true)]
    m: Vec<usize>,
    #[arg(long, value_delimiter = ',', required = true)]
    n: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "32")]
    tau: Vec<usize>,
    #[arg(long, value_enum, value_delimiter = ',', required = true)]
    method: Vec<Method>,
    #[arg(long, default_value_t = 5)]
    reps: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Datasets reconstructed concurrently.
    #[arg(long, default_value_t = 1)]
    threads: usize,
    #[command(flatten)]
    sub: SubroutineArgs,
    /// Directory for runs.csv and summary.csv; the summary is printed when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ValidateArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 20)]
    trials: usize,
    /// Add this amount to one twin-tree weight (negative control).
    #[arg(long, default_value_t = 0.0)]
    perturb_twin: f64,
    /// Also write the table to this file.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate(a) => commands::simulate(&a.model.spec(a.m), a.n, a.seed, &a.out),
        Command::Reconstruct(a) => {
            let input =
                commands::load_input(a.input.as_deref(), a.similarity.as_deref(), a.alphabet)?;
            let opts = a.sub.options(a.tau, a.threads, a.seed);
            commands::reconstruct(&input, a.method, &opts, a.out.as_deref()).map(drop)
        }
        Command::Evaluate(a) => commands::evaluate(&a.est, &a.reference).map(drop),
        Command::Bench(a) => {
            let cfg = bench::BenchConfig {
                model: a.model.spec(a.m.first().copied().unwrap_or(0)),
                ms: a.m,
                ns: a.n,
                taus: a.tau.clone(),
                methods: a.method,
                reps: a.reps,
                seed: a.seed,
                threads: a.threads,
                options: a
                    .sub
                    .options(a.tau.first().copied().unwrap_or(32), 1, a.seed),
            };
            bench::bench(&cfg, a.out.as_deref()).map(drop)
        }
        Command::ValidateTheory(a) => {
            let cfg = validate::ValidateConfig {
                seed: a.seed,
                trials: a.trials,
                perturb_twin: a.perturb_twin,
            };
            let rows = validate::run(&cfg)?;
            validate::write_table(&rows, std::io::stdout().lock())?;
            if let Some(path) = &a.out {
                validate::write_table(&rows, commands::create_csv(path)?)?;
            }
            let failed: Vec<&str> = rows
                .iter()
                .filter(|r| !r.passed())
                .map(|r| r.check)
                .collect();
            if failed.is_empty() {
                Ok(())
            } else {
                Err(CliError::Numerical(format!(
                    "failed checks: {}",
                    failed.join(", ")
                )))
            }
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("stdr: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
