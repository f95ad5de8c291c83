//! Reconstruction methods selectable from the command line.

use std::time::Instant;

use clap::ValueEnum;
use stdr_core::genmodel::Alignment;
use stdr_core::recovery::{
    self, Diagnostics, ExternalCommand, Input, PartitionMethod, ReconstructionConfig, Subroutine,
};
use stdr_core::similarity::{self, SimilarityMatrix};
use stdr_core::trees::UnrootedTree;

use crate::error::{CliError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Method {
    /// Neighbor joining on the whole input.
    #[value(name = "nj")]
    Nj,
    /// Spectral top-down recovery with neighbor joining below the threshold.
    #[value(name = "stdr+nj", alias = "stdr")]
    StdrNj,
    /// Spectral top-down recovery with the external command below the threshold.
    #[value(name = "stdr+external")]
    StdrExternal,
    /// The external command on the whole alignment.
    #[value(name = "external")]
    External,
    /// Top-down recovery with the distance-based partition baseline.
    #[value(name = "distance+nj")]
    DistanceNj,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Nj => "nj",
            Method::StdrNj => "stdr+nj",
            Method::StdrExternal => "stdr+external",
            Method::External => "external",
            Method::DistanceNj => "distance+nj",
        }
    }

    pub fn is_top_down(self) -> bool {
        matches!(
            self,
            Method::StdrNj | Method::StdrExternal | Method::DistanceNj
        )
    }

    pub fn needs_command(self) -> bool {
        matches!(self, Method::StdrExternal | Method::External)
    }
}

#[derive(Clone, Debug)]
pub struct MethodOptions {
    pub tau: usize,
    pub threads: usize,
    pub partition: PartitionMethod,
    pub command: Option<ExternalCommand>,
    pub seed: u64,
}

pub struct MethodRun {
    pub tree: UnrootedTree,
    pub diagnostics: Option<Diagnostics>,
    pub seconds: f64,
}

fn command(opts: &MethodOptions) -> Result<ExternalCommand> {
    opts.command
        .clone()
        .ok_or_else(|| CliError::Usage("this method needs --subroutine-cmd".into()))
}

fn need_alignment<'a>(input: &Input<'a>) -> Result<&'a Alignment> {
    match input {
        Input::Alignment(x) => Ok(x),
        Input::Similarity(_) => Err(CliError::Usage(
            "the external subroutine needs an alignment input".into(),
        )),
    }
}

pub fn run(method: Method, input: Input, opts: &MethodOptions) -> Result<MethodRun> {
    let start = Instant::now();
    let (tree, diagnostics) = match method {
        Method::Nj => {
            let owned;
            let s: &SimilarityMatrix = match input {
                Input::Alignment(x) => {
                    owned = similarity::estimate_similarity(x)?;
                    &owned
                }
                Input::Similarity(s) => s,
            };
            let d = recovery::similarity_to_distance(s);
            (recovery::neighbor_joining(&d)?, None)
        }
        Method::External => {
            let x = need_alignment(&input)?;
            (recovery::external_subroutine(x, &command(opts)?)?, None)
        }
        Method::StdrNj | Method::StdrExternal | Method::DistanceNj => {
            let subroutine = if method == Method::StdrExternal {
                need_alignment(&input)?;
                Subroutine::External(command(opts)?)
            } else {
                Subroutine::NeighborJoining
            };
            let partition = if method == Method::DistanceNj {
                PartitionMethod::Distance
            } else {
                opts.partition
            };
            let cfg = ReconstructionConfig {
                tau: opts.tau,
                subroutine,
                partition,
                seed: opts.seed,
                parallelism: opts.threads,
                diagnostics: true,
            };
            let out = recovery::stdr_parallel(input, &cfg)?;
            (out.tree, Some(out.diagnostics))
        }
    };
    Ok(MethodRun {
        tree,
        diagnostics,
        seconds: start.elapsed().as_secs_f64(),
    })
}
