//! Spectral top-down recovery (STDR) of latent tree graphical models.
//!
//! The crate is organised bottom-up:
//!
//! * [`trees`]: unrooted binary trees, Newick I/O, bipartitions, Robinson-Foulds distance
//!   and the surgery used when merging subtrees.
//! * [`genmodel`]: Markov transition matrices (Jukes-Cantor, HKY), random topologies,
//!   sequence evolution and exact similarities.
//! * [`similarity`]: the determinant-based similarity estimator, graph Laplacians,
//!   Fiedler vectors and truncated SVD.
//! * [`partition`]: the spectral partition step together with brute-force and
//!   distance-based baselines.
//! * [`merging`]: placeholder-edge scoring and subtree joining.
//! * [`recovery`]: the recursive driver, neighbor joining and external subroutines.
//! * [`theory`]: Schur complements, twin trees, tree statistics and sample-size bounds.

pub mod genmodel;
pub mod linalg;
pub mod merging;
pub mod partition;
pub mod recovery;
pub mod similarity;
pub mod theory;
pub mod trees;
