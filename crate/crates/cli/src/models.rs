//! Model specifications shared by `simulate` and `bench`.

use clap::ValueEnum;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use stdr_core::genmodel::{self, GenerativeTreeModel, RootedPhylogeny, Substitution};

use crate::error::{CliError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ModelKind {
    Symmetric,
    Caterpillar,
    Coalescent,
    BirthDeath,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Symmetric => "symmetric",
            ModelKind::Caterpillar => "caterpillar",
            ModelKind::Coalescent => "coalescent",
            ModelKind::BirthDeath => "birth-death",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub m: usize,
    /// Edge similarity for the fixed shapes, and for random topologies when no
    /// rate is given.
    pub delta: f64,
    /// HKY transition/transversion ratio; Jukes-Cantor when absent.
    pub kappa: Option<f64>,
    /// Converts simulated branch lengths `t` into similarities `exp(-rate t)`.
    pub rate: Option<f64>,
    pub birth: f64,
    pub death: f64,
}

impl ModelSpec {
    pub fn substitution(&self) -> Substitution {
        match self.kappa {
            Some(kappa) => Substitution::Hky {
                kappa,
                freqs: [0.25; 4],
            },
            None => Substitution::jc4(),
        }
    }

    /// Key/value pairs describing the model, for metadata and CSV rows.
    pub fn describe(&self) -> Vec<(&'static str, String)> {
        let opt = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
        vec![
            ("model", self.kind.name().to_string()),
            ("m", self.m.to_string()),
            ("delta", self.delta.to_string()),
            ("kappa", opt(self.kappa)),
            ("rate", opt(self.rate)),
            ("birth", self.birth.to_string()),
            ("death", self.death.to_string()),
        ]
    }

    pub fn build(&self, seed: u64) -> Result<GenerativeTreeModel> {
        let subst = self.substitution();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        match self.kind {
            ModelKind::Symmetric => {
                if self.m < 4 || !self.m.is_power_of_two() {
                    return Err(CliError::Usage(format!(
                        "the symmetric model needs m a power of two >= 4, got {}",
                        self.m
                    )));
                }
                let depth = self.m.trailing_zeros() as usize;
                Ok(genmodel::make_binary_symmetric(depth, self.delta, &subst)?)
            }
            ModelKind::Caterpillar => Ok(genmodel::make_caterpillar(self.m, self.delta, &subst)?),
            ModelKind::Coalescent => {
                let phy = genmodel::sample_coalescent(self.m, &mut rng)?;
                self.realise(&phy, &subst)
            }
            ModelKind::BirthDeath => {
                let phy = genmodel::sample_birth_death(self.m, self.birth, self.death, &mut rng)?;
                self.realise(&phy, &subst)
            }
        }
    }

    fn realise(&self, phy: &RootedPhylogeny, subst: &Substitution) -> Result<GenerativeTreeModel> {
        Ok(match self.rate {
            Some(rate) => phy.to_model(rate, subst)?,
            None => GenerativeTreeModel::from_similarities(
                phy.topology.clone(),
                &vec![self.delta; phy.lengths.len()],
                subst,
            )?,
        })
    }
}

/// Mixes a base seed with cell coordinates (SplitMix64 finaliser).
pub fn derive_seed(seed: u64, parts: &[u64]) -> u64 {
    let mut z = seed;
    for &p in parts {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15).wrapping_add(p);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^= z >> 31;
    }
    z
}

/// Seeds for the topology and the sequences of one replicate.
pub fn replicate_seeds(seed: u64, m: usize, n: usize, rep: usize) -> (u64, u64) {
    let base = derive_seed(seed, &[m as u64, n as u64, rep as u64]);
    // The topology must not depend on n, so every n sees the same tree.
    let tree = derive_seed(seed, &[m as u64, rep as u64]);
    (tree, derive_seed(base, &[1]))
}
