//! Composition of the alignment stages: seeding (S), adversarial (A) and
//! refinement (R), run in that order over any subset.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::adversarial::{train_adversarial, AdvConfig, AdversarialOutcome};
use crate::embedding::EmbeddingSpace;
use crate::error::{Error, Result};
use crate::linalg::random_orthogonal;
use crate::refinement::{refine, RefineConfig, RefineOutcome};
use crate::seeding::{seed_mapping, MappingMatrix, SeedDictionary, Stage};

/// An order-preserving subset of `{S, A, R}`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Stages {
    pub seed: bool,
    pub adversarial: bool,
    pub refine: bool,
}

impl Stages {
    pub const S: Stages = Stages::new(true, false, false);
    pub const SA: Stages = Stages::new(true, true, false);
    pub const SR: Stages = Stages::new(true, false, true);
    pub const SAR: Stages = Stages::new(true, true, true);
    pub const A: Stages = Stages::new(false, true, false);
    pub const AR: Stages = Stages::new(false, true, true);
    pub const R: Stages = Stages::new(false, false, true);

    /// The ablation grid, in reporting order.
    pub const ALL: [Stages; 7] = [
        Stages::S,
        Stages::SA,
        Stages::SR,
        Stages::SAR,
        Stages::A,
        Stages::AR,
        Stages::R,
    ];

    pub const fn new(seed: bool, adversarial: bool, refine: bool) -> Self {
        Stages {
            seed,
            adversarial,
            refine,
        }
    }

    pub fn is_empty(&self) -> bool {
        !(self.seed || self.adversarial || self.refine)
    }
}

impl fmt::Display for Stages {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<&str> = [(self.seed, "S"), (self.adversarial, "A"), (self.refine, "R")]
            .into_iter()
            .filter_map(|(on, n)| on.then_some(n))
            .collect();
        write!(f, "{}", names.join("+"))
    }
}

impl FromStr for Stages {
    type Err = Error;

    /// Accepts `s,a,r`, `S+A+R` or `sar` style lists; stages must appear in
    /// pipeline order and at most once.
    fn from_str(s: &str) -> Result<Self> {
        let letters: Vec<char> = s
            .chars()
            .filter(|c| !matches!(c, ',' | '+' | ' '))
            .map(|c| c.to_ascii_lowercase())
            .collect();
        let mut stages = Stages::new(false, false, false);
        let mut last = 0;
        for c in letters {
            let pos = match c {
                's' => 1,
                'a' => 2,
                'r' => 3,
                _ => return Err(Error::Config(format!("unknown stage `{c}` in `{s}`"))),
            };
            if pos <= last {
                return Err(Error::Config(format!(
                    "stages in `{s}` must be distinct and ordered s, a, r"
                )));
            }
            last = pos;
            match pos {
                1 => stages.seed = true,
                2 => stages.adversarial = true,
                _ => stages.refine = true,
            }
        }
        if stages.is_empty() {
            return Err(Error::Config("no stages given".into()));
        }
        Ok(stages)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PipelineConfig {
    pub stages: Stages,
    pub adversarial: AdvConfig,
    pub refine: RefineConfig,
    /// Seeds the random orthogonal start used when seeding is skipped.
    pub rng_seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            stages: Stages::SAR,
            adversarial: AdvConfig::default(),
            refine: RefineConfig::default(),
            rng_seed: 1,
        }
    }
}

#[derive(Clone, Debug)]
pub struct PipelineOutcome {
    pub mapping: MappingMatrix,
    pub adversarial: Option<AdversarialOutcome>,
    pub refinement: Option<RefineOutcome>,
}

/// Starting mapping: Procrustes over `seeds` when seeding is enabled,
/// otherwise a random orthogonal matrix.
pub fn initial_mapping(
    stages: Stages,
    seeds: Option<&SeedDictionary>,
    src: &EmbeddingSpace,
    tgt: &EmbeddingSpace,
    rng_seed: u64,
) -> Result<MappingMatrix> {
    if src.dim() != tgt.dim() {
        return Err(Error::DimensionMismatch {
            expected: src.dim(),
            actual: tgt.dim(),
        });
    }
    if stages.seed {
        let seeds = seeds.ok_or_else(|| Error::InvalidInput("seeding stage needs a seed dictionary".into()))?;
        seed_mapping(seeds, src, tgt)
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
        MappingMatrix::new(random_orthogonal(src.dim(), &mut rng), Stage::Initial)
    }
}

pub fn run_pipeline(
    src: &EmbeddingSpace,
    tgt: &EmbeddingSpace,
    seeds: Option<&SeedDictionary>,
    cfg: &PipelineConfig,
) -> Result<PipelineOutcome> {
    if cfg.stages.is_empty() {
        return Err(Error::Config("no stages given".into()));
    }
    let mut w = initial_mapping(cfg.stages, seeds, src, tgt, cfg.rng_seed)?;
    let mut adversarial = None;
    let mut refinement = None;
    if cfg.stages.adversarial {
        let out = train_adversarial(&w, src, tgt, &cfg.adversarial)?;
        w = out.mapping.clone();
        adversarial = Some(out);
    }
    if cfg.stages.refine {
        let out = refine(&w, src, tgt, &cfg.refine)?;
        w = out.mapping.clone();
        refinement = Some(out);
    }
    Ok(PipelineOutcome {
        mapping: w,
        adversarial,
        refinement,
    })
}
