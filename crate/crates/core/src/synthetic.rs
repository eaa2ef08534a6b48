//! Synthetic paired embedding spaces with a known alignment.
//!
//! Source vectors are drawn from a Gaussian mixture and unit-normalized;
//! each aligned target vector is `R·x + noise` for a hidden random rotation
//! `R`. Token frequencies follow a Zipf law so that frequency-based
//! heuristics have something to work with. Decoy tokens with no
//! counterpart can be added to either side.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::corpus::Vocabulary;
use crate::embedding::EmbeddingSpace;
use crate::error::Result;
use crate::eval::GroundTruth;
use crate::linalg::random_orthogonal;
use crate::seeding::SeedDictionary;

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticConfig {
    pub dim: usize,
    /// Number of aligned token pairs.
    pub vocab: usize,
    /// Per-component standard deviation of the target noise.
    pub noise: f64,
    pub clusters: usize,
    /// Norm of the cluster center relative to the within-cluster spread.
    pub cluster_strength: f64,
    /// Extra unaligned tokens per side, as a fraction of `vocab`.
    pub decoy_fraction: f64,
    /// Noise multiplier reached at the rarest token; 1 means uniform noise.
    pub rare_noise_multiplier: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            dim: 50,
            vocab: 2000,
            noise: 0.05,
            clusters: 10,
            cluster_strength: 1.0,
            decoy_fraction: 0.0,
            rare_noise_multiplier: 1.0,
            seed: 0,
        }
    }
}

/// Generated spaces plus the hidden ground truth.
#[derive(Clone, Debug)]
pub struct SyntheticTask {
    pub src: EmbeddingSpace,
    pub tgt: EmbeddingSpace,
    pub rotation: DMatrix<f64>,
    /// `(source token, target token)` for every aligned pair, in source
    /// frequency order.
    pub aligned: Vec<(String, String)>,
}

const GENERATOR_STREAM: u64 = 0x5eed;

fn zipf_count(rank: usize) -> u64 {
    (1_000_000.0 / (rank as f64 + 1.0)).round() as u64 + 1
}

fn build_space(tokens: Vec<String>, counts: Vec<u64>, rows: Vec<DVector<f64>>) -> Result<EmbeddingSpace> {
    let mut order: Vec<usize> = (0..tokens.len()).collect();
    order.sort_by(|&a, &b| counts[b].cmp(&counts[a]).then_with(|| tokens[a].cmp(&tokens[b])));
    let dim = rows[0].len();
    let vocab = Vocabulary::from_ordered(
        order.iter().map(|&i| tokens[i].clone()).collect(),
        order.iter().map(|&i| counts[i]).collect(),
    )?;
    let mut m = DMatrix::zeros(order.len(), dim);
    for (r, &i) in order.iter().enumerate() {
        m.row_mut(r).copy_from(&rows[i].transpose());
    }
    EmbeddingSpace::new(vocab, m)
}

impl SyntheticTask {
    pub fn generate(cfg: &SyntheticConfig) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        // a separate stream, so a pipeline seeded with the same number
        // cannot reproduce the hidden rotation
        rng.set_stream(GENERATOR_STREAM);
        let d = cfg.dim;
        let rotation = random_orthogonal(d, &mut rng);
        let centers: Vec<DVector<f64>> = (0..cfg.clusters.max(1))
            .map(|_| {
                let c = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
                c.normalize() * cfg.cluster_strength
            })
            .collect();
        let point = |rng: &mut ChaCha8Rng| {
            let c = &centers[rng.random_range(0..centers.len())];
            let g = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal)) / (d as f64).sqrt();
            (c + g).normalize()
        };

        let n = cfg.vocab;
        let n_decoy = (cfg.decoy_fraction * n as f64).round() as usize;
        let base = Normal::new(0.0, 1.0).expect("valid normal");

        let mut src_tokens = Vec::new();
        let mut src_counts = Vec::new();
        let mut src_rows = Vec::new();
        let mut tgt_tokens = Vec::new();
        let mut tgt_counts = Vec::new();
        let mut tgt_rows = Vec::new();
        let mut aligned = Vec::with_capacity(n);

        // target ids are shuffled so index equality carries no signal
        let mut tgt_ids: Vec<usize> = (0..n + n_decoy).collect();
        tgt_ids.shuffle(&mut rng);

        for (i, &tgt_id) in tgt_ids.iter().take(n).enumerate() {
            let x = point(&mut rng);
            let scale = 1.0 + (cfg.rare_noise_multiplier - 1.0) * i as f64 / n.max(1) as f64;
            let sigma = cfg.noise * scale;
            let y = &rotation * &x + DVector::from_fn(d, |_, _| sigma * base.sample(&mut rng));
            let count = zipf_count(i);
            // target counts jitter by up to ±10%
            let jitter = 1.0 + 0.1 * (rng.random::<f64>() * 2.0 - 1.0);
            let s_tok = format!("src.T{i}.m");
            let t_tok = format!("tgt.T{tgt_id}.m");
            src_tokens.push(s_tok.clone());
            src_counts.push(count);
            src_rows.push(x);
            tgt_tokens.push(t_tok.clone());
            tgt_counts.push(((count as f64) * jitter).round().max(1.0) as u64);
            tgt_rows.push(y);
            aligned.push((s_tok, t_tok));
        }
        for j in 0..n_decoy {
            let rank = rng.random_range(0..n);
            src_tokens.push(format!("src.Decoy{j}.m"));
            src_counts.push(zipf_count(rank));
            src_rows.push(point(&mut rng));
            let rank = rng.random_range(0..n);
            tgt_tokens.push(format!("tgt.T{}.m", tgt_ids[n + j]));
            tgt_counts.push(zipf_count(rank));
            tgt_rows.push(point(&mut rng));
        }

        Ok(SyntheticTask {
            src: build_space(src_tokens, src_counts, src_rows)?,
            tgt: build_space(tgt_tokens, tgt_counts, tgt_rows)?,
            rotation,
            aligned,
        })
    }

    /// Random disjoint seed dictionary and ground truth drawn from the
    /// aligned pairs.
    pub fn split(&self, n_seeds: usize, n_truth: usize, seed: u64) -> (SeedDictionary, GroundTruth) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut pairs = self.aligned.clone();
        pairs.shuffle(&mut rng);
        let seeds = pairs.iter().take(n_seeds).cloned().collect();
        let truth = GroundTruth::from_pairs(pairs.into_iter().skip(n_seeds).take(n_truth));
        (seeds, truth)
    }
}
