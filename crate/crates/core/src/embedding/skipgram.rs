//! Skip-gram with negative sampling.
//!
//! Follows the reference word2vec trainer: frequent tokens are subsampled,
//! negatives are drawn from the unigram distribution raised to 0.75, the
//! effective window is drawn uniformly from `1..=window` per center token
//! and the learning rate decays linearly over training.

use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};

use nalgebra::DMatrix;
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::EmbeddingSpace;
use crate::corpus::{build_vocabulary, CodeSequence};
use crate::error::{Error, Result};

const UNIGRAM_POWER: f64 = 0.75;
const MIN_LR_FRACTION: f64 = 1e-4;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub negatives: usize,
    pub window: usize,
    pub subsample: f64,
    pub dim: usize,
    pub epochs: usize,
    pub min_count: u64,
    pub workers: usize,
    pub rng_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.025,
            negatives: 30,
            window: 10,
            subsample: 1e-4,
            dim: 300,
            epochs: 5,
            min_count: 1,
            workers: 1,
            rng_seed: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_owned()));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be > 0");
        }
        if self.negatives < 1 {
            return bad("negatives must be >= 1");
        }
        if self.window < 1 {
            return bad("window must be >= 1");
        }
        if !(self.subsample > 0.0 && self.subsample <= 1.0) {
            return bad("subsample must be in (0, 1]");
        }
        if self.dim < 1 {
            return bad("dim must be >= 1");
        }
        if self.epochs < 1 {
            return bad("epochs must be >= 1");
        }
        if self.min_count < 1 {
            return bad("min_count must be >= 1");
        }
        if self.workers < 1 {
            return bad("workers must be >= 1");
        }
        Ok(())
    }
}

/// Probability of keeping one occurrence of a token seen `count` times,
/// where `threshold` is `subsample * total_tokens`. Values >= 1 mean the
/// token is never discarded.
pub(crate) fn keep_probability(count: u64, threshold: f64) -> f64 {
    let f = count as f64;
    ((f / threshold).sqrt() + 1.0) * threshold / f
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Negative-sampling loss for one (center, context, negatives) triple:
/// `-ln σ(u·v⁺) - Σ ln σ(-u·v⁻)`.
pub fn sgns_loss(input: &[f64], positive: &[f64], negatives: &[&[f64]]) -> f64 {
    let pos = -sigmoid(dot(input, positive)).ln();
    let neg: f64 = negatives
        .iter()
        .map(|v| -sigmoid(-dot(input, v)).ln())
        .sum();
    pos + neg
}

/// Gradients of [`sgns_loss`] with respect to the input vector and every
/// output vector (positive first, then negatives in order).
#[derive(Clone, Debug)]
pub struct SgnsGradients {
    pub input: Vec<f64>,
    pub outputs: Vec<Vec<f64>>,
}

pub fn sgns_gradients(input: &[f64], positive: &[f64], negatives: &[&[f64]]) -> SgnsGradients {
    let dim = input.len();
    let mut g_in = vec![0.0; dim];
    let mut outputs = Vec::with_capacity(1 + negatives.len());
    let targets = std::iter::once((positive, 1.0)).chain(negatives.iter().map(|v| (*v, 0.0)));
    for (out, label) in targets {
        // d/ds of the logistic loss at s = u·v
        let coeff = sigmoid(dot(input, out)) - label;
        for (g, o) in g_in.iter_mut().zip(out) {
            *g += coeff * o;
        }
        outputs.push(input.iter().map(|u| coeff * u).collect());
    }
    SgnsGradients {
        input: g_in,
        outputs,
    }
}

/// Row-major weights shared between workers without locking. Each element
/// is an `f64` stored as bits; concurrent updates may be lost, which is
/// the usual asynchronous SGD trade-off.
struct SharedMatrix {
    data: Vec<AtomicU64>,
    dim: usize,
}

impl SharedMatrix {
    fn from_vec(v: Vec<f64>, dim: usize) -> Self {
        SharedMatrix {
            data: v.into_iter().map(|x| AtomicU64::new(x.to_bits())).collect(),
            dim,
        }
    }

    fn read_row(&self, row: usize, out: &mut [f64]) {
        let base = row * self.dim;
        for (j, o) in out.iter_mut().enumerate() {
            *o = f64::from_bits(self.data[base + j].load(Ordering::Relaxed));
        }
    }

    fn add_row(&self, row: usize, delta: &[f64]) {
        let base = row * self.dim;
        for (j, d) in delta.iter().enumerate() {
            let cell = &self.data[base + j];
            let v = f64::from_bits(cell.load(Ordering::Relaxed)) + d;
            cell.store(v.to_bits(), Ordering::Relaxed);
        }
    }

    fn into_vec(self) -> Vec<f64> {
        self.data
            .into_iter()
            .map(|a| f64::from_bits(a.into_inner()))
            .collect()
    }
}

struct Trainer<'a> {
    cfg: &'a TrainConfig,
    input: SharedMatrix,
    output: SharedMatrix,
    keep_prob: Vec<f64>,
    negatives: WeightedIndex<f64>,
    total_words: usize,
    processed: AtomicUsize,
}

impl Trainer<'_> {
    fn learning_rate(&self) -> f64 {
        let progress = self.processed.load(Ordering::Relaxed) as f64
            / (self.cfg.epochs * self.total_words + 1) as f64;
        self.cfg.learning_rate * (1.0 - progress).max(MIN_LR_FRACTION)
    }

    fn run_shard(&self, shard: &[Vec<usize>], seed: u64) {
        let dim = self.cfg.dim;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut center = vec![0.0; dim];
        let mut out_rows: Vec<Vec<f64>> = vec![vec![0.0; dim]; self.cfg.negatives + 1];
        let mut targets = Vec::with_capacity(self.cfg.negatives + 1);
        let mut kept = Vec::new();

        for _epoch in 0..self.cfg.epochs {
            for sentence in shard {
                self.processed.fetch_add(sentence.len(), Ordering::Relaxed);
                kept.clear();
                kept.extend(
                    sentence
                        .iter()
                        .copied()
                        .filter(|&w| self.keep_prob[w] >= 1.0 || rng.random::<f64>() < self.keep_prob[w]),
                );
                let lr = self.learning_rate();
                for pos in 0..kept.len() {
                    let reach = rng.random_range(1..=self.cfg.window);
                    let lo = pos.saturating_sub(reach);
                    let hi = (pos + reach).min(kept.len() - 1);
                    for ctx in lo..=hi {
                        if ctx == pos {
                            continue;
                        }
                        // context row is the input, center token is the positive target
                        let word = kept[pos];
                        targets.clear();
                        targets.push(word);
                        for _ in 0..self.cfg.negatives {
                            let neg = self.negatives.sample(&mut rng);
                            if neg != word {
                                targets.push(neg);
                            }
                        }
                        let in_row = kept[ctx];
                        self.input.read_row(in_row, &mut center);
                        for (slot, &t) in out_rows.iter_mut().zip(&targets) {
                            self.output.read_row(t, slot);
                        }
                        let negs: Vec<&[f64]> =
                            out_rows[1..targets.len()].iter().map(Vec::as_slice).collect();
                        let grads = sgns_gradients(&center, &out_rows[0], &negs);
                        for (t, g) in targets.iter().zip(&grads.outputs) {
                            let step: Vec<f64> = g.iter().map(|x| -lr * x).collect();
                            self.output.add_row(*t, &step);
                        }
                        let step: Vec<f64> = grads.input.iter().map(|x| -lr * x).collect();
                        self.input.add_row(in_row, &step);
                    }
                }
            }
        }
    }
}

/// Trains skip-gram embeddings over `corpus`.
///
/// With `workers == 1` the result is a pure function of the corpus and
/// configuration. More workers update shared weights asynchronously.
pub fn train_skipgram(corpus: &[CodeSequence], cfg: &TrainConfig) -> Result<EmbeddingSpace> {
    cfg.validate()?;
    let vocab = build_vocabulary(corpus, cfg.min_count)?;
    if vocab.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let sentences: Vec<Vec<usize>> = corpus
        .iter()
        .map(|s| s.tokens().iter().filter_map(|t| vocab.index(t)).collect())
        .filter(|s: &Vec<usize>| !s.is_empty())
        .collect();
    if sentences.iter().all(|s| s.len() < 2) {
        return Err(Error::InvalidInput(
            "corpus has no context pairs (every sequence has fewer than two tokens)".into(),
        ));
    }

    let total_words: usize = sentences.iter().map(Vec::len).sum();
    // keep-probability reaches 1 once count <= subsample * total
    let threshold = cfg.subsample * total_words as f64;
    let keep_prob: Vec<f64> = vocab
        .counts()
        .iter()
        .map(|&c| keep_probability(c, threshold))
        .collect();
    let weights: Vec<f64> = vocab
        .counts()
        .iter()
        .map(|&c| (c as f64).powf(UNIGRAM_POWER))
        .collect();
    let negatives = WeightedIndex::new(&weights)
        .map_err(|e| Error::InvalidInput(format!("negative sampling table: {e}")))?;

    let dim = cfg.dim;
    let mut init_rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let half = 0.5 / dim as f64;
    let input: Vec<f64> = (0..vocab.len() * dim)
        .map(|_| init_rng.random_range(-half..half))
        .collect();

    let trainer = Trainer {
        cfg,
        input: SharedMatrix::from_vec(input, dim),
        output: SharedMatrix::from_vec(vec![0.0; vocab.len() * dim], dim),
        keep_prob,
        negatives,
        total_words,
        processed: AtomicUsize::new(0),
    };

    let workers = cfg.workers.min(sentences.len());
    if workers <= 1 {
        trainer.run_shard(&sentences, cfg.rng_seed.wrapping_add(1));
    } else {
        let chunk = sentences.len().div_ceil(workers);
        std::thread::scope(|scope| {
            for (w, shard) in sentences.chunks(chunk).enumerate() {
                let trainer = &trainer;
                scope.spawn(move || trainer.run_shard(shard, cfg.rng_seed.wrapping_add(1 + w as u64)));
            }
        });
    }

    let data = trainer.input.into_vec();
    if data.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("skip-gram weights diverged".into()));
    }
    EmbeddingSpace::new(vocab, DMatrix::from_row_slice(data.len() / dim, dim, &data))
}
