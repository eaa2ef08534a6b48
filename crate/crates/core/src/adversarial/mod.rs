//! Adversarial refinement of the mapping.
//!
//! A discriminator learns to tell mapped source vectors `Wx` from genuine
//! target vectors `y`; the mapping is updated to fool it. Training starts
//! from the seeded mapping and keeps the snapshot that scores best on an
//! unsupervised criterion: the mean cosine similarity between the `K` most
//! frequent mapped source tokens and their nearest target neighbors.

mod discriminator;

pub use discriminator::{bce, Discriminator, DiscriminatorGrads, Layer, PROB_EPS};

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::embedding::EmbeddingSpace;
use crate::error::{Error, Result};
use crate::query::{map_rows, TargetIndex};
use crate::seeding::{MappingMatrix, Stage};

#[derive(Clone, Debug, PartialEq)]
pub struct AdvConfig {
    pub epochs: usize,
    pub iterations_per_epoch: usize,
    pub batch_size: usize,
    pub disc_steps_per_map_step: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    /// Multiplicative learning-rate decay applied after every epoch.
    pub lr_decay: f64,
    pub label_smoothing: f64,
    pub input_dropout: f64,
    pub hidden: Vec<usize>,
    /// After each mapping step, `W ← (1+β)W − β(WWᵀ)W`, which pulls `W`
    /// back towards the orthogonal manifold. 0 leaves `W` unconstrained.
    pub orthogonalize: f64,
    /// Batches are drawn from this many most frequent tokens of each space.
    pub max_rank: usize,
    /// `K` of the selection criterion.
    pub selection_k: usize,
    pub rng_seed: u64,
}

impl Default for AdvConfig {
    fn default() -> Self {
        AdvConfig {
            epochs: 5,
            iterations_per_epoch: 1000,
            batch_size: 32,
            disc_steps_per_map_step: 5,
            learning_rate: 0.01,
            momentum: 0.9,
            lr_decay: 0.95,
            label_smoothing: 0.2,
            input_dropout: 0.1,
            hidden: vec![2048, 2048],
            orthogonalize: 0.001,
            max_rank: 75_000,
            selection_k: 1000,
            rng_seed: 1,
        }
    }
}

impl AdvConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_owned()));
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1");
        }
        if self.disc_steps_per_map_step == 0 {
            return bad("disc_steps_per_map_step must be >= 1");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be > 0");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum must be in [0, 1)");
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return bad("lr_decay must be in (0, 1]");
        }
        if !(0.0..0.5).contains(&self.label_smoothing) {
            return bad("label_smoothing must be in [0, 0.5)");
        }
        if !(0.0..1.0).contains(&self.input_dropout) {
            return bad("input_dropout must be in [0, 1)");
        }
        if self.selection_k == 0 {
            return bad("selection K must be >= 1");
        }
        if !(0.0..=0.5).contains(&self.orthogonalize) {
            return bad("orthogonalize beta must be in [0, 0.5]");
        }
        if self.max_rank == 0 {
            return bad("max_rank must be >= 1");
        }
        Ok(())
    }
}

/// Training targets for mapped source vectors and for target vectors.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Labels {
    pub mapped: f64,
    pub target: f64,
}

impl Labels {
    /// Discriminator objective: mapped vectors are "source = 1".
    pub fn discriminator(smoothing: f64) -> Self {
        Labels {
            mapped: 1.0 - smoothing,
            target: smoothing,
        }
    }

    /// Mapping objective: the labels flipped.
    pub fn mapping(smoothing: f64) -> Self {
        Labels {
            mapped: smoothing,
            target: 1.0 - smoothing,
        }
    }
}

/// `mean_i BCE(p_mapped_i) + mean_j BCE(p_target_j)`; each side is averaged
/// over its own batch.
pub fn loss_from_probabilities(p_mapped: &[f64], p_target: &[f64], labels: Labels) -> f64 {
    let side = |ps: &[f64], label: f64| {
        if ps.is_empty() {
            0.0
        } else {
            ps.iter().map(|&p| bce(p, label)).sum::<f64>() / ps.len() as f64
        }
    };
    side(p_mapped, labels.mapped) + side(p_target, labels.target)
}

/// Gradients of an adversarial loss.
#[derive(Clone, Debug)]
pub struct AdvGradients {
    pub loss: f64,
    pub discriminator: DiscriminatorGrads,
    /// `∂L/∂W`
    pub mapping: DMatrix<f64>,
    /// Fraction of rows the discriminator classifies correctly.
    pub accuracy: f64,
}

fn stack(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(a.nrows() + b.nrows(), a.ncols());
    out.rows_mut(0, a.nrows()).copy_from(a);
    out.rows_mut(a.nrows(), b.nrows()).copy_from(b);
    out
}

/// Loss and gradients for source batch `xb` and target batch `yb` (rows
/// are samples). `mask` is an optional dropout mask over the stacked
/// `[W xb; yb]` inputs.
pub fn loss_and_gradients(
    disc: &Discriminator,
    w: &DMatrix<f64>,
    xb: &DMatrix<f64>,
    yb: &DMatrix<f64>,
    labels: Labels,
    mask: Option<DMatrix<f64>>,
) -> Result<AdvGradients> {
    if xb.nrows() == 0 || yb.nrows() == 0 {
        return Err(Error::InvalidInput("adversarial batches must be non-empty".into()));
    }
    let mapped = map_rows(w, xb);
    let inputs = stack(&mapped, yb);
    let (logits, cache) = disc.forward(&inputs, mask);
    let n_src = xb.nrows();
    let n_tgt = yb.nrows();
    let probs: Vec<f64> = logits.iter().map(|&z| discriminator::probability(z)).collect();
    let loss = loss_from_probabilities(&probs[..n_src], &probs[n_src..], labels);
    if !loss.is_finite() {
        return Err(Error::NonFinite(format!("adversarial loss is {loss}")));
    }
    let d_logits = DVector::from_fn(n_src + n_tgt, |i, _| {
        let p = 1.0 / (1.0 + (-logits[i]).exp());
        if i < n_src {
            (p - labels.mapped) / n_src as f64
        } else {
            (p - labels.target) / n_tgt as f64
        }
    });
    let (grads, d_inputs) = disc.backward(&cache, &d_logits);
    let g_mapped = d_inputs.rows(0, n_src);
    let mapping = g_mapped.transpose() * xb;
    let correct = probs[..n_src].iter().filter(|&&p| p >= 0.5).count()
        + probs[n_src..].iter().filter(|&&p| p < 0.5).count();
    Ok(AdvGradients {
        loss,
        discriminator: grads,
        mapping,
        accuracy: correct as f64 / (n_src + n_tgt) as f64,
    })
}

fn batch_probabilities(
    disc: &Discriminator,
    w: &DMatrix<f64>,
    xb: &DMatrix<f64>,
    yb: &DMatrix<f64>,
) -> (Vec<f64>, Vec<f64>) {
    let pm = disc.predict(&map_rows(w, xb));
    let pt = disc.predict(yb);
    (pm.iter().copied().collect(), pt.iter().copied().collect())
}

/// Discriminator objective `L_D` (no dropout).
pub fn discriminator_loss(
    disc: &Discriminator,
    w: &DMatrix<f64>,
    xb: &DMatrix<f64>,
    yb: &DMatrix<f64>,
    smoothing: f64,
) -> f64 {
    let (pm, pt) = batch_probabilities(disc, w, xb, yb);
    loss_from_probabilities(&pm, &pt, Labels::discriminator(smoothing))
}

/// Mapping objective `L_W` (no dropout).
pub fn mapping_loss(
    disc: &Discriminator,
    w: &DMatrix<f64>,
    xb: &DMatrix<f64>,
    yb: &DMatrix<f64>,
    smoothing: f64,
) -> f64 {
    let (pm, pt) = batch_probabilities(disc, w, xb, yb);
    loss_from_probabilities(&pm, &pt, Labels::mapping(smoothing))
}

/// Mean cosine similarity between each of the `k` most frequent source
/// tokens mapped through `w` and its nearest target neighbor. `k` larger
/// than the source vocabulary is clamped to it.
pub fn selection_criterion(
    w: &DMatrix<f64>,
    src: &EmbeddingSpace,
    tgt: &TargetIndex,
    k: usize,
) -> Result<f64> {
    if k == 0 {
        return Err(Error::Config("selection K must be >= 1".into()));
    }
    if src.is_empty() || tgt.is_empty() {
        return Err(Error::InvalidInput("empty embedding space".into()));
    }
    let top = src.top_frequent(k);
    let mapped = map_rows(w, &src.rows(&top));
    let best = tgt.nearest_each(&mapped);
    let sims: Vec<f64> = best.iter().map(|b| b.map_or(0.0, |(_, s)| s)).collect();
    Ok(sims.iter().sum::<f64>() / sims.len() as f64)
}

/// Share of the `k` most frequent source tokens whose nearest mapped
/// neighbor is the target token of the same frequency rank.
pub fn rank_pair_accuracy(
    w: &DMatrix<f64>,
    src: &EmbeddingSpace,
    tgt: &TargetIndex,
    k: usize,
) -> f64 {
    let k = k.min(src.len()).min(tgt.len());
    if k == 0 {
        return 0.0;
    }
    let top_src = src.top_frequent(k);
    let top_tgt = tgt.space().top_frequent(k);
    let best = tgt.nearest_each(&map_rows(w, &src.rows(&top_src)));
    let hits = best
        .iter()
        .zip(&top_tgt)
        .filter(|(b, &t)| b.is_some_and(|(i, _)| i == t))
        .count();
    hits as f64 / k as f64
}

/// One row of the training log.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub disc_loss: f64,
    pub map_loss: f64,
    pub disc_accuracy: f64,
    pub criterion: f64,
    pub rank_pair_accuracy: f64,
}

#[derive(Clone, Debug)]
pub struct AdversarialOutcome {
    pub mapping: MappingMatrix,
    /// Epoch 0 is the initial mapping; losses there are NaN.
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub discriminator: Discriminator,
}

impl AdversarialOutcome {
    /// CSV log: `epoch,L_D,L_W,disc_accuracy,criterion`.
    pub fn write_log<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "epoch,L_D,L_W,disc_accuracy,criterion")?;
        for r in &self.history {
            writeln!(
                w,
                "{},{:.6},{:.6},{:.6},{:.6}",
                r.epoch, r.disc_loss, r.map_loss, r.disc_accuracy, r.criterion
            )?;
        }
        Ok(())
    }
}

struct Momentum {
    velocity: Vec<Vec<f64>>,
}

impl Momentum {
    fn new(sizes: &[usize]) -> Self {
        Momentum {
            velocity: sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    /// `v ← μv − lr·g; θ ← θ + v`
    fn step(&mut self, slot: usize, param: &mut [f64], grad: &[f64], lr: f64, mu: f64) {
        for ((p, v), g) in param.iter_mut().zip(&mut self.velocity[slot]).zip(grad) {
            *v = mu * *v - lr * g;
            *p += *v;
        }
    }
}

fn disc_sizes(d: &Discriminator) -> Vec<usize> {
    d.layers()
        .iter()
        .flat_map(|l| [l.weights.len(), l.bias.len()])
        .collect()
}

fn sample_rows<R: Rng>(space: &DMatrix<f64>, pool: &[usize], n: usize, rng: &mut R) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(n, space.ncols());
    for r in 0..n {
        let i = *pool.choose(rng).expect("non-empty pool");
        out.row_mut(r).copy_from(&space.row(i));
    }
    out
}

fn dropout_mask<R: Rng>(rows: usize, cols: usize, p: f64, rng: &mut R) -> Option<DMatrix<f64>> {
    if p <= 0.0 {
        return None;
    }
    let keep = 1.0 / (1.0 - p);
    Some(DMatrix::from_fn(rows, cols, |_, _| {
        if rng.random::<f64>() < p {
            0.0
        } else {
            keep
        }
    }))
}

/// Runs adversarial training from `init`, returning the best-criterion
/// snapshot (the initial mapping included).
pub fn train_adversarial(
    init: &MappingMatrix,
    src: &EmbeddingSpace,
    tgt: &EmbeddingSpace,
    cfg: &AdvConfig,
) -> Result<AdversarialOutcome> {
    train_adversarial_observed(init, src, tgt, cfg, |_, _| {})
}

/// [`train_adversarial`] with a callback invoked after every epoch
/// (including epoch 0) with the record and the current mapping.
pub fn train_adversarial_observed<F>(
    init: &MappingMatrix,
    src: &EmbeddingSpace,
    tgt: &EmbeddingSpace,
    cfg: &AdvConfig,
    mut observe: F,
) -> Result<AdversarialOutcome>
where
    F: FnMut(&EpochRecord, &DMatrix<f64>),
{
    cfg.validate()?;
    let d = init.dim();
    if src.dim() != d || tgt.dim() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            actual: if src.dim() != d { src.dim() } else { tgt.dim() },
        });
    }
    if src.is_empty() || tgt.is_empty() {
        return Err(Error::InvalidInput("empty embedding space".into()));
    }
    let src = src.normalized();
    let tgt_index = TargetIndex::new(tgt);
    let src_pool = src.top_frequent(cfg.max_rank);
    let tgt_pool = tgt_index.space().top_frequent(cfg.max_rank);
    let xs = src.vectors();
    let ys = tgt_index.space().vectors();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let mut disc = Discriminator::new(d, &cfg.hidden, &mut rng);
    let mut disc_opt = Momentum::new(&disc_sizes(&disc));
    let mut map_opt = Momentum::new(&[d * d]);
    let mut w = init.matrix().clone();

    let criterion = selection_criterion(&w, &src, &tgt_index, cfg.selection_k)?;
    let start = EpochRecord {
        epoch: 0,
        disc_loss: f64::NAN,
        map_loss: f64::NAN,
        disc_accuracy: f64::NAN,
        criterion,
        rank_pair_accuracy: rank_pair_accuracy(&w, &src, &tgt_index, cfg.selection_k),
    };
    observe(&start, &w);
    let mut history = vec![start];
    let mut best = (criterion, 0, w.clone());

    let bs = cfg.batch_size;
    let mut lr = cfg.learning_rate;
    for epoch in 1..=cfg.epochs {
        let (mut d_loss, mut d_acc, mut m_loss) = (0.0, 0.0, 0.0);
        for _ in 0..cfg.iterations_per_epoch {
            for _ in 0..cfg.disc_steps_per_map_step {
                let xb = sample_rows(xs, &src_pool, bs, &mut rng);
                let yb = sample_rows(ys, &tgt_pool, bs, &mut rng);
                let mask = dropout_mask(2 * bs, d, cfg.input_dropout, &mut rng);
                let g = loss_and_gradients(
                    &disc,
                    &w,
                    &xb,
                    &yb,
                    Labels::discriminator(cfg.label_smoothing),
                    mask,
                )
                .map_err(|e| annotate(e, epoch, "discriminator"))?;
                d_loss += g.loss;
                d_acc += g.accuracy;
                let layers = disc.layers_mut().iter_mut().zip(&g.discriminator.layers);
                for (i, (layer, grad)) in layers.enumerate() {
                    let (lw, lb) = (layer.weights.as_mut_slice(), layer.bias.as_mut_slice());
                    disc_opt.step(2 * i, lw, grad.weights.as_slice(), lr, cfg.momentum);
                    disc_opt.step(2 * i + 1, lb, grad.bias.as_slice(), lr, cfg.momentum);
                }
            }
            let xb = sample_rows(xs, &src_pool, bs, &mut rng);
            let yb = sample_rows(ys, &tgt_pool, bs, &mut rng);
            let mask = dropout_mask(2 * bs, d, cfg.input_dropout, &mut rng);
            let g = loss_and_gradients(&disc, &w, &xb, &yb, Labels::mapping(cfg.label_smoothing), mask)
                .map_err(|e| annotate(e, epoch, "mapping"))?;
            m_loss += g.loss;
            map_opt.step(0, w.as_mut_slice(), g.mapping.as_slice(), lr, cfg.momentum);
            if cfg.orthogonalize > 0.0 {
                orthogonalize_step(&mut w, cfg.orthogonalize);
            }
        }
        if !disc.is_finite() || w.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "parameters diverged in adversarial epoch {epoch}"
            )));
        }
        let disc_steps = (cfg.iterations_per_epoch * cfg.disc_steps_per_map_step).max(1) as f64;
        let criterion = selection_criterion(&w, &src, &tgt_index, cfg.selection_k)?;
        let record = EpochRecord {
            epoch,
            disc_loss: d_loss / disc_steps,
            map_loss: m_loss / cfg.iterations_per_epoch.max(1) as f64,
            disc_accuracy: d_acc / disc_steps,
            criterion,
            rank_pair_accuracy: rank_pair_accuracy(&w, &src, &tgt_index, cfg.selection_k),
        };
        log::info!(
            "adversarial epoch {epoch}: L_D {:.4} L_W {:.4} disc acc {:.3} criterion {:.4} rank-pair acc {:.3}",
            record.disc_loss,
            record.map_loss,
            record.disc_accuracy,
            record.criterion,
            record.rank_pair_accuracy
        );
        observe(&record, &w);
        if criterion > best.0 {
            best = (criterion, epoch, w.clone());
        }
        history.push(record);
        lr *= cfg.lr_decay;
    }

    Ok(AdversarialOutcome {
        mapping: MappingMatrix::new(best.2, Stage::Adversarial)?,
        history,
        best_epoch: best.1,
        discriminator: disc,
    })
}

/// `W ← (1+β)W − β(WWᵀ)W`
pub fn orthogonalize_step(w: &mut DMatrix<f64>, beta: f64) {
    let wwt_w = &*w * w.transpose() * &*w;
    *w *= 1.0 + beta;
    *w -= wwt_w * beta;
}

fn annotate(e: Error, epoch: usize, step: &str) -> Error {
    match e {
        Error::NonFinite(m) => Error::NonFinite(format!("{m} ({step} step, epoch {epoch})")),
        other => other,
    }
}
