//! Iterative refinement on synthetic dictionaries.
//!
//! Each iteration induces candidate pairs from the current mapping with two
//! heuristics (nearest neighbors of the K most frequent source tokens, and
//! every nearest-neighbor pair above a cosine threshold), combines them,
//! and re-solves Procrustes on the result.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use nalgebra::DMatrix;

use crate::adversarial::selection_criterion;
use crate::embedding::EmbeddingSpace;
use crate::error::{Error, Result};
use crate::query::{map_rows, TargetIndex};
use crate::seeding::{solve_procrustes, MappingMatrix, SeedDictionary, Stage};

/// How the two candidate sets are merged.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CombineMode {
    Union,
    Intersection,
    /// Only the top-K frequency heuristic.
    TopKOnly,
    /// Only the cosine-threshold heuristic.
    CosineOnly,
}

impl fmt::Display for CombineMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CombineMode::Union => "union",
            CombineMode::Intersection => "intersection",
            CombineMode::TopKOnly => "topk",
            CombineMode::CosineOnly => "cosine",
        })
    }
}

impl FromStr for CombineMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "union" => Ok(CombineMode::Union),
            "intersection" => Ok(CombineMode::Intersection),
            "topk" => Ok(CombineMode::TopKOnly),
            "cosine" => Ok(CombineMode::CosineOnly),
            other => Err(Error::InvalidInput(format!(
                "unknown combination mode `{other}` (union, intersection, topk, cosine)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RefineConfig {
    pub top_k: usize,
    pub threshold: f64,
    pub mode: CombineMode,
    pub mutual_nn: bool,
    pub max_iters: usize,
    pub patience: usize,
    pub selection_k: usize,
}

impl Default for RefineConfig {
    fn default() -> Self {
        RefineConfig {
            top_k: 500,
            threshold: 0.7,
            mode: CombineMode::Intersection,
            mutual_nn: true,
            max_iters: 5,
            patience: 1,
            selection_k: 1000,
        }
    }
}

impl RefineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.top_k == 0 {
            return Err(Error::Config("top-K must be >= 1".into()));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::Config("cosine threshold must be in (0, 1)".into()));
        }
        if self.patience == 0 {
            return Err(Error::Config("patience must be >= 1".into()));
        }
        if self.selection_k == 0 {
            return Err(Error::Config("selection K must be >= 1".into()));
        }
        Ok(())
    }
}

/// A scored candidate pair (source index, target index, cosine).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Candidate {
    pub source: usize,
    pub target: usize,
    pub similarity: f64,
}

/// Keeps one candidate per source token, the most similar, preserving the
/// order of first appearance.
fn dedup_by_source(cands: Vec<Candidate>) -> Vec<Candidate> {
    let mut best: HashMap<usize, usize> = HashMap::new();
    let mut out: Vec<Candidate> = Vec::with_capacity(cands.len());
    for c in cands {
        match best.get(&c.source) {
            Some(&slot) => {
                if c.similarity > out[slot].similarity {
                    out[slot] = c;
                }
            }
            None => {
                best.insert(c.source, out.len());
                out.push(c);
            }
        }
    }
    out
}

/// Nearest target of each listed source token under `w`.
fn forward_neighbors(
    w: &DMatrix<f64>,
    src: &EmbeddingSpace,
    tgt: &TargetIndex,
    sources: &[usize],
) -> Vec<Candidate> {
    let mapped = map_rows(w, &src.rows(sources));
    tgt.nearest_each(&mapped)
        .into_iter()
        .zip(sources)
        .filter_map(|(best, &s)| {
            best.map(|(t, sim)| Candidate {
                source: s,
                target: t,
                similarity: sim,
            })
        })
        .collect()
}

/// Nearest source tokens of the candidates' targets, comparing `y` with
/// `Wx` for every source `x` (cosine, so the scale of `W` is irrelevant).
fn is_mutual(w: &DMatrix<f64>, src: &EmbeddingSpace, tgt: &TargetIndex, cands: &[Candidate]) -> Vec<bool> {
    let mapped_src = EmbeddingSpace::new(src.vocab().clone(), map_rows(w, src.vectors()))
        .map(|s| TargetIndex::new(&s));
    let Ok(mapped_src) = mapped_src else {
        return vec![false; cands.len()];
    };
    let targets: Vec<usize> = cands.iter().map(|c| c.target).collect();
    let back = mapped_src.nearest_each(&tgt.space().rows(&targets));
    cands
        .iter()
        .zip(back)
        .map(|(c, b)| b.is_some_and(|(s, _)| s == c.source))
        .collect()
}

/// Pairs each of the `k` most frequent source tokens with its nearest
/// target under `w`; with `mutual_nn`, only pairs that are each other's
/// nearest neighbors are kept.
pub fn topk_frequency_candidates(
    w: &DMatrix<f64>,
    src: &EmbeddingSpace,
    tgt: &TargetIndex,
    k: usize,
    mutual_nn: bool,
) -> Vec<Candidate> {
    let sources = src.top_frequent(k);
    let cands = forward_neighbors(w, src, tgt, &sources);
    let cands = if mutual_nn {
        let keep = is_mutual(w, src, tgt, &cands);
        cands
            .into_iter()
            .zip(keep)
            .filter_map(|(c, k)| k.then_some(c))
            .collect()
    } else {
        cands
    };
    dedup_by_source(cands)
}

/// Every source token whose nearest target under `w` has cosine ≥ `threshold`.
pub fn cosine_threshold_candidates(
    w: &DMatrix<f64>,
    src: &EmbeddingSpace,
    tgt: &TargetIndex,
    threshold: f64,
) -> Vec<Candidate> {
    let all: Vec<usize> = (0..src.len()).collect();
    dedup_by_source(
        forward_neighbors(w, src, tgt, &all)
            .into_iter()
            .filter(|c| c.similarity >= threshold)
            .collect(),
    )
}

/// Set union or intersection on `(source, target)` pairs. Order: `a`'s
/// order, then `b`'s new pairs for a union.
pub fn combine_scored(a: &[Candidate], b: &[Candidate], mode: CombineMode) -> Vec<Candidate> {
    let key = |c: &Candidate| (c.source, c.target);
    match mode {
        CombineMode::TopKOnly => a.to_vec(),
        CombineMode::CosineOnly => b.to_vec(),
        CombineMode::Intersection => {
            let bs: HashSet<_> = b.iter().map(key).collect();
            a.iter().filter(|c| bs.contains(&key(c))).copied().collect()
        }
        CombineMode::Union => {
            let mut seen: HashSet<_> = a.iter().map(key).collect();
            let mut out = a.to_vec();
            out.extend(b.iter().filter(|c| seen.insert(key(c))).copied());
            dedup_by_source(out)
        }
    }
}

/// [`combine_scored`] on token dictionaries. `TopKOnly` and `CosineOnly`
/// return `a` and `b` respectively.
pub fn combine_candidates(a: &SeedDictionary, b: &SeedDictionary, mode: CombineMode) -> SeedDictionary {
    match mode {
        CombineMode::TopKOnly => a.clone(),
        CombineMode::CosineOnly => b.clone(),
        CombineMode::Intersection => a
            .iter()
            .filter(|(s, t)| b.contains(s, t))
            .map(|(s, t)| (s.to_owned(), t.to_owned()))
            .collect(),
        CombineMode::Union => a
            .iter()
            .chain(b.iter())
            .map(|(s, t)| (s.to_owned(), t.to_owned()))
            .collect(),
    }
}

pub fn to_dictionary(cands: &[Candidate], src: &EmbeddingSpace, tgt: &EmbeddingSpace) -> SeedDictionary {
    cands
        .iter()
        .map(|c| {
            (
                src.vocab().token(c.source).to_owned(),
                tgt.vocab().token(c.target).to_owned(),
            )
        })
        .collect()
}

/// Top-K frequency dictionary.
pub fn candidates_topk_frequency(
    w: &MappingMatrix,
    src: &EmbeddingSpace,
    tgt: &EmbeddingSpace,
    k: usize,
    mutual_nn: bool,
) -> Result<SeedDictionary> {
    if k == 0 {
        return Err(Error::Config("top-K must be >= 1".into()));
    }
    let idx = TargetIndex::new(tgt);
    let src_n = src.normalized();
    Ok(to_dictionary(
        &topk_frequency_candidates(w.matrix(), &src_n, &idx, k, mutual_nn),
        src,
        tgt,
    ))
}

/// Cosine-threshold dictionary.
pub fn candidates_cosine_threshold(
    w: &MappingMatrix,
    src: &EmbeddingSpace,
    tgt: &EmbeddingSpace,
    threshold: f64,
) -> Result<SeedDictionary> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::Config("cosine threshold must be in (0, 1)".into()));
    }
    let idx = TargetIndex::new(tgt);
    Ok(to_dictionary(
        &cosine_threshold_candidates(w.matrix(), &src.normalized(), &idx, threshold),
        src,
        tgt,
    ))
}

/// Candidates the refine loop would use for mapping `w`.
pub fn refinement_candidates(
    w: &DMatrix<f64>,
    src: &EmbeddingSpace,
    tgt: &TargetIndex,
    cfg: &RefineConfig,
) -> Vec<Candidate> {
    let topk = match cfg.mode {
        CombineMode::CosineOnly => Vec::new(),
        _ => topk_frequency_candidates(w, src, tgt, cfg.top_k, cfg.mutual_nn),
    };
    let cosine = match cfg.mode {
        CombineMode::TopKOnly => Vec::new(),
        _ => cosine_threshold_candidates(w, src, tgt, cfg.threshold),
    };
    combine_scored(&topk, &cosine, cfg.mode)
}

#[derive(Clone, Debug, PartialEq)]
pub struct RefineIteration {
    pub iter: usize,
    pub candidates: usize,
    pub criterion: f64,
}

#[derive(Clone, Debug)]
pub struct RefineOutcome {
    pub mapping: MappingMatrix,
    /// Iteration 0 is the starting mapping.
    pub history: Vec<RefineIteration>,
    pub best_iter: usize,
}

impl RefineOutcome {
    /// `iter,candidates,criterion` rows.
    pub fn write_report<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "iter,candidates,criterion")?;
        for r in &self.history {
            writeln!(w, "{},{},{:.6}", r.iter, r.candidates, r.criterion)?;
        }
        Ok(())
    }
}

/// Nearest orthogonal matrix (polar factor).
pub fn nearest_orthogonal(w: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let id = DMatrix::<f64>::identity(w.nrows(), w.ncols());
    // argmin_Q ‖Q·I − W‖ over orthogonal Q
    solve_procrustes(&id, &w.transpose()).map(MappingMatrix::into_matrix)
}

/// Refines `start`: build candidates, re-solve Procrustes, score with the
/// selection criterion; stop after `patience` non-improving iterations or
/// `max_iters`. Returns the best snapshot, always orthogonal unless
/// `max_iters == 0` (then `start` is returned unchanged).
pub fn refine(
    start: &MappingMatrix,
    src: &EmbeddingSpace,
    tgt: &EmbeddingSpace,
    cfg: &RefineConfig,
) -> Result<RefineOutcome> {
    cfg.validate()?;
    refine_with(start, src, tgt, cfg, |w, s, t| refinement_candidates(w, s, t, cfg))
}

/// [`refine`] with a caller-supplied candidate generator. The generator
/// receives the current mapping and unit-normalized spaces.
pub fn refine_with<G>(
    start: &MappingMatrix,
    src: &EmbeddingSpace,
    tgt: &EmbeddingSpace,
    cfg: &RefineConfig,
    mut generate: G,
) -> Result<RefineOutcome>
where
    G: FnMut(&DMatrix<f64>, &EmbeddingSpace, &TargetIndex) -> Vec<Candidate>,
{
    let d = start.dim();
    if src.dim() != d || tgt.dim() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            actual: if src.dim() != d { src.dim() } else { tgt.dim() },
        });
    }
    if cfg.max_iters == 0 {
        let criterion = selection_criterion(start.matrix(), src, &TargetIndex::new(tgt), cfg.selection_k)?;
        return Ok(RefineOutcome {
            mapping: start.clone(),
            history: vec![RefineIteration {
                iter: 0,
                candidates: 0,
                criterion,
            }],
            best_iter: 0,
        });
    }
    let src = src.normalized();
    let tgt_index = TargetIndex::new(tgt);

    let initial = if start.is_orthogonal() {
        start.matrix().clone()
    } else {
        nearest_orthogonal(start.matrix())?
    };
    let mut current = initial.clone();
    let criterion = selection_criterion(&current, &src, &tgt_index, cfg.selection_k)?;
    let mut history = vec![RefineIteration {
        iter: 0,
        candidates: 0,
        criterion,
    }];
    let mut best = (criterion, 0, initial);
    let mut stale = 0;

    for iter in 1..=cfg.max_iters {
        let cands = generate(&current, &src, &tgt_index);
        if cands.is_empty() {
            log::warn!("refinement iteration {iter}: empty candidate set, stopping");
            break;
        }
        let si: Vec<usize> = cands.iter().map(|c| c.source).collect();
        let ti: Vec<usize> = cands.iter().map(|c| c.target).collect();
        let w = solve_procrustes(&src.rows(&si), &tgt_index.space().rows(&ti))?;
        current = w.into_matrix();
        let criterion = selection_criterion(&current, &src, &tgt_index, cfg.selection_k)?;
        log::info!(
            "refinement iteration {iter}: {} candidates, criterion {criterion:.4}",
            cands.len()
        );
        history.push(RefineIteration {
            iter,
            candidates: cands.len(),
            criterion,
        });
        if criterion > best.0 {
            best = (criterion, iter, current.clone());
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                break;
            }
        }
    }

    Ok(RefineOutcome {
        mapping: MappingMatrix::new(best.2, Stage::Refined)?,
        history,
        best_iter: best.1,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Vocabulary;
    use crate::linalg::{gaussian_matrix, orthogonality_error, random_orthogonal};
    use crate::embedding::normalize_rows;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn space(rows: DMatrix<f64>, prefix: &str) -> EmbeddingSpace {
        let n = rows.nrows();
        let vocab = Vocabulary::from_ordered(
            (0..n).map(|i| format!("{prefix}{i}")).collect(),
            (0..n as u64).map(|i| 10 * (n as u64 - i)).collect(),
        )
        .unwrap();
        EmbeddingSpace::new(vocab, rows).unwrap()
    }

    #[test]
    fn identical_spaces_pair_with_themselves() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = space(gaussian_matrix(50, 8, &mut rng), "x");
        let dict = candidates_topk_frequency(&MappingMatrix::identity(8), &s, &s, 10, true).unwrap();
        assert_eq!(dict.len(), 10);
        for (a, b) in dict.iter() {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn default_parameters() {
        let c = RefineConfig::default();
        assert_eq!(c.top_k, 500);
        assert_eq!(c.threshold, 0.7);
        assert_eq!(c.mode, CombineMode::Intersection);
        assert!(c.mutual_nn);
        assert_eq!((c.max_iters, c.patience), (5, 1));
    }

    #[test]
    fn permutation_alignment_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let d = 10;
        let n = 30;
        let src_rows = gaussian_matrix(n, d, &mut rng);
        // tgt row perm[i] = src row i
        let perm: Vec<usize> = (0..n).map(|i| (i * 7 + 3) % n).collect();
        let mut tgt_rows = DMatrix::zeros(n, d);
        for (i, &j) in perm.iter().enumerate() {
            tgt_rows.row_mut(j).copy_from(&src_rows.row(i));
        }
        let src = space(src_rows.clone(), "s");
        let tgt = space(tgt_rows.clone(), "t");
        let k = 12;
        let dict = candidates_topk_frequency(&MappingMatrix::identity(d), &src, &tgt, k, true).unwrap();
        // brute force: nearest by explicit cosine over all targets
        let un_s = normalize_rows(&src_rows);
        let un_t = normalize_rows(&tgt_rows);
        let mut expected = Vec::new();
        for i in 0..k {
            let best = (0..n)
                .max_by(|&a, &b| {
                    un_s.row(i).dot(&un_t.row(a)).total_cmp(&un_s.row(i).dot(&un_t.row(b)))
                })
                .unwrap();
            expected.push((format!("s{i}"), format!("t{best}")));
        }
        assert_eq!(dict.pairs(), expected.as_slice());
        for (i, (_, t)) in expected.iter().enumerate() {
            assert_eq!(t, &format!("t{}", perm[i]));
        }
    }

    #[test]
    fn threshold_separates_aligned_from_unaligned() {
        // 3 aligned tokens (cos 1) and 3 whose best target has cos 0.8
        let tgt_rows = DMatrix::from_row_slice(
            3,
            3,
            &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0],
        );
        let off = 0.8f64;
        let src_rows = DMatrix::from_row_slice(
            6,
            3,
            &[
                1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0, //
                0.6, off, 0.0, 0.0, 0.6, -off, -off, 0.0, 0.6,
            ],
        );
        let src = space(src_rows, "s");
        let tgt = space(tgt_rows, "t");
        let dict = candidates_cosine_threshold(&MappingMatrix::identity(3), &src, &tgt, 0.9).unwrap();
        assert_eq!(
            dict.pairs(),
            &[
                ("s0".to_string(), "t0".to_string()),
                ("s1".to_string(), "t1".to_string()),
                ("s2".to_string(), "t2".to_string()),
            ]
        );
        let strict = candidates_cosine_threshold(&MappingMatrix::identity(3), &src, &tgt, 0.99999).unwrap();
        assert_eq!(strict.len(), 3);
        assert!(candidates_cosine_threshold(&MappingMatrix::identity(3), &src, &tgt, 1.0).is_err());
    }

    #[test]
    fn combine_examples() {
        let a: SeedDictionary = [("x".to_string(), "y".to_string())].into_iter().collect();
        let b: SeedDictionary = [("x".to_string(), "y".to_string()), ("u".to_string(), "v".to_string())]
            .into_iter()
            .collect();
        let i = combine_candidates(&a, &b, CombineMode::Intersection);
        assert_eq!(i.pairs(), &[("x".to_string(), "y".to_string())]);
        let u = combine_candidates(&a, &b, CombineMode::Union);
        assert_eq!(
            u.pairs(),
            &[("x".to_string(), "y".to_string()), ("u".to_string(), "v".to_string())]
        );
    }

    #[test]
    fn union_of_scored_keeps_best_per_source() {
        let a = vec![Candidate { source: 0, target: 1, similarity: 0.5 }];
        let b = vec![
            Candidate { source: 0, target: 2, similarity: 0.9 },
            Candidate { source: 3, target: 4, similarity: 0.8 },
        ];
        let u = combine_scored(&a, &b, CombineMode::Union);
        assert_eq!(u.len(), 2);
        assert_eq!(u[0].target, 2);
    }

    fn rotation_task(seed: u64, n: usize, d: usize) -> (EmbeddingSpace, EmbeddingSpace, DMatrix<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let r = random_orthogonal(d, &mut rng);
        let xs = normalize_rows(&gaussian_matrix(n, d, &mut rng));
        let ys = &xs * r.transpose();
        (space(xs, "s"), space(ys, "t"), r)
    }

    #[test]
    fn zero_iterations_return_input() {
        let (src, tgt, _) = rotation_task(3, 40, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let w2 = MappingMatrix::new(gaussian_matrix(5, 5, &mut rng), Stage::Adversarial).unwrap();
        let cfg = RefineConfig { max_iters: 0, ..RefineConfig::default() };
        let out = refine(&w2, &src, &tgt, &cfg).unwrap();
        assert_eq!(out.mapping, w2);
    }

    #[test]
    fn refine_output_is_orthogonal_and_not_worse() {
        let (src, tgt, r) = rotation_task(5, 300, 12);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let noisy = &r + gaussian_matrix(12, 12, &mut rng) * 0.05;
        let w2 = MappingMatrix::new(noisy, Stage::Adversarial).unwrap();
        assert!(!w2.is_orthogonal());
        let cfg = RefineConfig { top_k: 100, threshold: 0.5, ..RefineConfig::default() };
        let out = refine(&w2, &src, &tgt, &cfg).unwrap();
        assert!(orthogonality_error(out.mapping.matrix()) < 1e-6);
        assert_eq!(out.mapping.stage(), Stage::Refined);
        assert!(out.history.iter().all(|h| h.criterion <= out.history[out.best_iter].criterion));
        assert!((out.mapping.matrix() - &r).norm() < 1e-6);
    }

    #[test]
    fn ground_truth_candidates_are_a_fixed_point() {
        let (src, tgt, r) = rotation_task(7, 60, 8);
        let truth: Vec<Candidate> = (0..60)
            .map(|i| Candidate { source: i, target: i, similarity: 1.0 })
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let start = MappingMatrix::new(random_orthogonal(8, &mut rng), Stage::Adversarial).unwrap();
        let mut snapshots = Vec::new();
        let cfg = RefineConfig { max_iters: 4, patience: 10, ..RefineConfig::default() };
        refine_with(&start, &src, &tgt, &cfg, |w, _, _| {
            snapshots.push(w.clone());
            truth.clone()
        })
        .unwrap();
        // snapshots[i] is the mapping entering iteration i + 1
        assert!((&snapshots[1] - &r).norm() < 1e-8);
        for pair in snapshots[1..].windows(2) {
            assert!((&pair[1] - &pair[0]).norm() < 1e-10);
        }
    }

    #[test]
    fn nearest_orthogonal_of_orthogonal_is_itself() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let q = random_orthogonal(6, &mut rng);
        assert!((nearest_orthogonal(&q).unwrap() - &q).norm() < 1e-10);
        let scaled = &q * 3.0;
        assert!((nearest_orthogonal(&scaled).unwrap() - &q).norm() < 1e-10);
    }
}
