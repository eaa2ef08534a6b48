//! Evaluation: top-k accuracy, precision/recall/F, coverage under a
//! similarity threshold, package-level similarity and ablation runs.

mod ablation;

pub use ablation::{run_ablation, AblationRow};

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::embedding::EmbeddingSpace;
use crate::error::{Error, Result};
use crate::query::{batch_query, QueryOutcome, TargetIndex};
use crate::seeding::MappingMatrix;

/// Expected target(s) for one source token.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TruthEntry {
    pub source: String,
    pub targets: Vec<String>,
    pub package: Option<String>,
}

/// Ground-truth API mappings. A source listed on several lines collects
/// all of its targets; any of them counts as a hit.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct GroundTruth {
    entries: Vec<TruthEntry>,
}

impl GroundTruth {
    pub fn from_pairs<I: IntoIterator<Item = (String, String)>>(pairs: I) -> Self {
        let mut gt = GroundTruth::default();
        for (s, t) in pairs {
            gt.add(s, t, None);
        }
        gt
    }

    pub fn add(&mut self, source: String, target: String, package: Option<String>) {
        if let Some(e) = self.entries.iter_mut().find(|e| e.source == source) {
            if !e.targets.contains(&target) {
                e.targets.push(target);
            }
            if e.package.is_none() {
                e.package = package;
            }
        } else {
            self.entries.push(TruthEntry {
                source,
                targets: vec![target],
                package,
            });
        }
    }

    pub fn entries(&self) -> &[TruthEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn sources(&self) -> Vec<String> {
        self.entries.iter().map(|e| e.source.clone()).collect()
    }

    /// Entries whose source is not in `exclude`.
    pub fn without_sources(&self, exclude: &[&str]) -> GroundTruth {
        GroundTruth {
            entries: self
                .entries
                .iter()
                .filter(|e| !exclude.contains(&e.source.as_str()))
                .cloned()
                .collect(),
        }
    }

    pub fn subset(&self, indices: &[usize]) -> GroundTruth {
        GroundTruth {
            entries: indices.iter().map(|&i| self.entries[i].clone()).collect(),
        }
    }

    /// TSV `source<TAB>target[<TAB>package]`.
    pub fn read_tsv<R: BufRead>(reader: R, name: &str) -> Result<Self> {
        let mut gt = GroundTruth::default();
        for (i, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| Error::io(name, e))?;
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let cols: Vec<&str> = line.split('\t').map(str::trim).collect();
            match cols.as_slice() {
                [s, t] if !s.is_empty() && !t.is_empty() => gt.add(s.to_string(), t.to_string(), None),
                [s, t, p] if !s.is_empty() && !t.is_empty() => {
                    gt.add(s.to_string(), t.to_string(), (!p.is_empty()).then(|| p.to_string()))
                }
                _ => {
                    return Err(Error::format(
                        name,
                        i + 1,
                        "expected `source<TAB>target[<TAB>package]`",
                    ))
                }
            }
        }
        Ok(gt)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_tsv(BufReader::new(f), &path.display().to_string())
    }
}

/// Hit/miss counts behind an accuracy figure.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Accuracy {
    pub hits: usize,
    pub misses: usize,
    /// Misses caused by an out-of-vocabulary source (included in `misses`).
    pub oov: usize,
}

impl Accuracy {
    pub fn value(&self) -> f64 {
        let total = self.hits + self.misses;
        if total == 0 {
            0.0
        } else {
            self.hits as f64 / total as f64
        }
    }
}

fn index_results(results: &[QueryOutcome]) -> HashMap<&str, &QueryOutcome> {
    results.iter().map(|r| (r.query(), r)).collect()
}

/// Hits/misses at cutoff `k`: a hit when any expected target appears among
/// the first `k` retrieved neighbors.
pub fn topk_counts(results: &[QueryOutcome], truth: &GroundTruth, k: usize) -> Result<Accuracy> {
    if truth.is_empty() {
        return Err(Error::EmptyTruth);
    }
    let by_query = index_results(results);
    let mut acc = Accuracy::default();
    for e in truth.entries() {
        let outcome = by_query
            .get(e.source.as_str())
            .ok_or_else(|| Error::InvalidInput(format!("truth source `{}` was not queried", e.source)))?;
        match outcome.result() {
            None => {
                acc.misses += 1;
                acc.oov += 1;
            }
            Some(r) => {
                let hit = r
                    .neighbors
                    .iter()
                    .take(k)
                    .any(|n| e.targets.contains(&n.token));
                if hit {
                    acc.hits += 1;
                } else {
                    acc.misses += 1;
                }
            }
        }
    }
    Ok(acc)
}

/// `hits / (hits + misses)` at cutoff `k`.
pub fn topk_accuracy(results: &[QueryOutcome], truth: &GroundTruth, k: usize) -> Result<f64> {
    topk_counts(results, truth, k).map(|a| a.value())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f_score: f64,
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Harmonic mean, 0 when both inputs are 0.
pub fn f_score(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

pub fn prf_from_counts(tp: usize, fp: usize, fn_: usize) -> Prf {
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fn_);
    Prf {
        precision,
        recall,
        f_score: f_score(precision, recall),
        tp,
        fp,
        fn_,
    }
}

/// The top-1 neighbor of each query is the emitted mapping when its
/// similarity is at least `threshold` (any when `None`). Correct emissions
/// are true positives, wrong ones false positives, and truth sources
/// without a correct emission false negatives.
pub fn precision_recall_f(results: &[QueryOutcome], truth: &GroundTruth, threshold: Option<f64>) -> Prf {
    let by_query = index_results(results);
    let (mut tp, mut fp, mut fn_) = (0, 0, 0);
    for e in truth.entries() {
        let emitted = by_query
            .get(e.source.as_str())
            .and_then(|o| o.result())
            .and_then(|r| r.top())
            .filter(|n| threshold.is_none_or(|t| n.similarity >= t));
        match emitted {
            Some(n) if e.targets.contains(&n.token) => tp += 1,
            Some(_) => {
                fp += 1;
                fn_ += 1;
            }
            None => fn_ += 1,
        }
    }
    prf_from_counts(tp, fp, fn_)
}

/// One row of a coverage-versus-threshold table.
#[derive(Clone, Debug, PartialEq)]
pub struct CoverageRow {
    pub threshold: f64,
    pub k: usize,
    /// Share of truth sources with at least one neighbor above threshold.
    pub coverage: f64,
    /// Top-k accuracy over covered sources only.
    pub accuracy: f64,
    /// Top-k accuracy over all truth sources.
    pub accuracy_all: f64,
}

/// Coverage and accuracy for each threshold and cutoff.
pub fn coverage_accuracy_table(
    w: &MappingMatrix,
    src: &EmbeddingSpace,
    tgt: &TargetIndex,
    truth: &GroundTruth,
    thresholds: &[f64],
    ks: &[usize],
) -> Result<Vec<CoverageRow>> {
    if truth.is_empty() {
        return Err(Error::EmptyTruth);
    }
    if let Some(t) = thresholds.iter().find(|t| !(0.0..1.0).contains(*t)) {
        return Err(Error::Config(format!("threshold {t} outside [0, 1)")));
    }
    let k_max = ks.iter().copied().max().unwrap_or(1).max(1);
    let results = batch_query(&truth.sources(), w, src, tgt, k_max, None)?;
    let by_query = index_results(&results);
    let n = truth.len() as f64;
    let mut rows = Vec::new();
    for &tau in thresholds {
        for &k in ks {
            let (mut covered, mut hits) = (0usize, 0usize);
            for e in truth.entries() {
                let Some(r) = by_query[e.source.as_str()].result() else {
                    continue;
                };
                let kept: Vec<_> = r
                    .neighbors
                    .iter()
                    .filter(|nb| nb.similarity >= tau)
                    .take(k)
                    .collect();
                if kept.is_empty() {
                    continue;
                }
                covered += 1;
                if kept.iter().any(|nb| e.targets.contains(&nb.token)) {
                    hits += 1;
                }
            }
            rows.push(CoverageRow {
                threshold: tau,
                k,
                coverage: covered as f64 / n,
                accuracy: ratio(hits, covered),
                accuracy_all: hits as f64 / n,
            });
        }
    }
    Ok(rows)
}

fn in_package(token: &str, prefix: &str) -> bool {
    token
        .strip_prefix(prefix)
        .is_some_and(|rest| rest.is_empty() || rest.starts_with('.'))
}

#[derive(Clone, Debug, PartialEq)]
pub struct GroupSimilarity {
    pub src_prefix: String,
    pub tgt_prefix: String,
    pub src_members: usize,
    pub tgt_members: usize,
    /// `None` when either package has no members.
    pub mean_cosine: Option<f64>,
}

/// Average `cos(Wx, y)` over all pairs of source tokens under `src_prefix`
/// and target tokens under `tgt_prefix`, for each aligned package pair.
pub fn group_similarity(
    w: &MappingMatrix,
    src: &EmbeddingSpace,
    tgt: &EmbeddingSpace,
    package_pairs: &[(String, String)],
) -> Result<Vec<GroupSimilarity>> {
    let mapped = crate::embedding::normalize_rows(&crate::query::map_rows(w.matrix(), src.vectors()));
    let tgt_n = tgt.normalized();
    package_pairs
        .iter()
        .map(|(sp, tp)| {
            if sp.is_empty() || tp.is_empty() {
                return Err(Error::InvalidInput("package prefixes must be non-empty".into()));
            }
            let si: Vec<usize> = (0..src.len())
                .filter(|&i| in_package(src.vocab().token(i), sp))
                .collect();
            let ti: Vec<usize> = (0..tgt.len())
                .filter(|&i| in_package(tgt.vocab().token(i), tp))
                .collect();
            let mean_cosine = if si.is_empty() || ti.is_empty() {
                log::warn!("package pair {sp} / {tp} has no members on one side; skipped");
                None
            } else {
                let mut sum = 0.0;
                for &i in &si {
                    for &j in &ti {
                        sum += mapped.row(i).dot(&tgt_n.vectors().row(j));
                    }
                }
                Some(sum / (si.len() * ti.len()) as f64)
            };
            Ok(GroupSimilarity {
                src_prefix: sp.clone(),
                tgt_prefix: tp.clone(),
                src_members: si.len(),
                tgt_members: ti.len(),
                mean_cosine,
            })
        })
        .collect()
}

/// Splits truth indices into `n_folds` shuffled folds and returns, for each
/// rotation, (training indices from `train_folds` consecutive folds, test
/// indices from the rest).
pub fn kfold_splits(
    n: usize,
    n_folds: usize,
    train_folds: usize,
    seed: u64,
) -> Result<Vec<(Vec<usize>, Vec<usize>)>> {
    if n_folds < 2 || train_folds == 0 || train_folds >= n_folds {
        return Err(Error::Config(
            "need n_folds >= 2 and 1 <= train_folds < n_folds".into(),
        ));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let folds: Vec<Vec<usize>> = (0..n_folds)
        .map(|f| idx.iter().copied().skip(f).step_by(n_folds).collect())
        .collect();
    Ok((0..n_folds)
        .map(|start| {
            let mut train = Vec::new();
            let mut test = Vec::new();
            for off in 0..n_folds {
                let fold = &folds[(start + off) % n_folds];
                if off < train_folds {
                    train.extend(fold);
                } else {
                    test.extend(fold);
                }
            }
            (train, test)
        })
        .collect())
}

/// Per-configuration evaluation summary.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub configuration: String,
    /// `(k, accuracy)` pairs.
    pub accuracy: Vec<(usize, f64)>,
    pub prf: Prf,
    pub oov: usize,
    pub coverage: Vec<CoverageRow>,
}

/// Cutoffs and thresholds for [`evaluate`].
#[derive(Clone, Debug, PartialEq)]
pub struct EvalOptions {
    pub ks: Vec<usize>,
    /// Minimum top-1 similarity for an emitted mapping in P/R/F.
    pub accept_threshold: Option<f64>,
    /// Thresholds of the coverage table.
    pub thresholds: Vec<f64>,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            ks: vec![1, 5, 10],
            accept_threshold: None,
            thresholds: vec![0.5, 0.6, 0.7, 0.8, 0.9],
        }
    }
}

/// Queries every truth source and computes accuracy at each `k`, P/R/F and
/// the coverage table.
pub fn evaluate(
    configuration: &str,
    w: &MappingMatrix,
    src: &EmbeddingSpace,
    tgt: &TargetIndex,
    truth: &GroundTruth,
    opts: &EvalOptions,
) -> Result<EvalReport> {
    let ks = &opts.ks;
    let k_max = ks.iter().copied().max().unwrap_or(1).max(1);
    let results = batch_query(&truth.sources(), w, src, tgt, k_max, None)?;
    let mut accuracy = Vec::with_capacity(ks.len());
    let mut oov = 0;
    for &k in ks {
        let a = topk_counts(&results, truth, k)?;
        oov = a.oov;
        accuracy.push((k, a.value()));
    }
    Ok(EvalReport {
        configuration: configuration.to_owned(),
        accuracy,
        prf: precision_recall_f(&results, truth, opts.accept_threshold),
        oov,
        coverage: coverage_accuracy_table(w, src, tgt, truth, &opts.thresholds, ks)?,
    })
}

/// CSV with a leading `# config` row, one row per report:
/// `configuration,top1,...,precision,recall,f_score,oov`.
pub fn write_accuracy_csv<W: Write>(reports: &[EvalReport], config_echo: &str, mut w: W) -> std::io::Result<()> {
    writeln!(w, "# {config_echo}")?;
    let ks: Vec<usize> = reports
        .first()
        .map(|r| r.accuracy.iter().map(|(k, _)| *k).collect())
        .unwrap_or_default();
    let mut header = vec!["configuration".to_string()];
    header.extend(ks.iter().map(|k| format!("top{k}")));
    header.extend(["precision", "recall", "f_score", "oov"].map(String::from));
    writeln!(w, "{}", header.join(","))?;
    for r in reports {
        let mut row = vec![r.configuration.clone()];
        row.extend(r.accuracy.iter().map(|(_, a)| format!("{a:.4}")));
        row.push(format!("{:.4}", r.prf.precision));
        row.push(format!("{:.4}", r.prf.recall));
        row.push(format!("{:.4}", r.prf.f_score));
        row.push(r.oov.to_string());
        writeln!(w, "{}", row.join(","))?;
    }
    Ok(())
}

/// CSV `threshold,k,coverage,accuracy,accuracy_all` with a `# config` row.
pub fn write_coverage_csv<W: Write>(rows: &[CoverageRow], config_echo: &str, mut w: W) -> std::io::Result<()> {
    writeln!(w, "# {config_echo}")?;
    writeln!(w, "threshold,k,coverage,accuracy,accuracy_all")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{:.4},{:.4},{:.4}",
            r.threshold, r.k, r.coverage, r.accuracy, r.accuracy_all
        )?;
    }
    Ok(())
}
