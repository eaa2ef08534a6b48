//! Cross-space nearest-neighbor queries.

use std::cmp::Ordering;
use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::embedding::{normalize_rows, EmbeddingSpace};
use crate::error::{Error, Result};
use crate::seeding::MappingMatrix;

/// `W x`.
pub fn map_vector(w: &MappingMatrix, x: &DVector<f64>) -> Result<DVector<f64>> {
    if x.len() != w.dim() {
        return Err(Error::DimensionMismatch {
            expected: w.dim(),
            actual: x.len(),
        });
    }
    Ok(w.matrix() * x)
}

/// Maps every row of `rows` (`n × d`) through `w`, returning `n × d`.
pub fn map_rows(w: &DMatrix<f64>, rows: &DMatrix<f64>) -> DMatrix<f64> {
    rows * w.transpose()
}

/// A target space with unit-normalized rows so cosine is a dot product.
#[derive(Clone, Debug)]
pub struct TargetIndex {
    space: EmbeddingSpace,
}

impl TargetIndex {
    pub fn new(space: &EmbeddingSpace) -> Self {
        TargetIndex {
            space: space.normalized(),
        }
    }

    pub fn space(&self) -> &EmbeddingSpace {
        &self.space
    }

    pub fn dim(&self) -> usize {
        self.space.dim()
    }

    pub fn len(&self) -> usize {
        self.space.len()
    }

    pub fn is_empty(&self) -> bool {
        self.space.is_empty()
    }

    /// Cosine similarity of `v` against every target row.
    fn similarities(&self, v: &DVector<f64>) -> Result<DVector<f64>> {
        if v.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                actual: v.len(),
            });
        }
        let norm = v.norm();
        if norm == 0.0 || !norm.is_finite() {
            return Err(Error::ZeroVector);
        }
        let unit = v / norm;
        Ok(self.space.vectors() * unit)
    }

    /// Top-1 target index and similarity for every row of `queries`
    /// (`m × d`, need not be normalized). Zero rows yield `None`.
    pub fn nearest_each(&self, queries: &DMatrix<f64>) -> Vec<Option<(usize, f64)>> {
        const CHUNK: usize = 512;
        let unit = normalize_rows(queries);
        let starts: Vec<usize> = (0..unit.nrows()).step_by(CHUNK).collect();
        starts
            .par_iter()
            .flat_map_iter(|&start| {
                let len = CHUNK.min(unit.nrows() - start);
                let block = unit.rows(start, len);
                let sims = block * self.space.vectors().transpose();
                (0..len)
                    .map(|r| {
                        if block.row(r).norm() == 0.0 {
                            return None;
                        }
                        let row = sims.row(r);
                        let mut best = (0, f64::NEG_INFINITY);
                        for (j, &s) in row.iter().enumerate() {
                            if s > best.1 {
                                best = (j, s);
                            }
                        }
                        Some((best.0, best.1.clamp(-1.0, 1.0)))
                    })
                    .collect::<Vec<_>>()
            })
            .collect()
    }
}

/// One retrieved target token.
#[derive(Clone, Debug, PartialEq)]
pub struct Neighbor {
    pub index: usize,
    pub token: String,
    pub similarity: f64,
}

fn rank_order(a: &(usize, f64), b: &(usize, f64)) -> Ordering {
    b.1.total_cmp(&a.1).then(a.0.cmp(&b.0))
}

/// Exact top-`k` targets by cosine similarity to `v`, best first; equal
/// similarities are ordered by vocabulary index. With `threshold`, hits
/// below it are dropped, possibly leaving the list empty.
pub fn nearest_neighbors(
    v: &DVector<f64>,
    tgt: &TargetIndex,
    k: usize,
    threshold: Option<f64>,
) -> Result<Vec<Neighbor>> {
    if k == 0 {
        return Err(Error::Config("k must be >= 1".into()));
    }
    let sims = tgt.similarities(v)?;
    let mut scored: Vec<(usize, f64)> = sims
        .iter()
        .enumerate()
        .map(|(i, &s)| (i, s.clamp(-1.0, 1.0)))
        .collect();
    let k = k.min(scored.len());
    if k < scored.len() {
        scored.select_nth_unstable_by(k, rank_order);
        scored.truncate(k);
    }
    scored.sort_by(rank_order);
    Ok(scored
        .into_iter()
        .filter(|&(_, s)| threshold.is_none_or(|t| s >= t))
        .map(|(i, s)| Neighbor {
            index: i,
            token: tgt.space().vocab().token(i).to_owned(),
            similarity: s,
        })
        .collect())
}

/// Ranked targets for one source token.
#[derive(Clone, Debug, PartialEq)]
pub struct QueryResult {
    pub query: String,
    pub neighbors: Vec<Neighbor>,
}

impl QueryResult {
    /// 1-based rank of `target`, if retrieved.
    pub fn rank_of(&self, target: &str) -> Option<usize> {
        self.neighbors
            .iter()
            .position(|n| n.token == target)
            .map(|p| p + 1)
    }

    pub fn top(&self) -> Option<&Neighbor> {
        self.neighbors.first()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum QueryOutcome {
    Found(QueryResult),
    OutOfVocabulary(String),
}

impl QueryOutcome {
    pub fn query(&self) -> &str {
        match self {
            QueryOutcome::Found(r) => &r.query,
            QueryOutcome::OutOfVocabulary(q) => q,
        }
    }

    pub fn result(&self) -> Option<&QueryResult> {
        match self {
            QueryOutcome::Found(r) => Some(r),
            QueryOutcome::OutOfVocabulary(_) => None,
        }
    }
}

/// Maps a source token through `w` and retrieves its nearest targets.
pub fn query_token(
    token: &str,
    w: &MappingMatrix,
    src: &EmbeddingSpace,
    tgt: &TargetIndex,
    k: usize,
    threshold: Option<f64>,
) -> Result<QueryOutcome> {
    let Some(x) = src.vector_of(token) else {
        return Ok(QueryOutcome::OutOfVocabulary(token.to_owned()));
    };
    let mapped = map_vector(w, &x)?;
    let neighbors = nearest_neighbors(&mapped, tgt, k, threshold)?;
    Ok(QueryOutcome::Found(QueryResult {
        query: token.to_owned(),
        neighbors,
    }))
}

/// [`query_token`] over a list, in input order. Unknown tokens produce
/// [`QueryOutcome::OutOfVocabulary`]; a zero source vector yields an empty
/// result list.
pub fn batch_query(
    tokens: &[String],
    w: &MappingMatrix,
    src: &EmbeddingSpace,
    tgt: &TargetIndex,
    k: usize,
    threshold: Option<f64>,
) -> Result<Vec<QueryOutcome>> {
    if w.dim() != src.dim() || src.dim() != tgt.dim() {
        return Err(Error::DimensionMismatch {
            expected: w.dim(),
            actual: if w.dim() != src.dim() { src.dim() } else { tgt.dim() },
        });
    }
    if k == 0 {
        return Err(Error::Config("k must be >= 1".into()));
    }
    tokens
        .par_iter()
        .map(|t| match query_token(t, w, src, tgt, k, threshold) {
            Err(Error::ZeroVector) => Ok(QueryOutcome::Found(QueryResult {
                query: t.clone(),
                neighbors: Vec::new(),
            })),
            other => other,
        })
        .collect()
}

/// Writes `query<TAB>rank<TAB>target<TAB>similarity` rows. Out-of-vocabulary
/// queries are written with rank 0 and target `<OOV>`.
pub fn write_results<W: Write>(outcomes: &[QueryOutcome], mut w: W) -> std::io::Result<()> {
    for o in outcomes {
        match o {
            QueryOutcome::Found(r) => {
                for (rank, n) in r.neighbors.iter().enumerate() {
                    writeln!(w, "{}\t{}\t{}\t{:.6}", r.query, rank + 1, n.token, n.similarity)?;
                }
            }
            QueryOutcome::OutOfVocabulary(q) => writeln!(w, "{q}\t0\t<OOV>\tNaN")?,
        }
    }
    Ok(())
}
