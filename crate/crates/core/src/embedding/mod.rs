//! Embedding spaces: token vectors with their corpus frequencies.

mod io;
mod skipgram;

pub use io::{frequency_sidecar_path, load_space, read_space, save_space, write_space};
pub use skipgram::{sgns_gradients, sgns_loss, train_skipgram, SgnsGradients, TrainConfig};

use nalgebra::{DMatrix, DVector, RowDVector};

use crate::corpus::Vocabulary;
use crate::error::{Error, Result};

/// A vocabulary together with one `dim`-dimensional row vector per token.
/// Row `i` belongs to vocabulary index `i`.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingSpace {
    vocab: Vocabulary,
    vectors: DMatrix<f64>,
}

impl EmbeddingSpace {
    pub fn new(vocab: Vocabulary, vectors: DMatrix<f64>) -> Result<Self> {
        if vocab.len() != vectors.nrows() {
            return Err(Error::RowCountMismatch {
                expected: vocab.len(),
                actual: vectors.nrows(),
            });
        }
        if vectors.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("embedding vectors".into()));
        }
        Ok(EmbeddingSpace { vocab, vectors })
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn vectors(&self) -> &DMatrix<f64> {
        &self.vectors
    }

    pub fn dim(&self) -> usize {
        self.vectors.ncols()
    }

    pub fn len(&self) -> usize {
        self.vectors.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn vector(&self, idx: usize) -> DVector<f64> {
        self.vectors.row(idx).transpose()
    }

    pub fn vector_of(&self, token: &str) -> Option<DVector<f64>> {
        self.vocab.index(token).map(|i| self.vector(i))
    }

    /// Copy with every non-zero row scaled to unit length.
    pub fn normalized(&self) -> EmbeddingSpace {
        EmbeddingSpace {
            vocab: self.vocab.clone(),
            vectors: normalize_rows(&self.vectors),
        }
    }

    /// Stacks the rows for `indices` into a `|indices| × dim` matrix.
    pub fn rows(&self, indices: &[usize]) -> DMatrix<f64> {
        let rows: Vec<RowDVector<f64>> = indices
            .iter()
            .map(|&i| self.vectors.row(i).into_owned())
            .collect();
        if rows.is_empty() {
            return DMatrix::zeros(0, self.dim());
        }
        DMatrix::from_rows(&rows)
    }

    /// The `k` most frequent token indices (ties by index).
    pub fn top_frequent(&self, k: usize) -> Vec<usize> {
        let mut order = self.vocab.frequency_order();
        order.truncate(k);
        order
    }
}

/// Scales each non-zero row of `m` to unit Euclidean norm.
pub fn normalize_rows(m: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = m.clone();
    for mut row in out.row_iter_mut() {
        let n = row.norm();
        if n > 0.0 {
            row /= n;
        }
    }
    out
}
