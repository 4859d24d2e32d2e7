//! Text to numbers: learned-index vocabularies, static word vectors,
//! a contextual transformer encoder, and masked mean pooling.

mod contextual;
mod transformer;
mod vocab;
mod word_vectors;

pub use contextual::{ContextualEncoder, ContextualEncoding, EncoderInfo};
pub use transformer::{Activation, DistilBert, TransformerConfig};
pub use vocab::{build_vocab, tokenize_pair, tokenize_words, Vocabulary, OOV, PAD};
pub use word_vectors::{embed_static, StaticEmbeddingTable, VocabEmbedding};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EncodeError {
    #[error("cannot build a vocabulary from an empty corpus")]
    EmptyCorpus,
    #[error("word vector file {path}: {reason}")]
    VectorLoad { path: String, reason: String },
    #[error("encoder unavailable: {0}")]
    EncoderUnavailable(String),
    #[error("encoder configuration: {0}")]
    Config(String),
    #[error("pooling requires at least one unmasked position")]
    AllMasked,
    #[error("vector/mask length mismatch: {vectors} rows, {mask} mask entries")]
    Shape { vectors: usize, mask: usize },
    #[error(transparent)]
    Tensor(#[from] candle_core::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Dense row-major `rows x cols` block of `f32`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f32>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_rows(rows: &[Vec<f32>]) -> Self {
        let cols = rows.first().map_or(0, Vec::len);
        assert!(rows.iter().all(|r| r.len() == cols), "ragged rows");
        Self {
            rows: rows.len(),
            cols,
            data: rows.concat(),
        }
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f32] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }
}

/// Mean of the unmasked token vectors of one text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PooledVector {
    pub values: Vec<f64>,
    pub source_token_count: usize,
}

/// Arithmetic mean over rows whose mask entry is non-zero, accumulated in `f64`.
pub fn pool(vectors: &Matrix, mask: &[u8]) -> Result<PooledVector, EncodeError> {
    if mask.len() != vectors.rows {
        return Err(EncodeError::Shape {
            vectors: vectors.rows,
            mask: mask.len(),
        });
    }
    let mut sum = vec![0.0f64; vectors.cols];
    let mut count = 0usize;
    for (i, &m) in mask.iter().enumerate() {
        if m == 0 {
            continue;
        }
        count += 1;
        for (s, &v) in sum.iter_mut().zip(vectors.row(i)) {
            *s += f64::from(v);
        }
    }
    if count == 0 {
        return Err(EncodeError::AllMasked);
    }
    let n = count as f64;
    sum.iter_mut().for_each(|s| *s /= n);
    Ok(PooledVector {
        values: sum,
        source_token_count: count,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn pools_masked_mean() {
        let m = Matrix::from_rows(&[vec![1.0, 1.0], vec![3.0, 3.0]]);
        assert_eq!(pool(&m, &[1, 1]).unwrap().values, vec![2.0, 2.0]);
        let m = Matrix::from_rows(&[vec![1.0, 1.0], vec![9.0, 9.0]]);
        let p = pool(&m, &[1, 0]).unwrap();
        assert_eq!(p.values, vec![1.0, 1.0]);
        assert_eq!(p.source_token_count, 1);
        assert!(matches!(pool(&m, &[0, 0]), Err(EncodeError::AllMasked)));
        assert!(matches!(pool(&m, &[1]), Err(EncodeError::Shape { .. })));
    }

    proptest! {
        #[test]
        fn uniform_mask_is_plain_mean(rows in prop::collection::vec(prop::collection::vec(-1e3f32..1e3, 5), 1..40)) {
            let m = Matrix::from_rows(&rows);
            let p = pool(&m, &vec![1; rows.len()]).unwrap();
            for j in 0..5 {
                let mut s = 0.0f64;
                for r in &rows {
                    s += r[j] as f64;
                }
                prop_assert!((p.values[j] - s / rows.len() as f64).abs() <= 1e-9);
            }
        }
    }
}
