//! Headline/body stance: cosine similarity of the pooled title and body vectors.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::CleanText;
use crate::encode::{EncodeError, PooledVector};

#[derive(Debug, Error, PartialEq)]
pub enum CosineError {
    #[error("dimension mismatch: {0} vs {1}")]
    Dimension(usize, usize),
    #[error("zero-norm vector")]
    ZeroNorm,
}

/// `a.b / (|a| |b|)`, clamped to `[-1, 1]`.
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64, CosineError> {
    if a.len() != b.len() {
        return Err(CosineError::Dimension(a.len(), b.len()));
    }
    let (mut dot, mut na, mut nb) = (0.0f64, 0.0f64, 0.0f64);
    for (&x, &y) in a.iter().zip(b) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 || !(na.is_finite() && nb.is_finite()) {
        return Err(CosineError::ZeroNorm);
    }
    Ok((dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StanceScore {
    pub value: f64,
    /// Set when either side was empty or pooled to a zero vector; `value` is then 0.
    pub degenerate: bool,
}

impl StanceScore {
    pub const DEGENERATE: StanceScore = StanceScore {
        value: 0.0,
        degenerate: true,
    };

    pub fn new(value: f64) -> Self {
        Self {
            value,
            degenerate: false,
        }
    }
}

/// Anything that can embed a cleaned text into one pooled vector.
pub trait TextPooler {
    fn pooled(&self, text: &CleanText) -> Result<PooledVector, EncodeError>;
}

/// Embeds title and body with the same encoder and compares them.
pub fn compute_stance<P: TextPooler + ?Sized>(
    title: &CleanText,
    body: &CleanText,
    encoder: &P,
) -> Result<StanceScore, EncodeError> {
    if title.is_empty() || body.is_empty() {
        return Ok(StanceScore::DEGENERATE);
    }
    let t = encoder.pooled(title)?;
    let b = encoder.pooled(body)?;
    Ok(stance_from_pooled(&t, &b))
}

pub fn stance_from_pooled(title: &PooledVector, body: &PooledVector) -> StanceScore {
    match cosine_similarity(&title.values, &body.values) {
        Ok(v) => StanceScore::new(v),
        Err(CosineError::ZeroNorm) => StanceScore::DEGENERATE,
        Err(e @ CosineError::Dimension(..)) => panic!("pooled vectors from one encoder disagree: {e}"),
    }
}

/// `id,stance` rows for export.
pub fn write_stance_csv<W: std::io::Write>(writer: W, rows: &[(String, StanceScore)]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["id", "stance", "degenerate"])?;
    for (id, s) in rows {
        w.write_record([id.as_str(), &s.value.to_string(), &s.degenerate.to_string()])?;
    }
    w.flush()?;
    Ok(())
}
