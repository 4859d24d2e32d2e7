use std::sync::Arc;

use crate::encode::Matrix;
use crate::stance::StanceScore;

/// Read-only store of fixed-shape dense sequences, e.g. an on-disk embedding cache.
pub trait DenseRows: Send + Sync + std::fmt::Debug {
    fn seq_len(&self) -> usize;
    fn dim(&self) -> usize;
    /// Writes row `row` (`seq_len * dim` values) into `out`.
    fn copy_row(&self, row: usize, out: &mut [f32]);
}

/// Model input for one article: title tokens, separator, body tokens.
#[derive(Debug, Clone)]
pub enum Sequence {
    /// Token ids for an embedding front end.
    Ids(Vec<u32>),
    /// Precomputed token vectors, zero rows at padding.
    Dense(Matrix),
    /// A row of a shared dense store.
    Stored { store: Arc<dyn DenseRows>, row: usize },
}

impl Sequence {
    pub fn len(&self) -> usize {
        match self {
            Sequence::Ids(ids) => ids.len(),
            Sequence::Dense(m) => m.rows,
            Sequence::Stored { store, .. } => store.seq_len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Vector width for dense sequences, `None` for ids.
    pub fn dim(&self) -> Option<usize> {
        match self {
            Sequence::Ids(_) => None,
            Sequence::Dense(m) => Some(m.cols),
            Sequence::Stored { store, .. } => Some(store.dim()),
        }
    }

    pub(crate) fn write_dense(&self, out: &mut [f32]) {
        match self {
            Sequence::Dense(m) => out.copy_from_slice(&m.data),
            Sequence::Stored { store, row } => store.copy_row(*row, out),
            Sequence::Ids(_) => unreachable!("ids have no dense form"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct FeatureRecord {
    pub sequence: Sequence,
    pub stance: StanceScore,
    /// 1 = FAKE.
    pub label: u8,
}
