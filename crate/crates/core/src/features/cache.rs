use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use half::f16;
use memmap2::Mmap;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::FeatureError;
use crate::corpus::{PreparedArticle, CLEANING_VERSION};
use crate::encode::{ContextualEncoder, Matrix};
use crate::models::DenseRows;
use crate::stance::StanceScore;

const META_FILE: &str = "meta.json";
const DATA_FILE: &str = "vectors.f16";
const CHUNK: usize = 32;

/// Values stored in the cache, so fresh and cached encodings agree bitwise.
pub fn round_to_f16(m: &mut Matrix) {
    for x in &mut m.data {
        *x = f16::from_f32(*x).to_f32();
    }
}

/// sha256 over ids and cleaned texts, in order.
pub fn corpus_hash(articles: &[PreparedArticle]) -> String {
    let mut h = Sha256::new();
    for a in articles {
        for part in [a.id.as_str(), a.title.as_str(), a.body.as_str()] {
            h.update((part.len() as u64).to_le_bytes());
            h.update(part.as_bytes());
        }
    }
    hex::encode(&h.finalize()[..16])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Meta {
    fingerprint: String,
    max_len: usize,
    cleaning_version: u32,
    corpus_hash: String,
    dim: usize,
    ids: Vec<String>,
    stance: Vec<StanceScore>,
}

/// Pair encodings of a whole corpus as `f16`, memory-mapped read-only.
pub struct DenseCache {
    dir: PathBuf,
    meta: Meta,
    map: Mmap,
}

impl std::fmt::Debug for DenseCache {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DenseCache")
            .field("dir", &self.dir)
            .field("rows", &self.meta.ids.len())
            .field("max_len", &self.meta.max_len)
            .field("dim", &self.meta.dim)
            .finish()
    }
}

/// Encoded pair vectors and stance for one article, as the cache stores them.
pub(crate) type Encoded = (Matrix, StanceScore);

impl DenseCache {
    /// Directory for a key under `root`.
    pub fn key_dir(root: &Path, fingerprint: &str, max_len: usize, corpus_hash: &str) -> PathBuf {
        root.join(format!("{fingerprint}-L{max_len}-c{CLEANING_VERSION}-{corpus_hash}"))
    }

    /// Opens the cache for `articles` if a complete one exists, else encodes and writes it.
    pub(crate) fn open_or_build(
        root: &Path,
        encoder: &ContextualEncoder,
        max_len: usize,
        articles: &[PreparedArticle],
        encode: impl Fn(&PreparedArticle) -> Result<Encoded, FeatureError> + Sync,
    ) -> Result<Self, FeatureError> {
        let hash = corpus_hash(articles);
        let dir = Self::key_dir(root, encoder.fingerprint(), max_len, &hash);
        let want = Meta {
            fingerprint: encoder.fingerprint().to_string(),
            max_len,
            cleaning_version: CLEANING_VERSION,
            corpus_hash: hash,
            dim: encoder.dim(),
            ids: articles.iter().map(|a| a.id.clone()).collect(),
            stance: Vec::new(),
        };
        if let Ok(c) = Self::open(&dir) {
            if (Meta {
                stance: Vec::new(),
                ..c.meta.clone()
            }) == want
            {
                log::info!("reusing embedding cache {}", dir.display());
                return Ok(c);
            }
        }
        std::fs::create_dir_all(&dir)?;
        let _ = std::fs::remove_file(dir.join(META_FILE));
        let tmp = dir.join(format!("{DATA_FILE}.partial"));
        let mut out = BufWriter::new(File::create(&tmp)?);
        let mut stance = Vec::with_capacity(articles.len());
        let row_len = max_len * encoder.dim();
        for (i, chunk) in articles.chunks(CHUNK).enumerate() {
            let encoded: Vec<Encoded> = chunk.par_iter().map(&encode).collect::<Result<_, _>>()?;
            for (m, s) in encoded {
                debug_assert_eq!(m.data.len(), row_len);
                let bytes: Vec<u8> = m.data.iter().flat_map(|&x| f16::from_f32(x).to_le_bytes()).collect();
                out.write_all(&bytes)?;
                stance.push(s);
            }
            log::info!("encoded {} of {} articles", (i * CHUNK + chunk.len()), articles.len());
        }
        out.into_inner().map_err(|e| e.into_error())?.sync_all()?;
        std::fs::rename(&tmp, dir.join(DATA_FILE))?;
        let meta = Meta { stance, ..want };
        std::fs::write(dir.join(META_FILE), serde_json::to_vec(&meta)?)?;
        Self::open(&dir)
    }

    pub fn open(dir: &Path) -> Result<Self, FeatureError> {
        let meta: Meta = serde_json::from_slice(&std::fs::read(dir.join(META_FILE))?)?;
        let file = File::open(dir.join(DATA_FILE))?;
        // SAFETY: the file is written once, renamed into place, and never modified afterwards.
        let map = unsafe { Mmap::map(&file)? };
        let expect = meta.ids.len() * meta.max_len * meta.dim * 2;
        if map.len() != expect || meta.stance.len() != meta.ids.len() {
            return Err(FeatureError::Cache(format!(
                "{}: {} bytes, expected {expect}",
                dir.display(),
                map.len()
            )));
        }
        Ok(Self {
            dir: dir.to_path_buf(),
            meta,
            map,
        })
    }

    pub fn len(&self) -> usize {
        self.meta.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.meta.ids.is_empty()
    }

    pub fn stance(&self, row: usize) -> StanceScore {
        self.meta.stance[row]
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }
}

impl DenseRows for DenseCache {
    fn seq_len(&self) -> usize {
        self.meta.max_len
    }

    fn dim(&self) -> usize {
        self.meta.dim
    }

    fn copy_row(&self, row: usize, out: &mut [f32]) {
        let n = self.meta.max_len * self.meta.dim;
        let bytes = &self.map[row * n * 2..(row + 1) * n * 2];
        for (o, b) in out.iter_mut().zip(bytes.chunks_exact(2)) {
            *o = f16::from_le_bytes([b[0], b[1]]).to_f32();
        }
    }
}
