use std::collections::HashMap;
use std::io::BufRead;
use std::path::Path;

use super::{EncodeError, Matrix, Vocabulary};

/// Pretrained word vectors in the whitespace-separated text format
/// (`token v1 v2 ... vd` per line).
#[derive(Debug, Clone)]
pub struct StaticEmbeddingTable {
    dim: usize,
    index: HashMap<String, usize>,
    data: Vec<f32>,
}

impl StaticEmbeddingTable {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, EncodeError> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| EncodeError::VectorLoad {
            path: path.display().to_string(),
            reason: e.to_string(),
        })?;
        Self::read(std::io::BufReader::new(file)).map_err(|reason| EncodeError::VectorLoad {
            path: path.display().to_string(),
            reason,
        })
    }

    pub fn read<R: BufRead>(reader: R) -> Result<Self, String> {
        let mut dim = None;
        let mut index = HashMap::new();
        let mut data = Vec::new();
        for (n, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| e.to_string())?;
            let mut parts = line.split_whitespace();
            let Some(token) = parts.next() else { continue };
            let start = data.len();
            for p in parts {
                let v: f32 = p
                    .parse()
                    .map_err(|_| format!("line {}: `{p}` is not a number", n + 1))?;
                data.push(v);
            }
            let d = data.len() - start;
            match dim {
                None if d == 0 => return Err(format!("line {}: token without a vector", n + 1)),
                None => dim = Some(d),
                Some(expected) if expected != d => {
                    return Err(format!("line {}: dimension {d}, expected {expected}", n + 1));
                }
                _ => {}
            }
            if index.insert(token.to_string(), start / dim.unwrap_or(1)).is_some() {
                // later duplicates overwrite earlier rows in the index but not in storage
                log::debug!("duplicate word vector for `{token}`");
            }
        }
        let dim = dim.ok_or_else(|| "file contains no vectors".to_string())?;
        Ok(Self { dim, index, data })
    }

    pub fn from_pairs<S: Into<String>>(pairs: impl IntoIterator<Item = (S, Vec<f32>)>) -> Result<Self, String> {
        let mut dim = None;
        let mut index = HashMap::new();
        let mut data = Vec::new();
        for (tok, vec) in pairs {
            if *dim.get_or_insert(vec.len()) != vec.len() {
                return Err("mixed vector dimensions".into());
            }
            index.insert(tok.into(), data.len() / vec.len().max(1));
            data.extend(vec);
        }
        Ok(Self {
            dim: dim.ok_or("no vectors")?,
            index,
            data,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    pub fn lookup(&self, token: &str) -> Option<&[f32]> {
        self.index
            .get(token)
            .map(|&r| &self.data[r * self.dim..(r + 1) * self.dim])
    }

    /// Rows for every vocabulary index plus the separator. Padding, OOV,
    /// the separator and words missing from the table get zero vectors.
    pub fn restrict(&self, vocab: &Vocabulary) -> VocabEmbedding {
        let mut m = Matrix::zeros(vocab.embedding_rows(), self.dim);
        let mut hits = 0usize;
        for (i, w) in vocab.words().enumerate() {
            if let Some(v) = self.lookup(w) {
                m.row_mut(i + 2).copy_from_slice(v);
                hits += 1;
            }
        }
        log::info!("word vectors cover {hits} of {} vocabulary words", vocab.len() - 2);
        VocabEmbedding { matrix: m }
    }
}

/// Word vectors aligned to vocabulary indices.
#[derive(Debug, Clone, PartialEq)]
pub struct VocabEmbedding {
    pub matrix: Matrix,
}

impl VocabEmbedding {
    pub fn dim(&self) -> usize {
        self.matrix.cols
    }

    pub fn row(&self, id: u32) -> &[f32] {
        self.matrix.row(id as usize)
    }
}

/// One row per position; ids outside the table map to zero rows.
pub fn embed_static(ids: &[u32], table: &VocabEmbedding) -> Matrix {
    let mut out = Matrix::zeros(ids.len(), table.dim());
    for (pos, &id) in ids.iter().enumerate() {
        if (id as usize) < table.matrix.rows {
            out.row_mut(pos).copy_from_slice(table.row(id));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::super::{build_vocab, tokenize_words, PAD};
    use super::*;
    use crate::corpus::clean_text;

    const SAMPLE: &str = "the 0.1 0.2 0.3\nnews 1 0 -1\nfake -0.5 0.5 2\n";

    #[test]
    fn reads_text_format() {
        let t = StaticEmbeddingTable::read(SAMPLE.as_bytes()).unwrap();
        assert_eq!(t.dim(), 3);
        assert_eq!(t.len(), 3);
        assert_eq!(t.lookup("news"), Some(&[1.0, 0.0, -1.0][..]));
        assert_eq!(t.lookup("missing"), None);
    }

    #[test]
    fn rejects_mixed_dimensions() {
        let err = StaticEmbeddingTable::read("a 1 2 3\nb 1 2\n".as_bytes()).unwrap_err();
        assert!(err.contains("line 2"), "{err}");
        assert!(StaticEmbeddingTable::read("".as_bytes()).is_err());
        assert!(StaticEmbeddingTable::read("a 1 x\n".as_bytes()).is_err());
    }

    #[test]
    fn load_reports_path() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.txt");
        std::fs::write(&p, "a 1\nb 1 2\n").unwrap();
        assert!(matches!(
            StaticEmbeddingTable::load(&p),
            Err(EncodeError::VectorLoad { .. })
        ));
    }

    #[test]
    fn embeds_known_token_and_zero_padding() {
        let t = StaticEmbeddingTable::read(SAMPLE.as_bytes()).unwrap();
        let vocab = build_vocab(&[clean_text("news fake unknown")], None).unwrap();
        let table = t.restrict(&vocab);
        let ids = tokenize_words(&clean_text("news"), &vocab, 4);
        let m = embed_static(&ids, &table);
        assert_eq!(m.row(0), t.lookup("news").unwrap());
        for r in 1..4 {
            assert!(m.row(r).iter().all(|&x| x == 0.0));
        }
        let pad = embed_static(&[PAD; 5], &table);
        assert!(pad.data.iter().all(|&x| x == 0.0));
        // in vocabulary, absent from the vector file
        let unk = embed_static(&[vocab.get("unknown")], &table);
        assert!(unk.data.iter().all(|&x| x == 0.0));
        assert!(table.row(vocab.separator()).iter().all(|&x| x == 0.0));
    }
}
