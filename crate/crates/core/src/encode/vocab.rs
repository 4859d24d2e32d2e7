use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::EncodeError;
use crate::corpus::CleanText;

pub const PAD: u32 = 0;
pub const OOV: u32 = 1;

const PAD_TOKEN: &str = "<pad>";
const OOV_TOKEN: &str = "<oov>";

/// Token index built from training text. Index 0 pads, index 1 stands for
/// any unknown word. One further index, [`Vocabulary::separator`], is
/// reserved past the end for the title/body boundary.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

impl From<Vec<String>> for Vocabulary {
    fn from(tokens: Vec<String>) -> Self {
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i as u32)).collect();
        Self { tokens, index }
    }
}

impl From<Vocabulary> for Vec<String> {
    fn from(v: Vocabulary) -> Self {
        v.tokens
    }
}

impl Vocabulary {
    /// Number of indices including the two reserved ones (but not the separator).
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.len() <= 2
    }

    pub fn separator(&self) -> u32 {
        self.tokens.len() as u32
    }

    /// Rows an embedding table needs: every index plus the separator.
    pub fn embedding_rows(&self) -> usize {
        self.tokens.len() + 1
    }

    pub fn get(&self, token: &str) -> u32 {
        self.index.get(token).copied().unwrap_or(OOV)
    }

    pub fn token(&self, index: u32) -> Option<&str> {
        self.tokens.get(index as usize).map(String::as_str)
    }

    /// Word tokens (without the reserved entries) in index order.
    pub fn words(&self) -> impl Iterator<Item = &str> {
        self.tokens[2..].iter().map(String::as_str)
    }
}

/// Tokens ordered by descending frequency, ties broken lexicographically;
/// `max_size` caps the number of word entries.
pub fn build_vocab<'a, I>(train_texts: I, max_size: Option<usize>) -> Result<Vocabulary, EncodeError>
where
    I: IntoIterator<Item = &'a CleanText>,
{
    let mut freq: HashMap<&str, usize> = HashMap::new();
    let mut docs = 0usize;
    for text in train_texts {
        docs += 1;
        for w in text.words() {
            *freq.entry(w).or_default() += 1;
        }
    }
    if docs == 0 {
        return Err(EncodeError::EmptyCorpus);
    }
    let mut ranked: Vec<(&str, usize)> = freq.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    if let Some(cap) = max_size {
        ranked.truncate(cap);
    }
    let mut tokens = Vec::with_capacity(ranked.len() + 2);
    tokens.push(PAD_TOKEN.to_string());
    tokens.push(OOV_TOKEN.to_string());
    tokens.extend(ranked.into_iter().map(|(w, _)| w.to_string()));
    Ok(Vocabulary::from(tokens))
}

fn fit(mut ids: Vec<u32>, max_len: usize) -> Vec<u32> {
    ids.truncate(max_len);
    ids.resize(max_len, PAD);
    ids
}

/// Maps words to indices, keeps the first `max_len`, and post-pads with [`PAD`].
pub fn tokenize_words(text: &CleanText, vocab: &Vocabulary, max_len: usize) -> Vec<u32> {
    fit(text.words().map(|w| vocab.get(w)).collect(), max_len)
}

/// Title indices, one separator, body indices; truncated and padded as one sequence.
pub fn tokenize_pair(title: &CleanText, body: &CleanText, vocab: &Vocabulary, max_len: usize) -> Vec<u32> {
    let ids: Vec<u32> = title
        .words()
        .map(|w| vocab.get(w))
        .chain(std::iter::once(vocab.separator()))
        .chain(body.words().map(|w| vocab.get(w)))
        .take(max_len)
        .collect();
    fit(ids, max_len)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::clean_text;

    fn texts(raw: &[&str]) -> Vec<CleanText> {
        raw.iter().map(|s| clean_text(s)).collect()
    }

    #[test]
    fn frequency_then_lexicographic() {
        let v = build_vocab(&texts(&["a b a", "b c"]), None).unwrap();
        assert_eq!((v.get("a"), v.get("b"), v.get("c")), (2, 3, 4));
        assert_eq!(v.len(), 5);
        assert_eq!(v.token(0), Some("<pad>"));
        assert_eq!(v.token(1), Some("<oov>"));
    }

    #[test]
    fn capped_and_empty() {
        let v = build_vocab(&texts(&["a b"]), Some(1)).unwrap();
        assert_eq!(v.len(), 3);
        assert_eq!(v.get("a"), 2);
        assert_eq!(v.get("b"), OOV);
        assert!(matches!(
            build_vocab(&Vec::<CleanText>::new(), None),
            Err(EncodeError::EmptyCorpus)
        ));
    }

    #[test]
    fn tokenizes_with_padding_and_oov() {
        let v = build_vocab(&texts(&["a b a", "b c"]), None).unwrap();
        assert_eq!(tokenize_words(&clean_text("a c"), &v, 4), vec![2, 4, 0, 0]);
        assert_eq!(tokenize_words(&clean_text(""), &v, 4), vec![0, 0, 0, 0]);
        assert_eq!(tokenize_words(&clean_text("zzz"), &v, 4), vec![1, 0, 0, 0]);
        assert_eq!(tokenize_words(&clean_text("a b c a b"), &v, 3), vec![2, 3, 4]);
    }

    #[test]
    fn pair_uses_reserved_separator() {
        let v = build_vocab(&texts(&["a b a", "b c"]), None).unwrap();
        let sep = v.separator();
        assert_eq!(sep, 5);
        assert_eq!(
            tokenize_pair(&clean_text("a"), &clean_text("c b"), &v, 6),
            vec![2, sep, 4, 3, 0, 0]
        );
        assert_eq!(tokenize_pair(&clean_text("a b"), &clean_text("c"), &v, 2), vec![2, 3]);
    }

    #[test]
    fn serde_round_trip() {
        let v = build_vocab(&texts(&["x y z y"]), None).unwrap();
        let json = serde_json::to_string(&v).unwrap();
        let back: Vocabulary = serde_json::from_str(&json).unwrap();
        assert_eq!(back, v);
        assert_eq!(back.get("y"), 2);
    }

    proptest::proptest! {
        #[test]
        fn truncation_keeps_a_prefix(words in proptest::collection::vec("[a-e]{1,3}", 0..40), max_len in 1usize..30) {
            let text = clean_text(&words.join(" "));
            let v = build_vocab(std::slice::from_ref(&clean_text("a b c d e aa bb")), None).unwrap();
            let ids = tokenize_words(&text, &v, max_len);
            proptest::prop_assert_eq!(ids.len(), max_len);
            let full: Vec<u32> = text.words().map(|w| v.get(w)).collect();
            let kept = full.len().min(max_len);
            proptest::prop_assert_eq!(&ids[..kept], &full[..kept]);
            proptest::prop_assert!(ids[kept..].iter().all(|&i| i == PAD));
            let pair = tokenize_pair(&text, &text, &v, max_len);
            proptest::prop_assert_eq!(pair.len(), max_len);
            proptest::prop_assert_eq!(&pair[..kept], &full[..kept]);
        }
    }
}
