//! Synthetic corpora and a miniature transformer checkpoint for tests and demos.

use std::fmt::Write as _;
use std::path::Path;

use candle_core::{Device, Tensor};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use crate::corpus::{Article, Label};
use crate::encode::TransformerConfig;

const TOPICS: [&[&str]; 6] = [
    &[
        "election",
        "senate",
        "vote",
        "campaign",
        "ballot",
        "governor",
        "policy",
        "congress",
        "candidate",
        "debate",
        "poll",
        "party",
    ],
    &[
        "market",
        "stocks",
        "economy",
        "inflation",
        "trade",
        "bank",
        "investors",
        "growth",
        "tariff",
        "budget",
        "shares",
        "prices",
    ],
    &[
        "virus", "vaccine", "hospital", "doctors", "health", "patients", "disease", "clinic", "outbreak", "medicine",
        "nurses", "study",
    ],
    &[
        "storm",
        "flood",
        "climate",
        "weather",
        "wildfire",
        "drought",
        "coast",
        "rain",
        "emissions",
        "heat",
        "hurricane",
        "ocean",
    ],
    &[
        "court", "judge", "lawsuit", "trial", "police", "jury", "verdict", "attorney", "prison", "ruling", "charges",
        "appeal",
    ],
    &[
        "team", "season", "coach", "league", "match", "players", "stadium", "score", "title", "fans", "injury", "final",
    ],
];

const FILLER: &[&str] = &[
    "the",
    "a",
    "of",
    "to",
    "and",
    "in",
    "on",
    "for",
    "with",
    "was",
    "is",
    "said",
    "that",
    "after",
    "new",
    "by",
    "from",
    "officials",
    "report",
    "week",
    "year",
    "people",
    "state",
    "city",
    "local",
];

const SENSATIONAL: &[&str] = &[
    "shocking",
    "secret",
    "exposed",
    "hoax",
    "unbelievable",
    "banned",
    "truth",
    "cover",
    "miracle",
    "outrage",
];

fn lexicon() -> Vec<&'static str> {
    let mut words: Vec<&str> = TOPICS.iter().flat_map(|t| t.iter().copied()).collect();
    words.extend(FILLER);
    words.extend(SENSATIONAL);
    words.sort_unstable();
    words.dedup();
    words
}

fn decorate(rng: &mut ChaCha8Rng, word: &str) -> String {
    match rng.random_range(0..12) {
        0 => {
            let mut c = word.chars();
            c.next()
                .map(|f| f.to_uppercase().collect::<String>() + c.as_str())
                .unwrap_or_default()
        }
        1 => format!("{word},"),
        2 => format!("{word}."),
        3 => format!("<b>{word}</b>"),
        _ => word.to_string(),
    }
}

fn words(rng: &mut ChaCha8Rng, n: usize, topic: usize, topic_share: f64, extra: &[&str], extra_share: f64) -> String {
    (0..n)
        .map(|_| {
            let r: f64 = rng.random();
            let w = if r < extra_share {
                extra.choose(rng).copied().unwrap_or("the")
            } else if r < extra_share + topic_share {
                TOPICS[topic].choose(rng).copied().unwrap_or("the")
            } else {
                FILLER.choose(rng).copied().unwrap_or("the")
            };
            decorate(rng, w)
        })
        .collect::<Vec<_>>()
        .join(" ")
}

/// `n` balanced articles, alternating FAKE and REAL. REAL titles share the
/// body's topic; FAKE titles usually come from another topic, and FAKE
/// bodies carry sensational words. Markup and punctuation exercise cleaning.
pub fn synthetic_corpus(n: usize, seed: u64) -> Vec<Article> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let label = if i % 2 == 0 { Label::Fake } else { Label::Real };
            let topic = rng.random_range(0..TOPICS.len());
            let (title_topic, extra_share) = match label {
                Label::Real => (topic, 0.02),
                Label::Fake if rng.random_bool(0.8) => {
                    ((topic + rng.random_range(1..TOPICS.len())) % TOPICS.len(), 0.12)
                }
                Label::Fake => (topic, 0.12),
            };
            let title_len = rng.random_range(4..9);
            let body_len = rng.random_range(30..90);
            Article {
                id: format!("a{i:05}"),
                title: words(&mut rng, title_len, title_topic, 0.7, SENSATIONAL, extra_share / 2.0),
                body: format!(
                    "<p>{}</p>",
                    words(&mut rng, body_len, topic, 0.45, SENSATIONAL, extra_share)
                ),
                label,
            }
        })
        .collect()
}

/// Writes a whitespace-separated word-vector file covering the synthetic
/// lexicon. Words of one topic, the sensational words and the filler words
/// each lie near a shared direction.
pub fn write_synthetic_vectors(path: &Path, dim: usize, seed: u64) -> std::io::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gauss = |rng: &mut ChaCha8Rng| -> f32 { (0..6).map(|_| rng.random::<f32>()).sum::<f32>() - 3.0 };
    let centroids: Vec<Vec<f32>> = (0..TOPICS.len() + 2)
        .map(|_| (0..dim).map(|_| gauss(&mut rng)).collect())
        .collect();
    let mut out = String::new();
    for w in lexicon() {
        let group = TOPICS
            .iter()
            .position(|t| t.contains(&w))
            .unwrap_or(if SENSATIONAL.contains(&w) {
                TOPICS.len()
            } else {
                TOPICS.len() + 1
            });
        let _ = write!(out, "{w}");
        for c in &centroids[group] {
            let _ = write!(out, " {:.5}", c + 0.5 * gauss(&mut rng));
        }
        out.push('\n');
    }
    std::fs::write(path, out)
}

/// Writes `config.json`, `tokenizer.json` and `model.safetensors` for a
/// two-layer, 32-wide transformer with a WordPiece vocabulary over the
/// synthetic lexicon plus single characters. Weights are drawn from `seed`.
pub fn write_tiny_checkpoint(dir: &Path, seed: u64) -> Result<(), Box<dyn std::error::Error + Send + Sync>> {
    std::fs::create_dir_all(dir)?;
    let specials = ["[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"];
    let mut tokens: Vec<String> = specials.iter().map(|s| s.to_string()).collect();
    tokens.extend(lexicon().into_iter().map(String::from));
    let chars: Vec<char> = ('a'..='z').chain('0'..='9').collect();
    tokens.extend(chars.iter().map(|c| c.to_string()));
    tokens.extend(chars.iter().map(|c| format!("##{c}")));
    let mut seen = std::collections::HashSet::new();
    tokens.retain(|t| seen.insert(t.clone()));
    let vocab: serde_json::Map<String, serde_json::Value> =
        tokens.iter().enumerate().map(|(i, t)| (t.clone(), json!(i))).collect();
    let added: Vec<_> = specials
        .iter()
        .enumerate()
        .map(|(i, s)| {
            json!({"id": i, "content": s, "single_word": false, "lstrip": false, "rstrip": false,
                   "normalized": false, "special": true})
        })
        .collect();
    let tokenizer = json!({
        "version": "1.0",
        "truncation": null,
        "padding": null,
        "added_tokens": added,
        "normalizer": {"type": "BertNormalizer", "clean_text": true, "handle_chinese_chars": true,
                       "strip_accents": null, "lowercase": true},
        "pre_tokenizer": {"type": "BertPreTokenizer"},
        "post_processor": null,
        "decoder": {"type": "WordPiece", "prefix": "##", "cleanup": true},
        "model": {"type": "WordPiece", "unk_token": "[UNK]", "continuing_subword_prefix": "##",
                  "max_input_chars_per_word": 100, "vocab": vocab}
    });
    std::fs::write(dir.join("tokenizer.json"), serde_json::to_string(&tokenizer)?)?;

    let config = json!({
        "vocab_size": tokens.len(),
        "dim": 32,
        "n_layers": 2,
        "n_heads": 4,
        "hidden_dim": 64,
        "activation": "gelu",
        "max_position_embeddings": 128,
        "initializer_range": 0.02,
        "pad_token_id": 0,
        "model_type": "distilbert"
    });
    let config_text = serde_json::to_string_pretty(&config)?;
    std::fs::write(dir.join("config.json"), &config_text)?;

    let cfg: TransformerConfig = serde_json::from_str(&config_text)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tensors = std::collections::HashMap::new();
    for (name, shape) in cfg.parameter_shapes() {
        let n: usize = shape.iter().product();
        let vals: Vec<f32> = if name.to_ascii_lowercase().contains("norm") {
            vec![if name.ends_with("weight") { 1.0 } else { 0.0 }; n]
        } else {
            let scale = if name.starts_with("embeddings") { 0.5 } else { 0.2 };
            (0..n).map(|_| rng.random_range(-scale..scale)).collect()
        };
        tensors.insert(name, Tensor::from_vec(vals, shape, &Device::Cpu)?);
    }
    candle_core::safetensors::save(&tensors, dir.join("model.safetensors"))?;
    Ok(())
}
