use std::path::Path;

use stancecred::corpus::{clean_text, prepare};
use stancecred::encode::{ContextualEncoder, EncodeError};
use stancecred::features::{Backend, EncoderSettings, Featurizer, Resources};
use stancecred::models::{build_model, predict_proba, train, Architecture, ModelConfig, Sequence, TrainHyperparams};
use stancecred::testkit::{synthetic_corpus, write_tiny_checkpoint};

fn checkpoint(dir: &Path) -> ContextualEncoder {
    write_tiny_checkpoint(dir, 3).unwrap();
    ContextualEncoder::load(dir).unwrap()
}

fn dense(s: &Sequence) -> Vec<f32> {
    match s {
        Sequence::Dense(m) => m.data.clone(),
        Sequence::Stored { store, row } => {
            let mut out = vec![0.0; store.seq_len() * store.dim()];
            store.copy_row(*row, &mut out);
            out
        }
        Sequence::Ids(_) => panic!("ids"),
    }
}

#[test]
fn encoding_structure_and_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let enc = checkpoint(dir.path());
    assert_eq!(enc.dim(), 32);
    let text = clean_text("Senate passes the budget after a long debate");
    let a = enc.encode(&text, 64).unwrap();
    let b = enc.encode(&text, 64).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.token_ids.len(), 64);
    assert_eq!(a.vectors.rows, 64);
    assert_eq!(a.vectors.cols, 32);
    let real = a.attention_mask.iter().filter(|&&m| m == 1).count();
    assert!(a.token_ids[real..].iter().all(|&t| t == enc.info().pad_id));
    assert!(a.vectors.data[real * 32..].iter().all(|&v| v == 0.0));

    let empty = enc.encode(&clean_text(""), 16).unwrap();
    assert_eq!(empty.attention_mask.iter().filter(|&&m| m == 1).count(), 2);

    let long = clean_text(&"election ".repeat(500));
    let e = enc.encode(&long, 128).unwrap();
    assert!(e.attention_mask.iter().all(|&m| m == 1));
    assert!(matches!(enc.encode(&long, 129), Err(EncodeError::Config(_))));
    let w = clean_text("a b");
    assert_eq!(enc.pair_token_ids(&w, &w, 5).unwrap().len(), 5);
}

#[test]
fn missing_checkpoint_is_unavailable() {
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(
        ContextualEncoder::load(dir.path().join("nope")),
        Err(EncodeError::EncoderUnavailable(_))
    ));
    std::fs::write(dir.path().join("config.json"), "{").unwrap();
    assert!(matches!(
        ContextualEncoder::load(dir.path()),
        Err(EncodeError::EncoderUnavailable(_))
    ));
}

#[test]
fn cached_and_fresh_features_agree_bitwise() {
    let ckpt = tempfile::tempdir().unwrap();
    write_tiny_checkpoint(ckpt.path(), 3).unwrap();
    let cache = tempfile::tempdir().unwrap();
    let arts = prepare(&synthetic_corpus(40, 1));
    let settings = EncoderSettings {
        backend: Backend::Contextual,
        max_len: 48,
        checkpoint_dir: Some(ckpt.path().to_path_buf()),
        ..Default::default()
    };
    let f = Featurizer::fit(&settings, &arts, &Resources::default()).unwrap();
    let cached = f.featurize_all(&arts, cache.path()).unwrap();
    let again = f.featurize_all(&arts, cache.path()).unwrap();
    assert_eq!(std::fs::read_dir(cache.path()).unwrap().count(), 1);
    for (a, (c, r)) in arts.iter().zip(cached.iter().zip(&again)) {
        let fresh = f.featurize(a).unwrap();
        assert_eq!(dense(&fresh.sequence), dense(&c.sequence));
        assert_eq!(dense(&r.sequence), dense(&c.sequence));
        assert_eq!(fresh.stance.value.to_bits(), c.stance.value.to_bits());
        assert!((-1.0..=1.0).contains(&c.stance.value));
    }
    let same = prepare(&[stancecred::corpus::Article {
        id: "x".into(),
        title: "storm hits the coast".into(),
        body: "storm hits the coast".into(),
        label: stancecred::corpus::Label::Real,
    }]);
    assert!((f.featurize(&same[0]).unwrap().stance.value - 1.0).abs() < 1e-9);

    let dir = tempfile::tempdir().unwrap();
    f.save(dir.path()).unwrap();
    let back = Featurizer::load(dir.path(), None).unwrap();
    assert_eq!(
        dense(&back.featurize(&arts[0]).unwrap().sequence),
        dense(&cached[0].sequence)
    );
}

#[test]
fn fine_tune_mode_trains_through_the_encoder() {
    let ckpt = tempfile::tempdir().unwrap();
    write_tiny_checkpoint(ckpt.path(), 4).unwrap();
    let cache = tempfile::tempdir().unwrap();
    let arts = prepare(&synthetic_corpus(24, 2));
    let settings = EncoderSettings {
        backend: Backend::Contextual,
        max_len: 32,
        fine_tune: true,
        checkpoint_dir: Some(ckpt.path().to_path_buf()),
        ..Default::default()
    };
    let f = Featurizer::fit(&settings, &arts, &Resources::default()).unwrap();
    let recs = f.featurize_all(&arts, cache.path()).unwrap();
    let cfg = ModelConfig {
        architecture: Architecture::Ann,
        ..Default::default()
    };
    let mut m = build_model(&cfg, &f.input_spec(&cfg), f.build_context()).unwrap();
    let before = m.weights_snapshot().unwrap();
    let hp = TrainHyperparams {
        max_epochs: 1,
        learning_rate: TrainHyperparams::FINE_TUNE_LEARNING_RATE,
        batch_size: 8,
        ..Default::default()
    };
    train(&mut m, &recs, &recs, &hp).unwrap();
    let after = m.weights_snapshot().unwrap();
    let moved = before
        .iter()
        .zip(&after)
        .any(|((n, a), (_, b))| n.starts_with("encoder.transformer") && a != b);
    assert!(moved);
    assert_eq!(predict_proba(&m, &recs).unwrap().len(), recs.len());
}

/// Naive f64 re-implementation of the encoder forward pass.
fn oracle_forward(dir: &Path, ids: &[u32]) -> Vec<Vec<f64>> {
    let cfg: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.join("config.json")).unwrap()).unwrap();
    let (d, heads, layers) = (
        cfg["dim"].as_u64().unwrap() as usize,
        cfg["n_heads"].as_u64().unwrap() as usize,
        cfg["n_layers"].as_u64().unwrap() as usize,
    );
    let t = candle_core::safetensors::load(dir.join("model.safetensors"), &candle_core::Device::Cpu).unwrap();
    let get = |n: &str| -> Vec<f64> {
        t[n].flatten_all()
            .unwrap()
            .to_vec1::<f32>()
            .unwrap()
            .into_iter()
            .map(f64::from)
            .collect()
    };
    let norm = |x: &mut Vec<f64>, w: &[f64], b: &[f64]| {
        let mean = x.iter().sum::<f64>() / x.len() as f64;
        let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / x.len() as f64;
        for (i, v) in x.iter_mut().enumerate() {
            *v = (*v - mean) / (var + 1e-12).sqrt() * w[i] + b[i];
        }
    };
    let linear = |x: &[f64], w: &[f64], b: &[f64]| -> Vec<f64> {
        let out = b.len();
        (0..out)
            .map(|o| b[o] + (0..x.len()).map(|i| w[o * x.len() + i] * x[i]).sum::<f64>())
            .collect()
    };
    let (we, pe) = (
        get("embeddings.word_embeddings.weight"),
        get("embeddings.position_embeddings.weight"),
    );
    let mut xs: Vec<Vec<f64>> = ids
        .iter()
        .enumerate()
        .map(|(p, &id)| {
            let mut v: Vec<f64> = (0..d).map(|j| we[id as usize * d + j] + pe[p * d + j]).collect();
            norm(
                &mut v,
                &get("embeddings.LayerNorm.weight"),
                &get("embeddings.LayerNorm.bias"),
            );
            v
        })
        .collect();
    let hd = d / heads;
    for l in 0..layers {
        let p = |n: &str| get(&format!("transformer.layer.{l}.{n}"));
        let proj = |name: &str, xs: &[Vec<f64>]| -> Vec<Vec<f64>> {
            xs.iter()
                .map(|x| {
                    linear(
                        x,
                        &p(&format!("attention.{name}.weight")),
                        &p(&format!("attention.{name}.bias")),
                    )
                })
                .collect()
        };
        let (q, k, v) = (proj("q_lin", &xs), proj("k_lin", &xs), proj("v_lin", &xs));
        let n = xs.len();
        let mut ctx = vec![vec![0.0; d]; n];
        for h in 0..heads {
            for i in 0..n {
                let scores: Vec<f64> = (0..n)
                    .map(|j| (0..hd).map(|c| q[i][h * hd + c] * k[j][h * hd + c]).sum::<f64>() / (hd as f64).sqrt())
                    .collect();
                let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let e: Vec<f64> = scores.iter().map(|s| (s - m).exp()).collect();
                let z: f64 = e.iter().sum();
                for j in 0..n {
                    for c in 0..hd {
                        ctx[i][h * hd + c] += e[j] / z * v[j][h * hd + c];
                    }
                }
            }
        }
        for i in 0..n {
            let attn = linear(&ctx[i], &p("attention.out_lin.weight"), &p("attention.out_lin.bias"));
            let mut h1: Vec<f64> = attn.iter().zip(&xs[i]).map(|(a, x)| a + x).collect();
            norm(&mut h1, &p("sa_layer_norm.weight"), &p("sa_layer_norm.bias"));
            let inner: Vec<f64> = linear(&h1, &p("ffn.lin1.weight"), &p("ffn.lin1.bias"))
                .into_iter()
                .map(|x| 0.5 * x * (1.0 + libm_erf(x / std::f64::consts::SQRT_2)))
                .collect();
            let ff = linear(&inner, &p("ffn.lin2.weight"), &p("ffn.lin2.bias"));
            let mut h2: Vec<f64> = ff.iter().zip(&h1).map(|(a, x)| a + x).collect();
            norm(&mut h2, &p("output_layer_norm.weight"), &p("output_layer_norm.bias"));
            xs[i] = h2;
        }
    }
    xs
}

/// Maclaurin series of erf; within 1e-8 of the true value on all of R.
fn libm_erf(x: f64) -> f64 {
    let (mut sum, mut term, mut n) = (x, x, 0.0);
    if x.abs() > 4.0 {
        return x.signum();
    }
    loop {
        n += 1.0;
        term *= -x * x / n;
        let add = term / (2.0 * n + 1.0);
        sum += add;
        if add.abs() < 1e-17 {
            break;
        }
    }
    sum * 2.0 / std::f64::consts::PI.sqrt()
}

#[test]
fn forward_pass_matches_naive_oracle() {
    let dir = tempfile::tempdir().unwrap();
    let enc = checkpoint(dir.path());
    let ids = enc
        .token_ids(&clean_text("Shocking secret about the senate vote exposed"), 32)
        .unwrap();
    let got = enc.hidden_states(&ids).unwrap();
    let want = oracle_forward(dir.path(), &ids);
    for (i, row) in want.iter().enumerate() {
        for (j, w) in row.iter().enumerate() {
            let g = f64::from(got.row(i)[j]);
            assert!((g - w).abs() < 1e-4, "({i},{j}) {g} vs {w}");
        }
    }
}

#[test]
fn padded_masked_forward_matches_unpadded() {
    use candle_core::{Device, Tensor};
    let dir = tempfile::tempdir().unwrap();
    let enc = checkpoint(dir.path());
    let varmap = candle_nn::VarMap::new();
    let model = enc.trainable_copy(&varmap).unwrap();
    let ids = enc.token_ids(&clean_text("storm floods the coast"), 32).unwrap();
    let n = ids.len();
    let mut padded = ids.clone();
    padded.resize(20, enc.info().pad_id);
    let mask: Vec<f32> = (0..20).map(|i| if i < n { 1.0 } else { 0.0 }).collect();
    let out = model
        .forward(
            &Tensor::from_vec(padded, (1, 20), &Device::Cpu).unwrap(),
            Some(&Tensor::from_vec(mask, (1, 20), &Device::Cpu).unwrap()),
        )
        .unwrap()
        .squeeze(0)
        .unwrap();
    let plain = enc.hidden_states(&ids).unwrap();
    let out: Vec<Vec<f32>> = out.to_vec2().unwrap();
    for (i, row) in out.iter().take(n).enumerate() {
        for (a, b) in row.iter().zip(plain.row(i)) {
            assert!((a - b).abs() < 1e-5);
        }
    }
}
