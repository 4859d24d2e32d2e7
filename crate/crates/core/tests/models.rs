use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stancecred::encode::Matrix;
use stancecred::models::{
    build_model, predict_proba, train, Architecture, BuildContext, FeatureRecord, FrontEnd, InputSpec, ModelConfig,
    Sequence, TrainHyperparams, TrainedModel,
};
use stancecred::stance::StanceScore;

const SEQ: usize = 12;
const DIM: usize = 6;

/// Labels follow the sign of feature 0 on the non-padding rows.
fn separable(n: usize, seed: u64) -> Vec<FeatureRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let label = (i % 2) as u8;
            let sign = if label == 1 { 1.0 } else { -1.0 };
            let real = rng.random_range(6..=SEQ);
            let mut m = Matrix::zeros(SEQ, DIM);
            for t in 0..real {
                let row = m.row_mut(t);
                for v in row.iter_mut() {
                    *v = rng.random_range(-0.3..0.3);
                }
                row[0] = sign * rng.random_range(0.5..1.0);
            }
            FeatureRecord {
                sequence: Sequence::Dense(m),
                stance: StanceScore::new(rng.random_range(-1.0..1.0)),
                label,
            }
        })
        .collect()
}

fn spec() -> InputSpec {
    InputSpec {
        seq_len: SEQ,
        front: FrontEnd::Dense { dim: DIM },
    }
}

fn config(arch: Architecture) -> ModelConfig {
    ModelConfig {
        architecture: arch,
        recurrent_units: 16,
        conv_filters: 16,
        conv_kernel: 3,
        pool_window: 2,
        dense_units: 16,
        seed: 7,
        ..Default::default()
    }
}

fn hp() -> TrainHyperparams {
    TrainHyperparams {
        batch_size: 16,
        max_epochs: 20,
        learning_rate: 1e-2,
        early_stop_patience: 20,
    }
}

fn accuracy(p: &[f64], recs: &[FeatureRecord]) -> f64 {
    p.iter()
        .zip(recs)
        .filter(|(p, r)| u8::from(**p >= 0.5) == r.label)
        .count() as f64
        / recs.len() as f64
}

#[test]
fn every_architecture_fits_separable_data() {
    let data = separable(64, 1);
    for arch in Architecture::ALL {
        for attention in [false, true] {
            let cfg = ModelConfig {
                use_attention: attention,
                ..config(arch)
            };
            let mut m = build_model(&cfg, &spec(), BuildContext::default()).unwrap();
            train(&mut m, &data, &data, &hp()).unwrap();
            let acc = accuracy(&predict_proba(&m, &data).unwrap(), &data);
            assert_eq!(acc, 1.0, "{arch} attention={attention}");
        }
    }
}

#[test]
fn first_epoch_loss_near_ln2_and_training_is_deterministic() {
    let data = separable(64, 2);
    let run = || {
        let mut m = build_model(&config(Architecture::Cnn), &spec(), BuildContext::default()).unwrap();
        let h = train(
            &mut m,
            &data,
            &data,
            &TrainHyperparams {
                learning_rate: 1e-4,
                max_epochs: 2,
                ..hp()
            },
        )
        .unwrap();
        (h, predict_proba(&m, &data).unwrap())
    };
    let (h1, p1) = run();
    let (h2, p2) = run();
    assert_eq!(h1, h2);
    assert_eq!(p1, p2);
    assert!(
        (h1.epochs[0].train_loss - std::f64::consts::LN_2).abs() < 0.15,
        "{}",
        h1.epochs[0].train_loss
    );
}

#[test]
fn save_load_round_trip_is_bitwise() {
    let data = separable(32, 3);
    for arch in Architecture::ALL {
        let mut m = build_model(&config(arch), &spec(), BuildContext::default()).unwrap();
        let history = train(&mut m, &data, &data, &TrainHyperparams { max_epochs: 2, ..hp() }).unwrap();
        let before = predict_proba(&m, &data).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let tm = TrainedModel {
            network: m,
            history,
            encoder_fingerprint: None,
        };
        tm.save(dir.path()).unwrap();
        let csv = std::fs::read_to_string(dir.path().join("history.csv")).unwrap();
        assert!(csv.starts_with("epoch,train_loss,val_loss,train_acc,val_acc\n"));
        let back = TrainedModel::load(dir.path(), BuildContext::default()).unwrap();
        let after = back.predict_proba(&data).unwrap();
        assert_eq!(
            before.iter().map(|p| p.to_bits()).collect::<Vec<_>>(),
            after.iter().map(|p| p.to_bits()).collect::<Vec<_>>()
        );
    }
}

#[test]
fn stance_off_ignores_stance() {
    let data = separable(32, 4);
    let cfg = ModelConfig {
        use_stance: false,
        ..config(Architecture::Ann)
    };
    let mut m = build_model(&cfg, &spec(), BuildContext::default()).unwrap();
    train(&mut m, &data, &data, &TrainHyperparams { max_epochs: 2, ..hp() }).unwrap();
    let p = predict_proba(&m, &data).unwrap();
    let mut shuffled = data.clone();
    let n = shuffled.len();
    for i in 0..n {
        shuffled[i].stance = data[(i * 7 + 3) % n].stance;
    }
    assert_eq!(p, predict_proba(&m, &shuffled).unwrap());
}

#[test]
fn same_seed_same_initial_weights_and_shapes() {
    let a = build_model(&config(Architecture::Bilstm), &spec(), BuildContext::default()).unwrap();
    let b = build_model(&config(Architecture::Bilstm), &spec(), BuildContext::default()).unwrap();
    assert_eq!(a.weights_snapshot().unwrap(), b.weights_snapshot().unwrap());
    let data = separable(5, 5);
    let p = predict_proba(&a, &data).unwrap();
    assert_eq!(p.len(), 5);
    assert!(p.iter().all(|&x| x > 0.0 && x < 1.0));
    assert!(predict_proba(&a, &[]).unwrap().is_empty());
    let dup = vec![data[0].clone(), data[0].clone()];
    let q = predict_proba(&a, &dup).unwrap();
    assert_eq!(q[0], q[1]);
}

#[test]
fn cnn_shape_at_full_width() {
    let spec = InputSpec {
        seq_len: 512,
        front: FrontEnd::Dense { dim: 768 },
    };
    let m = build_model(&ModelConfig::default(), &spec, BuildContext::default()).unwrap();
    let recs: Vec<FeatureRecord> = (0..8)
        .map(|i| FeatureRecord {
            sequence: Sequence::Dense(Matrix::zeros(512, 768)),
            stance: StanceScore::new(0.1 * i as f64),
            label: 0,
        })
        .collect();
    let p = predict_proba(&m, &recs).unwrap();
    assert_eq!(p.len(), 8);
}

#[test]
fn spec_mismatch_is_rejected() {
    let m = build_model(&config(Architecture::Ann), &spec(), BuildContext::default()).unwrap();
    let bad = FeatureRecord {
        sequence: Sequence::Dense(Matrix::zeros(SEQ, DIM + 1)),
        stance: StanceScore::new(0.0),
        label: 0,
    };
    assert!(predict_proba(&m, &[bad]).is_err());
    let ids = FeatureRecord {
        sequence: Sequence::Ids(vec![0; SEQ]),
        stance: StanceScore::new(0.0),
        label: 0,
    };
    assert!(predict_proba(&m, &[ids]).is_err());
}
