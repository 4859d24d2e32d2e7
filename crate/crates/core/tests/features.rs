use stancecred::corpus::{clean_text, prepare, Article, Label, PreparedArticle};
use stancecred::features::{Backend, EncoderSettings, Featurizer, Resources};
use stancecred::models::{FrontEnd, ModelConfig, Sequence};
use stancecred::testkit::{synthetic_corpus, write_synthetic_vectors};

fn article(title: &str, body: &str) -> PreparedArticle {
    prepare(&[Article {
        id: "x".into(),
        title: title.into(),
        body: body.into(),
        label: Label::Fake,
    }])
    .remove(0)
}

fn ids(s: &Sequence) -> &[u32] {
    match s {
        Sequence::Ids(v) => v,
        other => panic!("expected ids, got {other:?}"),
    }
}

#[test]
fn tokenizer_backend_features_and_round_trip() {
    let train = prepare(&synthetic_corpus(40, 1));
    let settings = EncoderSettings {
        backend: Backend::Tokenizer,
        max_len: 20,
        vocab_size: Some(30),
        ..Default::default()
    };
    let f = Featurizer::fit(&settings, &train, &Resources::default()).unwrap();
    let spec = f.input_spec(&ModelConfig::default());
    assert_eq!(spec.seq_len, 20);
    assert!(matches!(spec.front, FrontEnd::Learned { rows: 33, dim: 100 }));

    let same = f.featurize(&article("the senate vote", "the senate vote")).unwrap();
    assert_eq!(ids(&same.sequence).len(), 20);
    assert!((same.stance.value - 1.0).abs() < 1e-12);
    assert!(!same.stance.degenerate);
    let oov = f.featurize(&article("zzqx", "the senate vote")).unwrap();
    assert!(oov.stance.degenerate);
    assert_eq!(oov.stance.value, 0.0);
    let (t, b) = (clean_text("the the"), clean_text("the of"));
    let s = f.stance(&t, &b).unwrap().value;
    if f.stance(&clean_text("of"), &clean_text("of")).unwrap().degenerate {
        // `of` fell outside the capped vocabulary: only `the` counts.
        assert!((s - 1.0).abs() < 1e-12);
    } else {
        assert!((s - 1.0 / 2f64.sqrt()).abs() < 1e-12, "{s}");
    }

    let dir = tempfile::tempdir().unwrap();
    f.save(dir.path()).unwrap();
    let back = Featurizer::load(dir.path(), None).unwrap();
    for a in &train {
        let (x, y) = (f.featurize(a).unwrap(), back.featurize(a).unwrap());
        assert_eq!(ids(&x.sequence), ids(&y.sequence));
        assert_eq!(x.stance, y.stance);
    }
}

#[test]
fn static_backend_restricts_vectors_and_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let vectors = dir.path().join("vec.txt");
    write_synthetic_vectors(&vectors, 12, 2).unwrap();
    let train = prepare(&synthetic_corpus(40, 1));
    let settings = EncoderSettings {
        backend: Backend::Static,
        max_len: 16,
        vectors_path: Some(vectors),
        ..Default::default()
    };
    let resources = Resources::default();
    let f = Featurizer::fit(&settings, &train, &resources).unwrap();
    let FrontEnd::Frozen { rows, dim } = f.input_spec(&ModelConfig::default()).front else {
        panic!("static backend uses a frozen table");
    };
    assert_eq!(dim, 12);
    let table = f.build_context().frozen_table.unwrap();
    assert_eq!((table.rows, table.cols), (rows, 12));
    assert!(table.row(0).iter().all(|&v| v == 0.0));
    assert!(table.row(1).iter().all(|&v| v == 0.0));
    // Both shared lookups hit one loaded table.
    let again = Featurizer::fit(&settings, &train, &resources).unwrap();
    assert_eq!(again.build_context().frozen_table.unwrap(), table);

    let r = f.featurize(&article("flood storm", "storm flood")).unwrap();
    assert!((r.stance.value - 1.0).abs() < 1e-9);
    let unknown = f.featurize(&article("qqq", "storm")).unwrap();
    assert!(unknown.stance.degenerate);

    let out = dir.path().join("feat");
    f.save(&out).unwrap();
    let back = Featurizer::load(&out, None).unwrap();
    assert_eq!(back.build_context().frozen_table.unwrap(), table);
    for a in &train[..10] {
        assert_eq!(f.featurize(a).unwrap().stance, back.featurize(a).unwrap().stance);
    }
}

#[test]
fn missing_assets_are_reported() {
    let train = prepare(&synthetic_corpus(10, 1));
    let no_vectors = EncoderSettings {
        backend: Backend::Static,
        ..Default::default()
    };
    assert!(Featurizer::fit(&no_vectors, &train, &Resources::default()).is_err());
    let no_checkpoint = EncoderSettings::default();
    assert!(Featurizer::fit(&no_checkpoint, &train, &Resources::default()).is_err());
    let short = EncoderSettings {
        backend: Backend::Tokenizer,
        max_len: 1,
        ..Default::default()
    };
    assert!(Featurizer::fit(&short, &train, &Resources::default()).is_err());
}
