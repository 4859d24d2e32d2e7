use std::path::Path;
use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use stancecred::corpus::{prepare, write_csv};
use stancecred::experiment::{run_experiment, ExperimentConfig};
use stancecred::scoring::Scorer;
use stancecred::testkit::{synthetic_corpus, write_tiny_checkpoint};
use tower::ServiceExt;

const N: usize = 140;

/// Trains a small contextual CNN and returns its loaded scorer.
fn trained(dir: &Path) -> Scorer {
    let ckpt = dir.join("ckpt");
    write_tiny_checkpoint(&ckpt, 8).unwrap();
    let data = dir.join("news.csv");
    write_csv(std::fs::File::create(&data).unwrap(), &synthetic_corpus(N, 21)).unwrap();
    let text = format!(
        r#"
[data]
path = "{}"
[encoder]
backend = "contextual"
max_len = 48
checkpoint_dir = "{}"
[model]
architecture = "cnn"
conv_filters = 8
dense_units = 8
[train]
max_epochs = 2
[output]
dir = "{}"
figures = false
"#,
        data.display(),
        ckpt.display(),
        dir.join("out").display()
    );
    let r = run_experiment(&ExperimentConfig::from_toml_str(&text).unwrap()).unwrap();
    Scorer::load(&r.run_dir.join("model"), None, 0.5).unwrap()
}

async fn call(app: &axum::Router, req: Request<Body>) -> (StatusCode, Value) {
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    (status, serde_json::from_slice(&bytes).unwrap_or(Value::Null))
}

fn post(body: impl Into<Body>) -> Request<Body> {
    Request::post("/v1/score")
        .header("content-type", "application/json")
        .body(body.into())
        .unwrap()
}

#[tokio::test]
async fn service_matches_batch_path_and_validates() {
    let dir = tempfile::tempdir().unwrap();
    let scorer = Arc::new(trained(dir.path()));
    let app = stancecred_serve::router(scorer.clone());

    let (status, health) = call(&app, Request::get("/healthz").body(Body::empty()).unwrap()).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(health, json!({"status": "ok", "model_version": scorer.model_version()}));

    let raw = synthetic_corpus(N, 21);
    let prepared = prepare(&raw);
    assert!(prepared.len() >= 100);
    let batch = scorer.predict_batch(&prepared, &dir.path().join("cache")).unwrap();
    let mut served = Vec::new();
    for a in &prepared {
        let src = raw.iter().find(|r| r.id == a.id).unwrap();
        let (status, v) = call(&app, post(json!({"title": src.title, "text": src.body}).to_string())).await;
        assert_eq!(status, StatusCode::OK, "{v}");
        let p = v["probability_fake"].as_f64().unwrap();
        let label = v["label"].as_str().unwrap();
        assert_eq!(label == "FAKE", p >= 0.5);
        assert!((-1.0..=1.0).contains(&v["stance"].as_f64().unwrap()));
        served.push(p);
    }
    for (i, (s, b)) in served.iter().zip(&batch).enumerate() {
        assert_eq!(s.to_bits(), b.to_bits(), "article {i}: served {s} batch {b}");
    }

    // Reverse order gives the same answers.
    for (a, &want) in prepared.iter().zip(&served).rev().take(10) {
        let src = raw.iter().find(|r| r.id == a.id).unwrap();
        let (_, v) = call(&app, post(json!({"title": src.title, "text": src.body}).to_string())).await;
        assert_eq!(v["probability_fake"].as_f64().unwrap().to_bits(), want.to_bits());
    }

    let (status, v) = call(
        &app,
        post(json!({"title": "flood warning", "text": "flood warning"}).to_string()),
    )
    .await;
    assert_eq!(status, StatusCode::OK);
    assert!((v["stance"].as_f64().unwrap() - 1.0).abs() < 1e-6);

    let (status, _) = call(&app, post(json!({"title": "only a title"}).to_string())).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    let (status, _) = call(&app, post(json!({"title": "", "text": "<p> </p>"}).to_string())).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    let (status, _) = call(&app, post(json!({"title": 3, "text": "x"}).to_string())).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    let big = "a".repeat(stancecred::scoring::MAX_REQUEST_BYTES);
    let (status, _) = call(&app, post(json!({"title": "x", "text": big}).to_string())).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    let (status, _) = call(&app, post("{\"title\": ")).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let huge = "a".repeat(stancecred_serve::BODY_LIMIT_BYTES + 1);
    let (status, _) = call(&app, post(json!({"title": "x", "text": huge}).to_string())).await;
    assert_eq!(status, StatusCode::PAYLOAD_TOO_LARGE);
}
