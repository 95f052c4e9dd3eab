use std::process::Command;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use boxcf::{
    cf_query, decompose, dist_to_box, generate_model, to_canonical_json, AggregationKind, CfQuery, CfTarget,
    Interval, Label, Prediction, RandomModelSpec, SearchOptions,
};
use boxcf_cli::service::{router, AppState, ServiceConfig};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

const STUMP: &str = r#"{"dims":1,"classes":1,"num_trees":1,"aggregation":{"kind":"identity-sum","base_score":0.0},
"leaves":[{"tree":0,"intervals":[["-inf",2.0]],"score":[-1.0]},{"tree":0,"intervals":[[2.0,"inf"]],"score":[1.0]}]}"#;

fn app(config: ServiceConfig) -> Router {
    router(AppState::new(config))
}

async fn call(app: &Router, method: &str, uri: &str, body: impl Into<Body>) -> (StatusCode, String) {
    let req = Request::builder()
        .method(method)
        .uri(uri)
        .header("content-type", "application/json")
        .body(body.into())
        .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    (status, String::from_utf8(bytes.to_vec()).unwrap())
}

async fn upload(app: &Router, text: &str) -> String {
    let (status, body) = call(app, "POST", "/models", text.to_string()).await;
    assert_eq!(status, StatusCode::CREATED, "{body}");
    let v: Value = serde_json::from_str(&body).unwrap();
    v["model_id"].as_str().unwrap().to_string()
}

#[tokio::test]
async fn stump_upload_and_evaluate() {
    let app = app(ServiceConfig::default());
    let id = upload(&app, STUMP).await;
    let (status, body) = call(&app, "GET", &format!("/models/{id}"), Body::empty()).await;
    assert_eq!(status, StatusCode::OK);
    let meta: Value = serde_json::from_str(&body).unwrap();
    assert_eq!(meta["num_leaves"], 2);
    assert_eq!(meta["dims"], 1);

    let (status, body) = call(&app, "POST", &format!("/models/{id}/evaluate"), r#"{"x":[0.0]}"#).await;
    assert_eq!(status, StatusCode::OK);
    let v: Value = serde_json::from_str(&body).unwrap();
    assert_eq!(v["scores"], json!([-1.0]));
}

#[tokio::test]
async fn cf_reply_matches_command_line() {
    let model = generate_model(&RandomModelSpec {
        seed: 5,
        trees: (20, 20),
        depth: (3, 3),
        dims: (4, 4),
        aggregation: AggregationKind::LogisticSum,
        ..RandomModelSpec::default()
    });
    let text = to_canonical_json(&model);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.json");
    std::fs::write(&path, &text).unwrap();

    let app = app(ServiceConfig::default());
    let id = upload(&app, &text).await;
    let x = [0.25, -0.5, 0.75, 0.0];
    let Label::Class(c) = model.evaluate(&x).unwrap().label else { unreachable!() };
    let query = CfQuery::new(x.to_vec(), CfTarget::Class { class: 1 - c });
    let (status, body) = call(
        &app,
        "POST",
        &format!("/models/{id}/cf"),
        serde_json::to_string(&query).unwrap(),
    )
    .await;
    assert_eq!(status, StatusCode::OK, "{body}");

    let out = Command::new(env!("CARGO_BIN_EXE_boxcf"))
        .args(["cf", "--model", path.to_str().unwrap(), "--x", "0.25,-0.5,0.75,0"])
        .args(["--target-class", &(1 - c).to_string()])
        .env_remove(boxcf_cli::WORKERS_ENV)
        .output()
        .unwrap();
    assert_eq!(String::from_utf8(out.stdout).unwrap().trim_end(), body);
}

#[tokio::test]
async fn cfset_at_twice_the_optimum_matches_oracle_filter() {
    let mut listed = 0;
    for seed in 0..8 {
        let model = generate_model(&RandomModelSpec {
            seed,
            trees: (4, 6),
            depth: (2, 3),
            dims: (2, 3),
            aggregation: AggregationKind::LogisticSum,
            ..RandomModelSpec::default()
        });
        let app = app(ServiceConfig::default());
        let id = upload(&app, &to_canonical_json(&model)).await;
        let x = vec![0.1; model.dims];
        let Label::Class(c) = model.evaluate(&x).unwrap().label else { unreachable!() };
        let target = CfTarget::Class { class: 1 - c };
        let query = CfQuery::new(x.clone(), target);
        let Ok(best) = cf_query(&model, &query, &SearchOptions::default()) else { continue };
        let radius = 2.0 * best.sq_dist;
        let query = query.with_radius(radius);
        let (status, body) = call(
            &app,
            "POST",
            &format!("/models/{id}/cfset"),
            serde_json::to_string(&query).unwrap(),
        )
        .await;
        assert_eq!(status, StatusCode::OK, "{body}");
        let v: Value = serde_json::from_str(&body).unwrap();

        let mut expected: Vec<Vec<Interval>> = decompose(&model, None)
            .unwrap()
            .into_iter()
            .filter(|r| {
                let p = Prediction {
                    margins: r.margins.clone(),
                    output: r.score.clone(),
                    label: r.label,
                };
                target.is_satisfied(&p) && dist_to_box(&x, &r.bbox, None).0 < radius
            })
            .map(|r| r.bbox)
            .collect();
        let mut got: Vec<Vec<Interval>> = v["regions"]
            .as_array()
            .unwrap()
            .iter()
            .map(|e| serde_json::from_value(e["region"]["box"].clone()).unwrap())
            .collect();
        let key = |b: &Vec<Interval>| b.iter().map(|i| (i.lo, i.hi)).collect::<Vec<_>>();
        expected.sort_by(|a, b| key(a).partial_cmp(&key(b)).unwrap());
        got.sort_by(|a, b| key(a).partial_cmp(&key(b)).unwrap());
        assert_eq!(got, expected, "seed {seed}");
        assert_eq!(v["count"], expected.len());
        listed += expected.len();
    }
    assert!(listed > 8, "only {listed} regions compared");
}

#[tokio::test]
async fn projection_from_query_string() {
    let app = app(ServiceConfig::default());
    let model = generate_model(&RandomModelSpec {
        seed: 2,
        trees: (3, 3),
        dims: (3, 3),
        ..RandomModelSpec::default()
    });
    let id = upload(&app, &to_canonical_json(&model)).await;
    let uri = format!("/models/{id}/projection?dims=0,2&radius=4&x=0,0,0&target_class=1");
    let (status, body) = call(&app, "GET", &uri, Body::empty()).await;
    assert_eq!(status, StatusCode::OK, "{body}");
    let uri = format!("/models/{id}/projection?dims=0,2&x=0,0,0&target_class=1");
    let (status, _) = call(&app, "GET", &uri, Body::empty()).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn error_statuses() {
    let app = app(ServiceConfig {
        max_body_bytes: 4096,
        ..ServiceConfig::default()
    });
    let id = upload(&app, STUMP).await;

    let (status, _) = call(&app, "POST", "/models", "{\"dims\":").await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let (status, _) = call(&app, "POST", &format!("/models/{id}/cf"), "{not json").await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let (status, _) = call(&app, "POST", &format!("/models/{id}/cf"), r#"{"x":[0,1],"target":{"kind":"class","class":1}}"#).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let (status, _) = call(&app, "POST", &format!("/models/{id}/cfset"), r#"{"x":[0],"target":{"kind":"class","class":1}}"#).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);

    let (status, _) = call(&app, "POST", "/models/nope/cf", "{}").await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let (status, _) = call(&app, "GET", "/models/nope", Body::empty()).await;
    assert_eq!(status, StatusCode::NOT_FOUND);

    let pinned = r#"{"x":[0],"target":{"kind":"score_interval","low":0,"high":5},"fixed_dims":[0]}"#;
    let (status, body) = call(&app, "POST", &format!("/models/{id}/cf"), pinned).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    let v: Value = serde_json::from_str(&body).unwrap();
    assert_eq!(v["status"], "not_found");

    let big = format!("{{\"x\":[{}0]}}", "0,".repeat(4096));
    let (status, _) = call(&app, "POST", &format!("/models/{id}/evaluate"), big).await;
    assert_eq!(status, StatusCode::PAYLOAD_TOO_LARGE);
}

#[tokio::test]
async fn region_cap_maps_to_payload_too_large() {
    let model = generate_model(&RandomModelSpec {
        seed: 9,
        trees: (8, 8),
        depth: (3, 3),
        dims: (3, 3),
        ..RandomModelSpec::default()
    });
    let app = app(ServiceConfig::default());
    let id = upload(&app, &to_canonical_json(&model)).await;
    let q = r#"{"x":[0,0,0],"target":{"kind":"class","class":1},"radius":1e9,"max_regions":1}"#;
    let (status, body) = call(&app, "POST", &format!("/models/{id}/cfset"), q).await;
    assert_eq!(status, StatusCode::PAYLOAD_TOO_LARGE, "{body}");
}

#[tokio::test]
async fn exhausted_budget_is_service_unavailable() {
    let model = generate_model(&RandomModelSpec {
        seed: 7,
        trees: (120, 120),
        depth: (6, 6),
        dims: (12, 12),
        early_leaf: 0.0,
        threshold_pool: 32,
        ..RandomModelSpec::default()
    });
    let app = app(ServiceConfig {
        budget: std::time::Duration::ZERO,
        ..ServiceConfig::default()
    });
    let id = upload(&app, &to_canonical_json(&model)).await;
    let x = vec![0.0; model.dims];
    let Label::Class(c) = model.evaluate(&x).unwrap().label else { unreachable!() };
    let query = CfQuery::new(x, CfTarget::Class { class: 1 - c });
    let (status, body) = call(
        &app,
        "POST",
        &format!("/models/{id}/cf"),
        serde_json::to_string(&query).unwrap(),
    )
    .await;
    assert_eq!(status, StatusCode::SERVICE_UNAVAILABLE, "{body}");
    let v: Value = serde_json::from_str(&body).unwrap();
    assert_eq!(v["status"], "budget_exceeded");
    assert!(v["stats"].is_object());
}
