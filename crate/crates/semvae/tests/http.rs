mod common;

use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine as _;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

use common::{first_mask, fixture, semvae, Fixture, CLASSES};
use semvae::io::{decode_label_png, encode_gray8};
use semvae::server::{router, AppState, SESSION_HEADER};

async fn call(app: &Router, method: &str, uri: &str, session: Option<&str>, body: Vec<u8>) -> (StatusCode, Value) {
    let mut req = Request::builder().method(method).uri(uri);
    if let Some(s) = session {
        req = req.header(SESSION_HEADER, s);
    }
    let resp = app.clone().oneshot(req.body(Body::from(body)).unwrap()).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    (status, serde_json::from_slice(&bytes).unwrap_or(Value::Null))
}

fn loaded(f: &Fixture) -> Router {
    router(Arc::new(AppState::from_path(&f.run)))
}

fn mask_bytes(f: &Fixture, i: usize) -> Vec<u8> {
    std::fs::read(f.data.join(format!("{i:05}.png"))).unwrap()
}

async fn upload(app: &Router, session: Option<&str>, png: Vec<u8>) -> String {
    let (st, v) = call(app, "POST", "/masks", session, png).await;
    assert_eq!(st, StatusCode::OK, "{v}");
    v["mask_id"].as_str().unwrap().to_string()
}

fn json_body(v: Value) -> Vec<u8> {
    serde_json::to_vec(&v).unwrap()
}

#[tokio::test]
async fn health_and_classes() {
    let f = fixture();
    let app = loaded(&f);
    let (st, v) = call(&app, "GET", "/healthz", None, vec![]).await;
    assert_eq!(st, StatusCode::OK);
    assert_eq!(v["model_loaded"], true);
    let (st, v) = call(&app, "GET", "/classes", None, vec![]).await;
    assert_eq!(st, StatusCode::OK);
    let classes = v["classes"].as_array().unwrap();
    assert_eq!(classes.len(), CLASSES);
    assert_eq!(classes[0]["name"], "background");
    assert_eq!(classes[1]["color"], "#CC0000");
    assert_eq!(v["mask_size"], 32);
}

#[tokio::test]
async fn without_a_model_every_model_route_is_503() {
    let dir = tempfile::tempdir().unwrap();
    let app = router(Arc::new(AppState::from_path(&dir.path().join("missing"))));
    let (st, v) = call(&app, "GET", "/healthz", None, vec![]).await;
    assert_eq!(st, StatusCode::OK);
    assert_eq!(v["model_loaded"], false);
    for (m, uri) in [("GET", "/classes"), ("POST", "/masks"), ("POST", "/masks/x/encode"), ("POST", "/masks/x/edit"), ("POST", "/interpolate")] {
        let (st, v) = call(&app, m, uri, None, b"{}".to_vec()).await;
        assert_eq!(st, StatusCode::SERVICE_UNAVAILABLE, "{uri}");
        assert_eq!(v["code"], "model_not_loaded");
    }
}

#[tokio::test]
async fn upload_encode_edit() {
    let f = fixture();
    let app = loaded(&f);
    let (st, v) = call(&app, "POST", "/masks", None, mask_bytes(&f, 0)).await;
    assert_eq!(st, StatusCode::OK);
    assert_eq!((v["width"].as_u64(), v["height"].as_u64()), (Some(32), Some(32)));
    assert!(!B64.decode(v["preview"].as_str().unwrap()).unwrap().is_empty());
    let id = v["mask_id"].as_str().unwrap();

    let (st, v) = call(&app, "POST", &format!("/masks/{id}/encode"), None, vec![]).await;
    assert_eq!(st, StatusCode::OK);
    assert_eq!((v["class_count"].as_u64(), v["dim"].as_u64()), (Some(CLASSES as u64), Some(256)));

    let plan = json!({"edits": [{"class": "nose", "op": "perturb", "noise_scale": 1.5, "seed": 4}]});
    let (st, a) = call(&app, "POST", &format!("/masks/{id}/edit"), None, json_body(plan.clone())).await;
    assert_eq!(st, StatusCode::OK, "{a}");
    let (_, b) = call(&app, "POST", &format!("/masks/{id}/edit"), None, json_body(plan)).await;
    assert_eq!(a["mask_png"], b["mask_png"]);
    let labels = decode_label_png(&B64.decode(a["mask_png"].as_str().unwrap()).unwrap(), CLASSES).unwrap();
    assert_eq!(labels.height(), 32);
    let changed = a["changed_pixels"].as_object().unwrap();
    assert_eq!(changed.len(), CLASSES);
    assert!(changed.contains_key("nose"));

    let (st, v) = call(&app, "POST", &format!("/masks/{id}/edit"), None, json_body(json!({"edits": []}))).await;
    assert_eq!(st, StatusCode::OK);
    assert!(v["changed_pixels"].as_object().unwrap().values().all(|c| c == 0));
}

#[tokio::test]
async fn interpolation_by_alpha_and_steps() {
    let f = fixture();
    let app = loaded(&f);
    let a = upload(&app, None, mask_bytes(&f, 0)).await;
    let b = upload(&app, None, mask_bytes(&f, 1)).await;
    let (st, v) = call(&app, "POST", "/interpolate", None, json_body(json!({"source_id": a, "target_id": b, "class": "hair", "steps": 4}))).await;
    assert_eq!(st, StatusCode::OK, "{v}");
    assert_eq!(v["masks"].as_array().unwrap().len(), 4);
    assert_eq!(v["alphas"][3], 1.0);
    let (st, single) = call(&app, "POST", "/interpolate", None, json_body(json!({"source_id": a, "target_id": b, "class": 5, "alpha": 1.0}))).await;
    assert_eq!(st, StatusCode::OK);
    assert_eq!(single["masks"][0], v["masks"][3]);

    let plan = json!({"edits": [{"class": "hair", "op": "interpolate", "alpha": 1.0, "target": b}]});
    let (st, e) = call(&app, "POST", &format!("/masks/{a}/edit"), None, json_body(plan)).await;
    assert_eq!(st, StatusCode::OK, "{e}");
    assert_eq!(e["mask_png"], v["masks"][3]);
}

#[tokio::test]
async fn error_codes() {
    let f = fixture();
    let app = loaded(&f);
    let id = upload(&app, None, mask_bytes(&f, 0)).await;

    let (st, v) = call(&app, "POST", "/masks", None, b"not a png".to_vec()).await;
    assert_eq!((st, v["code"].as_str()), (StatusCode::BAD_REQUEST, Some("bad_request")));

    let big = encode_gray8(64, 64, &vec![0u8; 64 * 64]).unwrap();
    let (st, v) = call(&app, "POST", "/masks", None, big).await;
    assert_eq!((st, v["code"].as_str()), (StatusCode::CONFLICT, Some("config_mismatch")));

    let bad_labels = encode_gray8(32, 32, &vec![200u8; 32 * 32]).unwrap();
    let (st, v) = call(&app, "POST", "/masks", None, bad_labels).await;
    assert_eq!((st, v["code"].as_str()), (StatusCode::CONFLICT, Some("config_mismatch")));

    let (st, v) = call(&app, "POST", "/masks/deadbeef/encode", None, vec![]).await;
    assert_eq!((st, v["code"].as_str()), (StatusCode::NOT_FOUND, Some("unknown_mask")));

    for plan in [
        json!({"edits": [{"class": "tail", "op": "generate"}]}),
        json!({"edits": [{"class": "nose", "op": "perturb", "noise_scale": -1}]}),
        json!({"edits": [{"class": "nose", "op": "interpolate", "alpha": 2}]}),
        json!({"edits": [{"class": "nose", "op": "explode"}]}),
        json!({"edits": [{"class": 1, "op": "generate"}, {"class": "skin", "op": "generate"}]}),
    ] {
        let (st, v) = call(&app, "POST", &format!("/masks/{id}/edit"), None, json_body(plan.clone())).await;
        assert_eq!((st, v["code"].as_str()), (StatusCode::BAD_REQUEST, Some("invalid_plan")), "{plan}");
    }
    let plan = json!({"edits": [{"class": "nose", "op": "interpolate", "alpha": 0.5, "target": "missing"}]});
    let (st, v) = call(&app, "POST", &format!("/masks/{id}/edit"), None, json_body(plan)).await;
    assert_eq!((st, v["code"].as_str()), (StatusCode::BAD_REQUEST, Some("invalid_plan")));

    let (st, v) = call(&app, "POST", "/interpolate", None, json_body(json!({"source_id": id, "target_id": id, "class": "nose", "steps": 1}))).await;
    assert_eq!((st, v["code"].as_str()), (StatusCode::BAD_REQUEST, Some("invalid_plan")));
    let (st, _) = call(&app, "POST", "/interpolate", None, json_body(json!({"source_id": id}))).await;
    assert_eq!(st, StatusCode::BAD_REQUEST);
    let (st, v) = call(&app, "POST", "/interpolate", None, json_body(json!({"source_id": id, "target_id": "zz", "class": "nose", "alpha": 0.5}))).await;
    assert_eq!((st, v["code"].as_str()), (StatusCode::NOT_FOUND, Some("unknown_mask")));
}

#[tokio::test]
async fn sessions_are_isolated() {
    let f = fixture();
    let app = loaded(&f);
    let id = upload(&app, Some("alice"), mask_bytes(&f, 0)).await;
    let (st, _) = call(&app, "POST", &format!("/masks/{id}/encode"), Some("alice"), vec![]).await;
    assert_eq!(st, StatusCode::OK);
    let (st, _) = call(&app, "POST", &format!("/masks/{id}/encode"), Some("bob"), vec![]).await;
    assert_eq!(st, StatusCode::NOT_FOUND);
    let (st, _) = call(&app, "POST", &format!("/masks/{id}/encode"), None, vec![]).await;
    assert_eq!(st, StatusCode::NOT_FOUND);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn concurrent_sessions_get_consistent_results() {
    let f = fixture();
    let app = loaded(&f);
    let mut handles = Vec::new();
    for i in 0..16usize {
        let app = app.clone();
        let png = mask_bytes(&f, i % 4);
        handles.push(tokio::spawn(async move {
            let session = format!("s{i}");
            let id = upload(&app, Some(&session), png).await;
            let plan = json!({"edits": [{"class": "eyes", "op": "generate", "seed": i % 4}]});
            let (st, v) = call(&app, "POST", &format!("/masks/{id}/edit"), Some(&session), json_body(plan)).await;
            assert_eq!(st, StatusCode::OK);
            (i % 4, v["mask_png"].as_str().unwrap().to_string())
        }));
    }
    let mut by_key: std::collections::HashMap<usize, String> = Default::default();
    for h in handles {
        let (k, png) = h.await.unwrap();
        let prev = by_key.entry(k).or_insert_with(|| png.clone());
        assert_eq!(*prev, png, "request group {k} diverged");
    }
    assert_eq!(by_key.len(), 4);
}

#[tokio::test]
async fn http_and_cli_edits_are_byte_identical() {
    let f = fixture();
    let app = loaded(&f);
    let id = upload(&app, None, mask_bytes(&f, 0)).await;
    let plan = json!({"edits": [{"class": "mouth", "op": "perturb", "noise_scale": 1.0}], "seed": 9});
    let (st, v) = call(&app, "POST", &format!("/masks/{id}/edit"), None, json_body(plan.clone())).await;
    assert_eq!(st, StatusCode::OK);
    let http_png = B64.decode(v["mask_png"].as_str().unwrap()).unwrap();

    let plan_path = f.dir.path().join("plan.json");
    std::fs::write(&plan_path, serde_json::to_vec(&plan).unwrap()).unwrap();
    let out_dir = f.dir.path().join("cli");
    let out = semvae(&[
        "edit", "--checkpoint", f.run.to_str().unwrap(), "--input", first_mask(&f.data).to_str().unwrap(),
        "--plan", plan_path.to_str().unwrap(), "--seed", "9", "--out", out_dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(std::fs::read(out_dir.join("00000_edit.png")).unwrap(), http_png);
}
