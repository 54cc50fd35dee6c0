#![allow(dead_code)]

use std::path::Path;
use std::time::Duration;

use axum::body::Body;
use axum::http::{header, Method, Request, StatusCode};
use axum::Router;
use emoc_service::{router, AppState, ServiceConfig, API_SCHEMA};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

pub struct Reply {
    pub status: StatusCode,
    pub content_type: String,
    pub retry_after: Option<String>,
    pub bytes: Vec<u8>,
}

impl Reply {
    pub fn json(&self) -> Value {
        serde_json::from_slice(&self.bytes).unwrap_or_else(|e| {
            panic!("{} body is not JSON ({e}): {}", self.status, String::from_utf8_lossy(&self.bytes))
        })
    }

    pub fn error_code(&self) -> String {
        self.json()["error"]["code"].as_str().unwrap_or_default().to_string()
    }
}

fn validator(def: Option<&str>) -> jsonschema::Validator {
    let mut schema: Value = serde_json::from_str(API_SCHEMA).expect("schema is JSON");
    if let Some(def) = def {
        let obj = schema.as_object_mut().unwrap();
        obj.remove("oneOf");
        obj.insert("$ref".into(), json!(format!("#/$defs/{def}")));
    }
    jsonschema::validator_for(&schema).expect("schema compiles")
}

/// Panics unless `value` matches the schema definition `def` (or any
/// response shape when `def` is `None`).
pub fn assert_schema(value: &Value, def: Option<&str>) {
    let v = validator(def);
    let errors: Vec<String> = v.iter_errors(value).map(|e| e.to_string()).collect();
    assert!(errors.is_empty(), "{def:?} violated: {errors:?}\n{value:#}");
}

pub struct Client {
    pub app: Router,
}

impl Client {
    pub async fn start(dir: &Path) -> Self {
        Self::with_wait(dir, Duration::from_secs(60)).await
    }

    pub async fn with_wait(dir: &Path, max_wait: Duration) -> Self {
        let cfg = ServiceConfig { max_wait, retry_after: Duration::from_millis(20), ..ServiceConfig::new(dir) };
        Client { app: router(AppState::start(cfg).await.expect("state loads")) }
    }

    pub async fn call(&self, method: Method, uri: &str, body: Option<Value>) -> Reply {
        let builder = Request::builder().method(method).uri(uri);
        let req = match body {
            Some(b) => builder.header(header::CONTENT_TYPE, "application/json").body(Body::from(b.to_string())),
            None => builder.body(Body::empty()),
        }
        .unwrap();
        let resp = self.app.clone().oneshot(req).await.unwrap();
        let status = resp.status();
        let header_str = |name| resp.headers().get(name).map(|v: &header::HeaderValue| v.to_str().unwrap().to_string());
        let content_type = header_str(header::CONTENT_TYPE).unwrap_or_default();
        let retry_after = header_str(header::RETRY_AFTER);
        let bytes = resp.into_body().collect().await.unwrap().to_bytes().to_vec();
        let reply = Reply { status, content_type, retry_after, bytes };
        if reply.content_type.starts_with("application/json") {
            assert_schema(&reply.json(), None);
        }
        reply
    }

    pub async fn get(&self, uri: &str) -> Reply {
        self.call(Method::GET, uri, None).await
    }

    pub async fn post(&self, uri: &str, body: Value) -> Reply {
        self.call(Method::POST, uri, Some(body)).await
    }

    pub async fn create(&self, request: Value) -> String {
        let r = self.post("/sessions", request).await;
        assert_eq!(r.status, StatusCode::CREATED, "{}", String::from_utf8_lossy(&r.bytes));
        let v = r.json();
        assert_schema(&v, Some("SessionStatus"));
        v["sessionId"].as_str().unwrap().to_string()
    }

    pub async fn status(&self, id: &str) -> Value {
        let r = self.get(&format!("/sessions/{id}")).await;
        assert_eq!(r.status, StatusCode::OK);
        r.json()
    }

    /// Polls next-batch until a batch (or a non-202 answer) arrives.
    pub async fn next_batch(&self, id: &str) -> Reply {
        loop {
            let r = self.post(&format!("/sessions/{id}/next-batch"), json!({})).await;
            if r.status != StatusCode::ACCEPTED {
                return r;
            }
            tokio::time::sleep(Duration::from_millis(10)).await;
        }
    }

    /// Waits until the session is Idle again.
    pub async fn settle(&self, id: &str) -> Value {
        for _ in 0..2000 {
            let s = self.status(id).await;
            if s["status"] != "updating" && s["status"] != "scoring" {
                return s;
            }
            tokio::time::sleep(Duration::from_millis(10)).await;
        }
        panic!("session {id} never settled");
    }
}

/// 4 classes, 2 known + 2 novel, 3 start samples and 4 pool samples per
/// class, K = 2: 16 pool samples, 8 batches.
pub fn tiny_request(seed: u64) -> Value {
    json!({
        "dataset": { "kind": "synthetic", "spec": { "num_classes": 4, "feature_dim": 3, "samples_per_class": 12, "test_per_class": 3 } },
        "config": {
            "protocol": { "num_known_classes": 2, "num_novel_classes": 2, "initial_per_class": 3, "pool_per_class": 4 },
            "selection": { "set_size": 2, "num_sets": 4, "eval_subset_size": 3 },
            "training": { "initial_iterations": 20, "iterations_per_update": 5 },
            "network": { "hidden": [4] }
        },
        "seed": seed
    })
}

/// Labels for a batch: every sample gets `class` or, with `new_class`, a
/// class created by name.
pub fn answers(batch: &Value, class: Option<usize>, new_class: Option<&str>) -> Value {
    let labels: Vec<Value> = batch["samples"]
        .as_array()
        .unwrap()
        .iter()
        .map(|s| match (class, new_class) {
            (_, Some(name)) => json!({ "sampleId": s["sampleId"], "newClass": name }),
            (Some(c), None) => json!({ "sampleId": s["sampleId"], "classId": c }),
            (None, None) => json!({ "sampleId": s["sampleId"], "classId": s["predictedLabel"] }),
        })
        .collect();
    json!({ "batchId": batch["batchId"], "labels": labels })
}
