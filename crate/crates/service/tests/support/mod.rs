#![allow(dead_code)]

use std::io::Cursor;
use std::path::Path;
use std::sync::Arc;
use std::time::{Duration, Instant};

use axum::body::Body;
use axum::http::{header, Request, StatusCode};
use axum::Router;
use hazardpipe::{build_detectors, open_blobs, open_pipeline, router, AppState};
use hazardpipe_core::blob::{BlobStore, FsBlobStore};
use hazardpipe_core::ingest::{extract_geotag, sniff};
use hazardpipe_core::sim::{generate_scenario, Scenario, ScenarioConfig, SimImage};
use hazardpipe_core::{Config, Pipeline};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

pub const EXPERT: &str = "exp-01";

/// Temporary data directory whose image blobs are scanned for GPS
/// metadata when the test finishes.
pub struct DataDir(tempfile::TempDir);

impl DataDir {
    pub fn new() -> Self {
        DataDir(tempfile::tempdir().unwrap())
    }

    pub fn path(&self) -> &Path {
        self.0.path()
    }
}

impl Drop for DataDir {
    fn drop(&mut self) {
        if std::thread::panicking() {
            return;
        }
        let blobs = FsBlobStore::open(self.path()).unwrap();
        for id in blobs.list().unwrap() {
            let Some(bytes) = blobs.get(&id).unwrap() else { continue };
            if sniff(&bytes).is_none() {
                continue;
            }
            assert_eq!(extract_geotag(&bytes).unwrap(), None, "blob {id:?}");
            if let Ok(ex) = exif::Reader::new().read_from_container(&mut Cursor::new(&bytes)) {
                assert!(
                    ex.fields().all(|f| f.tag.context() != exif::Context::Gps),
                    "blob {id:?} keeps GPS"
                );
            }
        }
    }
}

pub fn config() -> Config {
    let mut cfg = Config::default();
    cfg.simulation = ScenarioConfig::smoke();
    cfg.server.experts = vec![EXPERT.into()];
    cfg
}

pub fn scenario() -> Scenario {
    let cfg = config();
    generate_scenario(&cfg.simulation, &cfg.geo.region).unwrap()
}

pub fn open(dir: &Path, scenario: &Scenario) -> (Router, Arc<Pipeline>) {
    let cfg = config();
    let blobs = open_blobs(dir).unwrap();
    let detectors = build_detectors(&cfg, &blobs, Some(scenario)).unwrap();
    let pipeline = Arc::new(open_pipeline(cfg, dir, detectors, blobs).unwrap());
    (router(AppState { pipeline: Arc::clone(&pipeline) }), pipeline)
}

/// Images the mock detector will find something in, in scenario order.
pub fn with_detections(s: &Scenario) -> Vec<&SimImage> {
    s.images
        .iter()
        .filter(|i| s.plans.get(&i.blob).is_some_and(|p| !p.predictions().is_empty()))
        .collect()
}

const BOUNDARY: &str = "hazardpipe-test-boundary";

pub fn multipart(image: Option<&[u8]>, fields: &[(&str, &str)]) -> Request<Body> {
    let mut body = Vec::new();
    for (k, v) in fields {
        body.extend_from_slice(
            format!("--{BOUNDARY}\r\nContent-Disposition: form-data; name=\"{k}\"\r\n\r\n{v}\r\n").as_bytes(),
        );
    }
    if let Some(img) = image {
        body.extend_from_slice(
            format!(
                "--{BOUNDARY}\r\nContent-Disposition: form-data; name=\"image\"; filename=\"p.jpg\"\r\nContent-Type: image/jpeg\r\n\r\n"
            )
            .as_bytes(),
        );
        body.extend_from_slice(img);
        body.extend_from_slice(b"\r\n");
    }
    body.extend_from_slice(format!("--{BOUNDARY}--\r\n").as_bytes());
    Request::post("/reports")
        .header(header::CONTENT_TYPE, format!("multipart/form-data; boundary={BOUNDARY}"))
        .body(Body::from(body))
        .unwrap()
}

pub async fn send(app: &Router, req: Request<Body>) -> (StatusCode, Value) {
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let v = serde_json::from_slice(&bytes).unwrap_or(Value::Null);
    (status, v)
}

pub async fn get(app: &Router, uri: &str) -> (StatusCode, Value) {
    send(app, Request::get(uri).body(Body::empty()).unwrap()).await
}

pub async fn post_json(app: &Router, uri: &str, body: Value) -> (StatusCode, Value) {
    send(
        app,
        Request::post(uri)
            .header(header::CONTENT_TYPE, "application/json")
            .body(Body::from(body.to_string()))
            .unwrap(),
    )
    .await
}

pub async fn vote(app: &Router, validator: &str, detection: &str, verdict: Value) -> (StatusCode, Value) {
    post_json(
        app,
        "/votes",
        json!({ "validator_id": validator, "detection_id": detection, "verdict": verdict }),
    )
    .await
}

pub async fn submit(app: &Router, img: &SimImage) -> String {
    let (status, body) = send(app, multipart(Some(&img.bytes), &[("submitter", &img.submitter)])).await;
    assert_eq!(status, StatusCode::CREATED, "{body}");
    assert_eq!(body["stage"], "submitted");
    body["id"].as_str().unwrap().to_owned()
}

pub async fn wait_detected(app: &Router, report: &str) -> Value {
    let started = Instant::now();
    loop {
        let (status, body) = get(app, &format!("/reports/{report}")).await;
        assert_eq!(status, StatusCode::OK);
        if body["stage"] != "submitted" {
            return body;
        }
        assert!(started.elapsed() < Duration::from_secs(20), "detection never finished");
        tokio::time::sleep(Duration::from_millis(20)).await;
    }
}

pub async fn status_of(app: &Router, detection: &str) -> String {
    let (s, body) = get(app, &format!("/detections/{detection}")).await;
    assert_eq!(s, StatusCode::OK);
    body["record"]["consensus"]["status"].as_str().unwrap().to_owned()
}

/// Drives every detection of `report` to a confirmed outcome.
pub async fn confirm_all(app: &Router, report: &Value) {
    for d in report["detections"].as_array().unwrap() {
        let id = d["id"].as_str().unwrap();
        if status_of(app, id).await == "escalated" {
            let (s, body) = vote(app, EXPERT, id, json!("confirm")).await;
            assert_eq!(s, StatusCode::OK, "{body}");
        } else {
            for v in ["alice", "bob", "carol"] {
                let (s, body) = vote(app, v, id, json!("confirm")).await;
                assert_eq!(s, StatusCode::OK, "{body}");
            }
        }
        assert_eq!(status_of(app, id).await, "confirmed");
    }
}

pub async fn draft_for(app: &Router, report: &str) -> Value {
    let (s, drafts) = get(app, "/drafts").await;
    assert_eq!(s, StatusCode::OK);
    drafts
        .as_array()
        .unwrap()
        .iter()
        .find(|d| d["report_ids"].as_array().unwrap().iter().any(|r| r == report))
        .cloned()
        .expect("validated report has a draft")
}

