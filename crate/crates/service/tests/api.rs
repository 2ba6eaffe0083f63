use std::path::Path;
use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use prefview_core::experiment::{
    load_reconstruction, orbit_radius_floor, Experiment, ExperimentConfig, IterationOutcome, LabelerMode,
};
use prefview_core::image_io::{decode_png, encode_png};
use prefview_core::ppo::PpoConfig;
use prefview_core::pref::RewardTrainConfig;
use prefview_core::recon::render_voxels;
use prefview_core::sim::CameraIntrinsics;
use prefview_service::{router, AppState};
use serde_json::{json, Value};
use tower::ServiceExt;

fn small_config() -> ExperimentConfig {
    ExperimentConfig {
        seed: 21,
        labeler: LabelerMode::Human,
        reconstructions_per_round: 4,
        voxel_resolution: 24,
        ppo_updates_per_iteration: 2,
        ppo: PpoConfig {
            n_steps: 64,
            ..PpoConfig::default()
        },
        reward: RewardTrainConfig {
            epochs: 3,
            ..RewardTrainConfig::default()
        },
        eval_episodes: 2,
        preview_size: 64,
        human_timeout_secs: 0,
        human_poll_ms: 1,
        ..ExperimentConfig::default()
    }
}

/// Experiment suspended in its first round with two open human tickets.
fn suspended_experiment(dir: &Path) -> Experiment {
    let mut e = Experiment::init(small_config(), dir).unwrap();
    match e.run_iteration().unwrap() {
        IterationOutcome::Suspended { open_pairs, .. } => assert_eq!(open_pairs, 2),
        other => panic!("expected suspension, got {other:?}"),
    }
    e
}

fn app(dir: &Path) -> Router {
    router(Arc::new(AppState::open(dir, None).unwrap()), None)
}

async fn call(app: &Router, req: Request<Body>) -> (StatusCode, Vec<u8>) {
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes().to_vec();
    (status, bytes)
}

async fn get(app: &Router, uri: &str) -> (StatusCode, Vec<u8>) {
    call(app, Request::get(uri).body(Body::empty()).unwrap()).await
}

async fn post_label(app: &Router, body: Value) -> (StatusCode, Value) {
    let req = Request::post("/api/labels")
        .header("content-type", "application/json")
        .body(Body::from(body.to_string()))
        .unwrap();
    let (s, b) = call(app, req).await;
    (s, serde_json::from_slice(&b).unwrap_or(Value::Null))
}

fn json_of(bytes: &[u8]) -> Value {
    serde_json::from_slice(bytes).unwrap()
}

fn preference_lines(dir: &Path) -> Vec<Value> {
    std::fs::read_to_string(dir.join("preferences.jsonl"))
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

#[tokio::test]
async fn fresh_experiment_status_and_empty_queue() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("exp");
    drop(Experiment::init(small_config(), &dir).unwrap());
    let app = app(&dir);
    let (s, body) = get(&app, "/api/status").await;
    assert_eq!(s, StatusCode::OK);
    let st = json_of(&body);
    assert_eq!(st["iteration"], 0);
    assert_eq!(st["labeled_total"], 0);
    assert_eq!(st["open_pairs"], 0);
    let (s, body) = get(&app, "/api/pairs/next").await;
    assert_eq!(s, StatusCode::NO_CONTENT);
    assert!(body.is_empty());
}

#[tokio::test]
async fn label_loop_is_exactly_once() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("exp");
    let _e = suspended_experiment(&dir);
    let app = app(&dir);

    let (_, a1) = get(&app, "/api/pairs/next").await;
    let (_, a2) = get(&app, "/api/pairs/next").await;
    let first = json_of(&a1);
    assert_eq!(first, json_of(&a2));
    assert_eq!(first["state"], "open");
    assert_eq!(first["manifest"]["count"], 12);
    let order = first["manifest"]["left_order"].as_array().unwrap();
    assert_eq!(order.len(), 10);
    assert!(order.iter().all(|s| (1..=36).contains(&s["action"].as_u64().unwrap())));
    let pair_id = first["pair_id"].as_str().unwrap().to_string();

    let (s, ack) = post_label(&app, json!({"pair_id": pair_id, "mu": 1})).await;
    assert_eq!(s, StatusCode::OK, "{ack}");
    assert_eq!(ack["mu"], 1);
    let lines = preference_lines(&dir);
    assert_eq!(lines.len(), 1);
    assert_eq!(lines[0]["pair_id"], pair_id.as_str());
    assert_eq!(lines[0]["mu"], 1);
    assert_eq!(lines[0]["labeler"], "human");

    let (s, _) = post_label(&app, json!({"pair_id": pair_id, "mu": 2})).await;
    assert_eq!(s, StatusCode::CONFLICT);
    assert_eq!(preference_lines(&dir).len(), 1);

    let (_, next) = get(&app, "/api/pairs/next").await;
    let second = json_of(&next);
    assert_ne!(second["pair_id"], first["pair_id"]);

    let (s, _) = post_label(&app, json!({"pair_id": second["pair_id"], "mu": 3})).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    let (s, _) = post_label(&app, json!({"pair_id": "it99-pair000", "mu": 1})).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    let (s, _) = post_label(&app, json!({"pair_id": second["pair_id"]})).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(preference_lines(&dir).len(), 1);

    let st = json_of(&get(&app, "/api/status").await.1);
    let (open, labeled, skipped, issued) = (
        st["open_pairs"].as_u64().unwrap(),
        st["labeled_total"].as_u64().unwrap(),
        st["skipped_total"].as_u64().unwrap(),
        st["issued_total"].as_u64().unwrap(),
    );
    assert_eq!(open + labeled + skipped, issued);
    assert_eq!((open, labeled), (1, 1));
    assert_eq!(st["training_phase"], "suspended");
}

#[tokio::test]
async fn restart_keeps_labels_and_queue() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("exp");
    let _e = suspended_experiment(&dir);
    let first_id = {
        let app = app(&dir);
        let t = json_of(&get(&app, "/api/pairs/next").await.1);
        post_label(&app, json!({"pair_id": t["pair_id"], "mu": 2})).await;
        t["pair_id"].clone()
    };
    let app = app(&dir);
    let t = json_of(&get(&app, "/api/pairs/next").await.1);
    assert_ne!(t["pair_id"], first_id);
    let (s, _) = post_label(&app, json!({"pair_id": first_id, "mu": 1})).await;
    assert_eq!(s, StatusCode::CONFLICT);
}

#[tokio::test]
async fn frames_are_deterministic_and_clamped() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("exp");
    let e = suspended_experiment(&dir);
    let app = app(&dir);
    let id = e.trajectories()[0].id.clone();

    let uri = format!("/api/reconstructions/{id}/frames?azimuth=45&elevation=30&zoom=1.5");
    let (s, a) = get(&app, &uri).await;
    assert_eq!(s, StatusCode::OK);
    let (_, b) = get(&app, &uri).await;
    assert_eq!(a, b);
    let img = decode_png(&a).unwrap();
    assert_eq!((img.width, img.height), (64, 64));

    // both zooms are past the radius floor, so they render the same pose
    let (_, z8) = get(&app, &format!("/api/reconstructions/{id}/frames?azimuth=10&elevation=20&zoom=8")).await;
    let (_, z99) = get(&app, &format!("/api/reconstructions/{id}/frames?azimuth=10&elevation=20&zoom=99")).await;
    assert_eq!(z8, z99);
    let cfg = e.config();
    let sphere = cfg.view_sphere.to_sphere();
    let recon = load_reconstruction(&dir, &id).unwrap();
    let floor = orbit_radius_floor(&sphere, &recon.bounds);
    let pose = sphere.orbit_pose(10f64.to_radians(), 20f64.to_radians(), floor);
    let intr = CameraIntrinsics {
        width: 64,
        height: 64,
        fov_y: cfg.intrinsics.fov_y,
    };
    let expected = encode_png(&render_voxels(&recon, &pose, &intr, &e.scene().light).unwrap()).unwrap();
    assert_eq!(z8, expected);

    let (s, _) = get(&app, "/api/reconstructions/it07-ep999/frames").await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    let (s, _) = get(&app, "/api/reconstructions/..%2Fconfig/frames").await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    let (s, _) = get(&app, &format!("/api/reconstructions/{id}/frames?zoom=abc")).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
}

#[tokio::test]
async fn cors_and_root_page() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("exp");
    drop(Experiment::init(small_config(), &dir).unwrap());
    let app = app(&dir);
    let req = Request::get("/api/status")
        .header("origin", "http://localhost:5173")
        .body(Body::empty())
        .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    assert_eq!(resp.headers()["access-control-allow-origin"], "*");
    let (s, body) = get(&app, "/").await;
    assert_eq!(s, StatusCode::OK);
    assert!(String::from_utf8(body).unwrap().contains("/api/status"));
}

#[tokio::test]
async fn labels_resume_a_suspended_iteration() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("exp");
    let mut e = suspended_experiment(&dir);
    let queued: Vec<String> = e.state().pending.as_ref().unwrap().pair_ids.clone();
    let labels = e.labels();
    let app = router(Arc::new(AppState::open(&dir, Some(labels)).unwrap()), None);
    let mut served = Vec::new();
    while let (StatusCode::OK, body) = get(&app, "/api/pairs/next").await {
        let t = json_of(&body);
        served.push(t["pair_id"].as_str().unwrap().to_string());
        let (s, _) = post_label(&app, json!({"pair_id": t["pair_id"], "mu": 1})).await;
        assert_eq!(s, StatusCode::OK);
    }
    assert_eq!(served, queued);
    match e.run_iteration().unwrap() {
        IterationOutcome::Completed(s) => assert_eq!(s.labeled, 2),
        other => panic!("{other:?}"),
    }
    let st = json_of(&get(&app, "/api/status").await.1);
    assert_eq!(st["iteration"], 1);
    assert_eq!(st["labeled_total"], 2);
    assert_eq!(preference_lines(&dir).len(), 2);
}
