mod common;

use axum::body::Body;
use axum::http::{header, Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use proxy_audit::detect::{program_digest, AuditConfig};
use proxy_audit::measures::UtilityTarget;
use proxy_audit::oracle::Policy;
use proxy_audit::repair::{repair_loop, LoopOutcome, Status};
use proxy_audit::service::{router, AppState, ProgramView, SessionView, StepLog, WitnessList};
use serde_json::{json, Value};
use tower::ServiceExt;

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let mut req = Request::builder().method(method).uri(uri);
    let body = match body {
        Some(v) => {
            req = req.header(header::CONTENT_TYPE, "application/json");
            Body::from(v.to_string())
        }
        None => Body::empty(),
    };
    let resp = app.clone().oneshot(req.body(body).unwrap()).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let v = if bytes.is_empty() { Value::Null } else { serde_json::from_slice(&bytes).unwrap() };
    (status, v)
}

fn create_body() -> Value {
    let model: Value = serde_json::from_str(&std::fs::read_to_string(common::fixture("masked_tree.json")).unwrap()).unwrap();
    json!({
        "model": model,
        "data": {
            "path": common::fixture("masked.csv").to_str().unwrap(),
            "options": {"protected": "race", "split": 0.5, "seed": 3}
        },
        "config": {"epsilon": 0.9, "delta": 0.2, "seed": 7}
    })
}

fn parse<T: serde::de::DeserializeOwned>(v: Value) -> T {
    serde_json::from_value(v).unwrap()
}

/// Rejects every pending witness until the session is done.
async fn reject_everything(app: &Router, id: &str) -> SessionView {
    for _ in 0..64 {
        let (s, v) = call(app, "GET", &format!("/api/sessions/{id}/witnesses"), None).await;
        assert_eq!(s, StatusCode::OK);
        let list: WitnessList = parse(v);
        if list.status == Status::Done {
            break;
        }
        for w in &list.witnesses {
            let body = json!({"witness_id": w.id, "appropriate": false, "note": "redlining"});
            let (s, _) = call(app, "POST", &format!("/api/sessions/{id}/judgments"), Some(body)).await;
            assert_eq!(s, StatusCode::OK);
        }
    }
    let (_, v) = call(app, "GET", &format!("/api/sessions/{id}"), None).await;
    parse(v)
}

#[tokio::test]
async fn a_session_runs_to_completion_over_http() {
    let app = router(AppState::new(None));
    let (s, v) = call(&app, "POST", "/api/sessions", Some(create_body())).await;
    assert_eq!(s, StatusCode::CREATED, "{v}");
    let view: SessionView = parse(v);
    assert_eq!(view.status, Status::AwaitingJudgment);
    assert!(view.pending > 0);
    let id = view.id.clone();

    let (_, v) = call(&app, "GET", &format!("/api/sessions/{id}/witnesses"), None).await;
    let list: WitnessList = parse(v);
    assert_eq!(list.witnesses.len(), view.pending);
    assert_eq!((list.epsilon, list.delta), (0.9, 0.2));
    assert!(list.witnesses.iter().any(|w| w.site_key() == "0"));

    let done = reject_everything(&app, &id).await;
    assert_eq!(done.status, Status::Done);
    assert!(done.steps > 0);

    let (_, v) = call(&app, "GET", &format!("/api/sessions/{id}/program"), None).await;
    let prog: ProgramView = parse(v);
    assert_eq!(prog.program_digest, done.program_digest);
    assert!(prog.scatter.iter().any(|r| r.phase == "original"));
    assert!(prog.scatter.iter().any(|r| r.phase == "repaired"));
    assert!(prog.scatter.iter().filter(|r| r.phase == "repaired").all(|r| !(r.epsilon >= 0.9 && r.delta >= 0.2)));

    let (_, v) = call(&app, "GET", &format!("/api/sessions/{id}/steps"), None).await;
    let log: StepLog = parse(v);
    assert_eq!(log.steps.len(), done.steps);
    assert_eq!(log.judgments.len(), done.judgments);
    assert!(log.judgments.iter().all(|j| !j.appropriate && j.note.as_deref() == Some("redlining")));

    // the same run in process, with every witness rejected by policy
    let (p, _) = common::masked();
    let mut opts = proxy_audit::data::LoadOptions::new("race");
    opts.split = 0.5;
    opts.seed = 3;
    let data = proxy_audit::data::Dataset::load(common::fixture("masked.csv"), &opts).unwrap();
    let mut cfg = AuditConfig::new(0.9, 0.2);
    cfg.seed = 7;
    let LoopOutcome::Done { program, .. } =
        repair_loop(&p, &data, &cfg, &mut Policy::reject_all(), &UtilityTarget::Fidelity(p.clone())).unwrap()
    else {
        panic!("policies never suspend")
    };
    assert_eq!(program_digest(&program), done.program_digest);
}

#[tokio::test]
async fn errors_map_to_status_codes() {
    let app = router(AppState::new(None));
    let mut body = create_body();
    body["config"] = json!({"epsilon": 0.1, "delta": 0.05, "seed": 7});
    let (s, v) = call(&app, "POST", "/api/sessions", Some(body)).await;
    assert_eq!(s, StatusCode::CREATED);
    let id = v["id"].as_str().unwrap().to_string();

    let (s, v) = call(&app, "GET", "/api/sessions/nope", None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    assert!(v["error"].is_string());
    let (s, _) = call(&app, "GET", "/api/sessions/nope/witnesses", None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);

    let judgments = format!("/api/sessions/{id}/judgments");
    let (s, _) = call(&app, "POST", &judgments, Some(json!({"witness_id": "0000", "appropriate": true}))).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    let (s, _) = call(&app, "POST", &judgments, Some(json!({"witness": "x"}))).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);

    let req = Request::builder()
        .method("POST")
        .uri(&judgments)
        .body(Body::from(r#"{"witness_id": "x", "appropriate": true}"#))
        .unwrap();
    assert_eq!(app.clone().oneshot(req).await.unwrap().status(), StatusCode::UNSUPPORTED_MEDIA_TYPE);

    // two pending witnesses: judging the first twice conflicts
    let (_, v) = call(&app, "GET", &format!("/api/sessions/{id}/witnesses"), None).await;
    let list: WitnessList = parse(v);
    assert!(list.witnesses.len() >= 2);
    let first = json!({"witness_id": list.witnesses[0].id, "appropriate": true});
    let (s, v) = call(&app, "POST", &judgments, Some(first.clone())).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["judgments"], 1);
    assert_eq!(v["status"], "awaiting_judgment");
    let (s, _) = call(&app, "POST", &judgments, Some(first)).await;
    assert_eq!(s, StatusCode::CONFLICT);

    let mut bad = create_body();
    bad["config"]["epsilon"] = json!(-0.5);
    let (s, _) = call(&app, "POST", "/api/sessions", Some(bad)).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    let mut bad = create_body();
    bad["data"]["path"] = json!("/nonexistent.csv");
    let (s, _) = call(&app, "POST", "/api/sessions", Some(bad)).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    let mut bad = create_body();
    bad["model"] = json!({"model": "tree", "root": {"feature": "nowhere", "threshold": 1, "left": {"leaf": 0}, "right": {"leaf": 1}}});
    let (s, _) = call(&app, "POST", "/api/sessions", Some(bad)).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
}

#[tokio::test]
async fn sessions_survive_a_restart() {
    let dir = tempfile::tempdir().unwrap();
    let app = router(AppState::new(Some(dir.path().to_path_buf())));
    let (_, v) = call(&app, "POST", "/api/sessions", Some(create_body())).await;
    let view: SessionView = parse(v);
    let id = view.id.clone();
    let (_, v) = call(&app, "GET", &format!("/api/sessions/{id}/witnesses"), None).await;
    let list: WitnessList = parse(v);
    let body = json!({"witness_id": list.witnesses[0].id, "appropriate": false});
    call(&app, "POST", &format!("/api/sessions/{id}/judgments"), Some(body)).await;
    let (_, before) = call(&app, "GET", &format!("/api/sessions/{id}"), None).await;
    drop(app);

    let app = router(AppState::restore(dir.path().to_path_buf()).unwrap());
    let (s, after) = call(&app, "GET", &format!("/api/sessions/{id}"), None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(before, after);
    let done = reject_everything(&app, &id).await;
    assert_eq!(done.status, Status::Done);

    // a fresh session on the same inputs ends with the same program
    let fresh = router(AppState::new(None));
    let (_, v) = call(&fresh, "POST", "/api/sessions", Some(create_body())).await;
    let other: SessionView = parse(v);
    let again = reject_everything(&fresh, &other.id).await;
    assert_eq!(again.program_digest, done.program_digest);
}
