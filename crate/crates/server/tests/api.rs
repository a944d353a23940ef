use std::collections::BTreeMap;
use std::io::Write;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use capeval_core::dataset_io::{ReferenceFormat, ReferenceStore};
use capeval_core::EngineConfig;
use capeval_server::{serve_with_shutdown, AppState, Clock, ServerSetup, SubmissionStore, UserEntry};
use serde_json::Value;

const TEST_REFS: &str = r#"[
    {"image_id": 1, "captions": ["a zebra grazing near tall acacia trees"]},
    {"image_id": 2, "captions": ["an old lighthouse beside stormy water"]}
]"#;
const VAL_REFS: &str = r#"[{"image_id": 7, "captions": ["a red bus"]}]"#;

struct Server {
    base: String,
    client: reqwest::Client,
    clock: Arc<AtomicU64>,
    _dir: tempfile::TempDir,
    _stop: tokio::sync::oneshot::Sender<()>,
}

fn user(id: &str, admin: bool) -> UserEntry {
    UserEntry { id: id.into(), token: format!("tok-{id}"), admin, quota_limit: None }
}

async fn start(quota_limit: usize) -> Server {
    let dir = tempfile::tempdir().unwrap();
    let mut splits = BTreeMap::new();
    splits.insert("test".to_string(), ReferenceStore::parse(TEST_REFS.as_bytes(), ReferenceFormat::Simple, "test").unwrap());
    splits.insert("val".to_string(), ReferenceStore::parse(VAL_REFS.as_bytes(), ReferenceFormat::Simple, "val").unwrap());
    let clock = Arc::new(AtomicU64::new(1_000));
    let c = clock.clone();
    let clock_fn: Clock = Arc::new(move || c.load(Ordering::SeqCst));
    let state = AppState::new(ServerSetup {
        splits,
        engine: EngineConfig::default(),
        users: vec![user("alice", false), user("bob", false), user("root", true)],
        quota_limit,
        quota_window_secs: 60,
        max_upload_bytes: 1 << 20,
        store: SubmissionStore::open(dir.path().join("log.jsonl")).unwrap(),
        clock: clock_fn,
    })
    .unwrap();
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let base = format!("http://{}", listener.local_addr().unwrap());
    let (tx, rx) = tokio::sync::oneshot::channel();
    tokio::spawn(serve_with_shutdown(listener, state, async {
        let _ = rx.await;
    }));
    Server { base, client: reqwest::Client::new(), clock, _dir: dir, _stop: tx }
}

impl Server {
    async fn submit(&self, who: &str, split: &str, body: impl Into<reqwest::Body>) -> (u16, Value) {
        let resp = self
            .client
            .post(format!("{}/api/submissions?split={split}", self.base))
            .bearer_auth(format!("tok-{who}"))
            .body(body)
            .send()
            .await
            .unwrap();
        (resp.status().as_u16(), resp.json().await.unwrap())
    }

    async fn get(&self, path: &str, who: Option<&str>) -> (u16, String) {
        let mut req = self.client.get(format!("{}{path}", self.base));
        if let Some(w) = who {
            req = req.bearer_auth(format!("tok-{w}"));
        }
        let resp = req.send().await.unwrap();
        (resp.status().as_u16(), resp.text().await.unwrap())
    }
}

const GOOD: &str = r#"[{"image_id": 1, "caption": "a zebra near trees"}, {"image_id": 2, "caption": "a lighthouse by the water"}]"#;
const PERFECT: &str = r#"[{"image_id": 1, "caption": "a zebra grazing near tall acacia trees"}, {"image_id": 2, "caption": "an old lighthouse beside stormy water"}]"#;

fn error_code(v: &Value) -> &str {
    v["error"]["code"].as_str().unwrap()
}

#[tokio::test]
async fn health_and_auth() {
    let s = start(5).await;
    let (status, body) = s.get("/api/health", None).await;
    assert_eq!(status, 200);
    assert!(body.contains("\"ok\""));

    let resp = s.client.post(format!("{}/api/submissions?split=test", s.base)).body(GOOD).send().await.unwrap();
    assert_eq!(resp.status().as_u16(), 401);
    let v: Value = resp.json().await.unwrap();
    assert_eq!(error_code(&v), "unauthorized");
    assert!(v["error"]["message"].is_string());

    let (status, v) = s.submit("mallory", "test", GOOD).await;
    assert_eq!((status, error_code(&v)), (401, "unauthorized"));
    let (status, v) = s.submit("alice", "train", GOOD).await;
    assert_eq!((status, error_code(&v)), (400, "unknown_split"));
    let (status, _) = s.get("/api/nothing", None).await;
    assert_eq!(status, 404);
}

#[tokio::test]
async fn scored_submission_round_trip() {
    let s = start(5).await;
    let (status, v) = s.submit("alice", "test", PERFECT).await;
    assert_eq!(status, 201);
    assert_eq!(v["status"], "scored");
    assert_eq!(v["user"], "alice");
    let report = &v["report"];
    assert_eq!(report["split"], "test");
    assert_eq!(report["scores"]["BLEU-1"], 1.0);
    assert!((report["scores"]["CIDEr-D"].as_f64().unwrap() - 10.0).abs() < 1e-9);

    let id = v["id"].as_str().unwrap();
    let (status, body) = s.get(&format!("/api/submissions/{id}"), Some("alice")).await;
    assert_eq!(status, 200);
    let fetched: Value = serde_json::from_str(&body).unwrap();
    assert_eq!(fetched["report"], *report);

    let (status, body) = s.get(&format!("/api/submissions/{id}"), Some("bob")).await;
    assert_eq!(status, 403);
    assert_eq!(error_code(&serde_json::from_str(&body).unwrap()), "forbidden");
    let (status, _) = s.get(&format!("/api/submissions/{id}"), Some("root")).await;
    assert_eq!(status, 200);
    let (status, body) = s.get("/api/submissions/99999999", Some("alice")).await;
    assert_eq!(status, 404);
    assert_eq!(error_code(&serde_json::from_str(&body).unwrap()), "not_found");
}

#[tokio::test]
async fn rejections_consume_quota() {
    let s = start(3).await;
    let (status, v) = s.submit("alice", "test", r#"[{"image_id": 1, "caption": "x"}]"#).await;
    assert_eq!(status, 201);
    assert_eq!(v["status"], "rejected");
    assert_eq!(v["violations"][0]["kind"], "missing_image");
    assert_eq!(v["violations"][0]["image_id"], 2);

    let (_, v) = s.submit("alice", "test", "not json").await;
    assert_eq!(v["status"], "rejected");
    assert!(v["error"].as_str().unwrap().contains("JSON"));

    let (_, v) = s.submit("alice", "test", GOOD).await;
    assert_eq!(v["status"], "scored");
    let (status, v) = s.submit("alice", "test", GOOD).await;
    assert_eq!((status, error_code(&v)), (429, "quota_exceeded"));

    // quota is per split and per user
    assert_eq!(s.submit("alice", "val", r#"[{"image_id": 7, "caption": "a bus"}]"#).await.0, 201);
    assert_eq!(s.submit("bob", "test", GOOD).await.0, 201);

    // and frees up once the window passes
    s.clock.fetch_add(60_000, Ordering::SeqCst);
    assert_eq!(s.submit("alice", "test", GOOD).await.0, 201);
}

#[tokio::test]
async fn same_file_twice_gives_two_records() {
    let s = start(5).await;
    let (_, a) = s.submit("alice", "test", GOOD).await;
    let (_, b) = s.submit("alice", "test", GOOD).await;
    assert_ne!(a["id"], b["id"]);
    assert_eq!(a["report"], b["report"]);
}

fn zip_of(files: &[(&str, &str)]) -> Vec<u8> {
    let mut w = zip::ZipWriter::new(std::io::Cursor::new(Vec::new()));
    for (name, body) in files {
        w.start_file(*name, zip::write::SimpleFileOptions::default()).unwrap();
        w.write_all(body.as_bytes()).unwrap();
    }
    w.finish().unwrap().into_inner()
}

#[tokio::test]
async fn zip_and_multipart_uploads() {
    let s = start(5).await;
    let val = r#"[{"image_id": 7, "caption": "a red bus"}]"#;
    let archive = zip_of(&[("captions_val_results.json", val), ("captions_test_results.json", PERFECT)]);

    let (status, v) = s.submit("alice", "test", archive.clone()).await;
    assert_eq!(status, 201);
    assert_eq!(v["report"]["scores"]["BLEU-4"], 1.0);

    let form = reqwest::multipart::Form::new()
        .part("file", reqwest::multipart::Part::bytes(archive).file_name("results.zip"));
    let resp = s
        .client
        .post(format!("{}/api/submissions?split=val", s.base))
        .bearer_auth("tok-alice")
        .multipart(form)
        .send()
        .await
        .unwrap();
    assert_eq!(resp.status().as_u16(), 201);
    let v: Value = resp.json().await.unwrap();
    assert_eq!(v["split"], "val");
    assert_eq!(v["report"]["scores"]["BLEU-1"], 1.0);
}

#[tokio::test]
async fn leaderboard_ranks_by_cider_d() {
    let s = start(5).await;
    let (status, body) = s.get("/api/leaderboard?split=test", None).await;
    assert_eq!((status, body.as_str()), (200, "[]"));

    s.submit("bob", "test", GOOD).await;
    s.clock.fetch_add(1, Ordering::SeqCst);
    s.submit("alice", "test", PERFECT).await;
    s.clock.fetch_add(1, Ordering::SeqCst);
    s.submit("bob", "test", PERFECT).await;

    let (_, body) = s.get("/api/leaderboard?split=test", None).await;
    let rows: Vec<Value> = serde_json::from_str(&body).unwrap();
    assert_eq!(rows.len(), 2);
    // equal best scores: the earlier submission ranks first
    assert_eq!(rows[0]["user"], "alice");
    assert_eq!(rows[1]["user"], "bob");
    assert_eq!(rows[0]["rank"], 1);
    assert!(rows[0]["CIDEr-D"].as_f64().unwrap() > 9.99);

    let (status, body) = s.get("/api/leaderboard", None).await;
    assert_eq!(status, 400);
    assert_eq!(error_code(&serde_json::from_str(&body).unwrap()), "bad_request");
}

#[tokio::test]
async fn state_survives_restart() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("log.jsonl");
    let refs = ReferenceStore::parse(TEST_REFS.as_bytes(), ReferenceFormat::Simple, "test").unwrap();
    let make = || {
        AppState::new(ServerSetup {
            splits: BTreeMap::from([("test".to_string(), refs.clone())]),
            engine: EngineConfig::default(),
            users: vec![user("alice", false)],
            quota_limit: 2,
            quota_window_secs: 3600,
            max_upload_bytes: 1 << 20,
            store: SubmissionStore::open(&log).unwrap(),
            clock: Arc::new(|| 5),
        })
        .unwrap()
    };
    let first = make();
    first.store().reserve("alice", "test", 2, 3_600_000, 5).unwrap();
    first.store().reserve("alice", "test", 2, 3_600_000, 5).unwrap();
    drop(first);
    let second = make();
    assert_eq!(second.store().len(), 2);
    assert!(second.store().reserve("alice", "test", 2, 3_600_000, 5).is_err());
}
