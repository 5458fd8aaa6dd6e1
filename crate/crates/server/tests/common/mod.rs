#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, Instant};

use axum::body::Body;
use axum::http::{Method, Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use mirror_core::datasource::{DataSourceConfig, DataSourceKind};
use mirror_core::llm_provider::LlmProvider;
use mirror_server::{router, AppState, ProviderSettings, ServerConfig};
use serde_json::Value;
use tower::ServiceExt;

pub const TOP_SCORERS: &str = "SELECT name, ppg FROM players ORDER BY ppg DESC LIMIT 3";
pub const BAR_CHART: &str =
    r#"{"mark":"bar","encoding":{"x":{"field":"name","type":"nominal"},"y":{"field":"ppg","type":"quantitative"}}}"#;
pub const QUESTION: &str = "Who are the top three scorers?";

pub fn workspace_file(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..").join(rel)
}

/// Builds the sports fixture database inside `dir`.
pub fn sports_db(dir: &Path) -> PathBuf {
    let path = dir.join("sports.db");
    let sql = std::fs::read_to_string(workspace_file("fixtures/sports.sql")).unwrap();
    rusqlite::Connection::open(&path).unwrap().execute_batch(&sql).unwrap();
    path
}

pub struct Harness {
    pub dir: tempfile::TempDir,
    pub db: PathBuf,
    pub config: ServerConfig,
    pub state: Arc<AppState>,
    pub app: Router,
}

pub struct Reply {
    pub status: StatusCode,
    pub bytes: Vec<u8>,
    pub headers: axum::http::HeaderMap,
}

impl Reply {
    pub fn json(&self) -> Value {
        serde_json::from_slice(&self.bytes)
            .unwrap_or_else(|e| panic!("non-JSON body ({e}): {}", String::from_utf8_lossy(&self.bytes)))
    }
}

impl Harness {
    pub fn new(provider: Arc<dyn LlmProvider>) -> Self {
        Self::with(provider, |_| {})
    }

    pub fn with(provider: Arc<dyn LlmProvider>, tweak: impl FnOnce(&mut ServerConfig)) -> Self {
        let dir = tempfile::tempdir().unwrap();
        let db = sports_db(dir.path());
        let mut config = ServerConfig::new(
            dir.path().join("data"),
            ProviderSettings::Scripted { transcript: "unused.json".into() },
        );
        config.datasources.push(DataSourceConfig::new(
            "sports",
            DataSourceKind::EmbeddedFile,
            db.to_string_lossy(),
        ));
        tweak(&mut config);
        let state = AppState::open_with_provider(config.clone(), provider).unwrap();
        let app = router(Arc::clone(&state));
        Self { dir, db, config, state, app }
    }

    /// Drops the running state and opens a fresh one over the same data
    /// directory.
    pub fn restart(&mut self, provider: Arc<dyn LlmProvider>) {
        let state = AppState::open_with_provider(self.config.clone(), provider).unwrap();
        self.app = router(Arc::clone(&state));
        self.state = state;
    }

    pub async fn send(&self, req: Request<Body>) -> Reply {
        let resp = self.app.clone().oneshot(req).await.unwrap();
        let status = resp.status();
        let headers = resp.headers().clone();
        let bytes = resp.into_body().collect().await.unwrap().to_bytes().to_vec();
        Reply { status, bytes, headers }
    }

    pub async fn call(&self, method: Method, uri: &str, body: Option<Value>) -> Reply {
        let builder = Request::builder().method(method).uri(uri);
        let req = match body {
            Some(v) => builder
                .header("content-type", "application/json")
                .body(Body::from(v.to_string()))
                .unwrap(),
            None => builder.body(Body::empty()).unwrap(),
        };
        self.send(req).await
    }

    pub async fn get(&self, uri: &str) -> Reply {
        self.call(Method::GET, uri, None).await
    }

    pub async fn post(&self, uri: &str, body: Value) -> Reply {
        self.call(Method::POST, uri, Some(body)).await
    }

    /// Starts a query and polls until the session settles.
    pub async fn query(&self, question: &str) -> Value {
        let reply = self
            .post("/api/query", serde_json::json!({"datasource_id": "sports", "question": question}))
            .await;
        assert_eq!(reply.status, StatusCode::ACCEPTED, "{}", String::from_utf8_lossy(&reply.bytes));
        let id = reply.json()["id"].as_str().unwrap().to_owned();
        self.wait(&id).await
    }

    pub async fn wait(&self, id: &str) -> Value {
        let deadline = Instant::now() + Duration::from_secs(10);
        loop {
            let record = self.get(&format!("/api/sessions/{id}?debug=1")).await.json();
            let status = record["status"].as_str().unwrap();
            if status == "complete" || status == "sql-failed" {
                return record;
            }
            assert!(Instant::now() < deadline, "session {id} stuck in {status}");
            tokio::time::sleep(Duration::from_millis(5)).await;
        }
    }
}
