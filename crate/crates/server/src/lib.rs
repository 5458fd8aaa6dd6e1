//! HTTP service for the Mirror pipeline: data sources, asynchronous query
//! sessions with polling, SQL edits, autocompletion and template
//! management, with session history kept in an on-disk store.

mod api;
pub mod config;
pub mod error;
pub mod record;
pub mod state;
pub mod store;

use std::net::SocketAddr;
use std::sync::Arc;

use axum::extract::{Request, State};
use axum::http::{header, HeaderValue, Method, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::Router;
use tokio::net::TcpListener;
use tower_http::cors::{AllowOrigin, CorsLayer};

pub use config::{ConfigError, ProviderSettings, ServerConfig, API_KEY_ENV};
pub use error::ApiError;
pub use record::{SessionRecord, TemplateIds};
pub use state::{AppState, StartupError};

#[derive(Debug, thiserror::Error)]
pub enum ServeError {
    #[error(transparent)]
    Startup(#[from] StartupError),
    #[error("cannot listen on {addr}: {source}")]
    Bind {
        addr: String,
        source: std::io::Error,
    },
    #[error("server error: {0}")]
    Io(std::io::Error),
}

pub fn router(state: Arc<AppState>) -> Router {
    let api = Router::new()
        .route("/health", get(api::health))
        .route("/datasources", get(api::list_datasources).post(api::create_datasource))
        .route("/datasources/{id}/schema", get(api::get_schema))
        .route("/query", post(api::post_query))
        .route("/sessions", get(api::list_sessions))
        .route("/sessions/{id}", get(api::get_session))
        .route("/sessions/{id}/sql", post(api::post_sql))
        .route("/sessions/{id}/edit", post(api::post_edit))
        .route("/autocomplete", get(api::get_autocomplete))
        .route("/templates", get(api::get_templates).put(api::put_template))
        .fallback(api::not_found)
        .route_layer(middleware::from_fn_with_state(Arc::clone(&state), require_token));

    let mut app = Router::new()
        .nest("/api", api)
        .fallback(api::not_found)
        .with_state(Arc::clone(&state));
    if let Some(cors) = cors_layer(&state.config.cors_origins) {
        app = app.layer(cors);
    }
    app
}

fn cors_layer(origins: &[String]) -> Option<CorsLayer> {
    if origins.is_empty() {
        return None;
    }
    let layer = CorsLayer::new()
        .allow_methods([Method::GET, Method::POST, Method::PUT])
        .allow_headers([header::CONTENT_TYPE, header::AUTHORIZATION]);
    Some(if origins.iter().any(|o| o == "*") {
        layer.allow_origin(AllowOrigin::any())
    } else {
        let list: Vec<HeaderValue> = origins.iter().filter_map(|o| o.parse().ok()).collect();
        layer.allow_origin(list)
    })
}

async fn require_token(State(st): State<Arc<AppState>>, req: Request, next: Next) -> Response {
    if let Some(token) = &st.config.auth_token {
        let expected = format!("Bearer {token}");
        let given = req.headers().get(header::AUTHORIZATION).and_then(|v| v.to_str().ok());
        if given != Some(expected.as_str()) {
            return ApiError::new(StatusCode::UNAUTHORIZED, "unauthorized", "missing or wrong bearer token")
                .into_response();
        }
    }
    next.run(req).await
}

/// Restores state and binds the listen address without serving yet.
pub async fn bind(config: ServerConfig) -> Result<(TcpListener, Arc<AppState>), ServeError> {
    let addr = config.listen.clone();
    let state = tokio::task::spawn_blocking(move || AppState::open(config))
        .await
        .expect("startup task panicked")?;
    let listener = TcpListener::bind(&addr)
        .await
        .map_err(|source| ServeError::Bind { addr, source })?;
    Ok((listener, state))
}

/// Serves until ctrl-c.
pub async fn run(listener: TcpListener, state: Arc<AppState>) -> Result<(), ServeError> {
    let addr: Option<SocketAddr> = listener.local_addr().ok();
    tracing::info!(?addr, "serving");
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
        .map_err(ServeError::Io)
}
