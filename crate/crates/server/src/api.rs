use std::sync::Arc;

use axum::extract::rejection::JsonRejection;
use axum::extract::{FromRequest, Multipart, Path, Query, Request, State};
use axum::http::{header, StatusCode};
use axum::response::IntoResponse;
use axum::Json;
use mirror_core::datasource::{sanitize_identifier, DataSourceConfig, DataSourceKind, SchemaMetadata};
use mirror_core::orchestrator::{EditError, EditOutcome, OrchestratorError, QuerySession, RerunError, SessionStatus};
use mirror_core::prompting::{autocomplete, PromptTemplate, Suggestion, TemplateSet};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::ApiError;
use crate::record::{SessionRecord, SessionSummary, TemplateIds};
use crate::state::{AppState, SessionSlot};

type Shared = State<Arc<AppState>>;
type ApiResult<T> = Result<T, ApiError>;

fn body<T>(payload: Result<Json<T>, JsonRejection>) -> ApiResult<T> {
    payload.map(|Json(v)| v).map_err(|e| ApiError::bad_request(e.body_text()))
}

pub async fn health() -> Json<serde_json::Value> {
    Json(json!({ "status": "ok" }))
}

#[derive(Serialize)]
pub struct Created {
    pub id: String,
}

pub async fn list_datasources(State(st): Shared) -> Json<Vec<DataSourceConfig>> {
    Json(st.registry.configs())
}

/// Accepts a JSON `DataSourceConfig` or a multipart CSV upload with a
/// `file` part and optional `id` and `row_limit` parts.
pub async fn create_datasource(State(st): Shared, req: Request) -> ApiResult<(StatusCode, Json<Created>)> {
    let is_multipart = req
        .headers()
        .get(header::CONTENT_TYPE)
        .and_then(|v| v.to_str().ok())
        .is_some_and(|v| v.starts_with("multipart/form-data"));
    let config = if is_multipart {
        let multipart = Multipart::from_request(req, &st)
            .await
            .map_err(|e| ApiError::bad_request(e.body_text()))?;
        save_upload(&st, multipart).await?
    } else {
        body(Json::<DataSourceConfig>::from_request(req, &st).await)?
    };
    let id = config.id.clone();
    let state = Arc::clone(&st);
    tokio::task::spawn_blocking(move || state.register_datasource(config)).await??;
    Ok((StatusCode::CREATED, Json(Created { id })))
}

async fn save_upload(st: &AppState, mut multipart: Multipart) -> ApiResult<DataSourceConfig> {
    let mut id = None;
    let mut row_limit = None;
    let mut file = None;
    while let Some(field) = multipart
        .next_field()
        .await
        .map_err(|e| ApiError::bad_request(e.body_text()))?
    {
        let name = field.name().unwrap_or_default().to_owned();
        match name.as_str() {
            "file" => {
                let filename = field.file_name().unwrap_or("upload.csv").to_owned();
                let bytes = field.bytes().await.map_err(|e| ApiError::bad_request(e.body_text()))?;
                file = Some((filename, bytes));
            }
            "id" => id = Some(field.text().await.map_err(|e| ApiError::bad_request(e.body_text()))?),
            "row_limit" => {
                let text = field.text().await.map_err(|e| ApiError::bad_request(e.body_text()))?;
                row_limit = Some(
                    text.trim()
                        .parse::<usize>()
                        .map_err(|_| ApiError::bad_request(format!("bad row_limit `{text}`")))?,
                );
            }
            _ => {}
        }
    }
    let (filename, bytes) = file.ok_or_else(|| ApiError::bad_request("multipart body lacks a `file` part"))?;
    let stem = std::path::Path::new(&filename)
        .file_stem()
        .map(|s| sanitize_identifier(&s.to_string_lossy()))
        .unwrap_or_else(|| "upload".into());
    let id = id.filter(|s| !s.trim().is_empty()).unwrap_or_else(|| stem.clone());
    if st.registry.contains(&id) {
        return Err(ApiError::from(mirror_core::datasource::DataSourceError::DuplicateId(id)));
    }
    let dir = st.data_dir().join("uploads").join(sanitize_identifier(&id));
    let path = dir.join(format!("{stem}.csv"));
    tokio::fs::create_dir_all(&dir)
        .await
        .map_err(|e| ApiError::internal(format!("cannot store upload: {e}")))?;
    tokio::fs::write(&path, &bytes)
        .await
        .map_err(|e| ApiError::internal(format!("cannot store upload: {e}")))?;
    let mut config = DataSourceConfig::new(id, DataSourceKind::Csv, path.to_string_lossy());
    if let Some(limit) = row_limit {
        config = config.with_row_limit(limit);
    }
    Ok(config)
}

async fn schema_of(st: &Arc<AppState>, id: &str) -> ApiResult<SchemaMetadata> {
    let source = st.registry.get(id)?;
    Ok(tokio::task::spawn_blocking(move || source.introspect()).await??)
}

pub async fn get_schema(State(st): Shared, Path(id): Path<String>) -> ApiResult<Json<SchemaMetadata>> {
    Ok(Json(schema_of(&st, &id).await?))
}

#[derive(Deserialize)]
pub struct QueryRequest {
    pub datasource_id: String,
    pub question: String,
    #[serde(default)]
    pub template_id: Option<String>,
}

/// Starts a pipeline run and returns the pending record; progress is read
/// by polling the session.
pub async fn post_query(
    State(st): Shared,
    payload: Result<Json<QueryRequest>, JsonRejection>,
) -> ApiResult<(StatusCode, Json<SessionRecord>)> {
    let req = body(payload)?;
    let source = st.registry.get(&req.datasource_id)?;
    if req.question.trim().is_empty() {
        return Err(ApiError::new(
            StatusCode::UNPROCESSABLE_ENTITY,
            "empty-question",
            "question must not be empty",
        ));
    }
    let templates = st.templates_for(&req.datasource_id);
    if let Some(tid) = &req.template_id {
        if *tid != templates.generation.id {
            return Err(ApiError::new(
                StatusCode::UNPROCESSABLE_ENTITY,
                "unknown-template",
                format!("generation template `{tid}` is not configured for this data source"),
            ));
        }
    }
    let meta = schema_of(&st, &req.datasource_id).await?;
    let session = QuerySession::new(&req.datasource_id, &req.question);
    let record = st.new_record(session, meta.fingerprint.clone(), &templates);
    let slot = st.insert_session(record.clone())?;
    let guard = Arc::clone(&slot.work).lock_owned().await;

    let state = Arc::clone(&st);
    tokio::task::spawn_blocking(move || {
        let _guard = guard;
        let mut session = slot.snapshot().session.clone();
        let result = state.orchestrator.run_query_into(
            &mut session,
            &source,
            &templates,
            &mut |s| state.publish(&slot, s, None),
        );
        match result {
            Ok(()) | Err(OrchestratorError::Provider(_)) => {}
            Err(e) => {
                session.status = SessionStatus::SqlFailed;
                session.notice = Some(e.to_string());
                state.publish(&slot, &session, None);
            }
        }
    });
    Ok((StatusCode::ACCEPTED, Json(record.redacted())))
}

#[derive(Deserialize)]
pub struct DebugFlag {
    #[serde(default)]
    pub debug: Option<String>,
}

impl DebugFlag {
    fn on(&self) -> bool {
        self.debug
            .as_deref()
            .is_some_and(|v| !matches!(v, "0" | "false" | "no" | "off"))
    }
}

fn view(record: &SessionRecord, debug: bool) -> SessionRecord {
    if debug {
        record.clone()
    } else {
        record.redacted()
    }
}

fn slot_of(st: &AppState, id: &str) -> ApiResult<Arc<SessionSlot>> {
    st.session(id).ok_or_else(|| ApiError::not_found("session", id))
}

pub async fn list_sessions(State(st): Shared) -> Json<Vec<SessionSummary>> {
    Json(st.sessions().iter().map(|r| SessionSummary::from(&**r)).collect())
}

pub async fn get_session(
    State(st): Shared,
    Path(id): Path<String>,
    Query(flag): Query<DebugFlag>,
) -> ApiResult<Json<SessionRecord>> {
    let slot = slot_of(&st, &id)?;
    Ok(Json(view(&slot.snapshot(), flag.on())))
}

#[derive(Deserialize)]
pub struct SqlRequest {
    pub sql: String,
}

/// Replaces the session's SQL with user-written SQL and refreshes the
/// table, summary and chart.
pub async fn post_sql(
    State(st): Shared,
    Path(id): Path<String>,
    Query(flag): Query<DebugFlag>,
    payload: Result<Json<SqlRequest>, JsonRejection>,
) -> ApiResult<Json<SessionRecord>> {
    let slot = slot_of(&st, &id)?;
    let req = body(payload)?;
    let guard = Arc::clone(&slot.work).lock_owned().await;
    let state = Arc::clone(&st);
    let result = tokio::task::spawn_blocking(move || {
        let _guard = guard;
        let mut session = slot.snapshot().session.clone();
        let source = state.registry.get(&session.datasource_id)?;
        let templates = state.templates_for(&session.datasource_id);
        let ids = TemplateIds::of(&templates);
        state
            .orchestrator
            .rerun_sql(&mut session, &source, &templates, &req.sql, &mut |s| {
                state.publish(&slot, s, Some(&ids))
            })
            .map_err(|e| match e {
                RerunError::Rejected(v) => ApiError::rejected(v),
                RerunError::Execution(e) => ApiError::execution(e),
            })?;
        Ok::<_, ApiError>(slot.snapshot())
    })
    .await??;
    Ok(Json(view(&result, flag.on())))
}

#[derive(Deserialize)]
pub struct EditRequest {
    pub instruction: String,
}

/// Asks the model to revise the session's SQL following an instruction.
/// An edit that exhausts its attempts still returns 200; the record's
/// notice explains and the previous SQL stays.
pub async fn post_edit(
    State(st): Shared,
    Path(id): Path<String>,
    Query(flag): Query<DebugFlag>,
    payload: Result<Json<EditRequest>, JsonRejection>,
) -> ApiResult<Json<SessionRecord>> {
    let slot = slot_of(&st, &id)?;
    let req = body(payload)?;
    let guard = Arc::clone(&slot.work).lock_owned().await;
    let state = Arc::clone(&st);
    let result = tokio::task::spawn_blocking(move || {
        let _guard = guard;
        let mut session = slot.snapshot().session.clone();
        let source = state.registry.get(&session.datasource_id)?;
        let templates = state.templates_for(&session.datasource_id);
        let ids = TemplateIds::of(&templates);
        let outcome = state.orchestrator.edit_with_instruction(
            &mut session,
            &source,
            &templates,
            &req.instruction,
            &mut |s| state.publish(&slot, s, Some(&ids)),
        );
        match outcome {
            Ok(EditOutcome::Applied | EditOutcome::Exhausted) => Ok(slot.snapshot()),
            Err(EditError::EmptyInstruction) => Err(ApiError::new(
                StatusCode::UNPROCESSABLE_ENTITY,
                "empty-instruction",
                "instruction must not be empty",
            )),
            Err(EditError::NoSql) => Err(ApiError::new(
                StatusCode::CONFLICT,
                "no-sql",
                "session has no SQL to edit yet",
            )),
            Err(EditError::Provider(e)) => Err(ApiError::provider(e)),
        }
    })
    .await??;
    Ok(Json(view(&result, flag.on())))
}

#[derive(Deserialize)]
pub struct AutocompleteQuery {
    pub datasource: String,
    #[serde(default)]
    pub q: String,
}

pub async fn get_autocomplete(
    State(st): Shared,
    Query(query): Query<AutocompleteQuery>,
) -> ApiResult<Json<Vec<Suggestion>>> {
    let meta = schema_of(&st, &query.datasource).await?;
    Ok(Json(autocomplete(&meta, &query.q)))
}

#[derive(Deserialize)]
pub struct TemplateQuery {
    pub datasource: String,
}

#[derive(Serialize)]
pub struct TemplatesResponse {
    pub datasource_id: String,
    #[serde(flatten)]
    pub templates: TemplateSet,
}

pub async fn get_templates(
    State(st): Shared,
    Query(query): Query<TemplateQuery>,
) -> ApiResult<Json<TemplatesResponse>> {
    st.registry.get(&query.datasource)?;
    Ok(Json(TemplatesResponse {
        templates: st.templates_for(&query.datasource),
        datasource_id: query.datasource,
    }))
}

/// Replaces the template of the body's kind for one data source.
pub async fn put_template(
    State(st): Shared,
    Query(query): Query<TemplateQuery>,
    payload: Result<Json<PromptTemplate>, JsonRejection>,
) -> ApiResult<Json<TemplatesResponse>> {
    st.registry.get(&query.datasource)?;
    let template = body(payload)?;
    let templates = st.set_template(&query.datasource, template)?;
    Ok(Json(TemplatesResponse {
        templates,
        datasource_id: query.datasource,
    }))
}

pub async fn not_found() -> impl IntoResponse {
    ApiError::new(StatusCode::NOT_FOUND, "not-found", "no such endpoint")
}
