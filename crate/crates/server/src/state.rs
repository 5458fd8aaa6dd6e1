use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::{Arc, RwLock};

use mirror_core::datasource::{DataSource, DataSourceConfig, DataSourceError, DataSourceRegistry};
use mirror_core::llm_provider::LlmProvider;
use mirror_core::orchestrator::{Orchestrator, QuerySession, SessionStatus};
use mirror_core::prompting::{PromptTemplate, TemplateSet};

use crate::config::{ConfigError, ServerConfig};
use crate::record::{SessionRecord, TemplateIds};
use crate::store::{Store, StoreError};

pub const STORE_FILE: &str = "mirror.db";
pub const INTERRUPTED_NOTICE: &str = "interrupted by a server restart";

#[derive(Debug, thiserror::Error)]
pub enum StartupError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("cannot create data directory {path}: {source}")]
    DataDir {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("data source `{id}`: {source}")]
    DataSource {
        id: String,
        source: DataSourceError,
    },
}

/// One session's latest snapshot plus the lock serializing its updates.
pub struct SessionSlot {
    snapshot: RwLock<Arc<SessionRecord>>,
    pub(crate) work: Arc<tokio::sync::Mutex<()>>,
}

impl SessionSlot {
    fn new(record: SessionRecord) -> Self {
        Self {
            snapshot: RwLock::new(Arc::new(record)),
            work: Arc::new(tokio::sync::Mutex::new(())),
        }
    }

    pub fn snapshot(&self) -> Arc<SessionRecord> {
        Arc::clone(&self.snapshot.read().expect("snapshot lock poisoned"))
    }
}

pub struct AppState {
    pub(crate) config: ServerConfig,
    pub(crate) orchestrator: Orchestrator,
    pub(crate) registry: DataSourceRegistry,
    templates: RwLock<HashMap<String, TemplateSet>>,
    sessions: RwLock<HashMap<String, Arc<SessionSlot>>>,
    pub(crate) store: Store,
}

impl AppState {
    /// Opens the store, restores data sources, templates and sessions, and
    /// registers any configured sources not yet stored.
    pub fn open(config: ServerConfig) -> Result<Arc<Self>, StartupError> {
        let provider = config.provider.build()?;
        Self::open_with_provider(config, provider)
    }

    /// Like [`AppState::open`] with an explicit provider in place of the
    /// configured one.
    pub fn open_with_provider(
        config: ServerConfig,
        provider: Arc<dyn LlmProvider>,
    ) -> Result<Arc<Self>, StartupError> {
        config.validate()?;
        std::fs::create_dir_all(&config.data_dir).map_err(|source| StartupError::DataDir {
            path: config.data_dir.clone(),
            source,
        })?;
        let store = Store::open(&config.data_dir.join(STORE_FILE))?;
        let orchestrator = Orchestrator::new(config.orchestrator.clone(), provider);

        let registry = DataSourceRegistry::new();
        for ds in store.datasources()? {
            let id = ds.id.clone();
            // A stored source whose file has gone away is skipped, not fatal.
            if let Err(e) = registry.register(ds) {
                tracing::warn!(%id, error = %e, "could not restore data source");
            }
        }
        for ds in &config.datasources {
            if registry.contains(&ds.id) {
                continue;
            }
            registry
                .register(ds.clone())
                .map_err(|source| StartupError::DataSource {
                    id: ds.id.clone(),
                    source,
                })?;
            store.put_datasource(ds)?;
        }

        let mut templates: HashMap<String, TemplateSet> = HashMap::new();
        for (id, template) in store.templates()? {
            if let Err(e) = templates.entry(id.clone()).or_default().set(template) {
                tracing::warn!(%id, error = %e, "ignoring stored template");
            }
        }

        let mut sessions = HashMap::new();
        for mut record in store.sessions()? {
            if !record.session.status.is_settled() {
                settle_interrupted(&mut record.session);
                store.put_session(&record)?;
            }
            sessions.insert(record.session.id.clone(), Arc::new(SessionSlot::new(record)));
        }

        Ok(Arc::new(Self {
            config,
            orchestrator,
            registry,
            templates: RwLock::new(templates),
            sessions: RwLock::new(sessions),
            store,
        }))
    }

    pub fn store(&self) -> &Store {
        &self.store
    }

    pub fn data_dir(&self) -> &std::path::Path {
        &self.config.data_dir
    }

    pub fn register_datasource(&self, config: DataSourceConfig) -> Result<Arc<DataSource>, crate::error::ApiError> {
        let source = self.registry.register(config.clone())?;
        self.store.put_datasource(&config)?;
        Ok(source)
    }

    pub fn templates_for(&self, datasource_id: &str) -> TemplateSet {
        self.templates
            .read()
            .expect("template lock poisoned")
            .get(datasource_id)
            .cloned()
            .unwrap_or_default()
    }

    pub fn set_template(&self, datasource_id: &str, template: PromptTemplate) -> Result<TemplateSet, crate::error::ApiError> {
        let mut all = self.templates.write().expect("template lock poisoned");
        let mut set = all.get(datasource_id).cloned().unwrap_or_default();
        set.set(template.clone())?;
        self.store.put_template(datasource_id, &template)?;
        all.insert(datasource_id.to_owned(), set.clone());
        Ok(set)
    }

    pub fn session(&self, id: &str) -> Option<Arc<SessionSlot>> {
        self.sessions.read().expect("session lock poisoned").get(id).cloned()
    }

    pub fn sessions(&self) -> Vec<Arc<SessionRecord>> {
        let mut out: Vec<Arc<SessionRecord>> = self
            .sessions
            .read()
            .expect("session lock poisoned")
            .values()
            .map(|s| s.snapshot())
            .collect();
        out.sort_by(|a, b| {
            (a.session.created_at, &a.session.id).cmp(&(b.session.created_at, &b.session.id))
        });
        out
    }

    pub fn insert_session(&self, record: SessionRecord) -> Result<Arc<SessionSlot>, StoreError> {
        self.store.put_session(&record)?;
        let slot = Arc::new(SessionSlot::new(record.clone()));
        self.sessions
            .write()
            .expect("session lock poisoned")
            .insert(record.session.id.clone(), Arc::clone(&slot));
        Ok(slot)
    }

    /// Persists a new snapshot, then makes it visible to readers.
    pub fn publish(&self, slot: &SessionSlot, session: &QuerySession, template_ids: Option<&TemplateIds>) {
        let current = slot.snapshot();
        let record = SessionRecord {
            session: session.clone(),
            schema_fingerprint: current.schema_fingerprint.clone(),
            template_ids: template_ids.cloned().unwrap_or_else(|| current.template_ids.clone()),
        };
        if let Err(e) = self.store.put_session(&record) {
            tracing::error!(id = %session.id, error = %e, "failed to persist session");
        }
        *slot.snapshot.write().expect("snapshot lock poisoned") = Arc::new(record);
    }

    pub fn new_record(&self, session: QuerySession, schema_fingerprint: String, templates: &TemplateSet) -> SessionRecord {
        SessionRecord {
            session,
            schema_fingerprint,
            template_ids: TemplateIds::of(templates),
        }
    }
}

fn settle_interrupted(session: &mut QuerySession) {
    session.status = if session.table.is_some() {
        SessionStatus::Complete
    } else {
        SessionStatus::SqlFailed
    };
    session.notice = Some(INTERRUPTED_NOTICE.into());
}
