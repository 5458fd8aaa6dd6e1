//! The `mirror` command: one-shot queries, schema and SQL checks, and the
//! HTTP server.
//!
//! Exit codes: 0 success, 1 domain failure, 2 usage or config error,
//! 3 generation exhausted.

use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use mirror_core::chartspec;
use mirror_core::datasource::{Cell, DataSource, DataSourceConfig, DataSourceError, DataSourceKind, ResultTable};
use mirror_core::llm_provider::{HttpProviderConfig, LlmProvider};
use mirror_core::orchestrator::{Orchestrator, OrchestratorConfig, OrchestratorError, QuerySession, SessionStatus};
use mirror_core::prompting::{serialize_schema, PromptTemplate, TemplateSet};
use mirror_core::sql_guard;
use mirror_server::state::STORE_FILE;
use mirror_server::store::Store;
use mirror_server::{ProviderSettings, ServeError, ServerConfig, StartupError, API_KEY_ENV};

pub const DEFAULT_CHART_OUT: &str = "chart.vl.json";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Domain(String),
    #[error("{0}")]
    Exhausted(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Domain(_) => 1,
            CliError::Usage(_) => 2,
            CliError::Exhausted(_) => 3,
        }
    }
}

fn io_err(e: std::io::Error) -> CliError {
    CliError::Domain(format!("output error: {e}"))
}

#[derive(Debug, Parser)]
#[command(name = "mirror", version, about = "Ask questions of a database in plain language")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Start the HTTP API server.
    Serve {
        #[arg(long)]
        config: PathBuf,
    },
    /// Run the whole pipeline once and print SQL, table and summary.
    Query(QueryArgs),
    /// Print the schema exactly as it is placed into generation prompts.
    Introspect {
        /// Data source id (from --config) or a database/CSV file path.
        #[arg(long)]
        ds: String,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Check SQL against the read-only allowlist; exit 0 if accepted.
    ValidateSql {
        /// Read the SQL from standard input.
        #[arg(long, conflicts_with = "file")]
        stdin: bool,
        file: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
pub struct QueryArgs {
    /// Data source id (from --config) or a database/CSV file path.
    #[arg(long)]
    pub ds: String,
    #[arg(long)]
    pub question: String,
    /// `scripted:<transcript.json>` or `http:<completion-url>`.
    #[arg(long)]
    pub provider: Option<String>,
    /// Server config supplying data sources, provider and limits.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value = DEFAULT_CHART_OUT)]
    pub chart_out: PathBuf,
    /// Template file overriding one of the defaults; repeatable.
    #[arg(long = "template")]
    pub templates: Vec<PathBuf>,
    #[arg(long)]
    pub max_retries: Option<u32>,
    /// Print the full session as JSON instead of text.
    #[arg(long)]
    pub json: bool,
}

pub fn run(cli: Cli, out: &mut dyn Write, err: &mut dyn Write) -> Result<(), CliError> {
    match cli.command {
        Command::Serve { config } => serve(&config, out),
        Command::Query(args) => query(&args, out, err),
        Command::Introspect { ds, config } => {
            let config = config.as_deref().map(load_config).transpose()?;
            let source = resolve_datasource(&ds, config.as_ref())?;
            let meta = source
                .introspect()
                .map_err(|e| CliError::Domain(format!("cannot read schema: {e}")))?;
            let ddl = serialize_schema(&meta);
            if !ddl.is_empty() {
                writeln!(out, "{ddl}").map_err(io_err)?;
            }
            Ok(())
        }
        Command::ValidateSql { stdin, file } => {
            let sql = match (stdin, file) {
                (_, Some(path)) => std::fs::read_to_string(&path)
                    .map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))?,
                (true, None) => {
                    let mut s = String::new();
                    std::io::stdin()
                        .read_to_string(&mut s)
                        .map_err(|e| CliError::Usage(format!("cannot read stdin: {e}")))?;
                    s
                }
                (false, None) => return Err(CliError::Usage("pass a file or --stdin".into())),
            };
            validate_sql(&sql, out)
        }
    }
}

/// Prints the verdict reason (and detail on rejection).
pub fn validate_sql(sql: &str, out: &mut dyn Write) -> Result<(), CliError> {
    let verdict = sql_guard::validate(sql);
    writeln!(out, "{}", verdict.reason).map_err(io_err)?;
    if verdict.accepted {
        Ok(())
    } else {
        if let Some(detail) = &verdict.detail {
            writeln!(out, "{detail}").map_err(io_err)?;
        }
        Err(CliError::Domain(format!("rejected: {}", verdict.reason)))
    }
}

fn load_config(path: &Path) -> Result<ServerConfig, CliError> {
    ServerConfig::load(path).map_err(|e| CliError::Usage(e.to_string()))
}

fn serve(config_path: &Path, out: &mut dyn Write) -> Result<(), CliError> {
    let config = load_config(config_path)?;
    let runtime = tokio::runtime::Runtime::new()
        .map_err(|e| CliError::Domain(format!("cannot start runtime: {e}")))?;
    runtime.block_on(async {
        let (listener, state) = mirror_server::bind(config).await.map_err(|e| match e {
            ServeError::Startup(StartupError::Config(c)) => CliError::Usage(c.to_string()),
            other => CliError::Domain(other.to_string()),
        })?;
        if let Ok(addr) = listener.local_addr() {
            writeln!(out, "listening on http://{addr}").map_err(io_err)?;
            out.flush().map_err(io_err)?;
        }
        mirror_server::run(listener, state)
            .await
            .map_err(|e| CliError::Domain(e.to_string()))
    })
}

/// A file path opens directly (`.csv` is ingested); anything else is
/// looked up by id among the config's and the store's data sources.
pub fn resolve_datasource(spec: &str, config: Option<&ServerConfig>) -> Result<DataSource, CliError> {
    let path = Path::new(spec);
    let ds_config = if path.is_file() {
        let is_csv = path
            .extension()
            .is_some_and(|e| e.eq_ignore_ascii_case("csv"));
        let kind = if is_csv { DataSourceKind::Csv } else { DataSourceKind::EmbeddedFile };
        let id = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "file".into());
        DataSourceConfig::new(id, kind, spec)
    } else {
        let Some(config) = config else {
            return Err(CliError::Usage(format!("`{spec}` is not a file; pass --config to look up an id")));
        };
        let mut known = config.datasources.clone();
        let store_path = config.data_dir.join(STORE_FILE);
        if store_path.is_file() {
            let store = Store::open(&store_path).map_err(|e| CliError::Domain(e.to_string()))?;
            known.extend(store.datasources().map_err(|e| CliError::Domain(e.to_string()))?);
        }
        known
            .into_iter()
            .find(|c| c.id == spec)
            .ok_or_else(|| CliError::Usage(format!("no data source `{spec}`")))?
    };
    DataSource::open(ds_config).map_err(|e| match e {
        DataSourceError::Unreachable(_) | DataSourceError::InvalidConfig(_) => CliError::Usage(e.to_string()),
        other => CliError::Domain(other.to_string()),
    })
}

fn provider_from(args: &QueryArgs, config: Option<&ServerConfig>) -> Result<Arc<dyn LlmProvider>, CliError> {
    let settings = match (&args.provider, config) {
        (Some(spec), _) => {
            let (kind, rest) = spec
                .split_once(':')
                .ok_or_else(|| CliError::Usage(format!("bad --provider `{spec}`")))?;
            match kind {
                "scripted" => ProviderSettings::Scripted { transcript: rest.into() },
                "http" => {
                    let mut http = HttpProviderConfig::new(rest);
                    http.api_key = std::env::var(API_KEY_ENV).ok().filter(|k| !k.is_empty());
                    ProviderSettings::Http(http)
                }
                other => return Err(CliError::Usage(format!("unknown provider kind `{other}`"))),
            }
        }
        (None, Some(config)) => config.provider.clone(),
        (None, None) => return Err(CliError::Usage("no provider: pass --provider or --config".into())),
    };
    settings.build().map_err(|e| CliError::Usage(e.to_string()))
}

fn query(args: &QueryArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<(), CliError> {
    if args.question.trim().is_empty() {
        return Err(CliError::Usage("question must not be empty".into()));
    }
    let config = args.config.as_deref().map(load_config).transpose()?;
    let provider = provider_from(args, config.as_ref())?;
    let source = resolve_datasource(&args.ds, config.as_ref())?;

    let mut templates = TemplateSet::default();
    for path in &args.templates {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))?;
        PromptTemplate::parse_file(&text)
            .and_then(|t| templates.set(t))
            .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    }

    let mut orch_config = config.map(|c| c.orchestrator).unwrap_or_else(OrchestratorConfig::default);
    if let Some(n) = args.max_retries {
        orch_config.max_retries = n;
    }
    orch_config.validate().map_err(CliError::Usage)?;

    let orchestrator = Orchestrator::new(orch_config, provider);
    let mut session = QuerySession::new(source.id(), &args.question);
    let outcome = orchestrator.run_query_into(&mut session, &source, &templates, &mut |_| {});
    match outcome {
        Ok(()) | Err(OrchestratorError::Provider(_)) => {}
        Err(OrchestratorError::EmptyQuestion) => {
            return Err(CliError::Usage("question must not be empty".into()))
        }
        Err(e) => return Err(CliError::Domain(e.to_string())),
    }

    if let Some(chart) = &session.chart {
        std::fs::write(&args.chart_out, chartspec::emit(chart)).map_err(|e| {
            CliError::Domain(format!("cannot write {}: {e}", args.chart_out.display()))
        })?;
    }

    if args.json {
        let json = serde_json::to_string_pretty(&session).expect("session serializes");
        writeln!(out, "{json}").map_err(io_err)?;
    } else if session.status != SessionStatus::SqlFailed {
        print_session(&session, &args.chart_out, out).map_err(io_err)?;
    }

    if session.status == SessionStatus::SqlFailed {
        dump_attempts(&session, err).map_err(io_err)?;
        return Err(CliError::Exhausted(
            session.notice.unwrap_or_else(|| "no executable SQL".into()),
        ));
    }
    Ok(())
}

fn print_session(session: &QuerySession, chart_out: &Path, out: &mut dyn Write) -> std::io::Result<()> {
    writeln!(out, "SQL:")?;
    writeln!(out, "{}", session.final_sql.as_deref().unwrap_or_default())?;
    writeln!(out)?;
    if let Some(table) = &session.table {
        write!(out, "{}", format_table(table))?;
        writeln!(out)?;
    }
    writeln!(out, "Summary:")?;
    match (&session.summary, &session.summary_error) {
        (Some(s), _) => writeln!(out, "{s}")?,
        (None, Some(e)) => writeln!(out, "(no summary: {e})")?,
        (None, None) => writeln!(out, "(no summary)")?,
    }
    writeln!(out)?;
    match &session.chart {
        Some(_) => writeln!(out, "Chart written to {}", chart_out.display())?,
        None if session.chart_attempts.is_empty() => writeln!(out, "No chart for this result.")?,
        None => writeln!(
            out,
            "No chart: {} attempts produced no valid chart.",
            session.chart_attempts.len()
        )?,
    }
    Ok(())
}

fn dump_attempts(session: &QuerySession, err: &mut dyn Write) -> std::io::Result<()> {
    writeln!(err, "generation failed after {} attempts:", session.attempts.len())?;
    for a in &session.attempts {
        let why = if let Some(e) = &a.provider_error {
            format!("provider error ({}): {}", e.kind.as_str(), e.message)
        } else if let Some(e) = &a.extraction_error {
            format!("no SQL found: {e}")
        } else if let Some(v) = a.verdict.as_ref().filter(|v| !v.accepted) {
            format!("rejected ({})", v.reason)
        } else if let Some(e) = &a.execution_error {
            format!("execution error ({}): {}", e.kind.as_str(), e.message)
        } else {
            "ok".into()
        };
        writeln!(
            err,
            "  attempt {} (temperature {}): {why}",
            a.index, a.params_used.temperature
        )?;
        if !a.extracted_sql.is_empty() {
            writeln!(err, "    {}", a.extracted_sql.replace('\n', "\n    "))?;
        }
    }
    Ok(())
}

fn cell_text(cell: &Cell) -> String {
    match cell {
        Cell::Null => "NULL".into(),
        Cell::Integer(v) => v.to_string(),
        Cell::Real(v) => v.to_string(),
        Cell::Text(s) => s.replace('\r', "\\r").replace('\n', "\\n"),
        Cell::Blob(b) => format!("x'{}'", b.hex),
    }
}

/// Plain-text table with padded columns; numbers are right-aligned.
pub fn format_table(table: &ResultTable) -> String {
    let cells: Vec<Vec<String>> = table
        .rows
        .iter()
        .map(|r| r.iter().map(cell_text).collect())
        .collect();
    let widths: Vec<usize> = table
        .columns
        .iter()
        .enumerate()
        .map(|(i, c)| {
            cells
                .iter()
                .map(|r| r[i].chars().count())
                .chain([c.name.chars().count()])
                .max()
                .unwrap_or(0)
        })
        .collect();
    let numeric: Vec<bool> = (0..table.columns.len())
        .map(|i| {
            table
                .rows
                .iter()
                .all(|r| matches!(r[i], Cell::Integer(_) | Cell::Real(_) | Cell::Null))
        })
        .collect();

    let line = |values: Vec<String>| -> String {
        let padded: Vec<String> = values
            .into_iter()
            .enumerate()
            .map(|(i, v)| {
                let w = widths[i];
                if numeric[i] {
                    format!("{v:>w$}")
                } else {
                    format!("{v:<w$}")
                }
            })
            .collect();
        padded.join("  ").trim_end().to_owned()
    };

    let mut out = String::new();
    out.push_str(&line(table.columns.iter().map(|c| c.name.clone()).collect()));
    out.push('\n');
    out.push_str(&widths.iter().map(|w| "-".repeat(*w)).collect::<Vec<_>>().join("  "));
    out.push('\n');
    for row in cells {
        out.push_str(&line(row));
        out.push('\n');
    }
    let n = table.rows.len();
    let noun = if n == 1 { "row" } else { "rows" };
    if table.truncated {
        out.push_str(&format!("({n} {noun}, truncated at the row limit)\n"));
    } else {
        out.push_str(&format!("({n} {noun})\n"));
    }
    out
}
