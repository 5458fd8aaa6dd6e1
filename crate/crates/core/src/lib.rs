pub mod chartspec;
pub mod datasource;
pub mod llm_provider;
pub mod orchestrator;
pub mod prompting;
pub mod sql_guard;
