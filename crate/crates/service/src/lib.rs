//! Submission, review and analytics service around the triage pipeline.
//!
//! Uploads are stored content-addressed and classified by a background
//! worker; results are joined with per-class education content on read.
//! See [`api`] for the endpoint list and [`store`] for the database schema.

pub mod analytics;
pub mod api;
pub mod config;
pub mod education;
pub mod error;
pub mod questionnaire;
pub mod result;
pub mod store;
pub mod worker;

use std::net::SocketAddr;
use std::sync::Arc;

pub use api::{router, AppState};
pub use config::ServiceConfig;
pub use education::{Education, EducationEntry};
pub use error::{Result, ServiceError};
pub use questionnaire::Questionnaire;
pub use result::{PipelineTriage, ScanResult, Triage, Triaged};
pub use store::{Status, Store, Submission, Verdict};

/// Opens the store and education content and starts the workers. Must be
/// called from within a Tokio runtime.
pub fn start(config: ServiceConfig, triage: Arc<dyn Triage>) -> Result<AppState> {
    let education = match &config.education_path {
        Some(p) => Education::from_file(p)?,
        None => Education::builtin(),
    };
    let store = Arc::new(Store::open(&config.store_path)?);
    let jobs = worker::spawn_workers(store.clone(), triage, config.workers)?;
    Ok(AppState {
        store,
        education: Arc::new(education),
        config: Arc::new(config),
        jobs,
    })
}

/// Loads the models from `config.model_dir` and serves until Ctrl-C.
pub async fn serve(config: ServiceConfig, addr: SocketAddr) -> Result<()> {
    let model_dir = config.model_dir.clone();
    let triage = tokio::task::spawn_blocking(move || PipelineTriage::load(model_dir))
        .await
        .map_err(|e| ServiceError::Io(std::io::Error::other(e)))??;
    let state = start(config, Arc::new(triage))?;
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!(%addr, "listening");
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}
