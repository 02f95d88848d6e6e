//! Blinded reader study over HTTP: per case, the original volume and two
//! anonymised FGT segmentations in seeded random screen positions, quality
//! scores with the cap and preference rules, and an unblinded CSV export.

pub mod api;
pub mod error;
pub mod render;
pub mod store;
pub mod study;

use std::sync::Arc;

pub use api::{router, AppState};
pub use error::{ReaderError, Result};
pub use study::{assign_sides, Study, StudyConfig};

/// Opens the study and its score store.
pub fn app_state(config: StudyConfig) -> Result<Arc<AppState>> {
    let store = store::Store::open(&config.store)?;
    let study = Study::open(config)?;
    log::info!("reader study with {} cases", study.cases().len());
    Ok(Arc::new(AppState { study, store }))
}

/// Serves until the process is stopped.
pub async fn serve(config: StudyConfig) -> Result<()> {
    let addr = config.listen.clone();
    let state = app_state(config)?;
    let listener = tokio::net::TcpListener::bind(&addr)
        .await
        .map_err(|e| ReaderError::Config(format!("cannot listen on {addr}: {e}")))?;
    log::info!("listening on {addr}");
    axum::serve(listener, router(state))
        .await
        .map_err(|e| ReaderError::Config(format!("server stopped: {e}")))
}
