//! HTTP service for playing the strategy model turn by turn.
//!
//! | Method | Path                        | Body                                  |
//! |--------|-----------------------------|---------------------------------------|
//! | GET    | `/actions`                  |                                       |
//! | POST   | `/sessions`                 | optional [`CreateSession`]            |
//! | POST   | `/sessions/{id}/actions`    | [`SubmitAction`]                      |
//! | GET    | `/sessions/{id}`            |                                       |
//! | GET    | `/sessions/{id}/transcript` | returns a transcripts file (JSON lines) |
//!
//! Errors are JSON `{"error": {"category", "message"}}` with status 400 (bad
//! input), 404 (unknown session), 409 (session ended or stale step) or 503
//! (models not loaded).

mod http;
mod session;

use std::net::SocketAddr;
use std::sync::Arc;

pub use http::{router, ApiError};
pub use session::{
    ActionInfo, CreateSession, Created, Models, SessionError, SessionStore, Snapshot, StateView, StepResult,
    SubmitAction,
};

/// Binds `addr` and serves until the process is stopped.
pub async fn serve(addr: SocketAddr, store: SessionStore) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(Arc::new(store))).await
}
