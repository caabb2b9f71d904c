//! HTTP front ends: the job and review API, and backend hosting over the
//! wire protocol.

pub mod error;
pub mod hosting;
pub mod jobs;

use std::net::SocketAddr;

use axum::Router;
use tokio::net::TcpListener;

pub use error::{ApiError, ApiResult, ErrorBody};
pub use jobs::{AppState, JobView, ReviewRequest, StatusEvent, Submitted};

/// Binds `addr` and serves `router` until the task is dropped.
pub async fn serve(addr: SocketAddr, router: Router) -> std::io::Result<()> {
    let listener = TcpListener::bind(addr).await?;
    tracing::info!(addr = %listener.local_addr()?, "listening");
    axum::serve(listener, router).await
}
