//! Pieces shared by the three HTTP services.

use std::io::Write;
use std::net::SocketAddr;

use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::post;
use axum::{Json, Router};
use fedcap_core::{Clock, Error, ManualClock, SystemClock};
use tokio::net::TcpListener;

use crate::api::{ClockSet, ErrorBody};

/// Maps core errors onto status codes.
#[derive(Debug)]
pub struct ApiError(pub StatusCode, pub String);

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Invalid { .. } | Error::Key(_) | Error::Hex(_) | Error::Json(_) => {
                StatusCode::BAD_REQUEST
            }
            Error::NotFound(_) => StatusCode::NOT_FOUND,
            Error::Duplicate(_) | Error::SyncGap { .. } => StatusCode::CONFLICT,
            Error::Rejected(_) => StatusCode::FORBIDDEN,
            Error::Unauthorized(_) => StatusCode::UNAUTHORIZED,
        };
        ApiError(status, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(ErrorBody { error: self.1 })).into_response()
    }
}

pub type ApiResult<T> = Result<Json<T>, ApiError>;

/// Wall clock, or a manual clock the harness can move.
#[derive(Debug, Clone)]
pub enum ServiceClock {
    System,
    Manual(ManualClock),
}

impl ServiceClock {
    pub fn from_flag(manual_start: Option<i64>) -> Self {
        match manual_start {
            Some(t) => ServiceClock::Manual(ManualClock::new(t)),
            None => ServiceClock::System,
        }
    }

    /// Adds `POST /admin/clock` when the clock is manual.
    pub fn admin_routes(&self) -> Router {
        match self {
            ServiceClock::Manual(c) => Router::new()
                .route("/admin/clock", post(set_clock))
                .with_state(c.clone()),
            ServiceClock::System => Router::new(),
        }
    }
}

impl Clock for ServiceClock {
    fn now(&self) -> i64 {
        match self {
            ServiceClock::System => SystemClock.now(),
            ServiceClock::Manual(c) => c.now(),
        }
    }
}

async fn set_clock(State(clock): State<ManualClock>, Json(body): Json<ClockSet>) -> Json<ClockSet> {
    clock.set(body.now);
    Json(body)
}

/// Binds `addr` and prints `LISTENING <addr>` so a parent process can find
/// the port when `addr` asked for port 0.
pub async fn bind_and_announce(addr: &str) -> anyhow::Result<TcpListener> {
    let listener = TcpListener::bind(addr).await?;
    let local: SocketAddr = listener.local_addr()?;
    let mut out = std::io::stdout().lock();
    writeln!(out, "LISTENING {local}")?;
    out.flush()?;
    Ok(listener)
}

pub async fn serve(listener: TcpListener, app: Router) -> anyhow::Result<()> {
    axum::serve(
        listener,
        app.into_make_service_with_connect_info::<SocketAddr>(),
    )
    .with_graceful_shutdown(async {
        let _ = tokio::signal::ctrl_c().await;
    })
    .await?;
    Ok(())
}

pub fn init_tracing() {
    let _ = tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "warn".into()),
        )
        .with_writer(std::io::stderr)
        .try_init();
}
