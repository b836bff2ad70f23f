//! HTTP front of a service provider. Every path that is not a control
//! endpoint is a resource request and goes through the enforcement core.

use std::net::SocketAddr;
use std::sync::Arc;
use std::time::Duration;

use axum::body::Body;
use axum::extract::{ConnectInfo, State};
use axum::http::{header, HeaderMap, Method, StatusCode, Uri};
use axum::response::Response;
use axum::routing::{get, post};
use axum::{Json, Router};
use fedcap_core::authz::StageReport;
use fedcap_core::certificate::RevocationCertificate;
use fedcap_core::coordinator::{CoordinatorIntroduction, ProviderEntry};
use fedcap_core::provider::{ApplyOutcome, InboundRequest, Provider};
use fedcap_core::{Clock, VirtualIdentity};
use serde::{Deserialize, Serialize};

use crate::api::*;
use crate::config::ProviderConfig;
use crate::http::{bind_and_announce, serve, ApiResult, ServiceClock};

pub struct ProviderService {
    provider: Provider,
    clock: ServiceClock,
    /// Serve resources without any authorization (latency baseline).
    bypass: bool,
    delay: Duration,
}

type Shared = Arc<ProviderService>;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProviderStatus {
    pub vid: VirtualIdentity,
    pub bypass: bool,
    pub revocations: usize,
    pub denied_issuers: usize,
    pub latest_coordinator_certificate: Option<RevocationCertificate>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Introduced {
    pub vid: VirtualIdentity,
}

impl ProviderService {
    pub fn new(provider: Provider, clock: ServiceClock, bypass: bool, delay: Duration) -> Self {
        ProviderService {
            provider,
            clock,
            bypass,
            delay,
        }
    }
}

pub fn router(service: Shared) -> Router {
    let admin = service.clock.admin_routes();
    Router::new()
        .route("/revocation", post(revocation))
        .route("/trust/coordinator", post(trust_coordinator))
        .route("/metrics/stages", get(stages))
        .route("/metrics/reset", post(reset))
        .route("/status", get(status))
        .fallback(resource)
        .with_state(service)
        .merge(admin)
}

async fn resource(
    State(s): State<Shared>,
    ConnectInfo(peer): ConnectInfo<SocketAddr>,
    method: Method,
    uri: Uri,
    headers: HeaderMap,
) -> Response {
    let path = uri.path();
    let (status, body, timing, content_type) = if s.bypass {
        match s.provider.settings().resources.get(path) {
            Some(r) if !r.fail => (
                200,
                r.payload.clone().into_bytes(),
                String::new(),
                "text/plain",
            ),
            Some(_) => (
                500,
                br#"{"error":"handler failed"}"#.to_vec(),
                String::new(),
                "application/json",
            ),
            None => (
                404,
                br#"{"error":"no such resource"}"#.to_vec(),
                String::new(),
                "application/json",
            ),
        }
    } else {
        let token = headers.get(TOKEN_HEADER).map(|v| v.as_bytes());
        let client = peer.ip().to_string();
        let r = s.provider.intercept(
            InboundRequest {
                method: method.as_str(),
                path,
                token,
                client_address: &client,
            },
            s.clock.now(),
        );
        let ct = if r.status == 200 {
            "text/plain"
        } else {
            "application/json"
        };
        (r.status, r.body, r.timings.to_header(), ct)
    };
    if !s.delay.is_zero() {
        tokio::time::sleep(s.delay).await;
    }
    let mut resp = Response::builder()
        .status(StatusCode::from_u16(status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR))
        .header(header::CONTENT_TYPE, content_type);
    if !timing.is_empty() {
        resp = resp.header("server-timing", timing);
    }
    resp.body(Body::from(body))
        .expect("static headers are valid")
}

async fn revocation(
    State(s): State<Shared>,
    Json(cert): Json<RevocationCertificate>,
) -> Json<ApplyOutcome> {
    let outcome = s.provider.apply_revocation(&cert, s.clock.now());
    tracing::info!(revoked = %cert.revoked_vid, ?outcome, "revocation certificate");
    Json(outcome)
}

async fn trust_coordinator(
    State(s): State<Shared>,
    Json(intro): Json<CoordinatorIntroduction>,
) -> ApiResult<Introduced> {
    let vid = s.provider.introduce_coordinator(&intro, s.clock.now())?;
    Ok(Json(Introduced { vid }))
}

async fn stages(State(s): State<Shared>) -> Json<StageReport> {
    Json(s.provider.stage_timing_report())
}

async fn reset(State(s): State<Shared>) -> StatusCode {
    s.provider.reset_timings();
    StatusCode::NO_CONTENT
}

async fn status(State(s): State<Shared>) -> Json<ProviderStatus> {
    s.provider.prune(s.clock.now());
    Json(ProviderStatus {
        vid: s.provider.vid(),
        bypass: s.bypass,
        revocations: s.provider.revocation_count(),
        denied_issuers: s.provider.denied_issuers().len(),
        latest_coordinator_certificate: s.provider.latest_coordinator_certificate(),
    })
}

async fn register_with(coordinator: &str, entry: &ProviderEntry) -> anyhow::Result<()> {
    let http = reqwest::Client::builder()
        .timeout(Duration::from_secs(5))
        .build()?;
    let url = format!("{}/provider/register", coordinator.trim_end_matches('/'));
    let mut last = None;
    for _ in 0..20 {
        match http.post(&url).json(entry).send().await {
            Ok(r) if r.status().is_success() => return Ok(()),
            Ok(r) => last = Some(anyhow::anyhow!("{}", r.status())),
            Err(e) => last = Some(e.into()),
        }
        tokio::time::sleep(Duration::from_millis(250)).await;
    }
    Err(last.unwrap_or_else(|| anyhow::anyhow!("registration failed")))
}

pub async fn run(config: ProviderConfig, clock: ServiceClock, bypass: bool) -> anyhow::Result<()> {
    let provider = Provider::new(config.provider.clone())?;
    let listener = bind_and_announce(&config.listen).await?;
    let address = match &config.advertise {
        Some(a) => a.clone(),
        None => listener.local_addr()?.to_string(),
    };
    let service = Arc::new(ProviderService::new(
        provider,
        clock,
        bypass,
        Duration::from_millis(config.inject_delay_ms),
    ));
    if let Some(url) = config.coordinator_url.clone() {
        let entry = ProviderEntry {
            vid: config.provider.vid,
            address,
        };
        tokio::spawn(async move {
            if let Err(e) = register_with(&url, &entry).await {
                tracing::error!(error = %e, "could not register with coordinator");
            }
        });
    }
    serve(listener, router(service)).await
}
