//! HTTP front of a domain coordinator plus its sync and broadcast loops.

use std::collections::HashSet;
use std::sync::{Arc, Mutex, RwLock};
use std::time::Duration;

use axum::extract::State;
use axum::routing::{get, post};
use axum::{Json, Router};
use fedcap_core::certificate::{DelegationCertificate, RevocationCertificate};
use fedcap_core::coordinator::{Coordinator, Delivery, DeliveryReport, ProviderEntry};
use fedcap_core::delegation::authenticate;
use fedcap_core::pool::SyncDelta;
use fedcap_core::{CapabilityToken, Clock, EntityKind, Error, VirtualIdentity};
use serde::{Deserialize, Serialize};

use crate::api::*;
use crate::config::{load_rules, CoordinatorConfig};
use crate::http::{bind_and_announce, serve, ApiError, ApiResult, ServiceClock};
use crate::identity::{load_key, Entity};

pub struct CoordinatorService {
    coord: RwLock<Coordinator>,
    clock: ServiceClock,
    pdc_url: String,
    http: reqwest::Client,
    introduced: Mutex<HashSet<VirtualIdentity>>,
    /// Serializes sync rounds so two rounds never apply the same delta.
    sync_lock: tokio::sync::Mutex<()>,
}

type Shared = Arc<CoordinatorService>;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SyncReport {
    pub version: u64,
    pub new_certificates: usize,
    pub error: Option<String>,
    pub delivery: DeliveryReport,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CoordinatorStatus {
    pub vid: VirtualIdentity,
    pub active: bool,
    pub revoked: bool,
    pub version: u64,
    pub providers: Vec<ProviderEntry>,
    pub dc: Option<DelegationCertificate>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProviderRegistered {
    pub vid: VirtualIdentity,
    pub introduced: bool,
    pub delivery: DeliveryReport,
}

impl CoordinatorService {
    pub fn new(
        coord: Coordinator,
        clock: ServiceClock,
        pdc_url: String,
        delivery_timeout: Duration,
    ) -> anyhow::Result<Self> {
        let http = reqwest::Client::builder()
            .timeout(delivery_timeout)
            .build()?;
        Ok(CoordinatorService {
            coord: RwLock::new(coord),
            clock,
            pdc_url: pdc_url.trim_end_matches('/').to_string(),
            http,
            introduced: Mutex::new(HashSet::new()),
            sync_lock: tokio::sync::Mutex::new(()),
        })
    }

    fn read(&self) -> std::sync::RwLockReadGuard<'_, Coordinator> {
        self.coord.read().unwrap_or_else(|p| p.into_inner())
    }

    fn write(&self) -> std::sync::RwLockWriteGuard<'_, Coordinator> {
        self.coord.write().unwrap_or_else(|p| p.into_inner())
    }

    fn introduced(&self) -> std::sync::MutexGuard<'_, HashSet<VirtualIdentity>> {
        self.introduced.lock().unwrap_or_else(|p| p.into_inner())
    }

    async fn post_json<T: Serialize + ?Sized>(
        &self,
        url: &str,
        body: &T,
    ) -> Result<reqwest::Response, String> {
        let resp = self
            .http
            .post(url)
            .json(body)
            .send()
            .await
            .map_err(|e| e.to_string())?;
        if resp.status().is_success() {
            Ok(resp)
        } else {
            let status = resp.status();
            let text = resp.text().await.unwrap_or_default();
            Err(format!("{status}: {text}"))
        }
    }

    /// Completes the delegation handshake with the authority.
    pub async fn accept(
        &self,
        offer: DelegationCertificate,
    ) -> Result<DelegationCertificate, ApiError> {
        let req = {
            let c = self.read();
            DelegationOfferRequest {
                offer,
                delegatee: c.identity_proof(self.clock.now())?,
                domain_id: c.domain_id().to_string(),
            }
        };
        let resp = self
            .post_json(&format!("{}/delegation/offer", self.pdc_url), &req)
            .await
            .map_err(|e| {
                tracing::error!(error = %e, "delegation offer rejected; staying inactive");
                ApiError::from(Error::Rejected(format!(
                    "authority rejected delegation: {e}"
                )))
            })?;
        let dc: DelegationCertificate = resp
            .json()
            .await
            .map_err(|e| Error::Rejected(format!("authority reply: {e}")))?;
        self.write().install_dc(dc.clone()).inspect_err(|e| {
            tracing::error!(error = %e, "certificate from authority not installed");
        })?;
        self.introduced().clear();
        self.sync_round().await;
        Ok(dc)
    }

    async fn pull(&self) -> Result<usize, String> {
        let (dc, since) = {
            let c = self.read();
            match c.dc() {
                Some(dc) => (dc.clone(), c.mirror().version()),
                None => return Ok(0),
            }
        };
        let resp = self
            .http
            .get(format!("{}/sync?since={since}", self.pdc_url))
            .header(
                DC_HEADER,
                serde_json::to_string(&dc).map_err(|e| e.to_string())?,
            )
            .send()
            .await
            .map_err(|e| e.to_string())?;
        if !resp.status().is_success() {
            let status = resp.status();
            return Err(format!(
                "{status}: {}",
                resp.text().await.unwrap_or_default()
            ));
        }
        let delta: SyncDelta = resp.json().await.map_err(|e| e.to_string())?;
        let certs = self.write().apply_sync(&delta).map_err(|e| e.to_string())?;
        let mut fresh = 0;
        let mut c = self.write();
        for cert in &certs {
            match c.enqueue_broadcast(cert) {
                Ok(true) => fresh += 1,
                Ok(false) => {}
                Err(e) => tracing::warn!(error = %e, "synced certificate not broadcast"),
            }
        }
        Ok(fresh)
    }

    /// One sync period: pull, introduce to providers, retry deliveries.
    pub async fn sync_round(&self) -> SyncReport {
        let _guard = self.sync_lock.lock().await;
        let pulled = self.pull().await;
        if let Err(e) = &pulled {
            tracing::warn!(error = %e, "sync failed");
        }
        self.introduce_all().await;
        let delivery = self.deliver_pending().await;
        SyncReport {
            version: self.read().mirror().version(),
            new_certificates: *pulled.as_ref().unwrap_or(&0),
            error: pulled.err(),
            delivery,
        }
    }

    async fn introduce_all(&self) {
        let (intro, providers) = {
            let c = self.read();
            if !c.is_active(self.clock.now()) {
                return;
            }
            let Ok(intro) = c.introduction() else { return };
            (intro, c.providers())
        };
        for p in providers {
            if self.introduced().contains(&p.vid) {
                continue;
            }
            match self
                .post_json(&format!("http://{}/trust/coordinator", p.address), &intro)
                .await
            {
                Ok(_) => {
                    self.introduced().insert(p.vid);
                }
                Err(e) => tracing::warn!(provider = %p.vid, error = %e, "introduction failed"),
            }
        }
    }

    pub async fn deliver_pending(&self) -> DeliveryReport {
        let pending = self.read().pending();
        let mut report = DeliveryReport::default();
        for (p, certs) in pending {
            let mut done = Vec::new();
            let mut error = None;
            for cert in &certs {
                match self
                    .post_json(&format!("http://{}/revocation", p.address), cert)
                    .await
                {
                    Ok(_) => done.push(cert.clone()),
                    Err(e) => {
                        tracing::warn!(provider = %p.vid, error = %e, "revocation delivery failed");
                        error = Some(e);
                        break;
                    }
                }
            }
            self.write().delivered(&p.vid, &done);
            report.deliveries.push(Delivery {
                provider: p.vid,
                address: p.address,
                ok: error.is_none(),
                error,
            });
        }
        report
    }
}

pub fn router(service: Shared) -> Router {
    let admin = service.clock.admin_routes();
    Router::new()
        .route("/status", get(status))
        .route("/cap/request", post(cap_request))
        .route("/provider/register", post(provider_register))
        .route("/revocation/receive-and-forward", post(receive_and_forward))
        .route("/delegation/accept", post(delegation_accept))
        .route("/admin/sync", post(admin_sync))
        .with_state(service)
        .merge(admin)
}

async fn status(State(s): State<Shared>) -> Json<CoordinatorStatus> {
    let c = s.read();
    Json(CoordinatorStatus {
        vid: c.vid(),
        active: c.is_active(s.clock.now()),
        revoked: c.is_revoked(),
        version: c.mirror().version(),
        providers: c.providers(),
        dc: c.dc().cloned(),
    })
}

async fn cap_request(
    State(s): State<Shared>,
    Json(req): Json<CapRequest>,
) -> ApiResult<CapabilityToken> {
    let now = s.clock.now();
    let c = s.read();
    let subject = authenticate(&req.proof, c.mirror(), now)
        .map_err(|e| Error::Unauthorized(format!("subject authentication: {e}")))?;
    Ok(Json(c.issue_local_cap(
        &subject,
        &req.object,
        &req.requested,
        now,
    )?))
}

async fn provider_register(
    State(s): State<Shared>,
    Json(entry): Json<ProviderEntry>,
) -> ApiResult<ProviderRegistered> {
    let vid = entry.vid;
    s.introduced().remove(&vid);
    s.write().register_provider(entry);
    s.introduce_all().await;
    let introduced = s.introduced().contains(&vid);
    let delivery = s.deliver_pending().await;
    Ok(Json(ProviderRegistered {
        vid,
        introduced,
        delivery,
    }))
}

async fn receive_and_forward(
    State(s): State<Shared>,
    Json(cert): Json<RevocationCertificate>,
) -> ApiResult<DeliveryReport> {
    s.write().enqueue_broadcast(&cert)?;
    Ok(Json(s.deliver_pending().await))
}

async fn delegation_accept(
    State(s): State<Shared>,
    Json(req): Json<DelegationAccept>,
) -> ApiResult<DelegationCertificate> {
    Ok(Json(s.accept(req.offer).await?))
}

async fn admin_sync(State(s): State<Shared>) -> Json<SyncReport> {
    Json(s.sync_round().await)
}

pub fn coordinator_entity(config: &CoordinatorConfig) -> anyhow::Result<Entity> {
    coordinator_entity_with_key(config, load_key(&config.key_file)?)
}

pub fn coordinator_entity_with_key(
    config: &CoordinatorConfig,
    key: fedcap_core::SigningKey,
) -> anyhow::Result<Entity> {
    Entity::new(
        EntityKind::Coordinator,
        &config.name,
        &[],
        key,
        &config.domain_id,
    )
}

pub async fn run(config: CoordinatorConfig, clock: ServiceClock) -> anyhow::Result<()> {
    let me = coordinator_entity(&config)?;
    let mut coord = Coordinator::new(me.key, me.profile, config.root_key)?;
    if let Some(f) = &config.local_rules_file {
        coord = coord.with_local_rules(load_rules(f)?)?;
    }
    let service = Arc::new(CoordinatorService::new(
        coord,
        clock,
        config.pdc_url.clone(),
        Duration::from_millis(config.delivery_timeout_ms),
    )?);
    let listener = bind_and_announce(&config.listen).await?;
    let period = Duration::from_secs(config.sync_period_secs.max(1));
    let looped = service.clone();
    tokio::spawn(async move {
        let mut tick = tokio::time::interval(period);
        tick.tick().await;
        loop {
            tick.tick().await;
            looped.sync_round().await;
        }
    });
    serve(listener, router(service)).await
}
