//! HTTP front of the cloud decision center.

use std::sync::{Arc, RwLock};

use axum::extract::{Query, State};
use axum::http::HeaderMap;
use axum::routing::{get, post};
use axum::{Json, Router};
use fedcap_core::certificate::{DelegationCertificate, RevocationCertificate};
use fedcap_core::delegation::{authenticate, IdentityProof};
use fedcap_core::pdc::Pdc;
use fedcap_core::pool::SyncDelta;
use fedcap_core::{CapabilityToken, Clock, Error, InternalCapability, PublicKey, VirtualIdentity};
use serde::{Deserialize, Serialize};

use crate::api::*;
use crate::config::{load_rules, PdcConfig};
use crate::http::{bind_and_announce, serve, ApiError, ApiResult, ServiceClock};
use crate::identity::{load_key, Entity};

pub struct PdcService {
    pdc: RwLock<Pdc>,
    clock: ServiceClock,
}

type Shared = Arc<PdcService>;

impl PdcService {
    pub fn new(pdc: Pdc, clock: ServiceClock) -> Self {
        PdcService {
            pdc: RwLock::new(pdc),
            clock,
        }
    }

    fn read(&self) -> std::sync::RwLockReadGuard<'_, Pdc> {
        self.pdc.read().unwrap_or_else(|p| p.into_inner())
    }

    fn write(&self) -> std::sync::RwLockWriteGuard<'_, Pdc> {
        self.pdc.write().unwrap_or_else(|p| p.into_inner())
    }

    fn require_root(&self, proof: &IdentityProof) -> Result<(), ApiError> {
        let pdc = self.read();
        let vid = authenticate(proof, pdc.state(), self.clock.now())
            .map_err(|e| Error::Unauthorized(format!("operator authentication: {e}")))?;
        if vid != pdc.vid() {
            return Err(Error::Unauthorized("operator must be the root identity".into()).into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PdcIdentity {
    pub vid: VirtualIdentity,
    pub public_key: PublicKey,
    pub version: u64,
}

#[derive(Debug, Deserialize)]
struct SyncQuery {
    since: u64,
}

pub fn router(service: Shared) -> Router {
    let admin = service.clock.admin_routes();
    Router::new()
        .route("/identity", get(identity))
        .route("/register", post(register))
        .route("/cap/request", post(cap_request))
        .route("/cap/revoke", post(cap_revoke))
        .route("/incap/revoke", post(incap_revoke))
        .route("/incap/mint", post(incap_mint))
        .route("/sync", get(sync))
        .route("/delegation/request", post(delegation_request))
        .route("/delegation/offer", post(delegation_offer))
        .route("/delegation/revoke", post(delegation_revoke))
        .with_state(service)
        .merge(admin)
}

async fn identity(State(s): State<Shared>) -> Json<PdcIdentity> {
    let pdc = s.read();
    Json(PdcIdentity {
        vid: pdc.vid(),
        public_key: pdc.public_key(),
        version: pdc.version(),
    })
}

async fn register(
    State(s): State<Shared>,
    Json(req): Json<RegisterRequest>,
) -> ApiResult<RegisterResponse> {
    let vid = s.write().register_entity(req.profile, req.owner_sign)?;
    tracing::info!(%vid, "registered");
    Ok(Json(RegisterResponse { vid }))
}

async fn cap_request(
    State(s): State<Shared>,
    Json(req): Json<CapRequest>,
) -> ApiResult<CapabilityToken> {
    let now = s.clock.now();
    let mut pdc = s.write();
    let subject = authenticate(&req.proof, pdc.state(), now)
        .map_err(|e| Error::Unauthorized(format!("subject authentication: {e}")))?;
    Ok(Json(pdc.issue_external_cap(
        &subject,
        &req.object,
        &req.requested,
        now,
    )?))
}

async fn cap_revoke(
    State(s): State<Shared>,
    Json(req): Json<CapRevokeRequest>,
) -> ApiResult<RevocationCertificate> {
    s.require_root(&req.proof)?;
    let now = s.clock.now();
    Ok(Json(s.write().revoke_external_cap(
        &req.subject,
        req.ttl,
        now,
    )?))
}

async fn incap_revoke(
    State(s): State<Shared>,
    Json(req): Json<IncapRevokeRequest>,
) -> ApiResult<IncapRevokeResponse> {
    s.require_root(&req.proof)?;
    let mut pdc = s.write();
    let removed = pdc.revoke_internal_cap(&req.object)?;
    Ok(Json(IncapRevokeResponse {
        removed,
        version: pdc.state().pool().version(),
    }))
}

async fn incap_mint(
    State(s): State<Shared>,
    Json(req): Json<IncapMintRequest>,
) -> ApiResult<InternalCapability> {
    s.require_root(&req.proof)?;
    Ok(Json(s.write().mint_internal_cap(req.object, req.rights)?))
}

async fn sync(
    State(s): State<Shared>,
    headers: HeaderMap,
    Query(q): Query<SyncQuery>,
) -> ApiResult<SyncDelta> {
    let raw = headers
        .get(DC_HEADER)
        .ok_or_else(|| Error::Unauthorized("missing delegation certificate".into()))?;
    let dc: DelegationCertificate = serde_json::from_slice(raw.as_bytes())
        .map_err(|e| Error::Unauthorized(format!("malformed delegation certificate: {e}")))?;
    let now = s.clock.now();
    Ok(Json(s.read().sync_domain(&dc, q.since, now)?))
}

async fn delegation_request(
    State(s): State<Shared>,
    Json(proof): Json<IdentityProof>,
) -> ApiResult<DelegationCertificate> {
    let now = s.clock.now();
    Ok(Json(s.write().request_delegation(&proof, now)?))
}

async fn delegation_offer(
    State(s): State<Shared>,
    Json(req): Json<DelegationOfferRequest>,
) -> ApiResult<DelegationCertificate> {
    let now = s.clock.now();
    let dc = s
        .write()
        .offer_delegation(&req.offer, &req.delegatee, &req.domain_id, now)?;
    tracing::info!(delegatee = %dc.delegatee_vid, domain = %dc.domain_id, "delegation installed");
    Ok(Json(dc))
}

async fn delegation_revoke(
    State(s): State<Shared>,
    Json(req): Json<DelegationRevokeRequest>,
) -> ApiResult<DelegationRevokeResponse> {
    s.require_root(&req.proof)?;
    let now = s.clock.now();
    let (certificate, dc) = s
        .write()
        .revoke_delegation(&req.old, req.replacement.as_ref(), now)?;
    Ok(Json(DelegationRevokeResponse { certificate, dc }))
}

/// Root entity of a center configured with `config`.
pub fn root_entity(config: &PdcConfig) -> anyhow::Result<Entity> {
    root_entity_with_key(config, load_key(&config.key_file)?)
}

pub fn root_entity_with_key(
    config: &PdcConfig,
    key: fedcap_core::SigningKey,
) -> anyhow::Result<Entity> {
    Entity::new(
        fedcap_core::EntityKind::Pdc,
        &config.name,
        &[],
        key,
        &config.domain_id,
    )
}

pub async fn run(config: PdcConfig, clock: ServiceClock) -> anyhow::Result<()> {
    let root = root_entity(&config)?;
    let rules = load_rules(&config.policy_file)?;
    let mut pdc = match &config.data_dir {
        Some(dir) => Pdc::with_journal(root.key, root.profile, rules, dir)?,
        None => Pdc::new(root.key, root.profile, rules)?,
    };
    pdc.compact_journal()?;
    let listener = bind_and_announce(&config.listen).await?;
    serve(listener, router(Arc::new(PdcService::new(pdc, clock)))).await
}
