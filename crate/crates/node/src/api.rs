//! Request and response bodies shared by the services and their clients.

use fedcap_core::certificate::{DelegationCertificate, RevocationCertificate};
use fedcap_core::delegation::IdentityProof;
use fedcap_core::{AccessRight, HexBytes, Profile, VirtualIdentity};
use serde::{Deserialize, Serialize};

pub const TOKEN_HEADER: &str = "x-capability-token";
pub const DC_HEADER: &str = "x-delegation-certificate";

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegisterRequest {
    pub profile: Profile,
    pub owner_sign: HexBytes,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegisterResponse {
    pub vid: VirtualIdentity,
}

/// The subject proves who it is; the token is bound to that identity.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CapRequest {
    pub proof: IdentityProof,
    pub object: VirtualIdentity,
    pub requested: Vec<AccessRight>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CapRevokeRequest {
    pub proof: IdentityProof,
    pub subject: VirtualIdentity,
    pub ttl: i64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IncapRevokeRequest {
    pub proof: IdentityProof,
    pub object: VirtualIdentity,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IncapRevokeResponse {
    pub removed: bool,
    pub version: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IncapMintRequest {
    pub proof: IdentityProof,
    pub object: VirtualIdentity,
    pub rights: Vec<AccessRight>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DelegationOfferRequest {
    pub offer: DelegationCertificate,
    pub delegatee: IdentityProof,
    pub domain_id: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DelegationRevokeRequest {
    pub proof: IdentityProof,
    pub old: VirtualIdentity,
    pub replacement: Option<IdentityProof>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DelegationRevokeResponse {
    pub certificate: RevocationCertificate,
    pub dc: Option<DelegationCertificate>,
}

/// Sent by the root operator to a coordinator; the coordinator completes
/// the handshake with the authority itself.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DelegationAccept {
    pub offer: DelegationCertificate,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClockSet {
    pub now: i64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ErrorBody {
    pub error: String,
}
