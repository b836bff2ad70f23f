//! Fog-layer delegatee: holds a delegation certificate, mirrors the center's
//! state through sync, issues domain-local tokens and fans out revocations.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::canonical::Canonical;
use crate::capability::CapabilityToken;
use crate::certificate::{DelegationCertificate, RevocationCertificate, RevocationScope};
use crate::crypto::{HexBytes, PublicKey, SigningKey};
use crate::delegation::IdentityProof;
use crate::error::{Error, Result};
use crate::identity::{compute_vid, Profile, VirtualIdentity};
use crate::policy::{IssuanceView, PolicyRule};
use crate::pool::{Change, Replica, SyncDelta};
use crate::rights::AccessRight;

/// What a coordinator presents to providers so they can trust its key.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoordinatorIntroduction {
    pub profile: Profile,
    pub owner_sign: HexBytes,
    pub dc: DelegationCertificate,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProviderEntry {
    pub vid: VirtualIdentity,
    pub address: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Delivery {
    pub provider: VirtualIdentity,
    pub address: String,
    pub ok: bool,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeliveryReport {
    pub deliveries: Vec<Delivery>,
}

impl DeliveryReport {
    pub fn succeeded(&self) -> usize {
        self.deliveries.iter().filter(|d| d.ok).count()
    }

    pub fn failed(&self) -> usize {
        self.deliveries.len() - self.succeeded()
    }
}

#[derive(Debug)]
pub struct Coordinator {
    key: SigningKey,
    profile: Profile,
    owner_sign: HexBytes,
    vid: VirtualIdentity,
    root_key: PublicKey,
    dc: Option<DelegationCertificate>,
    mirror: Replica,
    local_rules: Vec<PolicyRule>,
    providers: BTreeMap<VirtualIdentity, String>,
    revoked: bool,
    /// Certificates not yet delivered, keyed by provider.
    pending: BTreeMap<VirtualIdentity, Vec<RevocationCertificate>>,
    broadcast: BTreeSet<HexBytes>,
    history: Vec<RevocationCertificate>,
}

impl Coordinator {
    pub fn new(key: SigningKey, profile: Profile, root_key: PublicKey) -> Result<Self> {
        let owner_sign = profile.owner_sign(&key)?;
        let vid = compute_vid(&profile, owner_sign.as_slice())?;
        Ok(Coordinator {
            key,
            profile,
            owner_sign,
            vid,
            root_key,
            dc: None,
            mirror: Replica::default(),
            local_rules: Vec::new(),
            providers: BTreeMap::new(),
            revoked: false,
            pending: BTreeMap::new(),
            broadcast: BTreeSet::new(),
            history: Vec::new(),
        })
    }

    pub fn with_local_rules(mut self, rules: Vec<PolicyRule>) -> Result<Self> {
        rules.iter().try_for_each(PolicyRule::validate)?;
        self.local_rules = rules;
        Ok(self)
    }

    pub fn vid(&self) -> VirtualIdentity {
        self.vid
    }

    pub fn public_key(&self) -> PublicKey {
        self.key.public_key()
    }

    pub fn profile(&self) -> &Profile {
        &self.profile
    }

    pub fn owner_sign(&self) -> &HexBytes {
        &self.owner_sign
    }

    pub fn domain_id(&self) -> &str {
        &self.profile.domain_id
    }

    pub fn dc(&self) -> Option<&DelegationCertificate> {
        self.dc.as_ref()
    }

    pub fn mirror(&self) -> &Replica {
        &self.mirror
    }

    pub fn is_revoked(&self) -> bool {
        self.revoked
    }

    pub fn identity_proof(&self, now: i64) -> Result<IdentityProof> {
        IdentityProof::create(&self.profile, &self.owner_sign, &self.key, now)
    }

    /// Stores a certificate returned by the authority. A certificate that is
    /// not for this coordinator, not root-signed, or older than the one held
    /// is rejected and the current state is kept.
    pub fn install_dc(&mut self, dc: DelegationCertificate) -> Result<()> {
        dc.verify(&self.root_key)
            .map_err(|e| Error::Rejected(format!("delegation certificate: {e}")))?;
        if dc.delegatee_vid != self.vid {
            return Err(Error::Rejected(
                "certificate names another delegatee".into(),
            ));
        }
        if dc.domain_id != self.profile.domain_id {
            return Err(Error::Rejected("certificate is for another domain".into()));
        }
        if let Some(held) = &self.dc {
            if dc.issue_time <= held.issue_time {
                return Err(Error::Rejected("held certificate is not older".into()));
            }
        }
        self.dc = Some(dc);
        Ok(())
    }

    pub fn is_active(&self, now: i64) -> bool {
        !self.revoked && self.dc.as_ref().is_some_and(|dc| dc.is_current(now))
    }

    /// Applies a sync delta and returns revocation certificates that arrived
    /// with it. A coordinator-scope certificate naming this coordinator
    /// marks it revoked.
    pub fn apply_sync(&mut self, delta: &SyncDelta) -> Result<Vec<RevocationCertificate>> {
        let applied = self.mirror.apply(delta)?;
        let mut certs = Vec::new();
        for change in applied {
            if let Change::Revocation { certificate } = change {
                if certificate.scope == RevocationScope::Coordinator
                    && certificate.revoked_vid == self.vid
                {
                    self.revoked = true;
                }
                certs.push(certificate.clone());
            }
        }
        Ok(certs)
    }

    pub fn rules(&self) -> Vec<PolicyRule> {
        self.mirror
            .rules()
            .iter()
            .chain(&self.local_rules)
            .cloned()
            .collect()
    }

    pub fn issue_local_cap(
        &self,
        subject: &VirtualIdentity,
        object: &VirtualIdentity,
        requested: &[AccessRight],
        now: i64,
    ) -> Result<CapabilityToken> {
        if !self.is_active(now) {
            return Err(Error::Rejected("delegation lapsed".into()));
        }
        let rules = self.rules();
        let view = IssuanceView {
            profiles: &self.mirror,
            pool: self.mirror.pool(),
            rules: &rules,
        };
        Ok(view.issue(subject, object, requested, &self.key, now)?.0)
    }

    /// Adds or re-addresses a provider. A new provider is sent every
    /// certificate broadcast so far.
    pub fn register_provider(&mut self, entry: ProviderEntry) {
        if self.providers.insert(entry.vid, entry.address).is_none() {
            self.pending.insert(entry.vid, self.history.clone());
        }
    }

    pub fn providers(&self) -> Vec<ProviderEntry> {
        self.providers
            .iter()
            .map(|(vid, address)| ProviderEntry {
                vid: *vid,
                address: address.clone(),
            })
            .collect()
    }

    pub fn introduction(&self) -> Result<CoordinatorIntroduction> {
        let dc = self
            .dc
            .clone()
            .ok_or_else(|| Error::Rejected("no delegation certificate".into()))?;
        Ok(CoordinatorIntroduction {
            profile: self.profile.clone(),
            owner_sign: self.owner_sign.clone(),
            dc,
        })
    }

    /// Queues `cert` for every registered provider. It must be signed by the
    /// root or by this coordinator. Returns `false` for a certificate that
    /// was already queued once.
    pub fn enqueue_broadcast(&mut self, cert: &RevocationCertificate) -> Result<bool> {
        cert.verify()
            .map_err(|e| Error::Rejected(format!("revocation certificate: {e}")))?;
        let issuer = cert.issuer_key()?;
        if issuer != self.root_key && issuer != self.public_key() {
            return Err(Error::Rejected(
                "revocation certificate from unknown issuer".into(),
            ));
        }
        if !self.broadcast.insert(cert.signature.clone()) {
            return Ok(false);
        }
        self.history.push(cert.clone());
        for vid in self.providers.keys() {
            self.pending.entry(*vid).or_default().push(cert.clone());
        }
        Ok(true)
    }

    /// Outstanding deliveries as (provider, address, certificates).
    pub fn pending(&self) -> Vec<(ProviderEntry, Vec<RevocationCertificate>)> {
        self.pending
            .iter()
            .filter(|(_, q)| !q.is_empty())
            .filter_map(|(vid, q)| {
                let address = self.providers.get(vid)?.clone();
                Some((ProviderEntry { vid: *vid, address }, q.clone()))
            })
            .collect()
    }

    /// Marks certificates delivered to `provider`.
    pub fn delivered(&mut self, provider: &VirtualIdentity, certs: &[RevocationCertificate]) {
        if let Some(q) = self.pending.get_mut(provider) {
            let done: BTreeSet<_> = certs.iter().map(|c| c.signature.clone()).collect();
            q.retain(|c| !done.contains(&c.signature));
        }
    }
}
