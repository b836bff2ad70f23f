//! Delegation authority (DAC) and identification authority (IAC).
//!
//! Only the root identity may hold a propagating delegation certificate.
//! It can hand a domain to one coordinator at a time; coordinators can
//! never delegate further. Revoked delegatees land in a permanent
//! delegation revocation list (DRL).

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::authz::CLOCK_SKEW_SECS;
use crate::canonical::Encoder;
use crate::certificate::{DelegationCertificate, RevocationCertificate, RevocationScope};
use crate::crypto::{HexBytes, PublicKey, SigningKey};
use crate::error::{Error, Result};
use crate::identity::{compute_vid, Profile, VirtualIdentity};

pub const DEFAULT_DC_LIFETIME_SECS: i64 = 24 * 3600;

/// Read access to registered profiles.
pub trait ProfileDirectory {
    fn profile(&self, vid: &VirtualIdentity) -> Option<&Profile>;
}

impl ProfileDirectory for BTreeMap<VirtualIdentity, Profile> {
    fn profile(&self, vid: &VirtualIdentity) -> Option<&Profile> {
        self.get(vid)
    }
}

/// Proof that the sender holds the key of a registered profile: a signature
/// over its VID and a timestamp.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IdentityProof {
    pub profile: Profile,
    pub owner_sign: HexBytes,
    pub timestamp: i64,
    pub proof: HexBytes,
}

impl IdentityProof {
    pub fn create(
        profile: &Profile,
        owner_sign: &HexBytes,
        key: &SigningKey,
        now: i64,
    ) -> Result<Self> {
        let vid = compute_vid(profile, owner_sign.as_slice())?;
        Ok(IdentityProof {
            profile: profile.clone(),
            owner_sign: owner_sign.clone(),
            timestamp: now,
            proof: key.sign(&proof_message(&vid, now)),
        })
    }

    pub fn vid(&self) -> Result<VirtualIdentity> {
        compute_vid(&self.profile, self.owner_sign.as_slice())
    }
}

fn proof_message(vid: &VirtualIdentity, timestamp: i64) -> Vec<u8> {
    let mut enc = Encoder::new("iac_proof");
    enc.nested(vid).int(timestamp);
    enc.finish()
}

/// IAC check: the VID is registered with exactly this profile, the proof
/// is fresh, and it verifies under the profile's key.
pub fn authenticate(
    proof: &IdentityProof,
    directory: &dyn ProfileDirectory,
    now: i64,
) -> Result<VirtualIdentity> {
    let vid = proof
        .vid()
        .map_err(|e| Error::Unauthorized(format!("identity: {e}")))?;
    match directory.profile(&vid) {
        Some(p) if *p == proof.profile => {}
        _ => return Err(Error::Unauthorized(format!("unknown identity {vid}"))),
    }
    if (now - proof.timestamp).abs() > CLOCK_SKEW_SECS {
        return Err(Error::Unauthorized("stale identity proof".into()));
    }
    let key = proof
        .profile
        .verifying_key()
        .map_err(|e| Error::Unauthorized(e.to_string()))?;
    match key.verify(
        &proof_message(&vid, proof.timestamp),
        proof.proof.as_slice(),
    ) {
        Ok(true) => Ok(vid),
        _ => Err(Error::Unauthorized("identity proof does not verify".into())),
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DelegationRevocationList {
    entries: BTreeMap<VirtualIdentity, i64>,
}

impl DelegationRevocationList {
    pub fn contains(&self, vid: &VirtualIdentity) -> bool {
        self.entries.contains_key(vid)
    }

    pub fn insert(&mut self, vid: VirtualIdentity, at: i64) {
        self.entries.entry(vid).or_insert(at);
    }

    pub fn iter(&self) -> impl Iterator<Item = (&VirtualIdentity, &i64)> {
        self.entries.iter()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DelegationState {
    pub domain_id: String,
    pub active: Option<DelegationCertificate>,
    pub revoked: Vec<VirtualIdentity>,
}

impl DelegationState {
    pub fn active_delegatee(&self) -> Option<VirtualIdentity> {
        self.active.as_ref().map(|dc| dc.delegatee_vid)
    }
}

#[derive(Debug)]
pub struct Dac {
    root_key: SigningKey,
    root_vid: VirtualIdentity,
    root_domain: String,
    lifetime: i64,
    drl: DelegationRevocationList,
    domains: BTreeMap<String, DelegationState>,
    issued: Vec<DelegationCertificate>,
}

impl Dac {
    pub fn new(root_key: SigningKey, root_vid: VirtualIdentity, root_domain: &str) -> Self {
        Dac {
            root_key,
            root_vid,
            root_domain: root_domain.to_string(),
            lifetime: DEFAULT_DC_LIFETIME_SECS,
            drl: DelegationRevocationList::default(),
            domains: BTreeMap::new(),
            issued: Vec::new(),
        }
    }

    pub fn with_lifetime(mut self, secs: i64) -> Self {
        self.lifetime = secs;
        self
    }

    pub fn root_vid(&self) -> VirtualIdentity {
        self.root_vid
    }

    pub fn root_public_key(&self) -> PublicKey {
        self.root_key.public_key()
    }

    pub fn drl(&self) -> &DelegationRevocationList {
        &self.drl
    }

    /// Every certificate this authority has signed, in order.
    pub fn issued(&self) -> &[DelegationCertificate] {
        &self.issued
    }

    pub fn domain(&self, domain_id: &str) -> Option<&DelegationState> {
        self.domains.get(domain_id)
    }

    pub fn domains(&self) -> impl Iterator<Item = &DelegationState> {
        self.domains.values()
    }

    pub fn active_delegatee(&self, domain_id: &str) -> Option<VirtualIdentity> {
        self.domains
            .get(domain_id)
            .and_then(DelegationState::active_delegatee)
    }

    fn sign_dc(
        &mut self,
        delegatee: VirtualIdentity,
        domain: &str,
        now: i64,
    ) -> Result<DelegationCertificate> {
        let dc = DelegationCertificate::issue(
            delegatee,
            self.root_vid,
            domain,
            now,
            now + self.lifetime,
            &self.root_key,
        )?;
        self.issued.push(dc.clone());
        Ok(dc)
    }

    /// The delegator asks for its own certificate. Only the root identity
    /// qualifies.
    pub fn request_delegation(
        &mut self,
        delegator: &IdentityProof,
        directory: &dyn ProfileDirectory,
        now: i64,
    ) -> Result<DelegationCertificate> {
        let vid = authenticate(delegator, directory, now)
            .map_err(|e| Error::Rejected(format!("delegation request failed: {e}")))?;
        if self.drl.contains(&vid) {
            return Err(Error::Rejected(format!(
                "{vid} is on the delegation revocation list"
            )));
        }
        if vid != self.root_vid {
            return Err(Error::Rejected(
                "only the root identity may request delegation".into(),
            ));
        }
        let domain = self.root_domain.clone();
        self.sign_dc(vid, &domain, now)
    }

    /// Delegation acknowledgement: `delegatee` presents the root's offer
    /// certificate and its own identity proof; on success it receives its
    /// own certificate for `domain_id`.
    pub fn offer_delegation(
        &mut self,
        offer: &DelegationCertificate,
        delegatee: &IdentityProof,
        domain_id: &str,
        directory: &dyn ProfileDirectory,
        now: i64,
    ) -> Result<DelegationCertificate> {
        offer
            .verify(&self.root_public_key())
            .map_err(|e| Error::Rejected(format!("offer certificate: {e}")))?;
        if !offer.is_current(now) {
            return Err(Error::Rejected("offer certificate is not current".into()));
        }
        if offer.delegatee_vid != self.root_vid || offer.delegator_vid != self.root_vid {
            return Err(Error::Rejected(
                "only the root delegator may propagate delegation".into(),
            ));
        }
        if directory.profile(&self.root_vid).is_none() {
            return Err(Error::Rejected("root identity is not registered".into()));
        }
        self.install(delegatee, domain_id, directory, now)
    }

    fn install(
        &mut self,
        delegatee: &IdentityProof,
        domain_id: &str,
        directory: &dyn ProfileDirectory,
        now: i64,
    ) -> Result<DelegationCertificate> {
        if domain_id.is_empty() {
            return Err(Error::Rejected("empty domain".into()));
        }
        let vid = authenticate(delegatee, directory, now)
            .map_err(|e| Error::Rejected(format!("delegatee authentication failed: {e}")))?;
        if vid == self.root_vid {
            return Err(Error::Rejected(
                "the root cannot be a domain delegatee".into(),
            ));
        }
        if self.drl.contains(&vid) {
            return Err(Error::Rejected(format!(
                "{vid} is on the delegation revocation list"
            )));
        }
        if let Some(other) = self
            .domains
            .values()
            .find(|s| s.domain_id != domain_id && s.active_delegatee() == Some(vid))
        {
            return Err(Error::Rejected(format!(
                "{vid} already serves domain {}",
                other.domain_id
            )));
        }
        if let Some(current) = self.active_delegatee(domain_id) {
            if current != vid {
                return Err(Error::Rejected(format!(
                    "domain {domain_id} already has an active delegatee"
                )));
            }
        }
        let dc = self.sign_dc(vid, domain_id, now)?;
        self.domains
            .entry(domain_id.to_string())
            .or_insert_with(|| DelegationState {
                domain_id: domain_id.to_string(),
                active: None,
                revoked: Vec::new(),
            })
            .active = Some(dc.clone());
        Ok(dc)
    }

    /// Nullifies `old`'s delegation, adds it to the DRL and returns the
    /// coordinator-scope revocation certificate. When `replacement` is
    /// given it is installed for the same domain.
    pub fn revoke_delegation(
        &mut self,
        old: &VirtualIdentity,
        replacement: Option<&IdentityProof>,
        directory: &dyn ProfileDirectory,
        now: i64,
    ) -> Result<(RevocationCertificate, Option<DelegationCertificate>)> {
        let state = self
            .domains
            .values_mut()
            .find(|s| s.active_delegatee() == Some(*old))
            .ok_or_else(|| Error::NotFound(format!("{old} is not an active delegatee")))?;
        state.active = None;
        state.revoked.push(*old);
        let domain = state.domain_id.clone();
        self.drl.insert(*old, now);
        let cert = RevocationCertificate::issue(
            *old,
            RevocationScope::Coordinator,
            now,
            now + self.lifetime,
            &self.root_key,
        )?;
        let new_dc = match replacement {
            Some(proof) => Some(self.install(proof, &domain, directory, now)?),
            None => None,
        };
        Ok((cert, new_dc))
    }

    /// Accepts `dc` as proof of a live delegation: root-signed, current, not
    /// revoked, and still the active certificate holder for its domain.
    pub fn check_delegation(&self, dc: &DelegationCertificate, now: i64) -> Result<()> {
        dc.verify(&self.root_public_key())?;
        if !dc.is_current(now) {
            return Err(Error::Unauthorized("delegation certificate expired".into()));
        }
        if self.drl.contains(&dc.delegatee_vid) {
            return Err(Error::Unauthorized(format!(
                "{} is on the delegation revocation list",
                dc.delegatee_vid
            )));
        }
        if self.active_delegatee(&dc.domain_id) != Some(dc.delegatee_vid) {
            return Err(Error::Unauthorized(
                "not the active delegatee of its domain".into(),
            ));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::identity::EntityKind;
    use proptest::prelude::*;

    const NOW: i64 = 1_700_000_000;

    struct Entity {
        key: SigningKey,
        profile: Profile,
        sign: HexBytes,
    }

    impl Entity {
        fn new(seed: u8, kind: EntityKind) -> Self {
            let key = SigningKey::from_seed([seed; 32]);
            let profile = Profile::new(
                kind,
                [("name", format!("e{seed}"))],
                &key.public_key(),
                "d1",
            );
            let sign = profile.owner_sign(&key).unwrap();
            Entity { key, profile, sign }
        }

        fn vid(&self) -> VirtualIdentity {
            compute_vid(&self.profile, self.sign.as_slice()).unwrap()
        }

        fn proof(&self, now: i64) -> IdentityProof {
            IdentityProof::create(&self.profile, &self.sign, &self.key, now).unwrap()
        }
    }

    fn setup(n: u8) -> (Dac, Vec<Entity>, BTreeMap<VirtualIdentity, Profile>) {
        let root = Entity::new(1, EntityKind::Pdc);
        let mut dir = BTreeMap::new();
        let mut ents = vec![root];
        for i in 0..n {
            ents.push(Entity::new(10 + i, EntityKind::Coordinator));
        }
        for e in &ents {
            dir.insert(e.vid(), e.profile.clone());
        }
        let dac = Dac::new(ents[0].key.clone(), ents[0].vid(), "cloud");
        (dac, ents, dir)
    }

    #[test]
    fn root_request_returns_self_certificate() {
        let (mut dac, e, dir) = setup(1);
        let dc = dac.request_delegation(&e[0].proof(NOW), &dir, NOW).unwrap();
        assert_eq!(dc.delegatee_vid, e[0].vid());
        assert_eq!(dc.delegator_vid, e[0].vid());
        assert_eq!(dc.depth, 1);
        dc.verify(&dac.root_public_key()).unwrap();
    }

    #[test]
    fn unregistered_and_non_root_requests_fail() {
        let (mut dac, e, dir) = setup(1);
        let stranger = Entity::new(99, EntityKind::Subject);
        assert!(matches!(
            dac.request_delegation(&stranger.proof(NOW), &dir, NOW),
            Err(Error::Rejected(_))
        ));
        assert!(dac.request_delegation(&e[1].proof(NOW), &dir, NOW).is_err());
        // Stale proof and forged proof.
        assert!(dac
            .request_delegation(&e[0].proof(NOW - 100), &dir, NOW)
            .is_err());
        let mut forged = e[0].proof(NOW);
        forged.proof = e[1].key.sign(b"x");
        assert!(dac.request_delegation(&forged, &dir, NOW).is_err());
    }

    #[test]
    fn offer_happy_path_and_coordinator_cannot_propagate() {
        let (mut dac, e, dir) = setup(2);
        let root_dc = dac.request_delegation(&e[0].proof(NOW), &dir, NOW).unwrap();
        let c1_dc = dac
            .offer_delegation(&root_dc, &e[1].proof(NOW), "d1", &dir, NOW)
            .unwrap();
        assert_eq!(c1_dc.delegatee_vid, e[1].vid());
        assert_eq!(dac.active_delegatee("d1"), Some(e[1].vid()));
        dac.check_delegation(&c1_dc, NOW).unwrap();
        // C1 tries to pass delegation on with its own certificate.
        let err = dac
            .offer_delegation(&c1_dc, &e[2].proof(NOW), "d2", &dir, NOW)
            .unwrap_err();
        assert!(err.to_string().contains("only the root delegator"));
    }

    #[test]
    fn mutated_offer_rejected() {
        let (mut dac, e, dir) = setup(1);
        let root_dc = dac.request_delegation(&e[0].proof(NOW), &dir, NOW).unwrap();
        for i in 0..root_dc.signature.0.len() {
            let mut bad = root_dc.clone();
            bad.signature.0[i] ^= 1;
            assert!(dac
                .offer_delegation(&bad, &e[1].proof(NOW), "d1", &dir, NOW)
                .is_err());
        }
        let mut bad = root_dc.clone();
        bad.expiry += 1;
        assert!(dac
            .offer_delegation(&bad, &e[1].proof(NOW), "d1", &dir, NOW)
            .is_err());
        assert!(dac.active_delegatee("d1").is_none());
    }

    #[test]
    fn revoke_and_replace() {
        let (mut dac, e, dir) = setup(2);
        let root_dc = dac.request_delegation(&e[0].proof(NOW), &dir, NOW).unwrap();
        let c1_dc = dac
            .offer_delegation(&root_dc, &e[1].proof(NOW), "d1", &dir, NOW)
            .unwrap();
        let (cert, c2_dc) = dac
            .revoke_delegation(&e[1].vid(), Some(&e[2].proof(NOW)), &dir, NOW)
            .unwrap();
        assert_eq!(cert.revoked_vid, e[1].vid());
        assert_eq!(cert.scope, RevocationScope::Coordinator);
        cert.verify().unwrap();
        assert!(dac.drl().contains(&e[1].vid()));
        assert_eq!(dac.active_delegatee("d1"), Some(e[2].vid()));
        assert!(c2_dc.is_some());
        assert!(dac.check_delegation(&c1_dc, NOW).is_err());
        // Revoked VIDs stay out.
        assert!(dac.request_delegation(&e[1].proof(NOW), &dir, NOW).is_err());
        let root_dc = dac.request_delegation(&e[0].proof(NOW), &dir, NOW).unwrap();
        assert!(dac
            .offer_delegation(&root_dc, &e[1].proof(NOW), "d9", &dir, NOW)
            .is_err());
        assert!(matches!(
            dac.revoke_delegation(&e[0].vid(), None, &dir, NOW),
            Err(Error::NotFound(_))
        ));
    }

    #[derive(Debug, Clone)]
    enum Op {
        RequestRoot,
        RequestOther(usize),
        /// Offer using the certificate at `cert` (index into issued) to
        /// entity `to` for domain `domain`.
        Offer {
            cert: usize,
            to: usize,
            domain: usize,
        },
        Revoke {
            who: usize,
            replacement: Option<usize>,
        },
        Tick(i64),
    }

    fn op() -> impl Strategy<Value = Op> {
        prop_oneof![
            Just(Op::RequestRoot),
            (0usize..6).prop_map(Op::RequestOther),
            (0usize..64, 0usize..6, 0usize..3).prop_map(|(cert, to, domain)| Op::Offer {
                cert,
                to,
                domain
            }),
            (0usize..6, proptest::option::of(0usize..6))
                .prop_map(|(who, replacement)| Op::Revoke { who, replacement }),
            (0i64..20_000).prop_map(Op::Tick),
        ]
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(128))]
        #[test]
        fn depth_one_holds_for_random_sequences(ops in proptest::collection::vec(op(), 0..=50)) {
            let (mut dac, e, dir) = setup(5);
            let root = e[0].vid();
            let mut now = NOW;
            let mut root_installed: Vec<VirtualIdentity> = Vec::new();
            for op in ops {
                match op {
                    Op::RequestRoot => { let _ = dac.request_delegation(&e[0].proof(now), &dir, now); }
                    Op::RequestOther(i) => {
                        let i = 1 + i % 5;
                        prop_assert!(dac.request_delegation(&e[i].proof(now), &dir, now).is_err());
                    }
                    Op::Offer { cert, to, domain } => {
                        if dac.issued().is_empty() { continue; }
                        let dc = dac.issued()[cert % dac.issued().len()].clone();
                        let res = dac.offer_delegation(&dc, &e[to].proof(now), &format!("d{domain}"), &dir, now);
                        if dc.delegatee_vid != root {
                            prop_assert!(res.is_err(), "non-root certificate propagated");
                        }
                        if let Ok(new) = res {
                            prop_assert_eq!(new.delegator_vid, root);
                            root_installed.push(new.delegatee_vid);
                        }
                    }
                    Op::Revoke { who, replacement } => {
                        let proof = replacement.map(|r| e[r].proof(now));
                        if let Ok((_, Some(new))) = dac.revoke_delegation(&e[who].vid(), proof.as_ref(), &dir, now) {
                            root_installed.push(new.delegatee_vid);
                        }
                    }
                    Op::Tick(s) => now += s,
                }
                for dc in dac.issued() {
                    prop_assert_eq!(dc.depth, 1);
                    prop_assert_eq!(dc.delegator_vid, root);
                    prop_assert!(dc.delegatee_vid == root || root_installed.contains(&dc.delegatee_vid));
                }
                let mut seen = std::collections::BTreeSet::new();
                for st in dac.domains() {
                    if let Some(v) = st.active_delegatee() {
                        prop_assert!(v != root);
                        prop_assert!(!dac.drl().contains(&v));
                        prop_assert!(seen.insert(v), "delegatee active in two domains");
                    }
                }
                let revoked: Vec<VirtualIdentity> = dac.drl().iter().map(|(v, _)| *v).collect();
                for v in revoked {
                    prop_assert!(dac.request_delegation(&e.iter().find(|x| x.vid() == v).unwrap().proof(now), &dir, now).is_err());
                }
            }
        }
    }
}
