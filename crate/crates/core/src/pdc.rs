//! Cloud policy decision center: registration, capability pool, issuance,
//! revocation, and the delegation authority.

use std::collections::HashSet;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::canonical::Canonical;
use crate::capability::{mint_internal_cap, CapabilityToken, InternalCapability};
use crate::certificate::{DelegationCertificate, RevocationCertificate, RevocationScope};
use crate::crypto::{sha256, Digest, HexBytes, PublicKey, SigningKey};
use crate::delegation::{Dac, IdentityProof, ProfileDirectory};
use crate::error::{Error, Result};
use crate::identity::{compute_vid, Profile, VirtualIdentity};
use crate::policy::{IssuanceView, PolicyRule};
use crate::pool::{Change, LoggedState, Replica, SequencedChange, SyncDelta};
use crate::rights::AccessRight;

/// Audit entry for every token the center minted.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IssuanceRecord {
    pub token_id: String,
    pub subject: VirtualIdentity,
    pub object: VirtualIdentity,
    pub rule_index: usize,
    pub rights: Vec<AccessRight>,
    pub issue_time: i64,
}

/// Append-only change journal with an occasional snapshot. The snapshot
/// holds the change prefix it replaces, so sync can still serve any
/// `since` after a restart.
#[derive(Debug)]
pub struct Journal {
    dir: PathBuf,
    log: File,
}

#[derive(Serialize, Deserialize)]
struct Snapshot {
    version: u64,
    changes: Vec<SequencedChange>,
}

impl Journal {
    const LOG: &'static str = "changes.jsonl";
    const SNAPSHOT: &'static str = "snapshot.json";

    pub fn open(dir: impl AsRef<Path>) -> Result<(Self, Vec<SequencedChange>)> {
        let dir = dir.as_ref().to_path_buf();
        fs::create_dir_all(&dir).map_err(io_err)?;
        let mut changes = Vec::new();
        let snap_path = dir.join(Self::SNAPSHOT);
        if snap_path.exists() {
            let snap: Snapshot = serde_json::from_slice(&fs::read(&snap_path).map_err(io_err)?)?;
            changes = snap.changes;
        }
        let log_path = dir.join(Self::LOG);
        if log_path.exists() {
            for line in BufReader::new(File::open(&log_path).map_err(io_err)?).lines() {
                let line = line.map_err(io_err)?;
                if line.trim().is_empty() {
                    continue;
                }
                let sc: SequencedChange = serde_json::from_str(&line)?;
                if changes
                    .last()
                    .is_none_or(|l: &SequencedChange| sc.seq > l.seq)
                {
                    changes.push(sc);
                }
            }
        }
        let log = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&log_path)
            .map_err(io_err)?;
        Ok((Journal { dir, log }, changes))
    }

    fn append(&mut self, sc: &SequencedChange) -> Result<()> {
        let mut line = serde_json::to_vec(sc)?;
        line.push(b'\n');
        self.log.write_all(&line).map_err(io_err)?;
        self.log.flush().map_err(io_err)
    }

    /// Writes every change into the snapshot and truncates the log.
    pub fn compact(&mut self, changes: &[SequencedChange]) -> Result<()> {
        let snap = Snapshot {
            version: changes.last().map_or(0, |c| c.seq),
            changes: changes.to_vec(),
        };
        let tmp = self.dir.join("snapshot.json.tmp");
        fs::write(&tmp, serde_json::to_vec(&snap)?).map_err(io_err)?;
        fs::rename(&tmp, self.dir.join(Self::SNAPSHOT)).map_err(io_err)?;
        self.log = File::create(self.dir.join(Self::LOG)).map_err(io_err)?;
        Ok(())
    }
}

fn io_err(e: std::io::Error) -> Error {
    Error::invalid("journal", e.to_string())
}

pub struct Pdc {
    key: SigningKey,
    profile: Profile,
    owner_sign: HexBytes,
    vid: VirtualIdentity,
    store: LoggedState,
    profile_digests: HashSet<Digest>,
    dac: Dac,
    issuance_log: Vec<IssuanceRecord>,
    journal: Option<Journal>,
}

impl std::fmt::Debug for Pdc {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Pdc")
            .field("vid", &self.vid)
            .field("version", &self.store.version())
            .finish_non_exhaustive()
    }
}

fn profile_digest(p: &Profile) -> Digest {
    sha256(&[&p.to_canonical()])
}

impl Pdc {
    /// Creates the center, registering its own root profile (signed with
    /// `key`) and recording `rules`.
    pub fn new(key: SigningKey, profile: Profile, rules: Vec<PolicyRule>) -> Result<Self> {
        Self::build(key, profile, rules, None, Vec::new())
    }

    /// Like [`Pdc::new`] but replays and appends to a journal in `dir`.
    pub fn with_journal(
        key: SigningKey,
        profile: Profile,
        rules: Vec<PolicyRule>,
        dir: impl AsRef<Path>,
    ) -> Result<Self> {
        let (journal, changes) = Journal::open(dir)?;
        Self::build(key, profile, rules, Some(journal), changes)
    }

    fn build(
        key: SigningKey,
        profile: Profile,
        rules: Vec<PolicyRule>,
        journal: Option<Journal>,
        replay: Vec<SequencedChange>,
    ) -> Result<Self> {
        let owner_sign = profile.owner_sign(&key)?;
        let vid = compute_vid(&profile, owner_sign.as_slice())?;
        let dac = Dac::new(key.clone(), vid, &profile.domain_id);
        let mut pdc = Pdc {
            key,
            profile: profile.clone(),
            owner_sign: owner_sign.clone(),
            vid,
            store: LoggedState::default(),
            profile_digests: HashSet::new(),
            dac,
            issuance_log: Vec::new(),
            journal: None,
        };
        for sc in replay {
            if let Change::Profile { profile, .. } = &sc.change {
                pdc.profile_digests.insert(profile_digest(profile));
            }
            pdc.store.record(sc.change)?;
        }
        pdc.journal = journal;
        if pdc.store.state().profile(&vid).is_none() {
            pdc.register_entity(profile, owner_sign)?;
        }
        if pdc.store.state().rules() != rules.as_slice() {
            pdc.set_rules(rules)?;
        }
        Ok(pdc)
    }

    fn record(&mut self, change: Change) -> Result<u64> {
        let seq = self.store.record(change)?;
        if let Some(j) = self.journal.as_mut() {
            j.append(self.store.log().last().expect("just recorded"))?;
        }
        Ok(seq)
    }

    pub fn compact_journal(&mut self) -> Result<()> {
        if let Some(j) = self.journal.as_mut() {
            j.compact(self.store.log())?;
        }
        Ok(())
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

    pub fn state(&self) -> &Replica {
        self.store.state()
    }

    pub fn version(&self) -> u64 {
        self.store.version()
    }

    pub fn dac(&self) -> &Dac {
        &self.dac
    }

    pub fn issuance_log(&self) -> &[IssuanceRecord] {
        &self.issuance_log
    }

    pub fn set_rules(&mut self, rules: Vec<PolicyRule>) -> Result<()> {
        rules.iter().try_for_each(PolicyRule::validate)?;
        self.record(Change::Rules { rules })?;
        Ok(())
    }

    pub fn register_entity(
        &mut self,
        profile: Profile,
        owner_sign: HexBytes,
    ) -> Result<VirtualIdentity> {
        let vid = compute_vid(&profile, owner_sign.as_slice())?;
        let digest = profile_digest(&profile);
        if self.profile_digests.contains(&digest) || self.store.state().profile(&vid).is_some() {
            return Err(Error::Duplicate("profile already registered".into()));
        }
        self.record(Change::Profile {
            profile,
            owner_sign,
        })?;
        self.profile_digests.insert(digest);
        Ok(vid)
    }

    pub fn lookup(&self, vid: &VirtualIdentity) -> Option<&Profile> {
        self.store.state().profile(vid)
    }

    /// Creates (or replaces) the internal capability of a registered object.
    pub fn mint_internal_cap(
        &mut self,
        object: VirtualIdentity,
        rights: Vec<AccessRight>,
    ) -> Result<InternalCapability> {
        if self.lookup(&object).is_none() {
            return Err(Error::NotFound(format!(
                "object {object} is not registered"
            )));
        }
        let incap = mint_internal_cap(object, rights)?;
        self.record(Change::PoolUpsert {
            capability: incap.clone(),
        })?;
        Ok(incap)
    }

    pub fn issue_external_cap(
        &mut self,
        subject: &VirtualIdentity,
        object: &VirtualIdentity,
        requested: &[AccessRight],
        now: i64,
    ) -> Result<CapabilityToken> {
        let state = self.store.state();
        let view = IssuanceView {
            profiles: state,
            pool: state.pool(),
            rules: state.rules(),
        };
        let (token, grant) = view.issue(subject, object, requested, &self.key, now)?;
        self.issuance_log.push(IssuanceRecord {
            token_id: token.id.clone(),
            subject: *subject,
            object: *object,
            rule_index: grant.rule_index,
            rights: grant.rights,
            issue_time: now,
        });
        Ok(token)
    }

    /// Removes the object's internal capability. Returns `false` (and
    /// changes nothing) when there was none.
    pub fn revoke_internal_cap(&mut self, object: &VirtualIdentity) -> Result<bool> {
        if self.store.state().pool().get(object).is_none() {
            tracing::warn!(%object, "revoke of absent internal capability ignored");
            return Ok(false);
        }
        self.record(Change::PoolRemove {
            object_vid: *object,
        })?;
        Ok(true)
    }

    pub fn revoke_external_cap(
        &mut self,
        subject: &VirtualIdentity,
        ttl: i64,
        now: i64,
    ) -> Result<RevocationCertificate> {
        if self.lookup(subject).is_none() {
            return Err(Error::NotFound(format!(
                "subject {subject} is not registered"
            )));
        }
        if ttl <= 0 {
            return Err(Error::invalid("ttl", "must be positive"));
        }
        let cert = RevocationCertificate::issue(
            *subject,
            RevocationScope::SubjectCap,
            now,
            now + ttl,
            &self.key,
        )?;
        self.record(Change::Revocation {
            certificate: cert.clone(),
        })?;
        Ok(cert)
    }

    /// Unauthenticated delta, for local replicas and diagnostics.
    pub fn delta_since(&self, since: u64) -> SyncDelta {
        self.store.delta_since(since)
    }

    pub fn sync_domain(
        &self,
        dc: &DelegationCertificate,
        since: u64,
        now: i64,
    ) -> Result<SyncDelta> {
        self.dac.check_delegation(dc, now)?;
        if since > self.version() {
            return Err(Error::SyncGap {
                replica: since,
                delta: self.version(),
            });
        }
        Ok(self.store.delta_since(since))
    }

    pub fn request_delegation(
        &mut self,
        proof: &IdentityProof,
        now: i64,
    ) -> Result<DelegationCertificate> {
        self.dac.request_delegation(proof, self.store.state(), now)
    }

    pub fn offer_delegation(
        &mut self,
        offer: &DelegationCertificate,
        delegatee: &IdentityProof,
        domain_id: &str,
        now: i64,
    ) -> Result<DelegationCertificate> {
        self.dac
            .offer_delegation(offer, delegatee, domain_id, self.store.state(), now)
    }

    pub fn revoke_delegation(
        &mut self,
        old: &VirtualIdentity,
        replacement: Option<&IdentityProof>,
        now: i64,
    ) -> Result<(RevocationCertificate, Option<DelegationCertificate>)> {
        let (cert, dc) = self
            .dac
            .revoke_delegation(old, replacement, self.store.state(), now)?;
        self.record(Change::Revocation {
            certificate: cert.clone(),
        })?;
        Ok((cert, dc))
    }

    /// Identity proof for the root, used when the center acts as delegator.
    pub fn root_proof(&self, now: i64) -> Result<IdentityProof> {
        IdentityProof::create(&self.profile, &self.owner_sign, &self.key, now)
    }
}
