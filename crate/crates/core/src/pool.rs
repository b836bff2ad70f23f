//! Capability pool, the versioned change log and pull-based replication.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::canonical::{Canonical, Encoder};
use crate::capability::InternalCapability;
use crate::certificate::RevocationCertificate;
use crate::crypto::HexBytes;
use crate::delegation::ProfileDirectory;
use crate::error::{Error, Result};
use crate::identity::{compute_vid, Profile, VirtualIdentity};
use crate::policy::PolicyRule;

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CapabilityPool {
    entries: BTreeMap<VirtualIdentity, InternalCapability>,
    version: u64,
}

impl CapabilityPool {
    pub fn get(&self, object: &VirtualIdentity) -> Option<&InternalCapability> {
        self.entries.get(object)
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &InternalCapability> {
        self.entries.values()
    }

    /// Replaces any existing capability for the same object.
    pub fn upsert(&mut self, incap: InternalCapability) {
        self.entries.insert(incap.vid_o, incap);
        self.version += 1;
    }

    /// Absent objects leave the version untouched.
    pub fn remove(&mut self, object: &VirtualIdentity) -> bool {
        let removed = self.entries.remove(object).is_some();
        if removed {
            self.version += 1;
        }
        removed
    }
}

impl Canonical for CapabilityPool {
    const TAG: &'static str = "capability_pool";

    fn encode_fields(&self, enc: &mut Encoder) {
        enc.uint(self.version);
        enc.uint(self.entries.len() as u64);
        for incap in self.entries.values() {
            enc.nested(incap);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum Change {
    Profile {
        profile: Profile,
        owner_sign: HexBytes,
    },
    PoolUpsert {
        capability: InternalCapability,
    },
    PoolRemove {
        object_vid: VirtualIdentity,
    },
    Revocation {
        certificate: RevocationCertificate,
    },
    Rules {
        rules: Vec<PolicyRule>,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SequencedChange {
    pub seq: u64,
    pub change: Change,
}

/// Changes after `since`, up to and including `current`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyncDelta {
    pub since: u64,
    pub current: u64,
    pub changes: Vec<SequencedChange>,
}

impl SyncDelta {
    pub fn is_empty(&self) -> bool {
        self.changes.is_empty()
    }
}

/// Replicated state: profiles, pool, rules and revocation certificates.
/// The decision center holds the primary copy; coordinators mirror it.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Replica {
    profiles: BTreeMap<VirtualIdentity, (Profile, HexBytes)>,
    pool: CapabilityPool,
    rules: Vec<PolicyRule>,
    revocations: Vec<RevocationCertificate>,
    version: u64,
}

impl ProfileDirectory for Replica {
    fn profile(&self, vid: &VirtualIdentity) -> Option<&Profile> {
        self.profiles.get(vid).map(|(p, _)| p)
    }
}

impl Replica {
    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn pool(&self) -> &CapabilityPool {
        &self.pool
    }

    pub fn rules(&self) -> &[PolicyRule] {
        &self.rules
    }

    pub fn revocations(&self) -> &[RevocationCertificate] {
        &self.revocations
    }

    pub fn profiles(&self) -> impl Iterator<Item = (&VirtualIdentity, &Profile)> {
        self.profiles.iter().map(|(v, (p, _))| (v, p))
    }

    pub fn owner_sign(&self, vid: &VirtualIdentity) -> Option<&HexBytes> {
        self.profiles.get(vid).map(|(_, s)| s)
    }

    /// Canonical bytes of the whole replicated state.
    pub fn state_bytes(&self) -> Vec<u8> {
        let mut enc = Encoder::new("replica");
        enc.uint(self.version);
        enc.nested(&self.pool);
        enc.uint(self.profiles.len() as u64);
        for (vid, (p, s)) in &self.profiles {
            enc.nested(vid).nested(p).bytes(s.as_slice());
        }
        enc.list(&self.rules);
        enc.uint(self.revocations.len() as u64);
        for c in &self.revocations {
            enc.nested(c);
        }
        enc.finish()
    }

    /// Applies one change at sequence number `seq`.
    pub fn apply_change(&mut self, seq: u64, change: &Change) -> Result<()> {
        if seq != self.version + 1 {
            return Err(Error::SyncGap {
                replica: self.version,
                delta: seq,
            });
        }
        match change {
            Change::Profile {
                profile,
                owner_sign,
            } => {
                let vid = compute_vid(profile, owner_sign.as_slice())?;
                self.profiles
                    .insert(vid, (profile.clone(), owner_sign.clone()));
            }
            Change::PoolUpsert { capability } => self.pool.upsert(capability.clone()),
            Change::PoolRemove { object_vid } => {
                self.pool.remove(object_vid);
            }
            Change::Revocation { certificate } => self.revocations.push(certificate.clone()),
            Change::Rules { rules } => self.rules = rules.clone(),
        }
        self.version = seq;
        Ok(())
    }

    /// Applies a delta. Changes the replica already has are skipped; a
    /// delta starting beyond the replica's version is a gap.
    pub fn apply<'d>(&mut self, delta: &'d SyncDelta) -> Result<Vec<&'d Change>> {
        if delta.since > self.version {
            return Err(Error::SyncGap {
                replica: self.version,
                delta: delta.since,
            });
        }
        let mut applied = Vec::new();
        for sc in &delta.changes {
            if sc.seq <= self.version {
                continue;
            }
            self.apply_change(sc.seq, &sc.change)?;
            applied.push(&sc.change);
        }
        Ok(applied)
    }
}

/// Primary copy plus the log that feeds replicas.
#[derive(Debug, Clone, Default)]
pub struct LoggedState {
    state: Replica,
    log: Vec<SequencedChange>,
}

impl LoggedState {
    pub fn state(&self) -> &Replica {
        &self.state
    }

    pub fn version(&self) -> u64 {
        self.state.version
    }

    pub fn record(&mut self, change: Change) -> Result<u64> {
        let seq = self.state.version + 1;
        self.state.apply_change(seq, &change)?;
        self.log.push(SequencedChange { seq, change });
        Ok(seq)
    }

    pub fn delta_since(&self, since: u64) -> SyncDelta {
        let start = self.log.partition_point(|c| c.seq <= since);
        SyncDelta {
            since,
            current: self.state.version,
            changes: self.log[start..].to_vec(),
        }
    }

    pub fn log(&self) -> &[SequencedChange] {
        &self.log
    }
}
