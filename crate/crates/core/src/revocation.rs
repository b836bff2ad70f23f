//! Provider-side capability revocation list.

use std::collections::BTreeMap;

use crate::certificate::{RevocationCertificate, RevocationScope};
use crate::identity::VirtualIdentity;

#[derive(Debug, Clone, Default)]
pub struct RevocationList {
    entries: BTreeMap<VirtualIdentity, i64>,
    last_certificate: Option<RevocationCertificate>,
}

impl RevocationList {
    pub fn new() -> Self {
        Self::default()
    }

    /// Keeps the later expiry when the VID is already listed.
    pub fn insert(&mut self, vid: VirtualIdentity, expire_time: i64) {
        let e = self.entries.entry(vid).or_insert(expire_time);
        *e = (*e).max(expire_time);
    }

    /// An entry is in force while `now < expire_time`.
    pub fn is_revoked(&self, vid: &VirtualIdentity, now: i64) -> bool {
        self.entries.get(vid).is_some_and(|&exp| now < exp)
    }

    /// Drops expired entries and returns how many were removed.
    pub fn prune(&mut self, now: i64) -> usize {
        let before = self.entries.len();
        self.entries.retain(|_, exp| now < *exp);
        before - self.entries.len()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> impl Iterator<Item = (&VirtualIdentity, &i64)> {
        self.entries.iter()
    }

    pub fn last_certificate(&self) -> Option<&RevocationCertificate> {
        self.last_certificate.as_ref()
    }

    /// Retains `cert` as the latest coordinator-scope certificate unless an
    /// equally new or newer one is already held. Returns whether it was taken.
    pub fn offer_coordinator_certificate(&mut self, cert: &RevocationCertificate) -> bool {
        debug_assert_eq!(cert.scope, RevocationScope::Coordinator);
        match &self.last_certificate {
            Some(held) if held.issue_time >= cert.issue_time => false,
            _ => {
                self.last_certificate = Some(cert.clone());
                true
            }
        }
    }
}

/// True when `subject` has an unexpired entry in `rl`.
pub fn check_revocation(subject: &VirtualIdentity, rl: &RevocationList, now: i64) -> bool {
    rl.is_revoked(subject, now)
}
