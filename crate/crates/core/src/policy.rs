//! Attribute-equality allowlist rules and the issuance path shared by the
//! decision center and coordinators.
//!
//! Rules are evaluated in order; the first whose subject attributes and
//! object match decides. A matching rule with no granted rights is an
//! explicit deny. No matching rule is a deny.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::canonical::{Canonical, Encoder};
use crate::capability::{mint_external_cap, CapabilityToken, Validity};
use crate::crypto::SigningKey;
use crate::delegation::ProfileDirectory;
use crate::error::{Error, Result};
use crate::identity::{Profile, VirtualIdentity};
use crate::pool::CapabilityPool;
use crate::rights::{AccessRight, Action};

/// Profile attribute holding the provider's `host:port`.
pub const ADDRESS_ATTRIBUTE: &str = "address";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyRule {
    pub subject_match: Vec<(String, String)>,
    pub object_vid: VirtualIdentity,
    pub granted: Vec<AccessRight>,
    pub validity_duration: i64,
}

impl PolicyRule {
    pub fn matches(&self, subject: &Profile, object: &VirtualIdentity) -> bool {
        self.object_vid == *object
            && self
                .subject_match
                .iter()
                .all(|(k, v)| subject.attribute(k) == Some(v.as_str()))
    }

    pub fn is_tombstone(&self) -> bool {
        self.granted.is_empty()
    }
}

impl Canonical for PolicyRule {
    const TAG: &'static str = "policy_rule";

    fn encode_fields(&self, enc: &mut Encoder) {
        enc.uint(self.subject_match.len() as u64);
        for (k, v) in &self.subject_match {
            let mut pair = Encoder::new("attr");
            pair.str(k).str(v);
            enc.bytes(&pair.finish());
        }
        enc.nested(&self.object_vid)
            .list(&self.granted)
            .int(self.validity_duration);
    }

    fn validate(&self) -> Result<()> {
        if self.validity_duration <= 0 {
            return Err(Error::invalid(
                "policy rule",
                "validity_duration must be positive",
            ));
        }
        self.granted.iter().try_for_each(AccessRight::validate)
    }
}

/// Outcome of rule evaluation before minting.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Grant {
    pub rule_index: usize,
    pub rights: Vec<AccessRight>,
    pub validity_duration: i64,
}

/// Intersects `requested` with the first matching rule's grants and with
/// what the object's internal capability allows. Conditions come from the
/// rule; conditions on the request are ignored.
pub fn decide(
    rules: &[PolicyRule],
    subject: &Profile,
    object: &VirtualIdentity,
    object_rights: &[AccessRight],
    requested: &[AccessRight],
) -> Result<Grant> {
    let (rule_index, rule) = rules
        .iter()
        .enumerate()
        .find(|(_, r)| r.matches(subject, object))
        .ok_or_else(|| Error::Rejected("no policy rule matches".into()))?;
    if rule.is_tombstone() {
        return Err(Error::Rejected(format!("denied by rule {rule_index}")));
    }
    let mut seen: BTreeSet<(Action, &str)> = BTreeSet::new();
    let mut rights = Vec::new();
    for req in requested {
        if !seen.insert(req.key()) {
            continue;
        }
        let in_object = object_rights.iter().any(|r| r.key() == req.key());
        if let Some(g) = rule.granted.iter().find(|g| g.key() == req.key()) {
            if in_object {
                rights.push(g.clone());
            }
        }
    }
    if rights.is_empty() {
        return Err(Error::Rejected("requested rights are not granted".into()));
    }
    Ok(Grant {
        rule_index,
        rights,
        validity_duration: rule.validity_duration,
    })
}

/// Everything an issuer consults to answer a capability request.
pub struct IssuanceView<'a> {
    pub profiles: &'a dyn ProfileDirectory,
    pub pool: &'a CapabilityPool,
    pub rules: &'a [PolicyRule],
}

impl IssuanceView<'_> {
    /// Full issuance: registration checks, policy decision, minting.
    pub fn issue(
        &self,
        subject: &VirtualIdentity,
        object: &VirtualIdentity,
        requested: &[AccessRight],
        issuer: &SigningKey,
        now: i64,
    ) -> Result<(CapabilityToken, Grant)> {
        let subject_profile = self
            .profiles
            .profile(subject)
            .ok_or_else(|| Error::Rejected(format!("subject {subject} is not registered")))?;
        let object_profile = self
            .profiles
            .profile(object)
            .ok_or_else(|| Error::Rejected(format!("object {object} is not registered")))?;
        let incap = self
            .pool
            .get(object)
            .ok_or_else(|| Error::Rejected(format!("no internal capability for {object}")))?;
        let grant = decide(
            self.rules,
            subject_profile,
            object,
            &incap.access_rights,
            requested,
        )?;
        let address = object_profile
            .attribute(ADDRESS_ATTRIBUTE)
            .map(str::to_string)
            .unwrap_or_else(|| object.to_hex());
        let token = mint_external_cap(
            incap,
            *subject,
            &grant.rights,
            &[],
            Validity::new(now, now + grant.validity_duration),
            &address,
            issuer,
            now,
        )?;
        Ok((token, grant))
    }
}
