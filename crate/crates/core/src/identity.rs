//! Entity profiles and virtual identities.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::canonical::{Canonical, Encoder};
use crate::crypto::{sha256, Digest, HexBytes, PublicKey, SigningKey};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntityKind {
    Subject,
    Object,
    Coordinator,
    Pdc,
}

impl EntityKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EntityKind::Subject => "subject",
            EntityKind::Object => "object",
            EntityKind::Coordinator => "coordinator",
            EntityKind::Pdc => "pdc",
        }
    }
}

/// Registered description of an entity.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Profile {
    pub entity_kind: EntityKind,
    pub attributes: Vec<(String, String)>,
    pub public_key: HexBytes,
    pub domain_id: String,
}

impl Profile {
    pub fn new(
        entity_kind: EntityKind,
        attributes: impl IntoIterator<Item = (impl Into<String>, impl Into<String>)>,
        public_key: &PublicKey,
        domain_id: impl Into<String>,
    ) -> Self {
        Profile {
            entity_kind,
            attributes: attributes
                .into_iter()
                .map(|(k, v)| (k.into(), v.into()))
                .collect(),
            public_key: public_key.to_hex_bytes(),
            domain_id: domain_id.into(),
        }
    }

    pub fn attribute(&self, key: &str) -> Option<&str> {
        self.attributes
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn verifying_key(&self) -> Result<PublicKey> {
        PublicKey::from_slice(self.public_key.as_slice())
    }

    /// Owner signature over the canonical profile, the usual way an owner
    /// produces the `Sign` input of [`compute_vid`].
    pub fn owner_sign(&self, owner: &SigningKey) -> Result<HexBytes> {
        self.validate()?;
        Ok(owner.sign(&self.to_canonical()))
    }
}

impl Canonical for Profile {
    const TAG: &'static str = "profile";

    fn encode_fields(&self, enc: &mut Encoder) {
        enc.str(self.entity_kind.as_str());
        enc.uint(self.attributes.len() as u64);
        for (k, v) in &self.attributes {
            let mut pair = Encoder::new("attr");
            pair.str(k).str(v);
            enc.bytes(&pair.finish());
        }
        enc.bytes(self.public_key.as_slice());
        enc.str(&self.domain_id);
    }

    fn validate(&self) -> Result<()> {
        if self.attributes.is_empty() {
            return Err(Error::invalid("profile", "attributes must not be empty"));
        }
        let mut seen = BTreeSet::new();
        for (k, _) in &self.attributes {
            if !seen.insert(k.as_str()) {
                return Err(Error::invalid(
                    "profile",
                    format!("duplicate attribute key {k:?}"),
                ));
            }
        }
        if self.domain_id.is_empty() {
            return Err(Error::invalid("profile", "domain_id must not be empty"));
        }
        Ok(())
    }
}

/// Hash-derived global identifier of a registered entity.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct VirtualIdentity(pub Digest);

impl VirtualIdentity {
    pub fn digest(&self) -> &Digest {
        &self.0
    }

    pub fn to_hex(&self) -> String {
        self.0.to_hex()
    }

    pub fn from_hex(s: &str) -> Result<Self> {
        Digest::from_hex(s).map(VirtualIdentity)
    }
}

impl fmt::Display for VirtualIdentity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl fmt::Debug for VirtualIdentity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Vid({}..)", &self.to_hex()[..12])
    }
}

impl Canonical for VirtualIdentity {
    const TAG: &'static str = "vid";

    fn encode_fields(&self, enc: &mut Encoder) {
        enc.bytes(self.0.as_bytes());
    }
}

/// `SHA-256(canonical(profile) || owner_sign)`.
pub fn compute_vid(profile: &Profile, owner_sign: &[u8]) -> Result<VirtualIdentity> {
    profile.validate()?;
    if owner_sign.is_empty() {
        return Err(Error::invalid("owner signature", "must not be empty"));
    }
    Ok(VirtualIdentity(sha256(&[
        &profile.to_canonical(),
        owner_sign,
    ])))
}
