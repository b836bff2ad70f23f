//! Signed delegation and revocation statements.

use serde::{Deserialize, Serialize};

use crate::canonical::{Canonical, Encoder};
use crate::crypto::{HexBytes, PublicKey, SigningKey};
use crate::error::{Error, Result};
use crate::identity::VirtualIdentity;

/// Only the root may propagate delegation, so every certificate is depth 1.
pub const DELEGATION_DEPTH: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DelegationCertificate {
    pub delegatee_vid: VirtualIdentity,
    pub delegator_vid: VirtualIdentity,
    pub domain_id: String,
    pub depth: u32,
    pub issue_time: i64,
    pub expiry: i64,
    pub signature: HexBytes,
}

impl DelegationCertificate {
    pub fn issue(
        delegatee_vid: VirtualIdentity,
        delegator_vid: VirtualIdentity,
        domain_id: &str,
        issue_time: i64,
        expiry: i64,
        signer: &SigningKey,
    ) -> Result<Self> {
        let mut dc = DelegationCertificate {
            delegatee_vid,
            delegator_vid,
            domain_id: domain_id.to_string(),
            depth: DELEGATION_DEPTH,
            issue_time,
            expiry,
            signature: HexBytes::default(),
        };
        dc.validate()?;
        dc.signature = signer.sign(&dc.to_canonical());
        Ok(dc)
    }

    /// Signature and structural check; does not look at the clock.
    pub fn verify(&self, authority: &PublicKey) -> Result<()> {
        self.validate()?;
        match authority.verify(&self.to_canonical(), self.signature.as_slice()) {
            Ok(true) => Ok(()),
            Ok(false) => Err(Error::Unauthorized(
                "delegation certificate signature".into(),
            )),
            Err(e) => Err(Error::Unauthorized(format!("delegation certificate: {e}"))),
        }
    }

    pub fn is_current(&self, now: i64) -> bool {
        self.issue_time <= now && now < self.expiry
    }
}

impl Canonical for DelegationCertificate {
    const TAG: &'static str = "delegation_certificate";

    fn encode_fields(&self, enc: &mut Encoder) {
        enc.nested(&self.delegatee_vid)
            .nested(&self.delegator_vid)
            .str(&self.domain_id)
            .uint(self.depth as u64)
            .int(self.issue_time)
            .int(self.expiry);
    }

    fn validate(&self) -> Result<()> {
        if self.depth != DELEGATION_DEPTH {
            return Err(Error::invalid("delegation certificate", "depth must be 1"));
        }
        if self.issue_time >= self.expiry {
            return Err(Error::invalid(
                "delegation certificate",
                "issue_time must precede expiry",
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RevocationScope {
    /// Tokens held by the named subject are denied until expiry.
    SubjectCap,
    /// The named coordinator loses its delegation; tokens it issued are void.
    Coordinator,
}

impl RevocationScope {
    pub fn as_str(self) -> &'static str {
        match self {
            RevocationScope::SubjectCap => "subject_cap",
            RevocationScope::Coordinator => "coordinator",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RevocationCertificate {
    pub revoked_vid: VirtualIdentity,
    pub scope: RevocationScope,
    pub issue_time: i64,
    pub expire_time: i64,
    pub issuer: HexBytes,
    pub signature: HexBytes,
}

impl RevocationCertificate {
    pub fn issue(
        revoked_vid: VirtualIdentity,
        scope: RevocationScope,
        issue_time: i64,
        expire_time: i64,
        signer: &SigningKey,
    ) -> Result<Self> {
        let mut cert = RevocationCertificate {
            revoked_vid,
            scope,
            issue_time,
            expire_time,
            issuer: signer.public_key().to_hex_bytes(),
            signature: HexBytes::default(),
        };
        cert.validate()?;
        cert.signature = signer.sign(&cert.to_canonical());
        Ok(cert)
    }

    pub fn issuer_key(&self) -> Result<PublicKey> {
        PublicKey::from_slice(self.issuer.as_slice())
    }

    /// Checks the signature against the key in the `issuer` field. Whether
    /// that issuer is trusted is the caller's decision.
    pub fn verify(&self) -> Result<()> {
        self.validate()?;
        match self
            .issuer_key()?
            .verify(&self.to_canonical(), self.signature.as_slice())
        {
            Ok(true) => Ok(()),
            Ok(false) => Err(Error::Unauthorized(
                "revocation certificate signature".into(),
            )),
            Err(e) => Err(Error::Unauthorized(format!("revocation certificate: {e}"))),
        }
    }
}

impl Canonical for RevocationCertificate {
    const TAG: &'static str = "revocation_certificate";

    fn encode_fields(&self, enc: &mut Encoder) {
        enc.nested(&self.revoked_vid)
            .str(self.scope.as_str())
            .int(self.issue_time)
            .int(self.expire_time)
            .bytes(self.issuer.as_slice());
    }

    fn validate(&self) -> Result<()> {
        if self.issue_time >= self.expire_time {
            return Err(Error::invalid(
                "revocation certificate",
                "issue_time must precede expire_time",
            ));
        }
        Ok(())
    }
}
