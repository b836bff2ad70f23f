//! Internal and external capabilities and the hash chain that links them.
//!
//! An internal capability pins an object's access rights with
//! `rnd0 = H(vid_o || rights)`. An external capability (the token handed to
//! subjects) extends that chain with
//! `rnd_i = H(vid_s || vid_o || actions+resources || conditions || rnd0)`
//! and is signed by its issuer.

use serde::{Deserialize, Serialize};

use crate::canonical::{encode_list, Canonical, Encoder};
use crate::crypto::{sha256, Digest, HexBytes, PublicKey, SigningKey};
use crate::error::{Error, Result};
use crate::identity::VirtualIdentity;
use crate::rights::{AccessRight, Condition};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InternalCapability {
    pub vid_o: VirtualIdentity,
    pub access_rights: Vec<AccessRight>,
    pub rnd0: Digest,
}

impl InternalCapability {
    pub fn covers(&self, right: &AccessRight) -> bool {
        self.access_rights.iter().any(|r| r.key() == right.key())
    }

    pub fn chain_is_intact(&self) -> bool {
        internal_rnd(&self.vid_o, &self.access_rights) == self.rnd0
    }
}

impl Canonical for InternalCapability {
    const TAG: &'static str = "internal_capability";

    fn encode_fields(&self, enc: &mut Encoder) {
        enc.nested(&self.vid_o)
            .list(&self.access_rights)
            .bytes(self.rnd0.as_bytes());
    }

    fn validate(&self) -> Result<()> {
        self.access_rights
            .iter()
            .try_for_each(AccessRight::validate)?;
        if !self.chain_is_intact() {
            return Err(Error::invalid(
                "internal capability",
                "rnd0 does not match contents",
            ));
        }
        Ok(())
    }
}

pub fn internal_rnd(vid_o: &VirtualIdentity, rights: &[AccessRight]) -> Digest {
    sha256(&[&vid_o.to_canonical(), &encode_list("access_rights", rights)])
}

/// Creates the object-side capability. An empty `rights` list is the
/// deny-everything capability.
pub fn mint_internal_cap(
    vid_o: VirtualIdentity,
    rights: Vec<AccessRight>,
) -> Result<InternalCapability> {
    rights.iter().try_for_each(AccessRight::validate)?;
    let rnd0 = internal_rnd(&vid_o, &rights);
    Ok(InternalCapability {
        vid_o,
        access_rights: rights,
        rnd0,
    })
}

/// Token validity interval in Unix seconds, inclusive on both ends.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Validity {
    pub start: i64,
    pub end: i64,
}

impl Validity {
    pub fn new(start: i64, end: i64) -> Self {
        Validity { start, end }
    }
}

/// Subject-bound capability token. Field order and names are the JSON wire
/// format.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CapabilityToken {
    pub id: String,
    pub issuer: HexBytes,
    pub issue_time: i64,
    pub issue_sign: HexBytes,
    pub subject: VirtualIdentity,
    pub resource: String,
    pub starttime: i64,
    pub endtime: i64,
    pub access_right: Vec<AccessRight>,
    pub rnd_i: Digest,
}

impl CapabilityToken {
    /// Bytes covered by `issue_sign`: every field except the signature.
    pub fn signed_body(&self) -> Vec<u8> {
        self.to_canonical()
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let token: CapabilityToken = serde_json::from_str(s)?;
        token.check_structure()?;
        Ok(token)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("token serialization is infallible")
    }

    /// Structural invariants that hold for any token worth evaluating.
    pub fn check_structure(&self) -> Result<()> {
        if self.starttime > self.endtime {
            return Err(Error::invalid("token", "starttime after endtime"));
        }
        if self.issue_time > self.endtime {
            return Err(Error::invalid("token", "issue_time after endtime"));
        }
        if self.id.is_empty() {
            return Err(Error::invalid("token", "empty id"));
        }
        if let Some(r) = self
            .access_right
            .iter()
            .find(|r| !r.resource.starts_with('/'))
        {
            return Err(Error::invalid(
                "token",
                format!("resource {:?} is not a path", r.resource),
            ));
        }
        Ok(())
    }

    /// Recomputes `rnd_i` with the given object identity and `rnd0`.
    pub fn chain_matches(&self, vid_o: &VirtualIdentity, rnd0: &Digest) -> bool {
        external_rnd(&self.subject, vid_o, &self.access_right, rnd0) == self.rnd_i
    }
}

impl Canonical for CapabilityToken {
    const TAG: &'static str = "capability_token";

    fn encode_fields(&self, enc: &mut Encoder) {
        enc.str(&self.id)
            .bytes(self.issuer.as_slice())
            .int(self.issue_time)
            .nested(&self.subject)
            .str(&self.resource)
            .int(self.starttime)
            .int(self.endtime)
            .list(&self.access_right)
            .bytes(self.rnd_i.as_bytes());
    }

    fn validate(&self) -> Result<()> {
        self.check_structure()
    }
}

/// Action/resource pairs and condition sets are hashed as separate chain
/// inputs.
pub fn external_rnd(
    vid_s: &VirtualIdentity,
    vid_o: &VirtualIdentity,
    rights: &[AccessRight],
    rnd0: &Digest,
) -> Digest {
    let mut ar = Encoder::new("ar_set");
    ar.uint(rights.len() as u64);
    for r in rights {
        let mut pair = Encoder::new("ar");
        pair.str(r.action.as_str()).str(&r.resource);
        ar.bytes(&pair.finish());
    }
    let mut cs = Encoder::new("condition_set");
    cs.uint(rights.len() as u64);
    for r in rights {
        cs.bytes(&encode_list("conditions", &r.conditions));
    }
    sha256(&[
        &vid_s.to_canonical(),
        &vid_o.to_canonical(),
        &ar.finish(),
        &cs.finish(),
        rnd0.as_bytes(),
    ])
}

/// Mints a token for `subject` over `rights`, each of which must be present
/// in `incap`. `extra_conditions` are appended to every right's own
/// conditions; an empty result means the right is unconditional.
#[allow(clippy::too_many_arguments)]
pub fn mint_external_cap(
    incap: &InternalCapability,
    subject: VirtualIdentity,
    rights: &[AccessRight],
    extra_conditions: &[Condition],
    validity: Validity,
    provider_address: &str,
    issuer: &SigningKey,
    now: i64,
) -> Result<CapabilityToken> {
    if validity.start > validity.end {
        return Err(Error::invalid("validity", "start after end"));
    }
    if now > validity.end {
        return Err(Error::invalid("validity", "issue time after end"));
    }
    let mut granted = Vec::with_capacity(rights.len());
    for r in rights {
        r.validate()?;
        if !incap.covers(r) {
            return Err(Error::Rejected(format!(
                "{} {} is not in the internal capability",
                r.action, r.resource
            )));
        }
        let mut r = r.clone();
        r.conditions.extend(extra_conditions.iter().cloned());
        granted.push(r);
    }
    extra_conditions.iter().try_for_each(Condition::validate)?;

    let rnd_i = external_rnd(&subject, &incap.vid_o, &granted, &incap.rnd0);
    let mut token = CapabilityToken {
        id: uuid::Uuid::new_v4().to_string(),
        issuer: issuer.public_key().to_hex_bytes(),
        issue_time: now,
        issue_sign: HexBytes::default(),
        subject,
        resource: provider_address.to_string(),
        starttime: validity.start,
        endtime: validity.end,
        access_right: granted,
        rnd_i,
    };
    token.issue_sign = issuer.sign(&token.signed_body());
    Ok(token)
}

/// Checks `issue_sign` against the key in the `issuer` field. Malformed key
/// or signature bytes are an error, which callers treat as a deny.
pub fn verify_token_signature(token: &CapabilityToken) -> Result<bool> {
    let key = PublicKey::from_slice(token.issuer.as_slice())?;
    key.verify(&token.signed_body(), token.issue_sign.as_slice())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rights::Action;

    fn vid(b: u8) -> VirtualIdentity {
        VirtualIdentity(Digest([b; 32]))
    }

    fn fixture() -> (InternalCapability, CapabilityToken, SigningKey) {
        let key = SigningKey::from_seed([3; 32]);
        let incap = mint_internal_cap(
            vid(1),
            vec![
                AccessRight::new(Action::Get, "/sensor/temp"),
                AccessRight::new(Action::Put, "/sensor/temp"),
            ],
        )
        .unwrap();
        let token = mint_external_cap(
            &incap,
            vid(2),
            &incap.access_rights.clone(),
            &[Condition::env_equals("location", "lab1")],
            Validity::new(100, 200),
            "127.0.0.1:9000",
            &key,
            50,
        )
        .unwrap();
        (incap, token, key)
    }

    #[test]
    fn rnd0_matches_independent_hash() {
        let incap =
            mint_internal_cap(vid(1), vec![AccessRight::new(Action::Get, "/sensor/temp")]).unwrap();
        // Computed with Python's hashlib over the hand-framed encodings.
        assert_eq!(incap.rnd0.to_hex(), GOLDEN_RND0);
        let again = mint_internal_cap(vid(1), incap.access_rights.clone()).unwrap();
        assert_eq!(again.rnd0, incap.rnd0);
    }

    const GOLDEN_RND0: &str = "7701e50c8ec25bb548eef8478dcf9f68a5cc7fc8d634e8a49203c8e909548eca";

    #[test]
    fn empty_rights_capability() {
        let incap = mint_internal_cap(vid(1), vec![]).unwrap();
        assert!(incap.chain_is_intact());
        let t = mint_external_cap(
            &incap,
            vid(2),
            &[],
            &[],
            Validity::new(0, 10),
            "h:1",
            &SigningKey::from_seed([1; 32]),
            0,
        )
        .unwrap();
        assert!(t.access_right.is_empty());
    }

    #[test]
    fn chain_recomputes() {
        let (incap, token, _) = fixture();
        assert!(token.chain_matches(&incap.vid_o, &incap.rnd0));
        assert!(!token.chain_matches(&vid(9), &incap.rnd0));
        assert!(!token.chain_matches(&incap.vid_o, &Digest([0; 32])));
    }

    /// Every chain constituent mutated one at a time must break the chain.
    #[test]
    fn single_field_mutations_break_chain() {
        let (incap, token, _) = fixture();
        let mut mutants: Vec<CapabilityToken> = Vec::new();
        let mut t = token.clone();
        t.subject = vid(7);
        mutants.push(t);
        for i in 0..token.access_right.len() {
            let mut t = token.clone();
            t.access_right[i].action = Action::Delete;
            mutants.push(t);
            let mut t = token.clone();
            t.access_right[i].resource.push('x');
            mutants.push(t);
            let mut t = token.clone();
            t.access_right[i].conditions.clear();
            mutants.push(t);
            let mut t = token.clone();
            t.access_right[i].conditions[0] = Condition::env_equals("location", "lab2");
            mutants.push(t);
        }
        let mut t = token.clone();
        t.access_right.pop();
        mutants.push(t);
        let mut t = token.clone();
        t.access_right.swap(0, 1);
        mutants.push(t);
        for m in &mutants {
            assert!(!m.chain_matches(&incap.vid_o, &incap.rnd0), "{m:?}");
        }
    }

    #[test]
    fn signature_round_trip_and_mutations() {
        let (_, token, _) = fixture();
        assert!(verify_token_signature(&token).unwrap());
        let mut t = token.clone();
        t.access_right[0].action = Action::Post;
        assert!(!verify_token_signature(&t).unwrap());
        let mut t = token.clone();
        t.endtime += 1;
        assert!(!verify_token_signature(&t).unwrap());
        let mut t = token.clone();
        t.issuer = SigningKey::from_seed([4; 32]).public_key().to_hex_bytes();
        assert!(!verify_token_signature(&t).unwrap());
        let mut t = token.clone();
        t.issuer = HexBytes(vec![1, 2, 3]);
        assert!(verify_token_signature(&t).is_err());
    }

    #[test]
    fn flipping_any_signed_body_byte_fails_verification() {
        let (_, token, _) = fixture();
        let body = token.signed_body();
        let key = PublicKey::from_slice(token.issuer.as_slice()).unwrap();
        for i in 0..body.len() {
            let mut b = body.clone();
            b[i] ^= 0x01;
            assert!(!key.verify(&b, token.issue_sign.as_slice()).unwrap());
        }
    }

    #[test]
    fn mint_rejects_inverted_validity_and_uncovered_rights() {
        let (incap, _, key) = fixture();
        let err = mint_external_cap(
            &incap,
            vid(2),
            &[],
            &[],
            Validity::new(10, 5),
            "h:1",
            &key,
            0,
        );
        assert!(err.is_err());
        let err = mint_external_cap(
            &incap,
            vid(2),
            &[AccessRight::new(Action::Delete, "/sensor/temp")],
            &[],
            Validity::new(0, 5),
            "h:1",
            &key,
            0,
        );
        assert!(matches!(err, Err(Error::Rejected(_))));
    }

    #[test]
    fn json_wire_keys() {
        let (_, token, _) = fixture();
        let v: serde_json::Value = serde_json::from_str(&token.to_json()).unwrap();
        let keys: Vec<&str> = v.as_object().unwrap().keys().map(String::as_str).collect();
        for k in [
            "id",
            "issuer",
            "issue_time",
            "issue_sign",
            "subject",
            "resource",
            "starttime",
            "endtime",
            "access_right",
            "rnd_i",
        ] {
            assert!(keys.contains(&k), "{k}");
        }
        assert_eq!(keys.len(), 10);
        let ar = v["access_right"][0].as_object().unwrap();
        assert_eq!(ar.len(), 3);
        assert_eq!(CapabilityToken::from_json(&token.to_json()).unwrap(), token);
    }
}
