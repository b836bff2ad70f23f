//! SHA-256 digests, Ed25519 keys and the hex text forms used on the wire.

use std::fmt;

use ed25519_dalek::{Signer, Verifier};
use serde::{de, Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest as _, Sha256};

use crate::error::{Error, Result};

pub const DIGEST_LEN: usize = 32;

/// A 32-byte SHA-256 output.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct Digest(pub [u8; DIGEST_LEN]);

impl Digest {
    pub fn as_bytes(&self) -> &[u8; DIGEST_LEN] {
        &self.0
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    pub fn from_hex(s: &str) -> Result<Self> {
        let bytes = decode_lower_hex(s)?;
        let arr: [u8; DIGEST_LEN] = bytes
            .try_into()
            .map_err(|b: Vec<u8>| Error::Hex(format!("expected 32 bytes, got {}", b.len())))?;
        Ok(Digest(arr))
    }
}

impl fmt::Display for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl fmt::Debug for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Digest({})", self.to_hex())
    }
}

impl Serialize for Digest {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for Digest {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Digest::from_hex(&s).map_err(de::Error::custom)
    }
}

/// SHA-256 over the concatenation of `parts`.
pub fn sha256(parts: &[&[u8]]) -> Digest {
    let mut h = Sha256::new();
    for p in parts {
        h.update(p);
    }
    Digest(h.finalize().into())
}

/// Only lowercase hex is accepted so that every wire value has exactly one
/// text form.
fn decode_lower_hex(s: &str) -> Result<Vec<u8>> {
    if s.bytes().any(|b| b.is_ascii_uppercase()) {
        return Err(Error::Hex("uppercase hex digits are not accepted".into()));
    }
    hex::decode(s).map_err(|e| Error::Hex(e.to_string()))
}

/// Arbitrary binary field (keys, signatures) carried as lowercase hex.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct HexBytes(pub Vec<u8>);

impl HexBytes {
    pub fn as_slice(&self) -> &[u8] {
        &self.0
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn from_hex(s: &str) -> Result<Self> {
        decode_lower_hex(s).map(HexBytes)
    }

    pub fn to_hex(&self) -> String {
        hex::encode(&self.0)
    }
}

impl From<Vec<u8>> for HexBytes {
    fn from(v: Vec<u8>) -> Self {
        HexBytes(v)
    }
}

impl fmt::Debug for HexBytes {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "HexBytes({})", self.to_hex())
    }
}

impl Serialize for HexBytes {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for HexBytes {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        HexBytes::from_hex(&s).map_err(de::Error::custom)
    }
}

/// Ed25519 verification key, kept as raw bytes until it is used so that a
/// malformed key from the wire surfaces as a verification error.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PublicKey(pub [u8; 32]);

impl PublicKey {
    pub fn from_slice(bytes: &[u8]) -> Result<Self> {
        let arr: [u8; 32] = bytes
            .try_into()
            .map_err(|_| Error::Key(format!("public key must be 32 bytes, got {}", bytes.len())))?;
        Ok(PublicKey(arr))
    }

    pub fn to_hex_bytes(&self) -> HexBytes {
        HexBytes(self.0.to_vec())
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    pub fn from_hex(s: &str) -> Result<Self> {
        Self::from_slice(&decode_lower_hex(s)?)
    }

    /// `Ok(false)` for a well-formed signature that does not verify, `Err`
    /// when the key or signature bytes cannot be interpreted at all.
    pub fn verify(&self, message: &[u8], signature: &[u8]) -> Result<bool> {
        let key = ed25519_dalek::VerifyingKey::from_bytes(&self.0)
            .map_err(|e| Error::Key(e.to_string()))?;
        let sig = ed25519_dalek::Signature::from_slice(signature)
            .map_err(|e| Error::Key(format!("signature: {e}")))?;
        Ok(key.verify(message, &sig).is_ok())
    }
}

impl fmt::Debug for PublicKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "PublicKey({})", self.to_hex())
    }
}

impl Serialize for PublicKey {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for PublicKey {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        PublicKey::from_hex(&s).map_err(de::Error::custom)
    }
}

/// Ed25519 signing key.
#[derive(Clone)]
pub struct SigningKey(ed25519_dalek::SigningKey);

impl SigningKey {
    pub fn from_seed(seed: [u8; 32]) -> Self {
        SigningKey(ed25519_dalek::SigningKey::from_bytes(&seed))
    }

    pub fn generate() -> Self {
        Self::from_seed(rand::random())
    }

    pub fn seed(&self) -> [u8; 32] {
        self.0.to_bytes()
    }

    pub fn from_hex_seed(s: &str) -> Result<Self> {
        let bytes = decode_lower_hex(s.trim())?;
        let seed: [u8; 32] = bytes
            .try_into()
            .map_err(|_| Error::Key("seed must be 32 bytes".into()))?;
        Ok(Self::from_seed(seed))
    }

    pub fn public_key(&self) -> PublicKey {
        PublicKey(self.0.verifying_key().to_bytes())
    }

    pub fn sign(&self, message: &[u8]) -> HexBytes {
        HexBytes(self.0.sign(message).to_bytes().to_vec())
    }
}

impl fmt::Debug for SigningKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "SigningKey(pub={})", self.public_key().to_hex())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sha256_known_answer() {
        // FIPS 180-2 "abc" vector.
        assert_eq!(
            sha256(&[b"ab", b"c"]).to_hex(),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn uppercase_hex_rejected() {
        assert!(HexBytes::from_hex("AB").is_err());
        assert_eq!(HexBytes::from_hex("ab").unwrap().0, vec![0xab]);
    }

    #[test]
    fn malformed_key_is_error_not_false() {
        let k = SigningKey::from_seed([7; 32]);
        let sig = k.sign(b"m");
        assert!(k.public_key().verify(b"m", sig.as_slice()).unwrap());
        assert!(!k.public_key().verify(b"n", sig.as_slice()).unwrap());
        assert!(k.public_key().verify(b"m", &sig.as_slice()[..10]).is_err());
        assert!(PublicKey::from_slice(&[1, 2, 3]).is_err());
    }
}
