//! Deterministic construction of entity profiles and key files.

use std::path::Path;

use anyhow::Context;
use fedcap_core::{compute_vid, EntityKind, HexBytes, Profile, SigningKey, VirtualIdentity};

/// A profile together with its owner's key and signature.
#[derive(Debug, Clone)]
pub struct Entity {
    pub key: SigningKey,
    pub profile: Profile,
    pub owner_sign: HexBytes,
}

impl Entity {
    /// `name` always becomes the first attribute.
    pub fn new(
        kind: EntityKind,
        name: &str,
        attributes: &[(String, String)],
        key: SigningKey,
        domain_id: &str,
    ) -> anyhow::Result<Self> {
        let mut attrs = vec![("name".to_string(), name.to_string())];
        attrs.extend(attributes.iter().filter(|(k, _)| k != "name").cloned());
        let profile = Profile::new(kind, attrs, &key.public_key(), domain_id);
        let owner_sign = profile.owner_sign(&key)?;
        Ok(Entity {
            key,
            profile,
            owner_sign,
        })
    }

    pub fn vid(&self) -> VirtualIdentity {
        compute_vid(&self.profile, self.owner_sign.as_slice()).expect("owner_sign is non-empty")
    }

    pub fn proof(&self, now: i64) -> fedcap_core::delegation::IdentityProof {
        fedcap_core::delegation::IdentityProof::create(
            &self.profile,
            &self.owner_sign,
            &self.key,
            now,
        )
        .expect("profile already validated")
    }
}

/// Reads a key file holding a 32-byte seed as lowercase hex.
pub fn load_key(path: &Path) -> anyhow::Result<SigningKey> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading key file {}", path.display()))?;
    Ok(SigningKey::from_hex_seed(text.trim())?)
}

pub fn write_key(path: &Path, key: &SigningKey) -> anyhow::Result<()> {
    std::fs::write(path, hex_seed(key))?;
    Ok(())
}

fn hex_seed(key: &SigningKey) -> String {
    key.seed().iter().map(|b| format!("{b:02x}")).collect()
}
