//! Federated capability-based access control.
//!
//! The crate holds every piece of the system that does not touch the
//! network: identity derivation, internal/external capability minting with
//! hash chaining, the provider-side authorization pipeline, the delegation
//! authority, the cloud decision center state machine, the coordinator
//! mirror and the provider enforcement core. HTTP adapters live in
//! `fedcap-node`.

pub mod authz;
pub mod canonical;
pub mod capability;
pub mod certificate;
pub mod clock;
pub mod coordinator;
pub mod crypto;
pub mod delegation;
pub mod error;
pub mod identity;
pub mod pdc;
pub mod policy;
pub mod pool;
pub mod provider;
pub mod revocation;
pub mod rights;

pub use authz::{Authorizer, Decision, IssuerTrust, Outcome, RequestContext, Stage};
pub use canonical::{canonical_serialize, Canonical};
pub use capability::{
    mint_external_cap, mint_internal_cap, verify_token_signature, CapabilityToken,
    InternalCapability, Validity,
};
pub use certificate::{DelegationCertificate, RevocationCertificate, RevocationScope};
pub use clock::{Clock, ManualClock, SystemClock};
pub use crypto::{Digest, HexBytes, PublicKey, SigningKey};
pub use error::{Error, Result};
pub use identity::{compute_vid, EntityKind, Profile, VirtualIdentity};
pub use revocation::RevocationList;
pub use rights::{AccessRight, Action, Condition};
