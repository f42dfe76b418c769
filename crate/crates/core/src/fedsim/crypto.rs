//! Signed model updates and the server-side verification policy.
//!
//! The digest is SHA-256 over a canonical little-endian encoding of
//! `(domain tag, round, client id, sample count, arrays sorted by name)`;
//! the client signs the digest with its Ed25519 key.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use ed25519_dalek::{Signature, Signer, SigningKey, Verifier, VerifyingKey};
use rand::RngCore;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::lsnet::ParameterSet;
use crate::rng::{self, tag};
use crate::{Error, Result};

const DOMAIN: &[u8] = b"lsnet-fedavg-update/v1";
pub const SCHEME: &str = "ed25519";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SignedUpdate {
    pub client_id: usize,
    pub round: usize,
    pub params: ParameterSet<f32>,
    pub sample_count: u64,
    pub digest: [u8; 32],
    #[serde(with = "hex_bytes")]
    pub signature: Vec<u8>,
}

mod hex_bytes {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &[u8], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(v))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        let s = String::deserialize(d)?;
        hex::decode(s).map_err(serde::de::Error::custom)
    }
}

pub fn update_digest(client_id: usize, round: usize, sample_count: u64, params: &ParameterSet<f32>) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(DOMAIN);
    h.update((round as u64).to_le_bytes());
    h.update((client_id as u64).to_le_bytes());
    h.update(sample_count.to_le_bytes());
    let mut arrays: Vec<_> = params.entries.iter().collect();
    arrays.sort_by(|a, b| a.name.cmp(&b.name));
    h.update((arrays.len() as u64).to_le_bytes());
    for a in arrays {
        h.update((a.name.len() as u64).to_le_bytes());
        h.update(a.name.as_bytes());
        h.update((a.shape.len() as u64).to_le_bytes());
        for &d in &a.shape {
            h.update((d as u64).to_le_bytes());
        }
        h.update([a.trainable as u8]);
        h.update((a.data.len() as u64).to_le_bytes());
        for v in &a.data {
            h.update(v.to_le_bytes());
        }
    }
    h.finalize().into()
}

/// A client's identity: id plus private signing key.
#[derive(Clone, Debug)]
pub struct ClientCredentials {
    pub client_id: usize,
    key: SigningKey,
}

impl ClientCredentials {
    /// Deterministic keypair for client `client_id` under the master seed.
    pub fn derive(seed: u64, client_id: usize) -> Self {
        let mut bytes = [0u8; 32];
        rng::rng(rng::derive(seed, &[tag::KEYS, client_id as u64])).fill_bytes(&mut bytes);
        ClientCredentials {
            client_id,
            key: SigningKey::from_bytes(&bytes),
        }
    }

    pub fn verifying_key(&self) -> VerifyingKey {
        self.key.verifying_key()
    }

    pub fn sign_update(&self, params: ParameterSet<f32>, sample_count: u64, round: usize) -> SignedUpdate {
        let digest = update_digest(self.client_id, round, sample_count, &params);
        let signature = self.key.sign(&digest).to_bytes().to_vec();
        SignedUpdate {
            client_id: self.client_id,
            round,
            params,
            sample_count,
            digest,
            signature,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct KeyRegistry {
    keys: BTreeMap<usize, VerifyingKey>,
}

#[derive(Serialize, Deserialize)]
struct RegistryEntry {
    client_id: usize,
    public_key: String,
    scheme: String,
}

impl KeyRegistry {
    pub fn register(&mut self, client_id: usize, key: VerifyingKey) {
        self.keys.insert(client_id, key);
    }

    pub fn get(&self, client_id: usize) -> Option<&VerifyingKey> {
        self.keys.get(&client_id)
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn to_json(&self) -> Result<String> {
        let entries: Vec<RegistryEntry> = self
            .keys
            .iter()
            .map(|(&client_id, k)| RegistryEntry {
                client_id,
                public_key: hex::encode(k.as_bytes()),
                scheme: SCHEME.into(),
            })
            .collect();
        Ok(serde_json::to_string_pretty(&entries)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let entries: Vec<RegistryEntry> = serde_json::from_str(text)?;
        let mut reg = KeyRegistry::default();
        for e in entries {
            if e.scheme != SCHEME {
                return Err(Error::Signature(format!("unsupported scheme `{}`", e.scheme)));
            }
            let bytes: [u8; 32] = hex::decode(&e.public_key)
                .ok()
                .and_then(|b| b.try_into().ok())
                .ok_or_else(|| Error::Signature(format!("malformed key for client {}", e.client_id)))?;
            let key = VerifyingKey::from_bytes(&bytes).map_err(|err| Error::Signature(err.to_string()))?;
            reg.register(e.client_id, key);
        }
        Ok(reg)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()? + "\n").map_err(|e| Error::io(path, e))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "reason", rename_all = "kebab-case")]
pub enum RejectReason {
    UnregisteredKey,
    RoundMismatch {
        expected: usize,
        got: usize,
    },
    DigestMismatch,
    BadSignature,
    ShapeMismatch,
    NonFinite,
    NormExceeded {
        norm: f64,
        bound: f64,
    },
    ZeroSamples,
    /// Signed correctly but not expected from this client this round.
    Unexpected,
    /// Local training failed; nothing was submitted.
    NotSubmitted {
        detail: String,
    },
}

impl fmt::Display for RejectReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RejectReason::UnregisteredKey => write!(f, "unregistered-key"),
            RejectReason::RoundMismatch { expected, got } => {
                write!(f, "round-mismatch (expected {expected}, got {got})")
            }
            RejectReason::DigestMismatch => write!(f, "digest-mismatch"),
            RejectReason::BadSignature => write!(f, "bad-signature"),
            RejectReason::ShapeMismatch => write!(f, "shape-mismatch"),
            RejectReason::NonFinite => write!(f, "non-finite"),
            RejectReason::NormExceeded { norm, bound } => write!(f, "norm-exceeded ({norm:.4} > {bound:.4})"),
            RejectReason::ZeroSamples => write!(f, "zero-samples"),
            RejectReason::Unexpected => write!(f, "unexpected"),
            RejectReason::NotSubmitted { detail } => write!(f, "not-submitted ({detail})"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "verdict", rename_all = "lowercase")]
pub enum Verdict {
    Accept { norm: f64 },
    Reject(RejectReason),
}

impl Verdict {
    pub fn is_accept(&self) -> bool {
        matches!(self, Verdict::Accept { .. })
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct VerifyPolicy {
    /// Maximum `‖ω_k − ω_global‖₂`; `None` disables the check.
    pub norm_bound: Option<f64>,
}

/// Check, in order: registered key, round, digest, signature, shapes,
/// sample count, shapes, finiteness, update norm against the broadcast
/// global.
pub fn verify_update(
    update: &SignedUpdate,
    registry: &KeyRegistry,
    global: &ParameterSet<f32>,
    round: usize,
    policy: &VerifyPolicy,
) -> Verdict {
    let Some(key) = registry.get(update.client_id) else {
        return Verdict::Reject(RejectReason::UnregisteredKey);
    };
    if update.round != round {
        return Verdict::Reject(RejectReason::RoundMismatch {
            expected: round,
            got: update.round,
        });
    }
    let digest = update_digest(update.client_id, update.round, update.sample_count, &update.params);
    if digest != update.digest {
        return Verdict::Reject(RejectReason::DigestMismatch);
    }
    let sig_ok = <[u8; 64]>::try_from(update.signature.as_slice())
        .map(|b| key.verify(&digest, &Signature::from_bytes(&b)).is_ok())
        .unwrap_or(false);
    if !sig_ok {
        return Verdict::Reject(RejectReason::BadSignature);
    }
    if update.sample_count == 0 {
        return Verdict::Reject(RejectReason::ZeroSamples);
    }
    if !update.params.same_layout(global) {
        return Verdict::Reject(RejectReason::ShapeMismatch);
    }
    if !update.params.all_finite() {
        return Verdict::Reject(RejectReason::NonFinite);
    }
    let norm = update.params.l2_distance(global);
    if let Some(bound) = policy.norm_bound {
        if !(norm <= bound) {
            return Verdict::Reject(RejectReason::NormExceeded { norm, bound });
        }
    }
    Verdict::Accept { norm }
}
