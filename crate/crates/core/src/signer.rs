//! Signature schemes behind one small contract.
//!
//! [`Scheme::Ed25519`] is a real asymmetric scheme. [`Scheme::Digest`] is a
//! deterministic test double: anyone holding the public key can forge with it,
//! so it only belongs in simulations and golden fixtures.

use alloc::vec::Vec;

use ed25519_dalek::{Signature, Signer as _, SigningKey, Verifier as _, VerifyingKey};
use serde::{Deserialize, Serialize};
use sha2::{Digest as _, Sha256};

use crate::canonical::Bytes;

/// The operations every signature scheme offers.
pub trait SignerContract {
    fn generate(&self, seed: [u8; 32]) -> Keypair;
    fn sign(&self, secret: &[u8], msg: &[u8]) -> Vec<u8>;
    fn verify(&self, public: &[u8], msg: &[u8], signature: &[u8]) -> bool;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    #[default]
    Ed25519,
    Digest,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Keypair {
    pub scheme: Scheme,
    pub secret: Bytes,
    pub public: Bytes,
}

impl Keypair {
    pub fn sign(&self, msg: &[u8]) -> Bytes {
        Bytes(self.scheme.sign(self.secret.as_slice(), msg))
    }

    pub fn verify(&self, msg: &[u8], signature: &[u8]) -> bool {
        self.scheme.verify(self.public.as_slice(), msg, signature)
    }
}

const DIGEST_PUB_TAG: &[u8] = b"cmms-digest-pub";

fn digest_public(secret: &[u8]) -> Vec<u8> {
    let mut h = Sha256::new();
    h.update(DIGEST_PUB_TAG);
    h.update(secret);
    h.finalize().to_vec()
}

fn digest_sign(public: &[u8], msg: &[u8]) -> Vec<u8> {
    let mut h = Sha256::new();
    h.update(public);
    h.update(msg);
    h.finalize().to_vec()
}

impl SignerContract for Scheme {
    fn generate(&self, seed: [u8; 32]) -> Keypair {
        let public = match self {
            Scheme::Ed25519 => SigningKey::from_bytes(&seed)
                .verifying_key()
                .to_bytes()
                .to_vec(),
            Scheme::Digest => digest_public(&seed),
        };
        Keypair {
            scheme: *self,
            secret: Bytes(seed.to_vec()),
            public: Bytes(public),
        }
    }

    fn sign(&self, secret: &[u8], msg: &[u8]) -> Vec<u8> {
        match self {
            Scheme::Ed25519 => {
                let Ok(seed) = <[u8; 32]>::try_from(secret) else {
                    return Vec::new();
                };
                SigningKey::from_bytes(&seed).sign(msg).to_bytes().to_vec()
            }
            Scheme::Digest => digest_sign(&digest_public(secret), msg),
        }
    }

    fn verify(&self, public: &[u8], msg: &[u8], signature: &[u8]) -> bool {
        match self {
            Scheme::Ed25519 => {
                let (Ok(public), Ok(sig)) = (
                    <[u8; 32]>::try_from(public),
                    <[u8; 64]>::try_from(signature),
                ) else {
                    return false;
                };
                let Ok(key) = VerifyingKey::from_bytes(&public) else {
                    return false;
                };
                key.verify(msg, &Signature::from_bytes(&sig)).is_ok()
            }
            Scheme::Digest => digest_sign(public, msg) == signature,
        }
    }
}

/// Derives a 32-byte key seed for `label` from a deployment-wide master seed.
pub fn derive_seed(master: u64, label: &str) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(b"cmms-key-seed");
    h.update(master.to_be_bytes());
    h.update(label.as_bytes());
    h.finalize().into()
}
