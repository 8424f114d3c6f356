//! State-carrying certificates, the issuing CA, and the certificate repository.
//!
//! A certificate binds a subject name and public key to the subject's current
//! state list. When the monitor changes a subject's states the CA issues a
//! replacement and revokes the old serial; the repository always hands out the
//! highest serial it holds for a subject, together with the current CRL.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::canonical::{to_canonical_vec, Bytes};
use crate::policy::StateSet;
use crate::signer::{Keypair, Scheme, SignerContract};
use crate::ErrorCode;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SubjectKind {
    User,
    Discovery,
    Service,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Certificate {
    pub serial: u64,
    pub subject_name: String,
    pub kind: SubjectKind,
    pub public_key: Bytes,
    pub state_list: StateSet,
    pub policy_blob: Option<Bytes>,
    pub issued_at: u64,
    pub expires_at: u64,
    pub issuer: String,
    pub signature: Bytes,
}

/// Signed-over view: every certificate field except the signature.
#[derive(Serialize)]
struct TbsCertificate<'a> {
    serial: u64,
    subject_name: &'a str,
    kind: SubjectKind,
    public_key: &'a Bytes,
    state_list: StateSet,
    policy_blob: &'a Option<Bytes>,
    issued_at: u64,
    expires_at: u64,
    issuer: &'a str,
}

impl Certificate {
    /// Canonical JSON of every field except `signature`.
    pub fn canonical_bytes(&self) -> Vec<u8> {
        let tbs = TbsCertificate {
            serial: self.serial,
            subject_name: &self.subject_name,
            kind: self.kind,
            public_key: &self.public_key,
            state_list: self.state_list,
            policy_blob: &self.policy_blob,
            issued_at: self.issued_at,
            expires_at: self.expires_at,
            issuer: &self.issuer,
        };
        to_canonical_vec(&tbs).expect("certificate fields always serialize")
    }

    /// Canonical JSON of the full certificate, signature included.
    pub fn to_canonical_json(&self) -> Vec<u8> {
        to_canonical_vec(self).expect("certificate fields always serialize")
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Crl {
    pub revoked_serials: BTreeSet<u64>,
    pub issued_at: u64,
}

impl Crl {
    pub fn contains(&self, serial: u64) -> bool {
        self.revoked_serials.contains(&serial)
    }

    /// Folds `other` into `self`. Serials are only ever added.
    pub fn merge(&mut self, other: &Crl) {
        self.revoked_serials
            .extend(other.revoked_serials.iter().copied());
        self.issued_at = self.issued_at.max(other.issued_at);
    }

    pub fn to_canonical_json(&self) -> Vec<u8> {
        to_canonical_vec(self).expect("CRL fields always serialize")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CertStatus {
    Ok,
    Expired,
    BadSignature,
    Revoked,
}

/// Checks a certificate against the CA key, the clock and the CRL.
/// Revocation wins over expiry, and expiry over a bad signature.
pub fn verify(cert: &Certificate, scheme: Scheme, ca_pub: &[u8], now: u64, crl: &Crl) -> CertStatus {
    if crl.contains(cert.serial) {
        CertStatus::Revoked
    } else if now >= cert.expires_at {
        CertStatus::Expired
    } else if !scheme.verify(ca_pub, &cert.canonical_bytes(), cert.signature.as_slice()) {
        CertStatus::BadSignature
    } else {
        CertStatus::Ok
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CertError {
    #[error("{0} already holds a live certificate")]
    DuplicateSubject(String),
    #[error("{0} has no certificate from this CA")]
    UnknownSubject(String),
    #[error("no certificate stored for {0}")]
    NotFound(String),
    #[error("certificate for {subject} does not verify: {status:?}")]
    InvalidCert { subject: String, status: CertStatus },
    #[error("invalid request: {0}")]
    Invalid(&'static str),
}

impl CertError {
    pub fn code(&self) -> ErrorCode {
        match self {
            CertError::DuplicateSubject(_) => ErrorCode::DuplicateSubject,
            CertError::UnknownSubject(_) => ErrorCode::UnknownSubject,
            CertError::NotFound(_) => ErrorCode::NotFound,
            CertError::InvalidCert { .. } => ErrorCode::InvalidCert,
            CertError::Invalid(_) => ErrorCode::Invalid,
        }
    }
}

/// Issuing side of the PKI: hands out serials, signs, and keeps the CRL.
#[derive(Debug, Clone)]
pub struct CertificateAuthority {
    name: String,
    keypair: Keypair,
    next_serial: u64,
    current: BTreeMap<String, Certificate>,
    crl: Crl,
}

impl CertificateAuthority {
    pub fn new(name: impl Into<String>, keypair: Keypair) -> Self {
        Self {
            name: name.into(),
            keypair,
            next_serial: 1,
            current: BTreeMap::new(),
            crl: Crl::default(),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn scheme(&self) -> Scheme {
        self.keypair.scheme
    }

    pub fn public_key(&self) -> &Bytes {
        &self.keypair.public
    }

    pub fn crl(&self) -> &Crl {
        &self.crl
    }

    pub fn next_serial(&self) -> u64 {
        self.next_serial
    }

    /// Latest certificate issued to `subject`, revoked or not.
    pub fn current(&self, subject: &str) -> Option<&Certificate> {
        self.current.get(subject)
    }

    fn sign_new(
        &mut self,
        subject_name: String,
        kind: SubjectKind,
        public_key: Bytes,
        state_list: StateSet,
        policy_blob: Option<Bytes>,
        now: u64,
        validity_ticks: u64,
    ) -> Certificate {
        let serial = self.next_serial;
        self.next_serial += 1;
        let mut cert = Certificate {
            serial,
            subject_name,
            kind,
            public_key,
            state_list,
            policy_blob,
            issued_at: now,
            expires_at: now.saturating_add(validity_ticks),
            issuer: self.name.clone(),
            signature: Bytes::default(),
        };
        cert.signature = self.keypair.sign(&cert.canonical_bytes());
        self.current.insert(cert.subject_name.clone(), cert.clone());
        cert
    }

    pub fn issue(
        &mut self,
        subject_name: &str,
        kind: SubjectKind,
        public_key: Bytes,
        state_list: StateSet,
        now: u64,
        validity_ticks: u64,
    ) -> Result<Certificate, CertError> {
        if subject_name.is_empty() {
            return Err(CertError::Invalid("subject name must not be empty"));
        }
        if validity_ticks == 0 {
            return Err(CertError::Invalid("validity must be positive"));
        }
        if let Some(existing) = self.current.get(subject_name) {
            if !self.crl.contains(existing.serial) {
                return Err(CertError::DuplicateSubject(subject_name.into()));
            }
        }
        Ok(self.sign_new(
            subject_name.into(),
            kind,
            public_key,
            state_list,
            None,
            now,
            validity_ticks,
        ))
    }

    /// Replaces `old` with a certificate carrying `new_states`; the serial
    /// always rotates and the superseded one is revoked.
    pub fn reissue(
        &mut self,
        old: &Certificate,
        new_states: StateSet,
        now: u64,
        validity_ticks: u64,
    ) -> Result<(Certificate, Crl), CertError> {
        if validity_ticks == 0 {
            return Err(CertError::Invalid("validity must be positive"));
        }
        let unknown = || CertError::UnknownSubject(old.subject_name.clone());
        if old.issuer != self.name || old.serial >= self.next_serial {
            return Err(unknown());
        }
        let current = self.current.get(&old.subject_name).ok_or_else(unknown)?;
        let (kind, public_key, blob) = (
            current.kind,
            current.public_key.clone(),
            current.policy_blob.clone(),
        );
        self.crl.revoked_serials.insert(current.serial);
        self.crl.revoked_serials.insert(old.serial);
        self.crl.issued_at = now;
        let cert = self.sign_new(
            old.subject_name.clone(),
            kind,
            public_key,
            new_states,
            blob,
            now,
            validity_ticks,
        );
        Ok((cert, self.crl.clone()))
    }

    /// Revokes the subject's current certificate without replacing it.
    pub fn revoke(&mut self, subject: &str, now: u64) -> Result<Crl, CertError> {
        let current = self
            .current
            .get(subject)
            .ok_or_else(|| CertError::UnknownSubject(subject.into()))?;
        self.crl.revoked_serials.insert(current.serial);
        self.crl.issued_at = now;
        Ok(self.crl.clone())
    }
}

/// Publishing side of the PKI: latest certificate per subject plus the CRL.
#[derive(Debug, Clone)]
pub struct Repository {
    scheme: Scheme,
    ca_pub: Bytes,
    certs: BTreeMap<String, Certificate>,
    crl: Crl,
}

impl Repository {
    pub fn new(scheme: Scheme, ca_pub: Bytes) -> Self {
        Self {
            scheme,
            ca_pub,
            certs: BTreeMap::new(),
            crl: Crl::default(),
        }
    }

    /// Stores `cert` if it verifies now. A lower serial than the one already
    /// held is accepted but does not displace it.
    pub fn store_cert(&mut self, cert: Certificate, now: u64) -> Result<(), CertError> {
        let status = verify(&cert, self.scheme, self.ca_pub.as_slice(), now, &self.crl);
        if status != CertStatus::Ok {
            return Err(CertError::InvalidCert {
                subject: cert.subject_name,
                status,
            });
        }
        match self.certs.get(&cert.subject_name) {
            Some(held) if held.serial >= cert.serial => {}
            _ => {
                self.certs.insert(cert.subject_name.clone(), cert);
            }
        }
        Ok(())
    }

    pub fn get_cert(&self, subject: &str) -> Result<&Certificate, CertError> {
        self.certs
            .get(subject)
            .ok_or_else(|| CertError::NotFound(subject.into()))
    }

    pub fn get_crl(&self) -> &Crl {
        &self.crl
    }

    pub fn merge_crl(&mut self, crl: &Crl) {
        self.crl.merge(crl);
    }

    pub fn subjects(&self) -> impl Iterator<Item = (&str, &Certificate)> {
        self.certs.iter().map(|(k, v)| (k.as_str(), v))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signer::derive_seed;

    fn ca(scheme: Scheme) -> CertificateAuthority {
        CertificateAuthority::new("ca", scheme.generate(derive_seed(1, "ca")))
    }

    fn user_key(scheme: Scheme) -> Bytes {
        scheme.generate(derive_seed(1, "insp_rao")).public
    }

    #[test]
    fn issue_then_verify_ok() {
        for scheme in [Scheme::Ed25519, Scheme::Digest] {
            let mut ca = ca(scheme);
            let cert = ca
                .issue("insp_rao", SubjectKind::User, user_key(scheme), StateSet::of(&[1]), 0, 100)
                .unwrap();
            assert_eq!(cert.state_list, StateSet::of(&[1]));
            let status = verify(&cert, scheme, ca.public_key().as_slice(), 0, ca.crl());
            assert_eq!(status, CertStatus::Ok);
        }
    }

    #[test]
    fn node_cert_with_empty_states() {
        let mut ca = ca(Scheme::Ed25519);
        let cert = ca
            .issue("disc", SubjectKind::Discovery, user_key(Scheme::Ed25519), StateSet::empty(), 3, 10)
            .unwrap();
        assert_eq!(
            verify(&cert, Scheme::Ed25519, ca.public_key().as_slice(), 5, ca.crl()),
            CertStatus::Ok
        );
    }

    #[test]
    fn issue_rejects_bad_requests() {
        let mut ca = ca(Scheme::Digest);
        let key = user_key(Scheme::Digest);
        assert_eq!(
            ca.issue("", SubjectKind::User, key.clone(), StateSet::empty(), 0, 1).unwrap_err().code(),
            "E_INVALID"
        );
        assert!(ca.issue("u", SubjectKind::User, key.clone(), StateSet::empty(), 0, 0).is_err());
        ca.issue("u", SubjectKind::User, key.clone(), StateSet::empty(), 0, 5).unwrap();
        assert_eq!(
            ca.issue("u", SubjectKind::User, key.clone(), StateSet::empty(), 1, 5).unwrap_err().code(),
            "E_DUPLICATE_SUBJECT"
        );
        // After revocation the subject may register afresh.
        ca.revoke("u", 2).unwrap();
        assert!(ca.issue("u", SubjectKind::User, key, StateSet::empty(), 3, 5).is_ok());
    }

    #[test]
    fn verify_precedence() {
        let mut ca = ca(Scheme::Digest);
        let cert = ca
            .issue("u", SubjectKind::User, user_key(Scheme::Digest), StateSet::of(&[1]), 0, 10)
            .unwrap();
        let key = ca.public_key().clone();
        let mut crl = Crl::default();
        crl.revoked_serials.insert(cert.serial);
        assert_eq!(verify(&cert, Scheme::Digest, key.as_slice(), 10, &crl), CertStatus::Revoked);
        assert_eq!(
            verify(&cert, Scheme::Digest, key.as_slice(), 10, &Crl::default()),
            CertStatus::Expired
        );
        assert_eq!(
            verify(&cert, Scheme::Digest, key.as_slice(), 9, &Crl::default()),
            CertStatus::Ok
        );
        let mut forged = cert.clone();
        forged.state_list = StateSet::of(&[1, 2]);
        assert_eq!(
            verify(&forged, Scheme::Digest, key.as_slice(), 9, &Crl::default()),
            CertStatus::BadSignature
        );
    }

    #[test]
    fn reissue_rotates_and_revokes() {
        let mut ca = ca(Scheme::Ed25519);
        let key = ca.public_key().clone();
        let v1 = ca
            .issue("insp_rao", SubjectKind::User, user_key(Scheme::Ed25519), StateSet::of(&[1]), 0, 100)
            .unwrap();
        let (v2, crl) = ca.reissue(&v1, StateSet::of(&[2]), 5, 100).unwrap();
        assert!(v2.serial > v1.serial);
        assert_eq!(v2.state_list, StateSet::of(&[2]));
        assert_eq!(v2.public_key, v1.public_key);
        assert_eq!(verify(&v1, Scheme::Ed25519, key.as_slice(), 6, &crl), CertStatus::Revoked);
        assert_eq!(verify(&v2, Scheme::Ed25519, key.as_slice(), 6, &crl), CertStatus::Ok);

        let (v3, crl) = ca.reissue(&v2, StateSet::of(&[2]), 6, 100).unwrap();
        assert!(v3.serial > v2.serial);
        assert!(crl.contains(v2.serial));
    }

    #[test]
    fn reissue_unknown_subject() {
        let mut ca = ca(Scheme::Digest);
        let mut other = CertificateAuthority::new("other-ca", Scheme::Digest.generate([9; 32]));
        let foreign = other
            .issue("u", SubjectKind::User, user_key(Scheme::Digest), StateSet::empty(), 0, 10)
            .unwrap();
        assert_eq!(
            ca.reissue(&foreign, StateSet::empty(), 1, 10).unwrap_err().code(),
            "E_UNKNOWN_SUBJECT"
        );
        assert_eq!(ca.revoke("nobody", 1).unwrap_err().code(), "E_UNKNOWN_SUBJECT");
    }

    #[test]
    fn repository_serves_highest_serial() {
        let mut ca = ca(Scheme::Digest);
        let mut repo = Repository::new(Scheme::Digest, ca.public_key().clone());
        let v1 = ca
            .issue("u", SubjectKind::User, user_key(Scheme::Digest), StateSet::of(&[1]), 0, 100)
            .unwrap();
        repo.store_cert(v1.clone(), 0).unwrap();
        let (v2, crl) = ca.reissue(&v1, StateSet::of(&[2]), 1, 100).unwrap();
        repo.merge_crl(&crl);
        repo.store_cert(v2.clone(), 1).unwrap();
        assert_eq!(repo.get_cert("u").unwrap(), &v2);
        assert!(repo.get_crl().contains(v1.serial));
        assert_eq!(repo.get_cert("nobody").unwrap_err().code(), "E_NOT_FOUND");
        // Storing the revoked v1 again is refused.
        assert_eq!(repo.store_cert(v1, 2).unwrap_err().code(), "E_INVALID_CERT");
    }

    #[test]
    fn repository_rejects_forged() {
        let mut ca = ca(Scheme::Digest);
        let mut repo = Repository::new(Scheme::Digest, ca.public_key().clone());
        let mut cert = ca
            .issue("u", SubjectKind::User, user_key(Scheme::Digest), StateSet::of(&[1]), 0, 100)
            .unwrap();
        cert.state_list = StateSet::of(&[1, 3]);
        assert_eq!(repo.store_cert(cert, 0).unwrap_err().code(), "E_INVALID_CERT");
    }

    #[test]
    fn canonical_bytes_exclude_signature() {
        let mut ca = ca(Scheme::Digest);
        let cert = ca
            .issue("u", SubjectKind::User, user_key(Scheme::Digest), StateSet::of(&[1]), 0, 100)
            .unwrap();
        let mut resigned = cert.clone();
        resigned.signature = Bytes::from(&b"other"[..]);
        assert_eq!(cert.canonical_bytes(), resigned.canonical_bytes());
        let mut bumped = cert.clone();
        bumped.serial += 1;
        assert_ne!(cert.canonical_bytes(), bumped.canonical_bytes());
        let bytes = cert.canonical_bytes();
        let text = core::str::from_utf8(&bytes).unwrap();
        assert!(!text.contains("signature"));
        assert!(text.starts_with("{\"expires_at\":100,"));
    }

    #[test]
    fn crl_merge_is_monotone() {
        let mut a = Crl::default();
        a.revoked_serials.extend([1, 2]);
        a.issued_at = 5;
        let mut b = Crl::default();
        b.revoked_serials.insert(7);
        b.issued_at = 3;
        a.merge(&b);
        assert_eq!(a.revoked_serials.iter().copied().collect::<Vec<_>>(), [1, 2, 7]);
        assert_eq!(a.issued_at, 5);
    }
}
