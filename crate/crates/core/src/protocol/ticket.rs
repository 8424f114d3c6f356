use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use base64::engine::general_purpose::STANDARD;
use base64::Engine as _;
use serde::de::{self, Deserializer, Visitor};
use serde::{Deserialize, Serialize, Serializer};

use crate::canonical::{to_canonical_vec, Bytes};
use crate::signer::{Keypair, Scheme, SignerContract};

/// 128-bit session nonce, base64 on the wire.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct TicketId(pub [u8; 16]);

impl fmt::Debug for TicketId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "TicketId({self})")
    }
}

impl fmt::Display for TicketId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for b in self.0 {
            write!(f, "{b:02x}")?;
        }
        Ok(())
    }
}

impl Serialize for TicketId {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&STANDARD.encode(self.0))
    }
}

impl<'de> Deserialize<'de> for TicketId {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        struct IdVisitor;

        impl Visitor<'_> for IdVisitor {
            type Value = TicketId;

            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("16 base64-encoded bytes")
            }

            fn visit_str<E: de::Error>(self, v: &str) -> Result<TicketId, E> {
                let raw = STANDARD.decode(v).map_err(E::custom)?;
                let id = <[u8; 16]>::try_from(raw.as_slice())
                    .map_err(|_| E::custom("ticket id must be 16 bytes"))?;
                Ok(TicketId(id))
            }
        }

        deserializer.deserialize_str(IdVisitor)
    }
}

/// Discovery-signed session correlator. It ties the effective state pushed to
/// a service node to the user's later service request.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Ticket {
    pub ticket_id: TicketId,
    pub user: String,
    pub issued_at: u64,
    pub ttl_ticks: u64,
    pub discovery_signature: Bytes,
}

#[derive(Serialize)]
struct TicketBody<'a> {
    ticket_id: TicketId,
    user: &'a str,
    issued_at: u64,
    ttl_ticks: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TicketStatus {
    Ok,
    Expired,
    BadSignature,
}

impl Ticket {
    pub fn issue(
        discovery: &Keypair,
        ticket_id: TicketId,
        user: &str,
        issued_at: u64,
        ttl_ticks: u64,
    ) -> Self {
        let mut ticket = Ticket {
            ticket_id,
            user: user.into(),
            issued_at,
            ttl_ticks,
            discovery_signature: Bytes::default(),
        };
        ticket.discovery_signature = discovery.sign(&ticket.canonical_bytes());
        ticket
    }

    /// Canonical JSON of every field except the signature.
    pub fn canonical_bytes(&self) -> Vec<u8> {
        to_canonical_vec(&TicketBody {
            ticket_id: self.ticket_id,
            user: &self.user,
            issued_at: self.issued_at,
            ttl_ticks: self.ttl_ticks,
        })
        .expect("ticket fields always serialize")
    }

    pub fn expires_at(&self) -> u64 {
        self.issued_at.saturating_add(self.ttl_ticks)
    }
}

/// A bad signature outranks expiry.
pub fn validate_ticket(ticket: &Ticket, scheme: Scheme, discovery_pub: &[u8], now: u64) -> TicketStatus {
    if !scheme.verify(
        discovery_pub,
        &ticket.canonical_bytes(),
        ticket.discovery_signature.as_slice(),
    ) {
        TicketStatus::BadSignature
    } else if now >= ticket.expires_at() {
        TicketStatus::Expired
    } else {
        TicketStatus::Ok
    }
}
