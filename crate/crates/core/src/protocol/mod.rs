//! Message vocabulary and wire encoding.
//!
//! Every message travels in an [`Envelope`]: one line of canonical JSON
//! terminated by LF. The same encoding is used by the in-memory simulator,
//! trace files, and the TCP transport.

mod messages;
mod ticket;

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use serde::Serialize;
use serde_json::{Map, Value};
use thiserror::Error;

pub use messages::*;
pub use ticket::{validate_ticket, Ticket, TicketId, TicketStatus};

use crate::canonical::to_canonical_vec;
use crate::policy::{ServiceId, StateSet};
use crate::ErrorCode;

pub const PROTOCOL_VERSION: u64 = 1;

macro_rules! catalog {
    ($($variant:ident($tag:literal, $payload:ty)),* $(,)?) => {
        /// Message type tag.
        #[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
        pub enum MsgType {
            $($variant,)*
        }

        impl MsgType {
            pub const ALL: &'static [MsgType] = &[$(MsgType::$variant,)*];

            pub const fn as_str(self) -> &'static str {
                match self {
                    $(MsgType::$variant => $tag,)*
                }
            }

            pub fn parse(tag: &str) -> Option<Self> {
                match tag {
                    $($tag => Some(MsgType::$variant),)*
                    _ => None,
                }
            }
        }

        /// A typed message; the variant fixes the payload schema.
        #[derive(Debug, Clone, PartialEq, Eq)]
        pub enum Message {
            $($variant($payload),)*
        }

        impl Message {
            pub fn msg_type(&self) -> MsgType {
                match self {
                    $(Message::$variant(_) => MsgType::$variant,)*
                }
            }

            pub fn payload_value(&self) -> Value {
                match self {
                    $(Message::$variant(p) => to_value(p),)*
                }
            }

            pub fn from_parts(msg_type: MsgType, payload: Value) -> Result<Self, serde_json::Error> {
                Ok(match msg_type {
                    $(MsgType::$variant => Message::$variant(serde_json::from_value(payload)?),)*
                })
            }
        }
    };
}

catalog! {
    RegUser("REG_USER", Register),
    RegDisc("REG_DISC", Register),
    RegServ("REG_SERV", Register),
    RegAck("REG_ACK", RegAck),
    GetCert("GET_CERT", GetCert),
    CertResponse("CERT_RESPONSE", CertResponse),
    GetNode("GET_NODE", GetNode),
    SendNode("SEND_NODE", SendNode),
    SendEffState("SEND_EFF_STATE", SendEffState),
    ServReq("SERV_REQ", ServReq),
    ServiceList("SERVICE_LIST", ServiceList),
    ServiceInvoke("SERVICE_INVOKE", ServiceInvoke),
    ServiceResult("SERVICE_RESULT", ServiceResult),
    ForwardReq("FORWARD_REQ", ForwardReq),
    StateChange("STATE_CHANGE", StateChange),
    StoreCert("STORE_CERT", StoreCert),
    NodeStatus("NODE_STATUS", NodeStatus),
    Error("ERROR", ErrorReply),
    StateQuery("STATE_QUERY", StateQuery),
    StateReply("STATE_REPLY", SubjectStates),
    SeedStates("SEED_STATES", SubjectStates),
    SetStates("SET_STATES", SubjectStates),
    Revoke("REVOKE", Revoke),
    CrlUpdate("CRL_UPDATE", CrlUpdate),
    Ack("ACK", Ack),
    CmdRegister("CMD_REGISTER", CmdRegister),
    CmdAccess("CMD_ACCESS", CmdAccess),
    CmdInvoke("CMD_INVOKE", CmdInvoke),
}

fn to_value<T: Serialize>(payload: &T) -> Value {
    serde_json::to_value(payload).expect("payload records always serialize")
}

impl MsgType {
    /// The success reply for a request type; `None` for replies and
    /// one-way notifications. Any request may instead be answered by ERROR.
    pub const fn success_reply(self) -> Option<MsgType> {
        use MsgType::*;
        match self {
            RegUser | RegDisc | RegServ => Some(RegAck),
            GetCert => Some(CertResponse),
            GetNode => Some(SendNode),
            ServReq => Some(ServiceList),
            ServiceInvoke | ForwardReq => Some(ServiceResult),
            StateQuery => Some(StateReply),
            StateChange | SeedStates | SetStates | Revoke => Some(Ack),
            _ => None,
        }
    }
}

impl fmt::Display for MsgType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Envelope {
    pub version: u64,
    pub msg_id: u64,
    pub correlation_id: Option<u64>,
    pub sender: String,
    pub recipient: String,
    /// Sender's logical clock when the envelope was emitted.
    pub sent_at: u64,
    pub message: Message,
}

impl Envelope {
    pub fn msg_type(&self) -> MsgType {
        self.message.msg_type()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{code}: {detail}")]
pub struct CodecError {
    pub code: ErrorCode,
    pub detail: String,
}

impl CodecError {
    fn schema(detail: impl Into<String>) -> Self {
        CodecError {
            code: ErrorCode::Schema,
            detail: detail.into(),
        }
    }
}

const ENVELOPE_FIELDS: [&str; 8] = [
    "correlation_id",
    "msg_id",
    "msg_type",
    "payload",
    "recipient",
    "sender",
    "sent_at",
    "version",
];

fn envelope_value(env: &Envelope) -> Value {
    let mut map = Map::new();
    map.insert("version".into(), env.version.into());
    map.insert("msg_id".into(), env.msg_id.into());
    map.insert(
        "correlation_id".into(),
        env.correlation_id.map_or(Value::Null, Value::from),
    );
    map.insert("sender".into(), env.sender.clone().into());
    map.insert("recipient".into(), env.recipient.clone().into());
    map.insert("sent_at".into(), env.sent_at.into());
    map.insert("msg_type".into(), env.msg_type().as_str().into());
    map.insert("payload".into(), env.message.payload_value());
    Value::Object(map)
}

/// One LF-terminated line of canonical JSON.
pub fn encode_envelope(env: &Envelope) -> Vec<u8> {
    let mut out = to_canonical_vec(&envelope_value(env)).expect("envelopes always serialize");
    out.push(b'\n');
    out
}

/// Decodes one envelope line; a single trailing LF is allowed.
pub fn decode_envelope(bytes: &[u8]) -> Result<Envelope, CodecError> {
    let line = bytes.strip_suffix(b"\n").unwrap_or(bytes);
    if line.contains(&b'\n') {
        return Err(CodecError::schema("envelope spans more than one line"));
    }
    let value: Value =
        serde_json::from_slice(line).map_err(|e| CodecError::schema(e.to_string()))?;
    Envelope::from_value(value)
}

impl Envelope {
    /// The envelope as a JSON object, exactly as it appears on the wire.
    pub fn to_value(&self) -> Value {
        envelope_value(self)
    }

    /// Strict inverse of [`Envelope::to_value`].
    pub fn from_value(value: Value) -> Result<Envelope, CodecError> {
        decode_value(value)
    }
}

impl Serialize for Envelope {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        envelope_value(self).serialize(serializer)
    }
}

impl<'de> serde::Deserialize<'de> for Envelope {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let value = Value::deserialize(deserializer)?;
        Envelope::from_value(value).map_err(serde::de::Error::custom)
    }
}

fn decode_value(value: Value) -> Result<Envelope, CodecError> {
    let Value::Object(mut map) = value else {
        return Err(CodecError::schema("envelope is not a JSON object"));
    };
    if let Some(extra) = map.keys().find(|k| !ENVELOPE_FIELDS.contains(&k.as_str())) {
        return Err(CodecError::schema(format!("unexpected field {extra:?}")));
    }
    let mut take = |name: &str| {
        map.remove(name)
            .ok_or_else(|| CodecError::schema(format!("missing field {name:?}")))
    };
    let version = take("version")?
        .as_u64()
        .ok_or_else(|| CodecError::schema("version must be an unsigned integer"))?;
    if version != PROTOCOL_VERSION {
        return Err(CodecError {
            code: ErrorCode::Version,
            detail: format!("unsupported protocol version {version}"),
        });
    }
    let uint = |v: Value, name: &str| {
        v.as_u64()
            .ok_or_else(|| CodecError::schema(format!("{name} must be an unsigned integer")))
    };
    let text = |v: Value, name: &str| match v {
        Value::String(s) => Ok(s),
        _ => Err(CodecError::schema(format!("{name} must be a string"))),
    };
    let msg_id = uint(take("msg_id")?, "msg_id")?;
    let correlation_id = match take("correlation_id")? {
        Value::Null => None,
        v => Some(uint(v, "correlation_id")?),
    };
    let sender = text(take("sender")?, "sender")?;
    let recipient = text(take("recipient")?, "recipient")?;
    let sent_at = uint(take("sent_at")?, "sent_at")?;
    let tag = text(take("msg_type")?, "msg_type")?;
    let payload = take("payload")?;
    let msg_type = MsgType::parse(&tag).ok_or_else(|| CodecError {
        code: ErrorCode::UnknownType,
        detail: format!("unknown message type {tag:?}"),
    })?;
    let message = Message::from_parts(msg_type, payload)
        .map_err(|e| CodecError::schema(format!("{tag} payload: {e}")))?;
    Ok(Envelope {
        version,
        msg_id,
        correlation_id,
        sender,
        recipient,
        sent_at,
        message,
    })
}

#[derive(Serialize)]
struct AuthProof<'a> {
    recipient: &'a str,
    timestamp: u64,
    user: &'a str,
}

/// Bytes a user signs in GET_NODE to prove key possession to `recipient`.
pub fn auth_proof_bytes(user: &str, timestamp: u64, recipient: &str) -> Vec<u8> {
    to_canonical_vec(&AuthProof {
        recipient,
        timestamp,
        user,
    })
    .expect("proof fields always serialize")
}

#[derive(Serialize)]
struct ForwardProof<'a> {
    effective_states: StateSet,
    origin_node: &'a str,
    service_id: ServiceId,
    ticket: &'a Ticket,
}

/// Bytes a forwarding service node signs in FORWARD_REQ.
pub fn forward_proof_bytes(
    ticket: &Ticket,
    effective_states: StateSet,
    origin_node: &str,
    service_id: ServiceId,
) -> Vec<u8> {
    to_canonical_vec(&ForwardProof {
        effective_states,
        origin_node,
        service_id,
        ticket,
    })
    .expect("proof fields always serialize")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ack_env() -> Envelope {
        Envelope {
            version: 1,
            msg_id: 3,
            correlation_id: Some(2),
            sender: "monitor".into(),
            recipient: "admin".into(),
            sent_at: 9,
            message: Message::Ack(Ack {}),
        }
    }

    #[test]
    fn ack_encoding_is_canonical() {
        let bytes = encode_envelope(&ack_env());
        assert_eq!(
            core::str::from_utf8(&bytes).unwrap(),
            "{\"correlation_id\":2,\"msg_id\":3,\"msg_type\":\"ACK\",\"payload\":{},\"recipient\":\"admin\",\"sender\":\"monitor\",\"sent_at\":9,\"version\":1}\n"
        );
        assert_eq!(decode_envelope(&bytes).unwrap(), ack_env());
    }

    #[test]
    fn decode_error_codes() {
        let good = String::from_utf8(encode_envelope(&ack_env())).unwrap();
        let truncated = &good[..good.len() - 10];
        assert_eq!(decode_envelope(truncated.as_bytes()).unwrap_err().code, ErrorCode::Schema);
        let unknown = good.replace("\"ACK\"", "\"NOPE\"");
        assert_eq!(decode_envelope(unknown.as_bytes()).unwrap_err().code, ErrorCode::UnknownType);
        let version = good.replace("\"version\":1", "\"version\":2");
        assert_eq!(decode_envelope(version.as_bytes()).unwrap_err().code, ErrorCode::Version);
        let extra = good.replace("\"payload\":{}", "\"payload\":{},\"x\":1");
        assert_eq!(decode_envelope(extra.as_bytes()).unwrap_err().code, ErrorCode::Schema);
        let extra_payload = good.replace("\"payload\":{}", "\"payload\":{\"x\":1}");
        assert_eq!(
            decode_envelope(extra_payload.as_bytes()).unwrap_err().code,
            ErrorCode::Schema
        );
        let missing = good.replace("\"sent_at\":9,", "");
        assert_eq!(decode_envelope(missing.as_bytes()).unwrap_err().code, ErrorCode::Schema);
        let badtype = good.replace("\"msg_id\":3", "\"msg_id\":\"3\"");
        assert_eq!(decode_envelope(badtype.as_bytes()).unwrap_err().code, ErrorCode::Schema);
        assert_eq!(decode_envelope(b"[]").unwrap_err().code, ErrorCode::Schema);
        let two_lines = alloc::format!("{good}{good}");
        assert_eq!(decode_envelope(two_lines.as_bytes()).unwrap_err().code, ErrorCode::Schema);
    }

    #[test]
    fn tags_round_trip() {
        for t in MsgType::ALL {
            assert_eq!(MsgType::parse(t.as_str()), Some(*t));
        }
        assert_eq!(MsgType::ALL.len(), 28);
    }

    #[test]
    fn requests_have_replies() {
        use MsgType::*;
        for req in [RegUser, RegDisc, RegServ, GetCert, GetNode, ServReq, ServiceInvoke, ForwardReq, StateQuery, StateChange, SeedStates, SetStates, Revoke] {
            let reply = req.success_reply().unwrap();
            assert!(reply.success_reply().is_none(), "{req} reply {reply} is itself a request");
        }
        assert_eq!(ServReq.success_reply(), Some(ServiceList));
        assert_eq!(SendEffState.success_reply(), None);
    }

    #[test]
    fn proofs_bind_every_field() {
        let a = auth_proof_bytes("u", 5, "disc");
        assert_ne!(a, auth_proof_bytes("u", 6, "disc"));
        assert_ne!(a, auth_proof_bytes("u", 5, "disc2"));
        assert_ne!(a, auth_proof_bytes("v", 5, "disc"));
    }
}
