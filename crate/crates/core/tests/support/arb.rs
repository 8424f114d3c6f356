//! Strategies for every wire type.

use cmms_core::canonical::Bytes;
use cmms_core::certs::{Certificate, Crl, SubjectKind};
use cmms_core::policy::{ServiceId, ServiceSet, StateSet};
use cmms_core::protocol::*;
use cmms_core::ErrorCode;
use proptest::prelude::*;
use proptest::strategy::BoxedStrategy;

pub fn text() -> BoxedStrategy<String> {
    // (?s) lets `.` produce LF, which must come out escaped.
    proptest::string::string_regex("(?s:.){0,12}").unwrap().boxed()
}

pub fn bytes() -> BoxedStrategy<Bytes> {
    proptest::collection::vec(any::<u8>(), 0..48).prop_map(Bytes).boxed()
}

pub fn states() -> BoxedStrategy<StateSet> {
    any::<u64>().prop_map(StateSet::from_bits).boxed()
}

pub fn services() -> BoxedStrategy<ServiceSet> {
    any::<u64>().prop_map(ServiceSet::from_bits).boxed()
}

pub fn service_id() -> BoxedStrategy<ServiceId> {
    (1u8..=64).prop_map(|i| ServiceId::new(i).unwrap()).boxed()
}

pub fn ticket() -> BoxedStrategy<Ticket> {
    (any::<[u8; 16]>(), text(), any::<u64>(), any::<u64>(), bytes())
        .prop_map(|(id, user, issued_at, ttl_ticks, sig)| Ticket {
            ticket_id: TicketId(id),
            user,
            issued_at,
            ttl_ticks,
            discovery_signature: sig,
        })
        .boxed()
}

pub fn cert() -> BoxedStrategy<Certificate> {
    (
        (any::<u64>(), text(), 0..3usize, bytes(), states()),
        (proptest::option::of(bytes()), any::<u64>(), any::<u64>(), text(), bytes()),
    )
        .prop_map(|((serial, subject_name, kind, public_key, state_list), (policy_blob, issued_at, expires_at, issuer, signature))| Certificate {
            serial,
            subject_name,
            kind: [SubjectKind::User, SubjectKind::Discovery, SubjectKind::Service][kind],
            public_key,
            state_list,
            policy_blob,
            issued_at,
            expires_at,
            issuer,
            signature,
        })
        .boxed()
}

pub fn crl() -> BoxedStrategy<Crl> {
    (proptest::collection::btree_set(any::<u64>(), 0..6), any::<u64>())
        .prop_map(|(revoked_serials, issued_at)| Crl {
            revoked_serials,
            issued_at,
        })
        .boxed()
}

pub fn register() -> BoxedStrategy<Register> {
    (text(), bytes())
        .prop_map(|(subject_name, public_key)| Register { subject_name, public_key })
        .boxed()
}

pub fn subject_states() -> BoxedStrategy<SubjectStates> {
    (text(), states())
        .prop_map(|(subject_name, states)| SubjectStates { subject_name, states })
        .boxed()
}

pub fn message(t: MsgType) -> BoxedStrategy<Message> {
    use MsgType as T;
    match t {
        T::RegUser => register().prop_map(Message::RegUser).boxed(),
        T::RegDisc => register().prop_map(Message::RegDisc).boxed(),
        T::RegServ => register().prop_map(Message::RegServ).boxed(),
        T::RegAck => cert().prop_map(|cert| Message::RegAck(RegAck { cert })).boxed(),
        T::GetCert => text().prop_map(|subject_name| Message::GetCert(GetCert { subject_name })).boxed(),
        T::CertResponse => (cert(), crl())
            .prop_map(|(cert, crl)| Message::CertResponse(CertResponse { cert, crl }))
            .boxed(),
        T::GetNode => (text(), any::<u64>(), any::<u64>(), bytes())
            .prop_map(|(user, cert_serial, timestamp, user_signature)| {
                Message::GetNode(GetNode { user, cert_serial, timestamp, user_signature })
            })
            .boxed(),
        T::SendNode => (text(), ticket())
            .prop_map(|(service_node_addr, ticket)| Message::SendNode(SendNode { service_node_addr, ticket }))
            .boxed(),
        T::SendEffState => (text(), states(), ticket())
            .prop_map(|(user, effective_states, ticket)| {
                Message::SendEffState(SendEffState { user, effective_states, ticket })
            })
            .boxed(),
        T::ServReq => (text(), ticket(), any::<u64>())
            .prop_map(|(user, ticket, cert_serial)| Message::ServReq(ServReq { user, ticket, cert_serial }))
            .boxed(),
        T::ServiceList => (services(), ticket())
            .prop_map(|(services, ticket)| Message::ServiceList(ServiceList { services, ticket }))
            .boxed(),
        T::ServiceInvoke => (service_id(), ticket())
            .prop_map(|(service_id, ticket)| Message::ServiceInvoke(ServiceInvoke { service_id, ticket }))
            .boxed(),
        T::ServiceResult => (service_id(), bytes())
            .prop_map(|(service_id, body)| Message::ServiceResult(ServiceResult { service_id, body }))
            .boxed(),
        T::ForwardReq => (ticket(), states(), text(), bytes(), service_id())
            .prop_map(|(ticket, effective_states, origin_node, origin_signature, service_id)| {
                Message::ForwardReq(ForwardReq {
                    ticket,
                    effective_states,
                    origin_node,
                    origin_signature,
                    service_id,
                })
            })
            .boxed(),
        T::StateChange => (text(), states())
            .prop_map(|(user, new_states)| Message::StateChange(StateChange { user, new_states }))
            .boxed(),
        T::StoreCert => (cert(), crl())
            .prop_map(|(cert, crl)| Message::StoreCert(StoreCert { cert, crl }))
            .boxed(),
        T::NodeStatus => any::<bool>().prop_map(|free| Message::NodeStatus(NodeStatus { free })).boxed(),
        T::Error => (0..ErrorCode::ALL.len(), text())
            .prop_map(|(i, detail)| Message::Error(ErrorReply { code: ErrorCode::ALL[i], detail }))
            .boxed(),
        T::StateQuery => text()
            .prop_map(|subject_name| Message::StateQuery(StateQuery { subject_name }))
            .boxed(),
        T::StateReply => subject_states().prop_map(Message::StateReply).boxed(),
        T::SeedStates => subject_states().prop_map(Message::SeedStates).boxed(),
        T::SetStates => subject_states().prop_map(Message::SetStates).boxed(),
        T::Revoke => text().prop_map(|subject_name| Message::Revoke(Revoke { subject_name })).boxed(),
        T::CrlUpdate => crl().prop_map(|crl| Message::CrlUpdate(CrlUpdate { crl })).boxed(),
        T::Ack => Just(Message::Ack(Ack {})).boxed(),
        T::CmdRegister => text().prop_map(|ca_addr| Message::CmdRegister(CmdRegister { ca_addr })).boxed(),
        T::CmdAccess => (text(), proptest::option::of(service_id()))
            .prop_map(|(discovery_addr, invoke)| Message::CmdAccess(CmdAccess { discovery_addr, invoke }))
            .boxed(),
        T::CmdInvoke => service_id().prop_map(|service_id| Message::CmdInvoke(CmdInvoke { service_id })).boxed(),
    }
}

pub fn envelope(t: MsgType) -> BoxedStrategy<Envelope> {
    (any::<u64>(), proptest::option::of(any::<u64>()), text(), text(), any::<u64>(), message(t))
        .prop_map(|(msg_id, correlation_id, sender, recipient, sent_at, message)| Envelope {
            version: PROTOCOL_VERSION,
            msg_id,
            correlation_id,
            sender,
            recipient,
            sent_at,
            message,
        })
        .boxed()
}

/// An envelope of a uniformly chosen type.
pub fn any_envelope() -> BoxedStrategy<Envelope> {
    (0..MsgType::ALL.len()).prop_flat_map(|i| envelope(MsgType::ALL[i])).boxed()
}
