//! Connectors and the exchange that carries frames between them.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::sync::{Arc, Mutex, MutexGuard, OnceLock, RwLock, Weak};

use super::audit::{AuditAction, AuditEvent, AuditLog};
use super::wire::SovMessage;
use super::{contract_provider, ContractState, MaxReads, SovError, UsageContract, UsagePolicy};
use crate::archive::{Archive, DataObject, ObjectIndex};
use crate::identity::InstanceId;
use crate::orders::transport::{FrameHandler, TransportError, WireTap};
use crate::orders::{decode_frame, encode_frame, Channel, Frame};
use crate::time::LogicalClock;

/// Routes SOVEREIGN frames between attached connectors. Only connectors on
/// the certification allowlist may send or receive.
pub struct Exchange {
    allowlist: BTreeSet<InstanceId>,
    connectors: RwLock<BTreeMap<InstanceId, Arc<Connector>>>,
    tap: WireTap,
}

impl Exchange {
    pub fn new(allowlist: impl IntoIterator<Item = InstanceId>, tap: WireTap) -> Arc<Self> {
        Arc::new(Self {
            allowlist: allowlist.into_iter().collect(),
            connectors: RwLock::new(BTreeMap::new()),
            tap,
        })
    }

    pub fn is_certified(&self, id: &InstanceId) -> bool {
        self.allowlist.contains(id)
    }

    pub fn attach(self: &Arc<Self>, connector: &Arc<Connector>) {
        let _ = connector.exchange.set(Arc::downgrade(self));
        self.connectors
            .write()
            .unwrap()
            .insert(connector.id.clone(), connector.clone());
    }

    pub fn tap(&self) -> &WireTap {
        &self.tap
    }

    fn route(&self, msg: SovMessage) -> SovMessage {
        for party in [msg.from(), msg.to()] {
            if !self.is_certified(party) {
                return SovMessage::refusal(&msg, &SovError::Uncertified(party.to_string()));
            }
        }
        let target = self.connectors.read().unwrap().get(msg.to()).cloned();
        match target {
            Some(c) => c.handle(msg),
            None => SovMessage::refusal(&msg, &SovError::Protocol(format!("no connector {}", msg.to()))),
        }
    }

    /// Encode, tap, decode and route one message; the reply takes the same path.
    pub fn deliver(&self, msg: &SovMessage) -> Result<SovMessage, SovError> {
        let payload = msg.to_payload();
        let bytes = encode_frame(Channel::Sovereign, &payload)?;
        self.tap.record(Channel::Sovereign, payload.len());
        let reply = self
            .handle(decode_frame(&bytes)?)
            .map_err(|e| SovError::Protocol(e.to_string()))?;
        let reply_bytes = reply.encode()?;
        self.tap.record(Channel::Sovereign, reply.payload.len());
        SovMessage::from_payload(&decode_frame(&reply_bytes)?.payload)
    }
}

impl FrameHandler for Exchange {
    fn handle(&self, frame: Frame) -> Result<Frame, TransportError> {
        if frame.channel != Channel::Sovereign {
            return Err(TransportError::NoHandler(frame.channel));
        }
        let msg = SovMessage::from_payload(&frame.payload).map_err(|e| TransportError::Reply(e.to_string()))?;
        Ok(Frame::new(Channel::Sovereign, self.route(msg).to_payload()))
    }
}

#[derive(Default)]
struct State {
    provided: BTreeMap<String, UsageContract>,
    received: BTreeMap<String, UsageContract>,
    cache: BTreeMap<String, DataObject>,
    next_contract: u64,
    audit: AuditLog,
}

/// One company's certified endpoint. It provides objects from its archive
/// and consumes objects offered by others.
pub struct Connector {
    id: InstanceId,
    clock: LogicalClock,
    archive: Option<Arc<Archive>>,
    exchange: OnceLock<Weak<Exchange>>,
    state: Mutex<State>,
}

fn terminal_for(err: &SovError) -> Option<ContractState> {
    match err {
        SovError::PolicyExhausted(_) => Some(ContractState::Exhausted),
        SovError::PolicyExpired(_) => Some(ContractState::Expired),
        SovError::Revoked(_) => Some(ContractState::Revoked),
        _ => None,
    }
}

fn refused(reply: SovMessage) -> Result<SovMessage, SovError> {
    match reply {
        SovMessage::Deny {
            code, subject, message, ..
        }
        | SovMessage::Error {
            code, subject, message, ..
        } => Err(SovError::from_remote(&code, &subject, &message)),
        other => Ok(other),
    }
}

fn unexpected(msg: &SovMessage) -> SovError {
    SovError::Protocol(format!("unexpected reply opcode 0x{:02X}", msg.opcode()))
}

impl State {
    fn log(
        &mut self,
        clock: &LogicalClock,
        contract_id: &str,
        action: AuditAction,
        detail: String,
    ) -> Result<(), SovError> {
        self.audit.append(AuditEvent {
            at: clock.now(),
            contract_id: contract_id.to_owned(),
            action,
            detail,
        })?;
        Ok(())
    }

    fn erase(&mut self, clock: &LogicalClock, contract_id: &str) -> Result<(), SovError> {
        if self.cache.remove(contract_id).is_some() {
            self.log(clock, contract_id, AuditAction::Delete, "cache erased".into())?;
        }
        Ok(())
    }
}

impl Connector {
    pub fn new(
        id: InstanceId,
        clock: LogicalClock,
        archive: Option<Arc<Archive>>,
        audit_dir: Option<&Path>,
    ) -> Result<Arc<Self>, SovError> {
        let audit = match audit_dir {
            Some(dir) => AuditLog::open(dir, &id)?,
            None => AuditLog::in_memory(),
        };
        Ok(Arc::new(Self {
            id,
            clock,
            archive,
            exchange: OnceLock::new(),
            state: Mutex::new(State {
                audit,
                ..State::default()
            }),
        }))
    }

    pub fn id(&self) -> &InstanceId {
        &self.id
    }

    fn lock(&self) -> MutexGuard<'_, State> {
        self.state.lock().unwrap()
    }

    fn send(&self, msg: SovMessage) -> Result<SovMessage, SovError> {
        let ex = self
            .exchange
            .get()
            .and_then(Weak::upgrade)
            .ok_or_else(|| SovError::Protocol(format!("connector {} is not attached", self.id)))?;
        ex.deliver(&msg)
    }

    fn new_contract(
        &self,
        st: &mut State,
        consumer: &InstanceId,
        uid: &str,
        policy: UsagePolicy,
        parent: Option<String>,
    ) -> Result<UsageContract, SovError> {
        st.next_contract += 1;
        let c = UsageContract {
            contract_id: format!("{}#{}", self.id, st.next_contract),
            provider: self.id.clone(),
            consumer: consumer.clone(),
            object_uid: uid.to_owned(),
            policy,
            state: ContractState::Offered,
            reads_done: 0,
            parent,
        };
        let json = serde_json::to_string(&c).expect("contract serializes");
        st.log(&self.clock, &c.contract_id, AuditAction::Offer, json)?;
        st.provided.insert(c.contract_id.clone(), c.clone());
        Ok(c)
    }

    /// Deliver a fresh contract; if the consumer cannot be reached it is
    /// withdrawn again.
    fn deliver_contract(&self, contract: UsageContract, forward: bool) -> Result<String, SovError> {
        let (from, to) = (self.id.clone(), contract.consumer.clone());
        let cid = contract.contract_id.clone();
        let msg = if forward {
            SovMessage::Forward { from, to, contract }
        } else {
            SovMessage::Offer { from, to, contract }
        };
        match self.send(msg).and_then(refused) {
            Ok(SovMessage::Offer { .. } | SovMessage::Forward { .. }) => Ok(cid),
            other => {
                let err = match other {
                    Err(e) => e,
                    Ok(m) => unexpected(&m),
                };
                let mut st = self.lock();
                if let Some(c) = st.provided.get_mut(&cid) {
                    c.state = ContractState::Revoked;
                }
                st.log(
                    &self.clock,
                    &cid,
                    AuditAction::Revoke,
                    format!("undeliverable {}", err.code()),
                )?;
                Err(err)
            }
        }
    }

    pub fn offer(&self, consumer: &InstanceId, object_uid: &str, policy: UsagePolicy) -> Result<String, SovError> {
        policy.validate(self.clock.now())?;
        let known = self.archive.as_ref().is_some_and(|a| a.contains(object_uid));
        if !known {
            return Err(SovError::UnknownUid(object_uid.to_owned()));
        }
        if consumer == &self.id {
            return Err(SovError::InvalidPolicy(
                "a connector cannot contract with itself".into(),
            ));
        }
        let contract = {
            let mut st = self.lock();
            self.new_contract(&mut st, consumer, object_uid, policy, None)?
        };
        self.deliver_contract(contract, false)
    }

    pub fn accept(&self, contract_id: &str) -> Result<(), SovError> {
        let provider =
            contract_provider(contract_id).ok_or_else(|| SovError::UnknownContract(contract_id.to_owned()))?;
        let reply = self.send(SovMessage::Accept {
            from: self.id.clone(),
            to: provider,
            contract_id: contract_id.to_owned(),
            contract: None,
        })?;
        match refused(reply)? {
            SovMessage::Accept { contract: Some(c), .. } => {
                let mut st = self.lock();
                st.log(&self.clock, contract_id, AuditAction::Accept, "state=ACTIVE".into())?;
                st.received.insert(contract_id.to_owned(), c);
                Ok(())
            }
            other => Err(unexpected(&other)),
        }
    }

    /// Read the object under a contract.
    pub fn consume(&self, contract_id: &str) -> Result<DataObject, SovError> {
        let provider = {
            let mut st = self.lock();
            let now = self.clock.now();
            match st.received.get(contract_id).cloned() {
                Some(mirror) => {
                    let mut state = mirror.state;
                    if state == ContractState::Active && mirror.is_expired_at(now) {
                        state = ContractState::Expired;
                        st.received.get_mut(contract_id).unwrap().state = state;
                        st.log(&self.clock, contract_id, AuditAction::Expire, "state=EXPIRED".into())?;
                        st.erase(&self.clock, contract_id)?;
                    }
                    let err = match state {
                        ContractState::Active => None,
                        ContractState::Exhausted => Some(SovError::PolicyExhausted(contract_id.to_owned())),
                        ContractState::Expired => Some(SovError::PolicyExpired(contract_id.to_owned())),
                        ContractState::Revoked => Some(SovError::Revoked(contract_id.to_owned())),
                        s => Some(SovError::WrongState {
                            contract_id: contract_id.to_owned(),
                            state: s.to_string(),
                        }),
                    };
                    if let Some(err) = err {
                        st.log(&self.clock, contract_id, AuditAction::Deny, err.code().to_owned())?;
                        return Err(err);
                    }
                    mirror.provider
                }
                None => {
                    contract_provider(contract_id).ok_or_else(|| SovError::UnknownContract(contract_id.to_owned()))?
                }
            }
        };
        let reply = self.send(SovMessage::Consume {
            from: self.id.clone(),
            to: provider,
            contract_id: contract_id.to_owned(),
        })?;
        let mut st = self.lock();
        let tracked = st.received.contains_key(contract_id);
        match refused(reply) {
            Ok(SovMessage::Data {
                reads_done,
                state,
                object,
                ..
            }) => {
                if tracked {
                    let m = st.received.get_mut(contract_id).unwrap();
                    m.reads_done = m.reads_done.max(reads_done);
                    if !m.state.is_terminal() {
                        m.state = state;
                    }
                    st.log(
                        &self.clock,
                        contract_id,
                        AuditAction::Read,
                        format!("reads_done={reads_done} state={state}"),
                    )?;
                    st.cache.insert(contract_id.to_owned(), object.clone());
                    if state.is_terminal() {
                        st.erase(&self.clock, contract_id)?;
                    }
                }
                Ok(object)
            }
            Ok(other) => Err(unexpected(&other)),
            Err(err) => {
                if tracked {
                    if let Some(t) = terminal_for(&err) {
                        let m = st.received.get_mut(contract_id).unwrap();
                        if !m.state.is_terminal() {
                            m.state = t;
                        }
                        st.erase(&self.clock, contract_id)?;
                    }
                    let detail = match terminal_for(&err) {
                        Some(t) => format!("{} state={t}", err.code()),
                        None => err.code().to_owned(),
                    };
                    st.log(&self.clock, contract_id, AuditAction::Deny, detail)?;
                }
                Err(err)
            }
        }
    }

    /// Pass a received object on to a third party under a derived contract
    /// that can never grant more than this one still does.
    pub fn forward(
        &self,
        contract_id: &str,
        third_party: &InstanceId,
        requested: UsagePolicy,
    ) -> Result<String, SovError> {
        requested.validate(self.clock.now())?;
        let contract = {
            let mut st = self.lock();
            let now = self.clock.now();
            let m = st
                .received
                .get(contract_id)
                .cloned()
                .ok_or_else(|| SovError::UnknownContract(contract_id.to_owned()))?;
            if m.state != ContractState::Active || m.is_expired_at(now) {
                return Err(SovError::WrongState {
                    contract_id: contract_id.to_owned(),
                    state: m.state.to_string(),
                });
            }
            if !m.policy.allow_forward {
                st.log(
                    &self.clock,
                    contract_id,
                    AuditAction::Deny,
                    format!("ForwardProhibited to={third_party}"),
                )?;
                return Err(SovError::ForwardProhibited(contract_id.to_owned()));
            }
            if third_party == &self.id {
                return Err(SovError::InvalidPolicy(
                    "a connector cannot contract with itself".into(),
                ));
            }
            let policy = requested.clamp_to(&m.policy, m.reads_done);
            if policy.max_reads == MaxReads::Bounded(0) {
                return Err(SovError::PolicyExhausted(contract_id.to_owned()));
            }
            self.new_contract(
                &mut st,
                third_party,
                &m.object_uid,
                policy,
                Some(contract_id.to_owned()),
            )?
        };
        self.deliver_contract(contract, true)
    }

    pub fn revoke(&self, contract_id: &str) -> Result<(), SovError> {
        let mut st = self.lock();
        let c = st
            .provided
            .get_mut(contract_id)
            .ok_or_else(|| SovError::UnknownContract(contract_id.to_owned()))?;
        if c.state.is_terminal() {
            return Err(SovError::WrongState {
                contract_id: contract_id.to_owned(),
                state: c.state.to_string(),
            });
        }
        c.state = ContractState::Revoked;
        st.log(&self.clock, contract_id, AuditAction::Revoke, "state=REVOKED".into())
    }

    /// Every contract this connector provides or holds.
    pub fn contracts(&self) -> BTreeMap<String, UsageContract> {
        let st = self.lock();
        st.provided
            .iter()
            .chain(st.received.iter())
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect()
    }

    pub fn contract(&self, contract_id: &str) -> Option<UsageContract> {
        let st = self.lock();
        st.provided
            .get(contract_id)
            .or_else(|| st.received.get(contract_id))
            .cloned()
    }

    pub fn is_cached(&self, contract_id: &str) -> bool {
        self.lock().cache.contains_key(contract_id)
    }

    pub fn cache_len(&self) -> usize {
        self.lock().cache.len()
    }

    pub fn audit(&self) -> Vec<AuditEvent> {
        self.lock().audit.events().to_vec()
    }

    pub fn audit_path(&self) -> Option<std::path::PathBuf> {
        self.lock().audit.path().map(Path::to_path_buf)
    }

    fn handle(&self, msg: SovMessage) -> SovMessage {
        let result = match &msg {
            SovMessage::Offer { from, contract, .. } | SovMessage::Forward { from, contract, .. } => {
                self.on_offer(from, contract).map(|()| match &msg {
                    SovMessage::Offer { .. } => SovMessage::Offer {
                        from: self.id.clone(),
                        to: from.clone(),
                        contract: contract.clone(),
                    },
                    _ => SovMessage::Forward {
                        from: self.id.clone(),
                        to: from.clone(),
                        contract: contract.clone(),
                    },
                })
            }
            SovMessage::Accept {
                from,
                contract_id,
                contract: None,
                ..
            } => self.on_accept(from, contract_id),
            SovMessage::Consume { from, contract_id, .. } => self.on_consume(from, contract_id),
            other => Err(SovError::Protocol(format!(
                "cannot serve opcode 0x{:02X}",
                other.opcode()
            ))),
        };
        result.unwrap_or_else(|e| SovMessage::refusal(&msg, &e))
    }

    fn on_offer(&self, from: &InstanceId, contract: &UsageContract) -> Result<(), SovError> {
        if contract.consumer != self.id {
            return Err(SovError::WrongConsumer(contract.contract_id.clone()));
        }
        if &contract.provider != from || contract.state != ContractState::Offered {
            return Err(SovError::Protocol(format!("malformed offer {}", contract.contract_id)));
        }
        let mut st = self.lock();
        if st.received.contains_key(&contract.contract_id) {
            return Err(SovError::Protocol(format!("duplicate offer {}", contract.contract_id)));
        }
        let json = serde_json::to_string(contract).expect("contract serializes");
        st.log(&self.clock, &contract.contract_id, AuditAction::Offer, json)?;
        st.received.insert(contract.contract_id.clone(), contract.clone());
        Ok(())
    }

    fn on_accept(&self, from: &InstanceId, contract_id: &str) -> Result<SovMessage, SovError> {
        let mut st = self.lock();
        let c = st
            .provided
            .get_mut(contract_id)
            .ok_or_else(|| SovError::UnknownContract(contract_id.to_owned()))?;
        if &c.consumer != from {
            return Err(SovError::WrongConsumer(contract_id.to_owned()));
        }
        if c.state != ContractState::Offered {
            return Err(SovError::WrongState {
                contract_id: contract_id.to_owned(),
                state: c.state.to_string(),
            });
        }
        // ACCEPTED is passed through in the same step.
        c.state = ContractState::Accepted;
        c.state = ContractState::Active;
        let reply = SovMessage::Accept {
            from: self.id.clone(),
            to: from.clone(),
            contract_id: contract_id.to_owned(),
            contract: Some(c.clone()),
        };
        st.log(&self.clock, contract_id, AuditAction::Accept, "state=ACTIVE".into())?;
        Ok(reply)
    }

    fn on_consume(&self, from: &InstanceId, contract_id: &str) -> Result<SovMessage, SovError> {
        let now = self.clock.now();
        let (n, state, uid, parent) = {
            let mut st = self.lock();
            let c = st
                .provided
                .get_mut(contract_id)
                .ok_or_else(|| SovError::UnknownContract(contract_id.to_owned()))?;
            if &c.consumer != from {
                let err = SovError::WrongConsumer(contract_id.to_owned());
                st.log(
                    &self.clock,
                    contract_id,
                    AuditAction::Deny,
                    format!("{} from={from}", err.code()),
                )?;
                return Err(err);
            }
            let mut expired_now = false;
            if c.state == ContractState::Active && c.is_expired_at(now) {
                c.state = ContractState::Expired;
                expired_now = true;
            }
            let err = match c.state {
                ContractState::Active => None,
                ContractState::Exhausted => Some(SovError::PolicyExhausted(contract_id.to_owned())),
                ContractState::Expired => Some(SovError::PolicyExpired(contract_id.to_owned())),
                ContractState::Revoked => Some(SovError::Revoked(contract_id.to_owned())),
                s => Some(SovError::WrongState {
                    contract_id: contract_id.to_owned(),
                    state: s.to_string(),
                }),
            };
            if let Some(err) = err {
                if expired_now {
                    st.log(&self.clock, contract_id, AuditAction::Expire, "state=EXPIRED".into())?;
                }
                st.log(&self.clock, contract_id, AuditAction::Deny, err.code().to_owned())?;
                return Err(err);
            }
            // Reserve the read so concurrent consumes cannot overshoot.
            c.reads_done += 1;
            if c.policy.max_reads.is_reached(c.reads_done) {
                c.state = ContractState::Exhausted;
            }
            (c.reads_done, c.state, c.object_uid.clone(), c.parent.clone())
        };
        let fetched = match &parent {
            Some(p) => self.consume(p),
            None => match &self.archive {
                Some(a) => a.fetch(&uid).map_err(SovError::from),
                None => Err(SovError::UnknownUid(uid.clone())),
            },
        };
        let mut st = self.lock();
        match fetched {
            Ok(object) => {
                st.log(
                    &self.clock,
                    contract_id,
                    AuditAction::Read,
                    format!("reads_done={n} state={state}"),
                )?;
                Ok(SovMessage::Data {
                    from: self.id.clone(),
                    to: from.clone(),
                    contract_id: contract_id.to_owned(),
                    reads_done: n,
                    state,
                    object,
                })
            }
            Err(err) => {
                let c = st.provided.get_mut(contract_id).expect("contract exists");
                c.reads_done -= 1;
                if c.state == ContractState::Exhausted && !c.policy.max_reads.is_reached(c.reads_done) {
                    c.state = ContractState::Active;
                }
                // A dead parent takes the derived contract with it.
                let detail = match terminal_for(&err) {
                    Some(t) if !c.state.is_terminal() => {
                        c.state = t;
                        format!("{} state={t}", err.code())
                    }
                    _ => err.code().to_owned(),
                };
                st.log(&self.clock, contract_id, AuditAction::Deny, detail)?;
                Err(err)
            }
        }
    }
}
