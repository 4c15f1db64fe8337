//! The MES-side broker: order book, worklists, status pub-sub and KPI store.

use std::collections::BTreeMap;
use std::sync::mpsc::{channel, Receiver, Sender};
use std::sync::{Arc, Mutex};

use thiserror::Error;

use super::message::{BusMessage, InspectionOrder, OrderState, ReportedValues, StatusEvent, Verdict};
use crate::archive::{is_object_uid, ObjectIndex};
use crate::identity::InstanceId;
use crate::procedure::{is_workflow_token, ProcedureBook};
use crate::registry::Registry;
use crate::time::LogicalClock;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BusError {
    #[error("order {0} already submitted")]
    DuplicateOrder(String),
    #[error("validation failed: {0}")]
    ValidationFailed(String),
    #[error("station {0} is not registered")]
    UnknownStation(String),
    #[error("unknown order {0}")]
    UnknownOrder(String),
    #[error("illegal transition {from} -> {to} for order {order_id}")]
    IllegalTransition {
        order_id: String,
        from: OrderState,
        to: OrderState,
    },
    #[error("order {order_id} is {state}, expected DATA_ARCHIVED")]
    WrongState { order_id: String, state: OrderState },
    #[error("archived ref {0} cannot be fetched")]
    DanglingArchiveRef(String),
    #[error("station {station} cannot run order {order_id}")]
    NotEligible { order_id: String, station: String },
    #[error("remote error {code}: {message}")]
    Remote { code: String, message: String },
}

impl BusError {
    pub fn code(&self) -> &str {
        match self {
            BusError::DuplicateOrder(_) => "DuplicateOrder",
            BusError::ValidationFailed(_) => "ValidationFailed",
            BusError::UnknownStation(_) => "UnknownStation",
            BusError::UnknownOrder(_) => "UnknownOrder",
            BusError::IllegalTransition { .. } => "IllegalTransition",
            BusError::WrongState { .. } => "WrongState",
            BusError::DanglingArchiveRef(_) => "DanglingArchiveRef",
            BusError::NotEligible { .. } => "NotEligible",
            BusError::Remote { code, .. } => code,
        }
    }

    pub fn to_message(&self) -> BusMessage {
        BusMessage::Error {
            code: self.code().to_owned(),
            message: self.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Ack {
    pub order_id: String,
    pub state: OrderState,
    pub seq: u64,
}

/// An event as seen by a subscriber. `seq` is global and strictly increasing.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Delivered {
    pub seq: u64,
    pub event: StatusEvent,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Topic {
    Order(String),
    All,
}

impl Topic {
    fn matches(&self, order_id: &str) -> bool {
        match self {
            Topic::Order(o) => o == order_id,
            Topic::All => true,
        }
    }
}

pub struct Subscription {
    pub id: u64,
    pub events: Receiver<Delivered>,
}

struct Subscriber {
    id: u64,
    topic: Topic,
    tx: Sender<Delivered>,
}

/// MES view of one order.
#[derive(Debug, Clone, PartialEq)]
pub struct OrderRecord {
    pub order: InspectionOrder,
    pub state: OrderState,
    pub station: Option<InstanceId>,
    pub kpis: Option<ReportedValues>,
    pub history: Vec<StatusEvent>,
}

#[derive(Default)]
struct State {
    orders: BTreeMap<String, OrderRecord>,
    subscribers: Vec<Subscriber>,
    next_seq: u64,
    next_sub: u64,
}

impl State {
    fn publish(&mut self, event: StatusEvent) -> u64 {
        self.next_seq += 1;
        let seq = self.next_seq;
        if let Some(rec) = self.orders.get_mut(&event.order_id) {
            rec.state = event.state;
            rec.history.push(event.clone());
        }
        // A dropped receiver counts as an implicit unsubscribe.
        self.subscribers.retain(|s| {
            !s.topic.matches(&event.order_id)
                || s.tx
                    .send(Delivered {
                        seq,
                        event: event.clone(),
                    })
                    .is_ok()
        });
        seq
    }
}

pub struct Bus {
    registry: Arc<Registry>,
    procedures: ProcedureBook,
    archive: Arc<dyn ObjectIndex>,
    clock: LogicalClock,
    state: Mutex<State>,
}

impl Bus {
    pub fn new(
        registry: Arc<Registry>,
        procedures: ProcedureBook,
        archive: Arc<dyn ObjectIndex>,
        clock: LogicalClock,
    ) -> Self {
        Self {
            registry,
            procedures,
            archive,
            clock,
            state: Mutex::new(State::default()),
        }
    }

    pub fn procedures(&self) -> &ProcedureBook {
        &self.procedures
    }

    pub fn clock(&self) -> &LogicalClock {
        &self.clock
    }

    fn check_order(&self, order: &InspectionOrder) -> Result<(), BusError> {
        let bad = |m: String| Err(BusError::ValidationFailed(m));
        if !is_workflow_token(&order.order_id) {
            return bad(format!("order_id {:?} is not a valid token", order.order_id));
        }
        if !is_workflow_token(&order.component_serial) {
            return bad(format!(
                "component_serial {:?} is not a valid token",
                order.component_serial
            ));
        }
        if self.procedures.get(&order.procedure_id).is_none() {
            return bad(format!("unknown procedure {:?}", order.procedure_id));
        }
        if let Some(station) = &order.station {
            if !self.registry.contains(station) {
                return bad(format!("station {station} is not registered"));
            }
        }
        if let Some(r) = &order.attachment_ref {
            if !is_object_uid(r) {
                return bad(format!("attachment_ref {r:?} is not an object UID"));
            }
        }
        if order.attachment.is_some() && order.attachment_ref.is_some() {
            return bad("attachment is both inline and referenced".into());
        }
        Ok(())
    }

    fn can_run(&self, station: &InstanceId, order: &InspectionOrder) -> bool {
        match &order.station {
            Some(s) => s == station,
            None => {
                let Some(proc_) = self.procedures.get(&order.procedure_id) else {
                    return false;
                };
                self.registry
                    .resolve(station)
                    .map(|m| m.methods().contains(&proc_.method))
                    .unwrap_or(false)
            }
        }
    }

    pub fn submit_order(&self, order: InspectionOrder) -> Result<Ack, BusError> {
        self.check_order(&order)?;
        let mut st = self.state.lock().unwrap();
        if st.orders.contains_key(&order.order_id) {
            return Err(BusError::DuplicateOrder(order.order_id));
        }
        let order_id = order.order_id.clone();
        st.orders.insert(
            order_id.clone(),
            OrderRecord {
                order,
                state: OrderState::Queued,
                station: None,
                kpis: None,
                history: Vec::new(),
            },
        );
        let seq = st.publish(StatusEvent {
            order_id: order_id.clone(),
            state: OrderState::Queued,
            at: self.clock.now(),
            station: None,
        });
        Ok(Ack {
            order_id,
            state: OrderState::Queued,
            seq,
        })
    }

    /// QUEUED orders this station may run: priority desc, due asc, order_id asc.
    pub fn poll_worklist(&self, station: &InstanceId) -> Result<Vec<InspectionOrder>, BusError> {
        if !self.registry.contains(station) {
            return Err(BusError::UnknownStation(station.to_string()));
        }
        let st = self.state.lock().unwrap();
        let mut list: Vec<InspectionOrder> = st
            .orders
            .values()
            .filter(|r| r.state == OrderState::Queued && self.can_run(station, &r.order))
            .map(|r| r.order.clone())
            .collect();
        list.sort_by(|a, b| {
            b.priority
                .cmp(&a.priority)
                .then_with(|| a.due.cmp(&b.due))
                .then_with(|| a.order_id.cmp(&b.order_id))
        });
        Ok(list)
    }

    /// Record a status change. ASSIGNED events name the claiming station;
    /// REPORTED is only reachable through [`Bus::report_values`].
    pub fn publish_status(&self, event: StatusEvent) -> Result<u64, BusError> {
        let mut st = self.state.lock().unwrap();
        let rec = st
            .orders
            .get_mut(&event.order_id)
            .ok_or_else(|| BusError::UnknownOrder(event.order_id.clone()))?;
        let illegal = || BusError::IllegalTransition {
            order_id: event.order_id.clone(),
            from: rec.state,
            to: event.state,
        };
        if !rec.state.can_advance_to(event.state) || event.state == OrderState::Reported {
            return Err(illegal());
        }
        if event.state == OrderState::Assigned {
            let station = event
                .station
                .clone()
                .or_else(|| rec.order.station.clone())
                .ok_or_else(|| BusError::ValidationFailed("ASSIGNED event without station".into()))?;
            if !self.registry.contains(&station) {
                return Err(BusError::UnknownStation(station.to_string()));
            }
            if !self.can_run(&station, &rec.order) {
                return Err(BusError::NotEligible {
                    order_id: event.order_id.clone(),
                    station: station.to_string(),
                });
            }
            rec.station = Some(station);
        }
        Ok(st.publish(event))
    }

    /// Claim a queued order for a station (ASSIGNED at the current tick).
    pub fn claim(&self, order_id: &str, station: &InstanceId) -> Result<u64, BusError> {
        self.publish_status(StatusEvent {
            order_id: order_id.to_owned(),
            state: OrderState::Assigned,
            at: self.clock.now(),
            station: Some(station.clone()),
        })
    }

    pub fn report_values(&self, rv: ReportedValues) -> Result<Ack, BusError> {
        let mut st = self.state.lock().unwrap();
        let rec = st
            .orders
            .get(&rv.order_id)
            .ok_or_else(|| BusError::UnknownOrder(rv.order_id.clone()))?;
        if rec.state != OrderState::DataArchived {
            return Err(BusError::WrongState {
                order_id: rv.order_id.clone(),
                state: rec.state,
            });
        }
        if rv.verdict == Verdict::Reject && rv.indication_count == 0 {
            return Err(BusError::ValidationFailed("REJECT with no indications".into()));
        }
        if let Some(bad) = rv.archived_refs.iter().find(|r| !is_object_uid(r)) {
            return Err(BusError::ValidationFailed(format!("{bad:?} is not an object UID")));
        }
        let min_refs = self.procedures.get(&rec.order.procedure_id).map_or(1, |p| p.min_refs) as usize;
        if rv.archived_refs.len() < min_refs {
            return Err(BusError::ValidationFailed(format!(
                "procedure {} needs {min_refs} archived object(s), got {}",
                rec.order.procedure_id,
                rv.archived_refs.len()
            )));
        }
        for r in &rv.archived_refs {
            match self.archive.order_of(r) {
                None => return Err(BusError::DanglingArchiveRef(r.clone())),
                Some(o) if o != rv.order_id => {
                    return Err(BusError::ValidationFailed(format!(
                        "object {r} belongs to order {o:?}, not {}",
                        rv.order_id
                    )))
                }
                Some(_) => {}
            }
        }
        let order_id = rv.order_id.clone();
        st.orders.get_mut(&order_id).expect("checked above").kpis = Some(rv);
        let seq = st.publish(StatusEvent {
            order_id: order_id.clone(),
            state: OrderState::Reported,
            at: self.clock.now(),
            station: None,
        });
        Ok(Ack {
            order_id,
            state: OrderState::Reported,
            seq,
        })
    }

    pub fn subscribe(&self, topic: Topic) -> Subscription {
        let (tx, rx) = channel();
        let mut st = self.state.lock().unwrap();
        st.next_sub += 1;
        let id = st.next_sub;
        st.subscribers.push(Subscriber { id, topic, tx });
        Subscription { id, events: rx }
    }

    pub fn unsubscribe(&self, id: u64) {
        self.state.lock().unwrap().subscribers.retain(|s| s.id != id);
    }

    pub fn order(&self, order_id: &str) -> Option<OrderRecord> {
        self.state.lock().unwrap().orders.get(order_id).cloned()
    }

    pub fn orders(&self) -> Vec<OrderRecord> {
        self.state.lock().unwrap().orders.values().cloned().collect()
    }

    /// Dispatch one ORDERS-channel message and produce the reply.
    pub fn handle_message(&self, msg: BusMessage) -> BusMessage {
        let ack = |a: Ack| BusMessage::Ack {
            order_id: a.order_id,
            state: a.state,
            seq: a.seq,
        };
        let result = match msg {
            BusMessage::Order(o) => self.submit_order(o).map(ack),
            BusMessage::Report(rv) => self.report_values(rv).map(ack),
            BusMessage::Status(ev) => {
                let (order_id, state) = (ev.order_id.clone(), ev.state);
                self.publish_status(ev)
                    .map(|seq| BusMessage::Ack { order_id, state, seq })
            }
            BusMessage::Ack { .. } | BusMessage::Error { .. } => {
                Err(BusError::ValidationFailed("ack and error are reply-only kinds".into()))
            }
        };
        result.unwrap_or_else(|e| e.to_message())
    }

    pub fn handle_payload(&self, payload: &[u8]) -> BusMessage {
        match BusMessage::from_payload(payload) {
            Ok(msg) => self.handle_message(msg),
            Err(e) => BusMessage::Error {
                code: "BadRequest".into(),
                message: e.to_string(),
            },
        }
    }
}
