use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::sync::Arc;

use base64::Engine as _;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::acquire::{acquire, evaluate_batch, Setup};
use super::config::{FaultKind, ScenarioConfig};
use super::report::{CompanyOutcome, OrderOutcome, Report, RunOutput, CHAIN_OK};
use super::trace::{Trace, TraceKind};
use super::{SimError, OVERSIZE_ATTACHMENT};
use crate::archive::wire::{ArchiveRequest, ArchiveResponse};
use crate::archive::{Archive, DataObject, Strategy, CHAIN_FILE};
use crate::gateway::{Gateway, Route};
use crate::identity::{InstanceId, TypeId};
use crate::orders::{
    Bus, BusClient, BusMessage, Channel, InspectionOrder, Loopback, OrderState, ReportedValues, Router, StatusEvent,
    Transport, Verdict, WireTap,
};
use crate::procedure::{Indication, Procedure, ProcedureBook};
use crate::rami::{coverage_check, LociTable, RamiCoordinate};
use crate::registry::{Manifest, Registry, ServiceDesc};
use crate::semantics::Dictionary;
use crate::sovereignty::AuditAction;
use crate::sovereignty::{Connector, Exchange, MaxReads};
use crate::time::{LogicalClock, Timestamp};

const ACQUIRE_TICKS: u64 = 5;
const CALIBRATION_INTERVAL: u64 = 180 * 86_400;

struct Station {
    id: InstanceId,
    serial: String,
    person: bool,
    busy: bool,
}

struct Plant {
    name: String,
    bus: Arc<Bus>,
    archive: Arc<Archive>,
    gateway: Option<Gateway>,
    connector: Option<Arc<Connector>>,
    client: BusClient<Loopback>,
    link: Loopback,
    stations: Vec<Station>,
    book: ProcedureBook,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Ev {
    Release(usize),
    Poll(usize),
    Acquire { order: usize, station: usize },
    Evaluate(usize),
    Report(usize),
    Share { order: usize, consumer: usize },
}

struct OrderRun {
    plant: usize,
    waiting: BTreeSet<String>,
    released: bool,
    order: Option<InspectionOrder>,
    station: Option<usize>,
    objects: Vec<DataObject>,
    findings: Vec<Indication>,
    uids: Vec<String>,
    reported: Option<ReportedValues>,
    blocked: Option<String>,
    rng: ChaCha8Rng,
}

struct Sim<'a> {
    cfg: &'a ScenarioConfig,
    clock: LogicalClock,
    registry: Arc<Registry>,
    plants: Vec<Plant>,
    runs: Vec<OrderRun>,
    by_id: BTreeMap<String, usize>,
    queue: BTreeMap<(u64, String, u64), Ev>,
    next: u64,
    trace: Trace,
    tap: WireTap,
    _exchange: Option<Arc<Exchange>>,
    faults: BTreeSet<FaultKind>,
    overread_done: bool,
}

fn connector_id(company: &str) -> InstanceId {
    TypeId::new(company, "connector")
        .and_then(|t| t.instance("c1"))
        .expect("validated company name")
}

fn runtime(e: impl std::fmt::Display) -> SimError {
    SimError::Runtime(e.to_string())
}

fn not_applicable(fault: FaultKind, reason: &str) -> SimError {
    SimError::FaultNotApplicable {
        fault,
        reason: reason.to_owned(),
    }
}

fn rami_gaps(cfg: &ScenarioConfig, faults: &BTreeSet<FaultKind>) -> BTreeSet<RamiCoordinate> {
    let table = LociTable::standard();
    let loci: Vec<_> = cfg
        .loci_under(faults)
        .into_iter()
        .map(|n| table.locate(n).expect("shipped locus"))
        .collect();
    coverage_check(&cfg.coverage_required(), &loci).gaps
}

fn check_faults(cfg: &ScenarioConfig) -> Result<BTreeSet<FaultKind>, SimError> {
    let faults: BTreeSet<FaultKind> = cfg.faults.iter().copied().collect();
    for &f in &faults {
        match f {
            FaultKind::TamperArchiveByte => {
                let enough = cfg.companies.iter().any(|c| {
                    cfg.orders
                        .iter()
                        .filter(|o| o.company == c.name)
                        .filter_map(|o| cfg.procedure(o))
                        .map(|p| p.min_refs)
                        .sum::<u32>()
                        >= 2
                });
                if !enough {
                    return Err(not_applicable(f, "no company archives two objects"));
                }
            }
            FaultKind::OversizeWorkflowMsg => {
                if cfg.orders.is_empty() {
                    return Err(not_applicable(f, "no order to carry the attachment"));
                }
                if faults.contains(&FaultKind::DropGateway) {
                    return Err(not_applicable(f, "rerouting needs the gateway"));
                }
            }
            FaultKind::PolicyOverread => {
                if !cfg.sovereignty.enabled || !cfg.has_bounded_cross_share() {
                    return Err(not_applicable(f, "no bounded cross-company exchange"));
                }
            }
            FaultKind::DropGateway => {
                let mut without = faults.clone();
                without.insert(FaultKind::DropGateway);
                let mut with = faults.clone();
                with.remove(&FaultKind::DropGateway);
                if rami_gaps(cfg, &without) == rami_gaps(cfg, &with) {
                    return Err(not_applicable(f, "no required cell depends on the gateway"));
                }
            }
        }
    }
    Ok(faults)
}

fn store_via(link: &Loopback, obj: &DataObject) -> Result<String, String> {
    let reply = link
        .request(Channel::Archive, &ArchiveRequest::Store(obj.clone()).to_bytes())
        .map_err(|e| e.to_string())?;
    match ArchiveResponse::from_bytes(&reply.payload) {
        Ok(ArchiveResponse::Stored(uid)) => Ok(uid),
        Ok(ArchiveResponse::Error(e)) => Err(format!("{}: {}", e.code, e.message)),
        Ok(_) => Err("unexpected archive reply".into()),
        Err(e) => Err(e.to_string()),
    }
}

/// Run a scenario with its data under `workdir` (one directory per
/// company). A run that cannot finish every order returns
/// [`SimError::ScenarioDeadlock`] carrying everything produced so far.
pub fn run_scenario(cfg: &ScenarioConfig, workdir: &Path) -> Result<RunOutput, SimError> {
    cfg.validate()?;
    let faults = check_faults(cfg)?;
    let mut sim = Sim::build(cfg, workdir, faults)?;
    sim.start();
    while let Some(((tick, _, _), ev)) = sim.queue.pop_first() {
        sim.clock.advance_to(tick);
        sim.dispatch(ev);
    }
    sim.finish()
}

impl<'a> Sim<'a> {
    fn build(cfg: &'a ScenarioConfig, workdir: &Path, faults: BTreeSet<FaultKind>) -> Result<Self, SimError> {
        let clock = LogicalClock::new();
        let tap = WireTap::new();
        let registry = Arc::new(Registry::new(Dictionary::standard()));
        let certified = cfg.certified();
        let mut plants = Vec::new();
        for c in &cfg.companies {
            let dir = workdir.join(&c.name);
            if dir.join("archive").join(CHAIN_FILE).exists() {
                return Err(runtime(format!("{} already holds a run", dir.display())));
            }
            let archive =
                Arc::new(Archive::open(dir.join("archive"), Dictionary::standard(), clock.clone()).map_err(runtime)?);
            let ns = c.name.as_str();
            let shell = |kind: &str, serial: &str| {
                TypeId::new(ns, kind)
                    .and_then(|t| t.instance(serial).map(|i| (t, i)))
                    .map_err(|e| SimError::ConfigInvalid(e.to_string()))
            };
            let (plant_type, plant_id) = shell("plant", "main")?;
            let register = |m: Manifest| registry.register(m).map_err(|e| SimError::ConfigInvalid(e.to_string()));
            let mut stations = Vec::new();
            let mut children = Vec::new();
            for s in &c.stations {
                let (t, id) = shell(&s.kind, &s.serial)?;
                let label = if s.person { "inspector" } else { "station" };
                let mut m = Manifest::new(t, id.clone(), &format!("{} {label} {}", c.name, s.serial));
                m.body.services = s.methods.iter().map(|&m| ServiceDesc::inspect(m)).collect();
                register(m)?;
                children.push(id.clone());
                stations.push(Station {
                    id,
                    serial: s.serial.clone(),
                    person: s.person,
                    busy: false,
                });
            }
            let connector = if cfg.sovereignty.enabled {
                let id = connector_id(ns);
                let (t, _) = shell("connector", "c1")?;
                register(Manifest::new(t, id.clone(), &format!("{} connector", c.name)))?;
                children.push(id.clone());
                Some(
                    Connector::new(id, clock.clone(), Some(archive.clone()), Some(&dir.join("audit")))
                        .map_err(runtime)?,
                )
            } else {
                None
            };
            register(Manifest::new(
                plant_type,
                plant_id.clone(),
                &format!("{} plant", c.name),
            ))?;
            for child in &children {
                registry
                    .nest(&plant_id, child)
                    .map_err(|e| SimError::ConfigInvalid(e.to_string()))?;
            }

            let book =
                ProcedureBook::new(c.procedures.iter().cloned()).map_err(|e| SimError::ConfigInvalid(e.to_string()))?;
            let bus = Arc::new(Bus::new(registry.clone(), book.clone(), archive.clone(), clock.clone()));
            let router = Arc::new(
                Router::new()
                    .with(Channel::Orders, bus.clone())
                    .with(Channel::Archive, archive.clone()),
            );
            plants.push(Plant {
                name: c.name.clone(),
                bus,
                archive,
                gateway: (!faults.contains(&FaultKind::DropGateway)).then(Gateway::default),
                connector,
                client: BusClient::new(Loopback::new(router.clone(), tap.clone())),
                link: Loopback::new(router, tap.clone()),
                stations,
                book,
            });
        }

        let exchange = cfg.sovereignty.enabled.then(|| {
            let ex = Exchange::new(certified.iter().map(|n| connector_id(n)), tap.clone());
            for p in &plants {
                if let Some(c) = &p.connector {
                    ex.attach(c);
                }
            }
            ex
        });

        let mut by_id = BTreeMap::new();
        let runs = cfg
            .orders
            .iter()
            .enumerate()
            .map(|(i, o)| {
                by_id.insert(o.order_id.clone(), i);
                let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
                rng.set_stream(i as u64);
                OrderRun {
                    plant: cfg
                        .companies
                        .iter()
                        .position(|c| c.name == o.company)
                        .expect("validated"),
                    waiting: o.requires.iter().cloned().collect(),
                    released: false,
                    order: None,
                    station: None,
                    objects: Vec::new(),
                    findings: Vec::new(),
                    uids: Vec::new(),
                    reported: None,
                    blocked: None,
                    rng,
                }
            })
            .collect();

        Ok(Self {
            cfg,
            clock,
            registry,
            plants,
            runs,
            by_id,
            queue: BTreeMap::new(),
            next: 0,
            trace: Trace::new(),
            tap,
            _exchange: exchange,
            faults,
            overread_done: false,
        })
    }

    fn now(&self) -> u64 {
        self.clock.ticks()
    }

    fn schedule(&mut self, tick: u64, actor: String, ev: Ev) {
        self.next += 1;
        self.queue.insert((tick, actor, self.next), ev);
    }

    fn note(&mut self, actor: &str, kind: TraceKind, order: Option<&str>, detail: impl Into<String>) {
        let at = self.clock.now();
        self.trace.push(at, actor, kind, order, detail);
    }

    fn order_id(&self, o: usize) -> &'a str {
        &self.cfg.orders[o].order_id
    }

    fn procedure(&self, o: usize) -> &Procedure {
        let run = &self.runs[o];
        self.plants[run.plant]
            .book
            .get(&self.cfg.orders[o].procedure_id)
            .expect("validated procedure")
    }

    fn actor(&self, plant: usize, role: &str) -> String {
        format!("{}/{role}", self.plants[plant].name)
    }

    fn block(&mut self, o: usize, actor: &str, reason: String) {
        let id = self.order_id(o);
        self.note(actor, TraceKind::Blocked, Some(id), reason.clone());
        self.runs[o].blocked = Some(reason);
    }

    fn start(&mut self) {
        let cfg = self.cfg;
        self.note(
            "scenario",
            TraceKind::Scenario,
            None,
            format!(
                "start {:?} seed {} companies {} orders {}",
                cfg.name,
                cfg.seed,
                cfg.companies.len(),
                cfg.orders.len()
            ),
        );
        for f in &self.faults.clone() {
            self.note("scenario", TraceKind::Fault, None, format!("armed {f:?}"));
        }
        for (i, o) in cfg.orders.iter().enumerate() {
            if o.requires.is_empty() {
                self.runs[i].released = true;
                let actor = self.actor(self.runs[i].plant, "mes");
                self.schedule(o.release, actor, Ev::Release(i));
            }
        }
    }

    fn dispatch(&mut self, ev: Ev) {
        match ev {
            Ev::Release(o) => self.release(o),
            Ev::Poll(p) => self.poll(p),
            Ev::Acquire { order, station } => self.acquire(order, station),
            Ev::Evaluate(o) => self.evaluate(o),
            Ev::Report(o) => self.report(o),
            Ev::Share { order, consumer } => self.share(order, consumer),
        }
    }

    fn send(&self, plant: usize, msg: &BusMessage) -> Result<BusMessage, String> {
        match self.plants[plant].client.send(msg) {
            Ok(Ok(reply)) => Ok(reply),
            Ok(Err(e)) => Err(e.to_string()),
            Err(e) => Err(e.to_string()),
        }
    }

    fn status(&self, o: usize, state: OrderState, station: Option<InstanceId>) -> Result<BusMessage, String> {
        let ev = StatusEvent {
            order_id: self.order_id(o).to_owned(),
            state,
            at: self.clock.now(),
            station,
        };
        self.send(self.runs[o].plant, &BusMessage::Status(ev))
    }

    fn release(&mut self, o: usize) {
        let plan = &self.cfg.orders[o];
        let p = self.runs[o].plant;
        let mes = self.actor(p, "mes");
        let ns = self.plants[p].name.clone();
        let mut order = InspectionOrder {
            order_id: plan.order_id.clone(),
            component_serial: plan.component_serial.clone(),
            component_type: TypeId::new(&ns, &plan.component_type).expect("validated type"),
            procedure_id: plan.procedure_id.clone(),
            station: plan.station.as_ref().and_then(|s| {
                self.plants[p]
                    .stations
                    .iter()
                    .find(|st| &st.serial == s)
                    .map(|st| st.id.clone())
            }),
            due: Timestamp::from_ticks(plan.due_tick()),
            priority: plan.priority,
            extra: BTreeMap::from([("company".to_owned(), ns.clone())]),
            attachment: None,
            attachment_ref: None,
        };

        let size = if self.faults.contains(&FaultKind::OversizeWorkflowMsg) && o == 0 {
            OVERSIZE_ATTACHMENT
        } else {
            plan.attachment_bytes
        };
        if size > 0 {
            let mut bytes = vec![0u8; size];
            self.runs[o].rng.fill_bytes(&mut bytes);
            let method = self.procedure(o).method;
            let plant = &self.plants[p];
            let routed = match &plant.gateway {
                Some(gw) => gw
                    .attach(&mut order, &bytes, &format!("att-{}", plan.order_id), method, |obj| {
                        store_via(&plant.link, obj)
                    })
                    .map_err(|e| e.to_string()),
                None => {
                    order.attachment = Some(base64::engine::general_purpose::STANDARD.encode(&bytes));
                    Ok(Route::Orders)
                }
            };
            match routed {
                Ok(Route::ArchiveWithReference) => {
                    let uid = order.attachment_ref.clone().unwrap_or_default();
                    self.note(
                        &self.actor(p, "gateway"),
                        TraceKind::Route,
                        Some(&plan.order_id),
                        format!("{size} byte attachment exceeds the ORDERS cap; ARCHIVE with reference {uid}"),
                    );
                    self.note(
                        &self.actor(p, "archive"),
                        TraceKind::Store,
                        Some(&plan.order_id),
                        format!("uid {uid} attachment"),
                    );
                }
                Ok(_) => {
                    self.note(
                        &self.actor(p, "gateway"),
                        TraceKind::Route,
                        Some(&plan.order_id),
                        format!("{size} byte attachment inline on ORDERS"),
                    );
                }
                Err(e) => return self.block(o, &mes, format!("attachment failed: {e}")),
            }
        }

        match self.send(p, &BusMessage::Order(order.clone())) {
            Ok(_) => {
                let detail = format!(
                    "procedure {} priority {} due {}{}",
                    order.procedure_id,
                    order.priority,
                    order.due,
                    order
                        .station
                        .as_ref()
                        .map(|s| format!(" pinned to {}", s.serial()))
                        .unwrap_or_default()
                );
                self.note(&mes, TraceKind::Submit, Some(&plan.order_id), detail);
                self.runs[o].order = Some(order);
                let tick = self.now() + 1;
                self.schedule(tick, mes, Ev::Poll(p));
            }
            Err(e) => self.block(o, &mes, format!("submit failed: {e}")),
        }
    }

    fn poll(&mut self, p: usize) {
        let mes = self.actor(p, "mes");
        for s in 0..self.plants[p].stations.len() {
            if self.plants[p].stations[s].busy {
                continue;
            }
            let station = self.plants[p].stations[s].id.clone();
            let Ok(list) = self.plants[p].bus.poll_worklist(&station) else {
                continue;
            };
            let Some(&o) = list.first().and_then(|ord| self.by_id.get(&ord.order_id)) else {
                continue;
            };
            match self.status(o, OrderState::Assigned, Some(station.clone())) {
                Ok(_) => {
                    let serial = self.plants[p].stations[s].serial.clone();
                    self.note(
                        &mes,
                        TraceKind::Assign,
                        Some(self.order_id(o)),
                        format!("station {serial}"),
                    );
                    self.plants[p].stations[s].busy = true;
                    self.runs[o].station = Some(s);
                    let tick = self.now() + 1;
                    let actor = self.actor(p, &serial);
                    self.schedule(tick, actor, Ev::Acquire { order: o, station: s });
                }
                Err(e) => self.block(o, &mes, format!("claim failed: {e}")),
            }
        }
    }

    fn acquire(&mut self, o: usize, s: usize) {
        let p = self.runs[o].plant;
        let actor = self.actor(p, &self.plants[p].stations[s].serial);
        let id = self.order_id(o);
        if let Err(e) = self.status(o, OrderState::InProgress, None) {
            return self.block(o, &actor, format!("cannot start: {e}"));
        }
        self.note(&actor, TraceKind::Status, Some(id), "IN_PROGRESS");
        let Some(gateway) = &self.plants[p].gateway else {
            return self.block(o, &actor, "no gateway translates the order into archive work".into());
        };
        let order = self.runs[o].order.clone().expect("submitted order");
        let seed = match gateway.order_to_archive_work(&order) {
            Ok(seed) => seed,
            Err(e) => return self.block(o, &actor, format!("gateway: {e}")),
        };
        let device = self.plants[p].stations[s].id.clone();
        let person = self.plants[p].stations[s].person;
        let services = match self.registry.resolve(&device) {
            Ok(m) => m
                .body
                .services
                .iter()
                .map(|s| s.name.clone())
                .collect::<Vec<_>>()
                .join(","),
            Err(e) => return self.block(o, &actor, format!("shell: {e}")),
        };
        let procedure = self.procedure(o).clone();
        let operator = if person { "inspector" } else { "device" };
        self.note(
            &actor,
            TraceKind::Setup,
            Some(id),
            format!(
                "{operator} {} services {services} procedure {} method {} grid {}x{} floor {:.1} reject {:.1}",
                device.serial(),
                procedure.procedure_id,
                procedure.method,
                procedure.rows,
                procedure.cols,
                procedure.detection_floor,
                procedure.reject_threshold
            ),
        );
        let setup = Setup {
            procedure: &procedure,
            device: &device,
            calibration_due: Timestamp::from_ticks(self.now() + CALIBRATION_INTERVAL),
            seed: &seed,
        };
        let spots = self.cfg.orders[o].defects.clone();
        for i in 0..procedure.min_refs {
            let uid = format!("obj-{id}-{i}");
            let obj = acquire(
                &setup,
                &uid,
                self.clock.now(),
                &self.cfg.noise,
                spots.as_deref(),
                &mut self.runs[o].rng,
            );
            self.trace.push(
                self.clock.now(),
                &actor,
                TraceKind::Acquire,
                Some(id),
                format!("uid {uid} {} bytes", obj.encoded_len()),
            );
            self.runs[o].objects.push(obj);
        }
        let tick = self.now() + ACQUIRE_TICKS;
        self.schedule(tick, actor, Ev::Evaluate(o));
    }

    fn evaluate(&mut self, o: usize) {
        let p = self.runs[o].plant;
        let s = self.runs[o].station.expect("assigned");
        let actor = self.actor(p, &self.plants[p].stations[s].serial);
        let id = self.order_id(o);
        let procedure = self.procedure(o).clone();
        let objects = std::mem::take(&mut self.runs[o].objects);
        let mut findings = Vec::new();
        for r in evaluate_batch(&objects, &procedure, Strategy::default()) {
            match r {
                Ok(f) => findings.extend(f),
                Err(e) => return self.block(o, &actor, format!("evaluation: {e}")),
            }
        }
        let max = findings.iter().map(|f| f.amplitude).reduce(f32::max);
        self.note(
            &actor,
            TraceKind::Evaluate,
            Some(id),
            format!(
                "{} indication(s){}",
                findings.len(),
                max.map(|m| format!(" max {m:.1}")).unwrap_or_default()
            ),
        );
        let archive_actor = self.actor(p, "archive");
        for obj in &objects {
            match store_via(&self.plants[p].link, obj) {
                Ok(uid) => {
                    self.note(&archive_actor, TraceKind::Store, Some(id), format!("uid {uid}"));
                    self.runs[o].uids.push(uid);
                }
                Err(e) => return self.block(o, &archive_actor, format!("store failed: {e}")),
            }
        }
        self.runs[o].findings = findings;
        if let Err(e) = self.status(o, OrderState::DataArchived, None) {
            return self.block(o, &actor, e);
        }
        self.note(&actor, TraceKind::Status, Some(id), "DATA_ARCHIVED");
        let tick = self.now() + 1;
        let gw = self.actor(p, "gateway");
        self.schedule(tick, gw, Ev::Report(o));
    }

    fn report(&mut self, o: usize) {
        let p = self.runs[o].plant;
        let actor = self.actor(p, "gateway");
        let id = self.order_id(o);
        let procedure = self.procedure(o).clone();
        let plant = &self.plants[p];
        let gateway = plant.gateway.as_ref().expect("evaluated orders passed the gateway");
        let rv = match gateway.archive_result_to_kpis(
            id,
            &self.runs[o].findings,
            &self.runs[o].uids,
            &procedure,
            plant.archive.as_ref(),
        ) {
            Ok(rv) => rv,
            Err(e) => return self.block(o, &actor, format!("KPI translation: {e}")),
        };
        if let Err(e) = self.send(p, &BusMessage::Report(rv.clone())) {
            return self.block(o, &actor, format!("report refused: {e}"));
        }
        self.note(
            &actor,
            TraceKind::Report,
            Some(id),
            format!(
                "verdict {} indications {} max {} refs {}",
                rv.verdict,
                rv.indication_count,
                rv.max_amplitude.map_or("-".to_owned(), |m| format!("{m:.1}")),
                rv.archived_refs.join(",")
            ),
        );
        self.runs[o].reported = Some(rv);
        if let Some(s) = self.runs[o].station {
            self.plants[p].stations[s].busy = false;
        }
        let tick = self.now() + 1;
        let mes = self.actor(p, "mes");
        self.schedule(tick, mes, Ev::Poll(p));

        let mut consumers = BTreeSet::new();
        for (d, plan) in self.cfg.orders.iter().enumerate() {
            if !plan.requires.iter().any(|r| r == id) {
                continue;
            }
            let dp = self.runs[d].plant;
            if dp == p {
                self.satisfy(d, id);
            } else {
                consumers.insert(dp);
            }
        }
        for c in consumers {
            let actor = self.actor(c, "connector");
            self.schedule(tick, actor, Ev::Share { order: o, consumer: c });
        }
    }

    fn satisfy(&mut self, d: usize, req: &str) {
        self.runs[d].waiting.remove(req);
        if self.runs[d].waiting.is_empty() && !self.runs[d].released {
            self.runs[d].released = true;
            let tick = self.cfg.orders[d].release.max(self.now() + 1);
            let actor = self.actor(self.runs[d].plant, "mes");
            self.schedule(tick, actor, Ev::Release(d));
        }
    }

    fn share(&mut self, o: usize, c: usize) {
        let p = self.runs[o].plant;
        let id = self.order_id(o);
        let consumer_actor = self.actor(c, "connector");
        let provider_actor = self.actor(p, "connector");
        let (Some(provider), Some(consumer)) = (self.plants[p].connector.clone(), self.plants[c].connector.clone())
        else {
            let detail = format!(
                "no usage-controlled exchange between {} and {}",
                self.plants[p].name, self.plants[c].name
            );
            self.note(&consumer_actor, TraceKind::Blocked, Some(id), detail);
            return;
        };
        let uid = self.runs[o].uids[0].clone();
        let policy = self.cfg.evidence_policy(&self.cfg.orders[o]);
        let bounded = matches!(policy.max_reads, MaxReads::Bounded(_));
        let cid = match provider.offer(consumer.id(), &uid, policy.clone()) {
            Ok(cid) => cid,
            Err(e) => {
                self.note(
                    &provider_actor,
                    TraceKind::Blocked,
                    Some(id),
                    format!("offer to {} failed: {} {e}", self.plants[c].name, e.code()),
                );
                return;
            }
        };
        let reads = match policy.max_reads {
            MaxReads::Bounded(n) => n.to_string(),
            MaxReads::Unlimited => "unlimited".into(),
        };
        self.note(
            &provider_actor,
            TraceKind::Offer,
            Some(id),
            format!(
                "contract {cid} object {uid} to {} max_reads {reads}",
                self.plants[c].name
            ),
        );
        if let Err(e) = consumer.accept(&cid) {
            self.note(
                &consumer_actor,
                TraceKind::Blocked,
                Some(id),
                format!("accept failed: {} {e}", e.code()),
            );
            return;
        }
        match consumer.consume(&cid) {
            Ok(obj) if obj.order_id() == Some(id) => {
                self.note(
                    &consumer_actor,
                    TraceKind::Evidence,
                    Some(id),
                    format!("contract {cid} object {uid}"),
                );
            }
            Ok(obj) => {
                let found = obj.order_id().unwrap_or("-").to_owned();
                self.note(
                    &consumer_actor,
                    TraceKind::Blocked,
                    Some(id),
                    format!("evidence object carries order {found}"),
                );
                return;
            }
            Err(e) => {
                self.note(
                    &consumer_actor,
                    TraceKind::Deny,
                    Some(id),
                    format!("contract {cid} {}", e.code()),
                );
                return;
            }
        }
        if bounded && !self.overread_done && self.faults.contains(&FaultKind::PolicyOverread) {
            self.overread_done = true;
            let limit = match policy.max_reads {
                MaxReads::Bounded(n) => n,
                MaxReads::Unlimited => 0,
            };
            for _ in 0..limit {
                match consumer.consume(&cid) {
                    Ok(_) => self.note(
                        &consumer_actor,
                        TraceKind::Fault,
                        Some(id),
                        format!("overread of {cid} served"),
                    ),
                    Err(e) => {
                        self.note(
                            &consumer_actor,
                            TraceKind::Deny,
                            Some(id),
                            format!("contract {cid} {}", e.code()),
                        );
                        break;
                    }
                }
            }
        }
        let dependents: Vec<usize> = self
            .cfg
            .orders
            .iter()
            .enumerate()
            .filter(|(d, plan)| self.runs[*d].plant == c && plan.requires.iter().any(|r| r == id))
            .map(|(d, _)| d)
            .collect();
        for d in dependents {
            self.satisfy(d, id);
        }
    }

    fn tamper(&mut self) {
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed);
        rng.set_stream(self.runs.len() as u64);
        let Some(plant) = self.plants.iter().find(|p| p.archive.len() >= 2) else {
            self.note(
                "scenario",
                TraceKind::Fault,
                None,
                "TamperArchiveByte found nothing to tamper with",
            );
            return;
        };
        let uids = plant.archive.list();
        let k = rng.random_range(1..uids.len());
        let path = plant.archive.object_file(&uids[k]);
        let name = plant.name.clone();
        let result = std::fs::read(&path).and_then(|mut bytes| {
            let at = rng.random_range(0..bytes.len());
            bytes[at] ^= 0xFF;
            std::fs::write(&path, &bytes).map(|_| at)
        });
        let detail = match result {
            Ok(at) => format!("flipped byte {at} of object index {k} in {name}"),
            Err(e) => format!("tamper failed: {e}"),
        };
        self.note("scenario", TraceKind::Fault, None, detail);
    }

    fn finish(mut self) -> Result<RunOutput, SimError> {
        if self.faults.contains(&FaultKind::TamperArchiveByte) {
            self.tamper();
        }
        let mut companies = Vec::new();
        let mut chain_status = CHAIN_OK.to_owned();
        for i in 0..self.plants.len() {
            let status = self.plants[i].archive.verify_chain().map_err(runtime)?;
            let actor = self.actor(i, "archive");
            self.note(&actor, TraceKind::Verify, None, status.to_string());
            let plant = &self.plants[i];
            if let (Some(k), true) = (status.bad_index(), chain_status == CHAIN_OK) {
                chain_status = format!("bad at index {k} in {}", plant.name);
            }
            companies.push(CompanyOutcome {
                name: plant.name.clone(),
                archive: plant.archive.clone(),
                chain: status,
                audit: plant.connector.as_ref().map(|c| c.audit()).unwrap_or_default(),
                audit_path: plant.connector.as_ref().and_then(|c| c.audit_path()),
            });
        }
        let audit_denies = companies
            .iter()
            .flat_map(|c| &c.audit)
            .filter(|e| e.action == AuditAction::Deny)
            .count();

        let mut orders = Vec::new();
        let mut blocked = Vec::new();
        for (i, plan) in self.cfg.orders.iter().enumerate() {
            let run = &self.runs[i];
            let state = self.plants[run.plant].bus.order(&plan.order_id).map(|r| r.state);
            if state != Some(OrderState::Reported) {
                let why = match (&run.blocked, state) {
                    (Some(reason), _) => reason.clone(),
                    (None, Some(s)) => format!("stuck in {s}"),
                    (None, None) => format!(
                        "waiting for {}",
                        run.waiting.iter().cloned().collect::<Vec<_>>().join(",")
                    ),
                };
                let shown = state.map_or("NOT_SUBMITTED".to_owned(), |s| s.to_string());
                blocked.push(format!("{} ({shown}): {why}", plan.order_id));
            }
            orders.push(OrderOutcome {
                order_id: plan.order_id.clone(),
                company: plan.company.clone(),
                state,
                reported: run.reported.clone(),
                min_refs: self.procedure(i).min_refs,
            });
        }

        let gaps = rami_gaps(self.cfg, &self.faults);
        let report = Report {
            orders_total: orders.len(),
            reported: orders.iter().filter(|o| o.state == Some(OrderState::Reported)).count(),
            rejected: orders
                .iter()
                .filter(|o| o.reported.as_ref().is_some_and(|r| r.verdict == Verdict::Reject))
                .count(),
            chain_status,
            rami_gaps: gaps.iter().map(ToString::to_string).collect(),
            audit_denies,
        };
        if !blocked.is_empty() {
            self.note(
                "scenario",
                TraceKind::Blocked,
                None,
                format!("deadlock: {} order(s) cannot progress", blocked.len()),
            );
        }
        let output = RunOutput {
            trace: self.trace,
            report,
            companies,
            orders,
            orders_wire: self.tap.stats(Channel::Orders),
            archive_wire: self.tap.stats(Channel::Archive),
            sovereign_wire: self.tap.stats(Channel::Sovereign),
        };
        if blocked.is_empty() {
            Ok(output)
        } else {
            Err(SimError::ScenarioDeadlock {
                blocked,
                partial: Box::new(output),
            })
        }
    }
}
