//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use nde4_core::archive::{
    decode_object, encode_object, verify_dir, Archive, ArchiveError, ChainStatus, CodecError, DataObject, ObjectIndex,
    QueryCriteria, Strategy,
};
use nde4_core::gateway::{route, Gateway, GatewayError, MappingTable, PayloadKind, Route};
use nde4_core::identity::{mint_instance_id, mint_type_id, parse_id, IdError, InstanceId, TypeId};
use nde4_core::orders::frame::{read_frame, write_frame};
use nde4_core::orders::{
    decode_frame, encode_frame, Bus, BusError, Channel, Frame, FrameError, InspectionOrder, OrderState, ReportedValues,
    StatusEvent, Verdict, WireTap, ORDERS_PAYLOAD_LIMIT,
};
use nde4_core::plantsim::{evaluate, run_scenario, EvalError, FaultKind, ScenarioConfig, SimError, TraceKind};
use nde4_core::procedure::{Indication, Procedure, ProcedureBook};
use nde4_core::rami::{
    cells, coverage_check, ComponentLocus, Hierarchy, Layer, Lifecycle, LociTable, RamiCoordinate, RamiError,
};
use nde4_core::registry::{Manifest, Registry, RegistryError, ServiceDesc};
use nde4_core::semantics::{interpret, tags, Dictionary, DictionaryError, InterpretError, Lookup, Method, TagCode};
use nde4_core::sovereignty::{AuditAction, Connector, Exchange, MaxReads, SovError, UsagePolicy};
use nde4_core::time::{LogicalClock, Timestamp};

type Outcome = Result<String, String>;

fn root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn scenario(name: &str) -> ScenarioConfig {
    ScenarioConfig::load(&root().join("scenarios").join(name)).expect("shipped scenario loads")
}

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn minimal_object(uid: &str, order: &str, serial: &str, method: Method) -> DataObject {
    let mut obj = DataObject::new();
    obj.set_str(tags::OBJECT_UID, uid);
    obj.set_str(tags::ORDER_ID, order);
    obj.set_str(tags::COMPONENT_SERIAL, serial);
    obj.set_str(tags::METHOD_CODE, method.as_str());
    obj
}

fn ut_procedure(rows: u16, cols: u16) -> Procedure {
    Procedure {
        procedure_id: "UT-P1".into(),
        method: Method::UT,
        rows,
        cols,
        reject_threshold: 50.0,
        rework_threshold: None,
        detection_floor: 20.0,
        min_refs: 1,
    }
}

fn grid_object(rows: u16, cols: u16, grid: &[f32]) -> DataObject {
    let mut obj = minimal_object("obj-g", "ORD-G", "SN-G", Method::UT);
    obj.set(tags::ROWS, rows.to_le_bytes().to_vec());
    obj.set(tags::COLS, cols.to_le_bytes().to_vec());
    obj.set(
        tags::AMPLITUDE_GRID,
        grid.iter().flat_map(|v| v.to_le_bytes()).collect(),
    );
    obj
}

// 1. Frame boundary at 16 MiB and the oversize workflow fault.
fn boundary() -> Outcome {
    let at = vec![0xA5u8; ORDERS_PAYLOAD_LIMIT];
    let bytes = encode_frame(Channel::Orders, &at).map_err(|e| format!("limit frame refused: {e}"))?;
    let back = decode_frame(&bytes).map_err(|e| format!("limit frame does not decode: {e}"))?;
    ensure!(back.payload.len() == 16_777_216, "decoded {} bytes", back.payload.len());

    let over = vec![0u8; ORDERS_PAYLOAD_LIMIT + 1];
    match encode_frame(Channel::Orders, &over) {
        Err(FrameError::OversizedPayload { size: 16_777_217, .. }) => {}
        other => return Err(format!("16,777,217 bytes gave {other:?}")),
    }
    ensure!(
        route(ORDERS_PAYLOAD_LIMIT + 1, PayloadKind::Workflow) == Route::ArchiveWithReference,
        "oversized workflow payload not routed to the archive"
    );

    let dir = tempfile::tempdir().unwrap();
    let run = run_scenario(&scenario("oversize.scen"), dir.path()).map_err(|e| e.to_string())?;
    ensure!(run.violations().is_empty(), "{:?}", run.violations());
    ensure!(
        run.report.reported == run.report.orders_total,
        "{}/{} reported",
        run.report.reported,
        run.report.orders_total
    );
    let rerouted = run
        .trace
        .of_kind(TraceKind::Route)
        .any(|e| e.detail.contains("ARCHIVE with reference"));
    ensure!(rerouted, "no ARCHIVE-with-reference routing in the trace");
    ensure!(
        run.orders_wire.max_payload <= ORDERS_PAYLOAD_LIMIT as u64,
        "ORDERS carried {} bytes",
        run.orders_wire.max_payload
    );
    Ok(format!(
        "16777216 accepted, 16777217 OversizedPayload, oversize scenario {}/{} reported",
        run.report.reported, run.report.orders_total
    ))
}

fn connector_id(name: &str) -> InstanceId {
    TypeId::new("acme", "connector").unwrap().instance(name).unwrap()
}

struct Sov {
    _dir: tempfile::TempDir,
    clock: LogicalClock,
    provider: Arc<Connector>,
    consumer: Arc<Connector>,
    other: Arc<Connector>,
    _exchange: Arc<Exchange>,
}

fn sov_world() -> Sov {
    let dir = tempfile::tempdir().unwrap();
    let clock = LogicalClock::new();
    let archive = Arc::new(Archive::open(dir.path().join("a"), Dictionary::standard(), clock.clone()).unwrap());
    archive
        .store(&minimal_object("obj-1", "O1", "C-1", Method::UT))
        .unwrap();
    let provider = Connector::new(connector_id("a"), clock.clone(), Some(archive), None).unwrap();
    let consumer = Connector::new(connector_id("b"), clock.clone(), None, None).unwrap();
    let other = Connector::new(connector_id("c"), clock.clone(), None, None).unwrap();
    let ex = Exchange::new(
        [connector_id("a"), connector_id("b"), connector_id("c")],
        WireTap::new(),
    );
    for c in [&provider, &consumer, &other] {
        ex.attach(c);
    }
    Sov {
        _dir: dir,
        clock,
        provider,
        consumer,
        other,
        _exchange: ex,
    }
}

// 2. A read-once contract yields exactly one read however attempts interleave.
fn view_once() -> Outcome {
    const TRIALS: u64 = 100;
    for trial in 0..TRIALS {
        let mut rng = ChaCha8Rng::seed_from_u64(trial);
        let w = sov_world();
        let once = w
            .provider
            .offer(w.consumer.id(), "obj-1", UsagePolicy::read_once("qa"))
            .unwrap();
        let mut wide = UsagePolicy::read_once("qa");
        wide.max_reads = MaxReads::Bounded(1000);
        let noise = w.provider.offer(w.consumer.id(), "obj-1", wide).unwrap();
        w.consumer.accept(&once).unwrap();
        w.consumer.accept(&noise).unwrap();

        #[derive(Clone, Copy)]
        enum Attempt {
            Own,
            Stranger,
            Unrelated,
            Tick,
        }
        let own = rng.random_range(2..=8);
        let mut plan = vec![Attempt::Own; own];
        plan.extend(vec![Attempt::Stranger; rng.random_range(0..=3)]);
        plan.extend(vec![Attempt::Unrelated; rng.random_range(0..=3)]);
        plan.extend(vec![Attempt::Tick; rng.random_range(0..=2)]);
        plan.shuffle(&mut rng);

        let mut wins = 0;
        for a in plan {
            match a {
                Attempt::Own => {
                    match w.consumer.consume(&once) {
                        Ok(obj) => {
                            ensure!(obj.uid() == Some("obj-1"), "trial {trial}: wrong object");
                            wins += 1;
                        }
                        Err(SovError::PolicyExhausted(_)) => {}
                        Err(e) => return Err(format!("trial {trial}: {e}")),
                    }
                    ensure!(!w.consumer.is_cached(&once), "trial {trial}: object still cached");
                }
                Attempt::Stranger => {
                    ensure!(
                        matches!(w.other.consume(&once), Err(SovError::WrongConsumer(_))),
                        "trial {trial}: stranger read"
                    );
                }
                Attempt::Unrelated => {
                    w.consumer.consume(&noise).map_err(|e| format!("trial {trial}: {e}"))?;
                }
                Attempt::Tick => w.clock.advance_by(1),
            }
        }
        ensure!(wins == 1, "trial {trial}: {wins} successful reads");
        let actions: Vec<AuditAction> = w
            .consumer
            .audit()
            .iter()
            .filter(|e| e.contract_id == once)
            .map(|e| e.action)
            .collect();
        let mut want = vec![
            AuditAction::Offer,
            AuditAction::Accept,
            AuditAction::Read,
            AuditAction::Delete,
        ];
        want.extend(vec![AuditAction::Deny; own - 1]);
        ensure!(actions == want, "trial {trial}: audit {actions:?}");
        ensure!(
            w.provider.contract(&once).unwrap().reads_done == 1,
            "trial {trial}: provider count"
        );

        // The same race with real threads.
        let racy = w
            .provider
            .offer(w.consumer.id(), "obj-1", UsagePolicy::read_once("qa"))
            .unwrap();
        w.consumer.accept(&racy).unwrap();
        let threads = rng.random_range(2..=8);
        let won: usize = std::thread::scope(|s| {
            let hs: Vec<_> = (0..threads)
                .map(|_| s.spawn(|| w.consumer.consume(&racy).is_ok()))
                .collect();
            hs.into_iter().map(|h| usize::from(h.join().unwrap())).sum()
        });
        ensure!(won == 1, "trial {trial}: {won} of {threads} threads read");
        ensure!(!w.consumer.is_cached(&racy), "trial {trial}: threaded copy cached");
    }
    Ok(format!(
        "{TRIALS} interleavings, exactly one read each, READ DELETE then DENY"
    ))
}

// 3. Every single-byte flip in a three-object store is found at the right index.
fn revision_safety() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let store = dir.path().join("store");
    let archive = Archive::open(&store, Dictionary::standard(), LogicalClock::new()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for k in 0..3 {
        let grid: Vec<f32> = (0..64).map(|_| rng.random_range(0.0..10.0)).collect();
        let mut obj = grid_object(8, 8, &grid);
        obj.set_str(tags::OBJECT_UID, &format!("obj-{k}"));
        archive.store(&obj).unwrap();
    }
    let records = archive.records();
    let mut files: Vec<(PathBuf, Vec<u64>)> = Vec::new();
    for r in &records {
        let path = archive.object_file(&r.object_uid);
        let len = std::fs::metadata(&path).unwrap().len() as usize;
        ensure!(len <= 4096, "object {} is {len} bytes", r.object_uid);
        files.push((path, vec![r.index; len]));
    }
    let mut owner = Vec::new();
    for r in &records {
        owner.extend(std::iter::repeat_n(r.index, r.to_log_bytes().len()));
    }
    files.push((store.join("chain.log"), owner));
    ensure!(
        verify_dir(&store, Strategy::Parallel).unwrap().is_ok(),
        "pristine store fails"
    );

    let (mut flips, mut caught) = (0usize, 0usize);
    for (path, owners) in &files {
        let pristine = std::fs::read(path).unwrap();
        ensure!(
            pristine.len() == owners.len(),
            "{} has unexpected length",
            path.display()
        );
        for (i, &want) in owners.iter().enumerate() {
            let mut bytes = pristine.clone();
            bytes[i] ^= 0xFF;
            std::fs::write(path, &bytes).unwrap();
            flips += 1;
            match verify_dir(&store, Strategy::Parallel).unwrap() {
                ChainStatus::Bad { index, .. } if index == want => caught += 1,
                other => {
                    std::fs::write(path, &pristine).unwrap();
                    return Err(format!(
                        "byte {i} of {}: {other}, expected index {want}",
                        path.display()
                    ));
                }
            }
        }
        std::fs::write(path, &pristine).unwrap();
    }
    ensure!(
        verify_dir(&store, Strategy::Sequential).unwrap().is_ok(),
        "store not restored"
    );
    Ok(format!("{caught}/{flips} flips detected at the correct index"))
}

fn random_object(rng: &mut impl Rng) -> DataObject {
    let mut obj = DataObject::new();
    for _ in 0..rng.random_range(0..24) {
        let tag = TagCode::new(rng.random(), rng.random());
        let mut value = vec![0u8; rng.random_range(0..300)];
        rng.fill_bytes(&mut value);
        obj.set(tag, value);
    }
    obj
}

// 4. decode(encode(x)) == x for objects and frames.
fn codec_soundness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut objects: Vec<DataObject> = (0..1000).map(|_| random_object(&mut rng)).collect();
    let mut big = minimal_object("obj-big", "ORD-B", "SN-B", Method::CT);
    big.set(tags::AMPLITUDE_GRID, vec![0x3C; 17 * 1024 * 1024]);
    objects.push(big);
    for (i, obj) in objects.iter().enumerate() {
        let bytes = encode_object(obj);
        let back = decode_object(&bytes).map_err(|e| format!("object {i}: {e}"))?;
        ensure!(&back == obj, "object {i} changed in round trip");
        ensure!(encode_object(&back) == bytes, "object {i} re-encodes differently");
    }

    let channels = [Channel::Orders, Channel::Archive, Channel::Sovereign];
    let mut frames = Vec::new();
    for _ in 0..1000 {
        let mut payload = vec![0u8; rng.random_range(0..4096)];
        rng.fill_bytes(&mut payload);
        frames.push(Frame::new(channels[rng.random_range(0..3)], payload));
    }
    frames.push(Frame::new(Channel::Archive, vec![7u8; 17 * 1024 * 1024]));
    let mut stream = Vec::new();
    for (i, f) in frames.iter().enumerate() {
        let bytes = f.encode().map_err(|e| format!("frame {i}: {e}"))?;
        ensure!(
            decode_frame(&bytes).map_err(|e| e.to_string())? == *f,
            "frame {i} changed"
        );
        write_frame(&mut stream, f.channel, &f.payload).map_err(|e| e.to_string())?;
    }
    let mut cursor = std::io::Cursor::new(stream);
    for (i, f) in frames.iter().enumerate() {
        let got = read_frame(&mut cursor).map_err(|e| e.to_string())?;
        ensure!(got.as_ref() == Some(f), "streamed frame {i} changed");
    }
    ensure!(
        read_frame(&mut cursor).map_err(|e| e.to_string())?.is_none(),
        "stream has trailing data"
    );
    Ok(format!(
        "{} objects (one of 17 MiB) and {} frames round-trip",
        objects.len(),
        frames.len()
    ))
}

// 5. The four-role supply chain at seed 42.
fn end_to_end() -> Outcome {
    let cfg = scenario("supply-chain.scen");
    ensure!(cfg.seed == 42, "shipped seed is {}", cfg.seed);
    let (d1, d2) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let a = run_scenario(&cfg, d1.path()).map_err(|e| e.to_string())?;
    let b = run_scenario(&cfg, d2.path()).map_err(|e| e.to_string())?;
    ensure!(a.violations().is_empty(), "{:?}", a.violations());
    for o in &a.orders {
        ensure!(
            o.state == Some(OrderState::Reported),
            "{} ended {:?}",
            o.order_id,
            o.state
        );
        let rv = o.reported.as_ref().unwrap();
        ensure!(
            rv.archived_refs.len() as u32 >= o.min_refs,
            "{} under-referenced",
            o.order_id
        );
        let archive = &a.company(&o.company).unwrap().archive;
        for uid in &rv.archived_refs {
            ensure!(
                archive.order_of(uid).as_deref() == Some(o.order_id.as_str()),
                "{uid} does not resolve"
            );
        }
    }
    let mut objects = 0;
    for c in &a.companies {
        ensure!(c.chain.is_ok(), "{}: {}", c.name, c.chain);
        for uid in c.archive.list() {
            let owner = c.archive.order_of(&uid).unwrap_or_default();
            ensure!(a.order(&owner).is_some(), "{uid} has unknown order {owner:?}");
            objects += 1;
        }
    }
    ensure!(a.report.chain_status == "OK", "chain {}", a.report.chain_status);
    ensure!(a.report.rami_gaps.is_empty(), "gaps {:?}", a.report.rami_gaps);
    ensure!(a.trace.to_jsonl() == b.trace.to_jsonl(), "traces differ between runs");
    Ok(format!(
        "{}/{} REPORTED, {objects} objects resolved, chain OK, 0 gaps, traces identical ({} events)",
        a.report.reported,
        a.report.orders_total,
        a.trace.len()
    ))
}

const MIDDLE: [Layer; 2] = [Layer::Information, Layer::Communication];
const INSTANCE: [Lifecycle; 2] = [Lifecycle::InstProd, Lifecycle::InstUse];
const TYPE_HALF: [Lifecycle; 2] = [Lifecycle::TypeDev, Lifecycle::TypeUse];
const UP_TO_PLANT: [Hierarchy; 5] = [
    Hierarchy::Process,
    Hierarchy::Field,
    Hierarchy::Control,
    Hierarchy::ShopFloor,
    Hierarchy::Plant,
];

fn all_cells() -> Vec<RamiCoordinate> {
    cells(Layer::ALL, Lifecycle::ALL, Hierarchy::ALL).into_iter().collect()
}

// 6. Located claims and coverage against a set-difference oracle.
fn rami() -> Outcome {
    let table = LociTable::standard();
    let bus = table.locate("orders-bus").map_err(|e| e.to_string())?;
    ensure!(
        bus.cells == cells(&MIDDLE, &INSTANCE, &UP_TO_PLANT),
        "orders-bus locus differs"
    );
    let gw = table.locate("gateway").map_err(|e| e.to_string())?;
    let mut want = bus.cells.clone();
    want.extend(cells(&MIDDLE, &INSTANCE, &[Hierarchy::Enterprise]));
    ensure!(gw.cells == want, "gateway locus differs");
    let doc = table.locate("plantdesign-doc").map_err(|e| e.to_string())?;
    ensure!(
        doc.cells == cells(&MIDDLE, &TYPE_HALF, Hierarchy::ALL),
        "plantdesign-doc locus differs"
    );

    let required = cells(&MIDDLE, &INSTANCE, Hierarchy::ALL);
    let gaps = coverage_check(&required, &[bus.clone(), gw.clone()]).gaps;
    ensure!(
        gaps == cells(&MIDDLE, &INSTANCE, &[Hierarchy::ConnectedWorld]),
        "gaps {gaps:?}"
    );
    let sov = table.locate("sovereignty").map_err(|e| e.to_string())?;
    ensure!(
        coverage_check(&required, &[bus, gw, sov]).is_covered(),
        "sovereignty does not close the gap"
    );

    let universe = all_cells();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let pick = |rng: &mut ChaCha8Rng| -> BTreeSet<RamiCoordinate> {
        let p: f64 = rng.random();
        universe.iter().copied().filter(|_| rng.random_bool(p)).collect()
    };
    for case in 0..1000 {
        let required = pick(&mut rng);
        let loci: Vec<ComponentLocus> = (0..rng.random_range(0..5))
            .map(|i| ComponentLocus {
                component: format!("c{i}"),
                cells: pick(&mut rng),
            })
            .collect();
        let oracle: BTreeSet<RamiCoordinate> = required
            .iter()
            .copied()
            .filter(|c| !loci.iter().any(|l| l.cells.contains(c)))
            .collect();
        ensure!(
            coverage_check(&required, &loci).gaps == oracle,
            "case {case} differs from the oracle"
        );
    }
    Ok("three located claims hold, 1000/1000 coverage checks match".into())
}

fn station_manifest(serial: &str) -> Manifest {
    let ty = TypeId::new("acme", "ut-station").unwrap();
    let mut m = Manifest::new(ty.clone(), ty.instance(serial).unwrap(), serial);
    m.body.services.push(ServiceDesc::inspect(Method::UT));
    m
}

fn order(id: &str, priority: u32, due: u64) -> InspectionOrder {
    InspectionOrder {
        order_id: id.into(),
        component_serial: "C-1".into(),
        component_type: TypeId::new("acme", "shaft").unwrap(),
        procedure_id: "UT-P1".into(),
        station: None,
        due: Timestamp::from_ticks(due),
        priority,
        extra: BTreeMap::new(),
        attachment: None,
        attachment_ref: None,
    }
}

fn bus_with(index: Arc<dyn ObjectIndex>) -> (Bus, InstanceId) {
    let reg = Registry::new(Dictionary::standard());
    let station = reg.register(station_manifest("S1")).unwrap().id;
    let book = ProcedureBook::new([ut_procedure(4, 4)]).unwrap();
    (Bus::new(Arc::new(reg), book, index, LogicalClock::new()), station)
}

/// Union-find over cells at or above the floor.
fn brute_components(rows: usize, cols: usize, grid: &[f32], floor: f32) -> Vec<Indication> {
    let mut parent: Vec<usize> = (0..grid.len()).collect();
    fn find(p: &mut [usize], mut x: usize) -> usize {
        while p[x] != x {
            p[x] = p[p[x]];
            x = p[x];
        }
        x
    }
    let hot = |i: usize| grid[i] >= floor;
    for r in 0..rows {
        for c in 0..cols {
            let i = r * cols + c;
            if !hot(i) {
                continue;
            }
            for j in [(c + 1 < cols).then(|| i + 1), (r + 1 < rows).then(|| i + cols)]
                .into_iter()
                .flatten()
            {
                if hot(j) {
                    let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                    parent[a] = b;
                }
            }
        }
    }
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for i in (0..grid.len()).filter(|&i| hot(i)) {
        let root = find(&mut parent, i);
        groups.entry(root).or_default().push(i);
    }
    let mut out: Vec<(usize, Indication)> = groups
        .into_values()
        .map(|members| {
            let mut peak = members[0];
            for &m in &members {
                if grid[m] > grid[peak] {
                    peak = m;
                }
            }
            (
                members[0],
                Indication {
                    row: (peak / cols) as u16,
                    col: (peak % cols) as u16,
                    cells: members.len() as u32,
                    amplitude: grid[peak],
                },
            )
        })
        .collect();
    out.sort_by_key(|(first, _)| *first);
    out.into_iter().map(|(_, ind)| ind).collect()
}

// 7. Query, worklist and evaluation against independent oracles.
fn oracles() -> Outcome {
    const CASES: usize = 500;
    let mut rng = ChaCha8Rng::seed_from_u64(7);

    let dir = tempfile::tempdir().unwrap();
    let archive = Archive::open(dir.path(), Dictionary::standard(), LogicalClock::new()).unwrap();
    let orders = ["O1", "O2", "O3", "O4", "O5"];
    let serials = ["S-1", "S-2", "S-3", "S-4"];
    let methods = [Method::UT, Method::RT, Method::CT, Method::VT];
    for i in 0..80 {
        let obj = minimal_object(
            &format!("obj-{i}"),
            orders[rng.random_range(0..orders.len())],
            serials[rng.random_range(0..serials.len())],
            methods[rng.random_range(0..methods.len())],
        );
        archive.store(&obj).unwrap();
    }
    let stored: Vec<(String, DataObject)> = archive
        .list()
        .into_iter()
        .map(|u| (u.clone(), archive.fetch(&u).unwrap()))
        .collect();
    for case in 0..CASES {
        let q = QueryCriteria {
            order_id: rng
                .random_bool(0.5)
                .then(|| orders[rng.random_range(0..orders.len())].to_owned()),
            component_serial: rng
                .random_bool(0.5)
                .then(|| serials[rng.random_range(0..serials.len())].to_owned()),
            method: rng
                .random_bool(0.5)
                .then(|| methods[rng.random_range(0..methods.len())]),
        };
        let scan: Vec<String> = stored
            .iter()
            .filter(|(_, o)| {
                q.order_id.as_deref().is_none_or(|v| o.order_id() == Some(v))
                    && q.component_serial
                        .as_deref()
                        .is_none_or(|v| o.component_serial() == Some(v))
                    && q.method.is_none_or(|m| o.method() == Some(m.as_str()))
            })
            .map(|(u, _)| u.clone())
            .collect();
        ensure!(archive.query(&q) == scan, "query case {case} differs from the scan");
    }

    let index: Arc<dyn ObjectIndex> = Arc::new(archive);
    for case in 0..CASES {
        let (bus, station) = bus_with(index.clone());
        let n = rng.random_range(1..=12);
        let mut submitted = Vec::new();
        for i in 0..n {
            let o = order(
                &format!("W-{:02}", rng.random_range(0..100) * 100 + i),
                rng.random_range(0..4),
                rng.random_range(0..6),
            );
            bus.submit_order(o.clone()).unwrap();
            submitted.push(o);
        }
        submitted.sort_by_key(|o| (Reverse(o.priority), o.due, o.order_id.clone()));
        let want: Vec<String> = submitted.into_iter().map(|o| o.order_id).collect();
        let got: Vec<String> = bus
            .poll_worklist(&station)
            .unwrap()
            .into_iter()
            .map(|o| o.order_id)
            .collect();
        ensure!(got == want, "worklist case {case}: {got:?} vs {want:?}");
    }

    for case in 0..CASES {
        let (rows, cols) = (rng.random_range(1..=16u16), rng.random_range(1..=16u16));
        let hot = rng.random_range(0.0..0.6);
        let grid: Vec<f32> = (0..usize::from(rows) * usize::from(cols))
            .map(|_| {
                if rng.random_bool(hot) {
                    // Coarse values so ties between peaks happen.
                    f32::from(rng.random_range(20u8..=40))
                } else {
                    rng.random_range(0.0..20.0)
                }
            })
            .collect();
        let p = ut_procedure(rows, cols);
        let got = evaluate(&grid_object(rows, cols, &grid), &p).map_err(|e| e.to_string())?;
        let want = brute_components(rows.into(), cols.into(), &grid, p.detection_floor);
        ensure!(got == want, "evaluate case {case} ({rows}x{cols}) differs");
    }
    Ok(format!(
        "{CASES} query, {CASES} worklist and {CASES} evaluate cases, zero mismatches"
    ))
}

fn cli(args: &[&str], data_dir: Option<&Path>) -> (i32, String, String) {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_nde4"));
    cmd.args(args).env_remove("NDE4_DATA_DIR");
    if let Some(d) = data_dir {
        cmd.env("NDE4_DATA_DIR", d);
    }
    let o = cmd.output().unwrap();
    (
        o.status.code().unwrap_or(-1),
        String::from_utf8_lossy(&o.stdout).into_owned(),
        String::from_utf8_lossy(&o.stderr).into_owned(),
    )
}

type Check = (&'static str, &'static str, Box<dyn Fn() -> bool>);

fn checklist() -> Vec<Check> {
    let id_err = |r: Result<(), IdError>| matches!(r, Err(IdError::MalformedToken { .. }));
    let mut out: Vec<Check> = vec![
        (
            "mint_type_id",
            "MalformedToken",
            Box::new(move || id_err(mint_type_id("Acme Corp", "x").map(drop))),
        ),
        (
            "mint_instance_id",
            "MalformedToken",
            Box::new(move || id_err(mint_instance_id(&TypeId::new("acme", "shaft").unwrap(), "").map(drop))),
        ),
        (
            "parse_id",
            "ParseError",
            Box::new(
                || matches!(parse_id("urn:nde4:type:acme:sh@ft"), Err(IdError::Parse { offset, .. }) if offset > 0),
            ),
        ),
        (
            "register_shell",
            "DuplicateInstance",
            Box::new(|| {
                let reg = Registry::new(Dictionary::standard());
                reg.register(station_manifest("S1")).unwrap();
                matches!(
                    reg.register(station_manifest("S1")),
                    Err(RegistryError::DuplicateInstance(_))
                )
            }),
        ),
        (
            "register_shell",
            "InvalidManifest",
            Box::new(|| {
                let reg = Registry::new(Dictionary::standard());
                let mut m = station_manifest("S1");
                m.header.asset_instance_id = None;
                matches!(reg.register(m), Err(RegistryError::InvalidManifest(_)))
            }),
        ),
        (
            "nest",
            "CycleDetected",
            Box::new(|| {
                let reg = Registry::new(Dictionary::standard());
                let a = reg.register(station_manifest("A")).unwrap().id;
                let b = reg.register(station_manifest("B")).unwrap().id;
                reg.nest(&a, &b).unwrap();
                matches!(reg.nest(&b, &a), Err(RegistryError::CycleDetected { .. }))
            }),
        ),
        (
            "nest",
            "UnknownShell",
            Box::new(|| {
                let reg = Registry::new(Dictionary::standard());
                let a = reg.register(station_manifest("A")).unwrap().id;
                let ghost = TypeId::new("acme", "ut-station").unwrap().instance("ghost").unwrap();
                matches!(reg.nest(&a, &ghost), Err(RegistryError::UnknownShell(_)))
            }),
        ),
        (
            "resolve",
            "UnknownShell",
            Box::new(|| {
                let reg = Registry::new(Dictionary::standard());
                let ghost = TypeId::new("acme", "ut-station").unwrap().instance("ghost").unwrap();
                matches!(reg.resolve(&ghost), Err(RegistryError::UnknownShell(_)))
            }),
        ),
        (
            "lookup",
            "UnknownStandardTag",
            Box::new(|| {
                matches!(
                    Dictionary::standard().lookup(TagCode::new(0x0008, 0xFFFE)),
                    Err(DictionaryError::UnknownStandardTag(_))
                )
            }),
        ),
        (
            "interpret",
            "LengthMismatch",
            Box::new(|| {
                let dict = Dictionary::standard();
                let Ok(Lookup::Defined(def)) = dict.lookup(tags::ROWS) else {
                    return false;
                };
                matches!(interpret(def, &[1, 2, 3]), Err(InterpretError::LengthMismatch { .. }))
            }),
        ),
        (
            "interpret",
            "EncodingError",
            Box::new(|| {
                let dict = Dictionary::standard();
                let Ok(Lookup::Defined(def)) = dict.lookup(tags::ORDER_ID) else {
                    return false;
                };
                matches!(interpret(def, &[0xFF, 0xFE]), Err(InterpretError::EncodingError { .. }))
            }),
        ),
    ];

    let null_index = || -> Arc<dyn ObjectIndex> {
        struct Empty;
        impl ObjectIndex for Empty {
            fn order_of(&self, _: &str) -> Option<String> {
                None
            }
        }
        Arc::new(Empty)
    };
    let archived = move |id: &str| {
        let (bus, s) = bus_with(null_index());
        bus.submit_order(order(id, 0, 1)).unwrap();
        bus.claim(id, &s).unwrap();
        let ev = |state| StatusEvent {
            order_id: id.into(),
            state,
            at: Timestamp::epoch(),
            station: None,
        };
        bus.publish_status(ev(OrderState::InProgress)).unwrap();
        bus.publish_status(ev(OrderState::DataArchived)).unwrap();
        bus
    };
    let rv = |id: &str| ReportedValues {
        order_id: id.into(),
        verdict: Verdict::Accept,
        indication_count: 0,
        max_amplitude: None,
        archived_refs: vec!["obj-missing".into()],
    };
    out.extend::<Vec<Check>>(vec![
        (
            "submit_order",
            "DuplicateOrder",
            Box::new(move || {
                let (bus, _) = bus_with(null_index());
                bus.submit_order(order("O1", 0, 1)).unwrap();
                matches!(bus.submit_order(order("O1", 0, 1)), Err(BusError::DuplicateOrder(_)))
            }),
        ),
        (
            "submit_order",
            "ValidationFailed",
            Box::new(move || {
                let (bus, _) = bus_with(null_index());
                matches!(
                    bus.submit_order(order("no spaces", 0, 1)),
                    Err(BusError::ValidationFailed(_))
                )
            }),
        ),
        (
            "poll_worklist",
            "UnknownStation",
            Box::new(move || {
                let (bus, _) = bus_with(null_index());
                let ghost = TypeId::new("acme", "ut-station").unwrap().instance("ghost").unwrap();
                matches!(bus.poll_worklist(&ghost), Err(BusError::UnknownStation(_)))
            }),
        ),
        (
            "publish_status",
            "IllegalTransition",
            Box::new(move || {
                let bus = archived("O1");
                let ev = StatusEvent {
                    order_id: "O1".into(),
                    state: OrderState::Queued,
                    at: Timestamp::epoch(),
                    station: None,
                };
                matches!(bus.publish_status(ev), Err(BusError::IllegalTransition { .. }))
            }),
        ),
        (
            "publish_status",
            "UnknownOrder",
            Box::new(move || {
                let (bus, _) = bus_with(null_index());
                let ev = StatusEvent {
                    order_id: "nope".into(),
                    state: OrderState::InProgress,
                    at: Timestamp::epoch(),
                    station: None,
                };
                matches!(bus.publish_status(ev), Err(BusError::UnknownOrder(_)))
            }),
        ),
        (
            "report_values",
            "WrongState",
            Box::new(move || {
                let (bus, _) = bus_with(null_index());
                bus.submit_order(order("O1", 0, 1)).unwrap();
                matches!(bus.report_values(rv("O1")), Err(BusError::WrongState { .. }))
            }),
        ),
        (
            "report_values",
            "UnknownOrder",
            Box::new(move || {
                let (bus, _) = bus_with(null_index());
                matches!(bus.report_values(rv("O9")), Err(BusError::UnknownOrder(_)))
            }),
        ),
        (
            "report_values",
            "DanglingArchiveRef",
            Box::new(move || {
                matches!(
                    archived("O1").report_values(rv("O1")),
                    Err(BusError::DanglingArchiveRef(_))
                )
            }),
        ),
        (
            "encode_frame",
            "OversizedPayload",
            Box::new(|| {
                matches!(
                    encode_frame(Channel::Orders, &vec![0; ORDERS_PAYLOAD_LIMIT + 1]),
                    Err(FrameError::OversizedPayload { .. })
                )
            }),
        ),
        (
            "decode_frame",
            "BadMagic",
            Box::new(|| {
                let mut b = encode_frame(Channel::Orders, b"hi").unwrap();
                b[0] ^= 0xFF;
                matches!(decode_frame(&b), Err(FrameError::BadMagic))
            }),
        ),
        (
            "decode_frame",
            "BadVersion",
            Box::new(|| {
                let mut b = encode_frame(Channel::Orders, b"hi").unwrap();
                b[4] = 9;
                matches!(decode_frame(&b), Err(FrameError::BadVersion(9)))
            }),
        ),
        (
            "decode_frame",
            "LengthMismatch",
            Box::new(|| {
                let b = encode_frame(Channel::Orders, b"hello").unwrap();
                matches!(decode_frame(&b[..b.len() - 1]), Err(FrameError::LengthMismatch { .. }))
            }),
        ),
    ]);

    let element = |tag: TagCode| {
        let mut o = DataObject::new();
        o.set(tag, b"x".to_vec());
        encode_object(&o)[5..].to_vec()
    };
    let store_dir = || {
        let dir = tempfile::tempdir().unwrap();
        let a = Archive::open(dir.path(), Dictionary::standard(), LogicalClock::new()).unwrap();
        (dir, a)
    };
    out.extend::<Vec<Check>>(vec![
        (
            "decode_object",
            "NonCanonicalOrder",
            Box::new(move || {
                let mut b = encode_object(&DataObject::new());
                b.extend(element(tags::ORDER_ID));
                b.extend(element(tags::OBJECT_UID));
                matches!(decode_object(&b), Err(CodecError::NonCanonicalOrder { .. }))
            }),
        ),
        (
            "decode_object",
            "TruncatedElement",
            Box::new(|| {
                let b = encode_object(&minimal_object("obj-1", "O1", "C-1", Method::UT));
                matches!(
                    decode_object(&b[..b.len() - 2]),
                    Err(CodecError::TruncatedElement { .. })
                )
            }),
        ),
        (
            "decode_object",
            "BadPreamble",
            Box::new(|| matches!(decode_object(b"DICM\x01"), Err(CodecError::BadPreamble))),
        ),
        (
            "store",
            "ValidationFailed",
            Box::new(move || {
                let (_d, a) = store_dir();
                let mut obj = minimal_object("obj-1", "O1", "C-1", Method::UT);
                obj.remove(tags::ORDER_ID);
                matches!(a.store(&obj), Err(ArchiveError::ValidationFailed(_)))
            }),
        ),
        (
            "store",
            "DuplicateUID",
            Box::new(move || {
                let (_d, a) = store_dir();
                let obj = minimal_object("obj-1", "O1", "C-1", Method::UT);
                a.store(&obj).unwrap();
                matches!(a.store(&obj), Err(ArchiveError::DuplicateUid(_)))
            }),
        ),
        (
            "fetch",
            "UnknownUID",
            Box::new(move || {
                let (_d, a) = store_dir();
                matches!(a.fetch("obj-9"), Err(ArchiveError::UnknownUid(_)))
            }),
        ),
        (
            "order_to_archive_work",
            "UnmappedField",
            Box::new(|| {
                let gw = Gateway::new(MappingTable::standard().without("component_type"));
                matches!(
                    gw.order_to_archive_work(&order("O1", 0, 1)),
                    Err(GatewayError::UnmappedField(_))
                )
            }),
        ),
        (
            "archive_result_to_kpis",
            "DanglingArchiveRef",
            Box::new(move || {
                let (_d, a) = store_dir();
                let r =
                    Gateway::default().archive_result_to_kpis("O1", &[], &["obj-9".into()], &ut_procedure(4, 4), &a);
                matches!(r, Err(GatewayError::DanglingArchiveRef(_)))
            }),
        ),
    ]);

    let bounded = |n| UsagePolicy {
        max_reads: MaxReads::Bounded(n),
        expires: None,
        allow_forward: false,
        purpose: "qa".into(),
    };
    let ghost_contract = |w: &Sov| format!("{}#99", w.provider.id());
    out.extend::<Vec<Check>>(vec![
        (
            "offer",
            "UnknownUID",
            Box::new(move || {
                let w = sov_world();
                matches!(
                    w.provider.offer(w.consumer.id(), "ghost", bounded(1)),
                    Err(SovError::UnknownUid(_))
                )
            }),
        ),
        (
            "offer",
            "InvalidPolicy",
            Box::new(move || {
                let w = sov_world();
                matches!(
                    w.provider.offer(w.consumer.id(), "obj-1", bounded(0)),
                    Err(SovError::InvalidPolicy(_))
                )
            }),
        ),
        (
            "accept",
            "UnknownContract",
            Box::new(move || {
                let w = sov_world();
                matches!(
                    w.consumer.accept(&ghost_contract(&w)),
                    Err(SovError::UnknownContract(_))
                )
            }),
        ),
        (
            "accept",
            "WrongConsumer",
            Box::new(move || {
                let w = sov_world();
                let k = w.provider.offer(w.consumer.id(), "obj-1", bounded(1)).unwrap();
                matches!(w.other.accept(&k), Err(SovError::WrongConsumer(_)))
            }),
        ),
        (
            "accept",
            "WrongState",
            Box::new(move || {
                let w = sov_world();
                let k = w.provider.offer(w.consumer.id(), "obj-1", bounded(1)).unwrap();
                w.consumer.accept(&k).unwrap();
                matches!(w.consumer.accept(&k), Err(SovError::WrongState { .. }))
            }),
        ),
        (
            "consume",
            "PolicyExhausted",
            Box::new(move || {
                let w = sov_world();
                let k = w.provider.offer(w.consumer.id(), "obj-1", bounded(1)).unwrap();
                w.consumer.accept(&k).unwrap();
                w.consumer.consume(&k).unwrap();
                matches!(w.consumer.consume(&k), Err(SovError::PolicyExhausted(_)))
            }),
        ),
        (
            "consume",
            "PolicyExpired",
            Box::new(move || {
                let w = sov_world();
                let p = UsagePolicy {
                    expires: Some(Timestamp::from_ticks(10)),
                    ..bounded(3)
                };
                let k = w.provider.offer(w.consumer.id(), "obj-1", p).unwrap();
                w.consumer.accept(&k).unwrap();
                w.clock.advance_to(11);
                matches!(w.consumer.consume(&k), Err(SovError::PolicyExpired(_)))
            }),
        ),
        (
            "consume",
            "UnknownContract",
            Box::new(move || {
                let w = sov_world();
                matches!(
                    w.consumer.consume(&ghost_contract(&w)),
                    Err(SovError::UnknownContract(_))
                )
            }),
        ),
        (
            "forward",
            "ForwardProhibited",
            Box::new(move || {
                let w = sov_world();
                let k = w.provider.offer(w.consumer.id(), "obj-1", bounded(2)).unwrap();
                w.consumer.accept(&k).unwrap();
                matches!(
                    w.consumer.forward(&k, w.other.id(), bounded(1)),
                    Err(SovError::ForwardProhibited(_))
                )
            }),
        ),
        (
            "forward",
            "WrongState",
            Box::new(move || {
                let w = sov_world();
                let p = UsagePolicy {
                    allow_forward: true,
                    ..bounded(1)
                };
                let k = w.provider.offer(w.consumer.id(), "obj-1", p.clone()).unwrap();
                w.consumer.accept(&k).unwrap();
                w.consumer.consume(&k).unwrap();
                matches!(
                    w.consumer.forward(&k, w.other.id(), p),
                    Err(SovError::WrongState { .. })
                )
            }),
        ),
        (
            "locate",
            "UnknownComponent",
            Box::new(|| {
                matches!(
                    LociTable::standard().locate("flux-capacitor"),
                    Err(RamiError::UnknownComponent(_))
                )
            }),
        ),
    ]);

    let sim = |cfg: ScenarioConfig| {
        let dir = tempfile::tempdir().unwrap();
        run_scenario(&cfg, dir.path())
    };
    out.extend::<Vec<Check>>(vec![
        (
            "run_scenario",
            "ConfigInvalid",
            Box::new(move || {
                let mut cfg = scenario("single-plant.scen");
                cfg.orders[0].procedure_id = "NOPE".into();
                matches!(sim(cfg), Err(SimError::ConfigInvalid(_)))
            }),
        ),
        (
            "run_scenario",
            "ScenarioDeadlock",
            Box::new(move || {
                matches!(
                    sim(scenario("no-sovereignty.scen")),
                    Err(SimError::ScenarioDeadlock { .. })
                )
            }),
        ),
        (
            "evaluate",
            "GridShapeMismatch",
            Box::new(|| {
                let mut obj = grid_object(2, 2, &[1.0; 4]);
                obj.set(tags::COLS, 3u16.to_le_bytes().to_vec());
                matches!(
                    evaluate(&obj, &ut_procedure(2, 3)),
                    Err(EvalError::GridShapeMismatch { .. })
                )
            }),
        ),
        (
            "inject_fault",
            "FaultNotApplicable",
            Box::new(move || {
                let mut cfg = scenario("single-plant.scen");
                cfg.faults = vec![FaultKind::PolicyOverread];
                matches!(sim(cfg), Err(SimError::FaultNotApplicable { .. }))
            }),
        ),
        (
            "cmd_sim_run",
            "missing flag -> exit 2",
            Box::new(|| cli(&["sim", "run", "--seed", "42", "--out", "unused"], None).0 == 2),
        ),
        (
            "cmd_sim_run",
            "ScenarioDeadlock -> exit 3, partial trace",
            Box::new(|| {
                let dir = tempfile::tempdir().unwrap();
                let scen = root().join("scenarios/no-sovereignty.scen");
                let (code, _, err) = cli(
                    &[
                        "sim",
                        "run",
                        "--scenario",
                        scen.to_str().unwrap(),
                        "--seed",
                        "42",
                        "--out",
                        dir.path().to_str().unwrap(),
                    ],
                    None,
                );
                code == 3
                    && err.contains("deadlock")
                    && dir.path().join("run.trace").metadata().is_ok_and(|m| m.len() > 0)
            }),
        ),
        (
            "cmd_archive",
            "unknown UID -> exit 3",
            Box::new(|| {
                let dir = tempfile::tempdir().unwrap();
                Archive::open(dir.path(), Dictionary::standard(), LogicalClock::new()).unwrap();
                cli(&["archive", "dump", "obj-404"], Some(dir.path())).0 == 3
            }),
        ),
        (
            "cmd_validate",
            "parse failure -> exit 3 with offset",
            Box::new(|| {
                let path = root().join("fixtures/truncated.ndeo");
                let (code, _, err) = cli(&["validate", "object", path.to_str().unwrap()], None);
                code == 3 && err.contains("TruncatedElement at byte ")
            }),
        ),
    ]);
    out
}

// 8. Every declared error case is triggered.
fn negative_paths() -> Outcome {
    let list = checklist();
    let mut missed = Vec::new();
    for (op, err, check) in &list {
        let hit = check();
        println!("    [{}] {op}: {err}", if hit { "x" } else { " " });
        if !hit {
            missed.push(format!("{op}: {err}"));
        }
    }
    ensure!(missed.is_empty(), "untriggered: {}", missed.join(", "));
    Ok(format!("{}/{} declared errors triggered", list.len(), list.len()))
}

type Criterion = (u32, &'static str, fn() -> Outcome, Duration);

fn main() {
    let criteria: [Criterion; 8] = [
        (1, "boundary fidelity", boundary, Duration::from_secs(5)),
        (2, "view-once enforcement", view_once, Duration::from_secs(5)),
        (3, "revision safety", revision_safety, Duration::from_secs(30)),
        (4, "codec soundness", codec_soundness, Duration::from_secs(60)),
        (5, "end-to-end flow", end_to_end, Duration::from_secs(10)),
        (6, "rami fixtures", rami, Duration::from_secs(5)),
        (7, "oracle equivalence", oracles, Duration::from_secs(60)),
        (8, "negative-path coverage", negative_paths, Duration::from_secs(60)),
    ];
    let filter: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (n, name, f, budget) in criteria {
        if !filter.is_empty() && !filter.contains(&n) {
            continue;
        }
        let start = Instant::now();
        let mut outcome = f();
        let took = start.elapsed();
        if outcome.is_ok() && took > budget {
            outcome = Err(format!("took {:.2}s, budget {}s", took.as_secs_f64(), budget.as_secs()));
        }
        match outcome {
            Ok(detail) => println!("criterion {n} {name}: PASS ({detail}; {:.2}s)", took.as_secs_f64()),
            Err(why) => {
                failed += 1;
                println!("criterion {n} {name}: FAIL ({why}; {:.2}s)", took.as_secs_f64());
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
