use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn scenario(name: &str) -> String {
    root().join("scenarios").join(name).display().to_string()
}

fn fixture(name: &str) -> String {
    root().join("fixtures").join(name).display().to_string()
}

fn nde4(args: &[&str], data_dir: Option<&Path>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_nde4"));
    cmd.args(args).env_remove("NDE4_DATA_DIR");
    if let Some(d) = data_dir {
        cmd.env("NDE4_DATA_DIR", d);
    }
    cmd.output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn sim(name: &str, seed: &str, out: &Path) -> Output {
    nde4(
        &[
            "sim",
            "run",
            "--scenario",
            &scenario(name),
            "--seed",
            seed,
            "--out",
            out.to_str().unwrap(),
        ],
        None,
    )
}

fn report(out: &Path) -> serde_json::Value {
    serde_json::from_slice(&std::fs::read(out.join("report.json")).unwrap()).unwrap()
}

#[test]
fn demo_run_is_clean() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let o = sim("demo.scen", "42", &out);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let r = report(&out);
    assert_eq!(r["reported"], r["orders_total"]);
    assert_eq!(r["chain_status"], "OK");
    assert!(stdout(&o).contains("chain OK"));
    assert!(out.join("run.trace").is_file());

    // The same directory is refused.
    let again = sim("demo.scen", "42", &out);
    assert_eq!(code(&again), 3);
    assert!(stderr(&again).contains("already holds a run"));
}

#[test]
fn seed_flag_drives_the_trace() {
    let dir = tempfile::tempdir().unwrap();
    let run = |sub: &str, seed: &str| {
        let out = dir.path().join(sub);
        assert_eq!(code(&sim("supply-chain.scen", seed, &out)), 0);
        std::fs::read(out.join("run.trace")).unwrap()
    };
    let a = run("a", "42");
    assert_eq!(a, run("b", "42"));
    assert_ne!(a, run("c", "7"));
}

#[test]
fn connected_world_gap_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let o = sim("connected-gap.scen", "42", dir.path());
    assert_eq!(code(&o), 1);
    assert!(!report(dir.path())["rami_gaps"].as_array().unwrap().is_empty());
    assert!(stdout(&o).contains("rami gap INFORMATION/INST_USE/CONNECTED_WORLD"));
}

#[test]
fn deadlock_exits_3_and_keeps_partial_trace() {
    let dir = tempfile::tempdir().unwrap();
    let o = sim("no-sovereignty.scen", "42", dir.path());
    assert_eq!(code(&o), 3);
    assert!(stderr(&o).contains("scenario deadlock"));
    assert!(!std::fs::read(dir.path().join("run.trace")).unwrap().is_empty());
    assert!(!report(dir.path())["rami_gaps"].as_array().unwrap().is_empty());
}

#[test]
fn tamper_fault_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let o = sim("tamper.scen", "42", dir.path());
    assert_eq!(code(&o), 1);
    assert!(report(dir.path())["chain_status"]
        .as_str()
        .unwrap()
        .starts_with("bad at index"));
}

#[test]
fn usage_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    assert_eq!(code(&nde4(&["sim", "run", "--seed", "42", "--out", out], None)), 2);
    assert_eq!(
        code(&nde4(
            &["sim", "run", "--scenario", "x.scen", "--seed", "many", "--out", out],
            None
        )),
        2
    );
    assert_eq!(code(&nde4(&["frobnicate"], None)), 2);
    assert_eq!(code(&nde4(&["validate", "object"], None)), 2);
}

#[test]
fn unreadable_scenario_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let o = nde4(
        &[
            "sim",
            "run",
            "--scenario",
            &fixture("station.aas"),
            "--seed",
            "1",
            "--out",
            dir.path().to_str().unwrap(),
        ],
        None,
    );
    assert_eq!(code(&o), 3);
}

fn archive_dir(dir: &Path) -> PathBuf {
    assert_eq!(code(&sim("single-plant.scen", "42", dir)), 0);
    dir.join("data/acme/archive")
}

#[test]
fn archive_commands() {
    let dir = tempfile::tempdir().unwrap();
    let store = archive_dir(dir.path());

    let v = nde4(&["archive", "verify"], Some(&store));
    assert_eq!(code(&v), 0);
    assert_eq!(stdout(&v), "chain OK\n");

    let ls = nde4(&["archive", "ls"], Some(&store));
    assert_eq!(code(&ls), 0);
    // ORD-8 has the higher priority and is stored first.
    assert_eq!(stdout(&ls), "obj-ORD-8-0\nobj-ORD-7-0\n");

    let dump = nde4(&["archive", "dump", "obj-ORD-7-0"], Some(&store));
    assert_eq!(code(&dump), 0);
    let text = stdout(&dump);
    assert!(text.contains("order_id (0020,0001): ORD-7\n"), "{text}");
    assert!(text.contains("method_code (0008,0010): UT\n"));

    let json = nde4(&["--format", "json", "archive", "dump", "obj-ORD-7-0"], Some(&store));
    let rows: serde_json::Value = serde_json::from_str(&stdout(&json)).unwrap();
    assert!(rows
        .as_array()
        .unwrap()
        .iter()
        .any(|r| r["name"] == "rows" && r["value"] == 8));

    assert_eq!(code(&nde4(&["archive", "dump", "obj-ORD-9-0"], Some(&store))), 3);
    assert_eq!(code(&nde4(&["archive", "ls"], Some(&dir.path().join("absent")))), 3);
}

#[test]
fn tampered_store_reports_bad_index() {
    let dir = tempfile::tempdir().unwrap();
    let store = archive_dir(dir.path());
    let victim = store.join("obj-ORD-7-0.ndeo");
    let mut bytes = std::fs::read(&victim).unwrap();
    bytes[20] ^= 0x01;
    std::fs::write(&victim, bytes).unwrap();

    let v = nde4(&["archive", "verify"], Some(&store));
    assert_eq!(code(&v), 1);
    assert!(stdout(&v).starts_with("bad at index 1"), "{}", stdout(&v));

    let j = nde4(&["archive", "verify", "--format", "json"], Some(&store));
    let status: serde_json::Value = serde_json::from_str(&stdout(&j)).unwrap();
    assert_eq!(status["bad_index"], 1);
    assert_eq!(status["ok"], false);
}

#[test]
fn validate_fixtures() {
    let ok = nde4(&["validate", "shell", &fixture("station.aas")], None);
    assert_eq!(code(&ok), 0);
    assert_eq!(stdout(&ok), "valid\n");

    let missing = nde4(&["validate", "shell", &fixture("missing-asset-id.aas")], None);
    assert_eq!(code(&missing), 1);
    assert!(stdout(&missing).contains("MissingHeaderId"));

    // The private order-info element is reported but is not a failure.
    let obj = nde4(&["validate", "object", &fixture("ut-object.ndeo")], None);
    assert_eq!(code(&obj), 0);
    assert!(stdout(&obj).contains("PrivateTag"));

    let cut = nde4(&["validate", "object", &fixture("truncated.ndeo")], None);
    assert_eq!(code(&cut), 3);
    assert!(stderr(&cut).contains("TruncatedElement at byte "), "{}", stderr(&cut));

    let not_json = nde4(&["validate", "shell", &fixture("truncated.ndeo")], None);
    assert_eq!(code(&not_json), 3);
    assert!(stderr(&not_json).contains("parse error at byte "));
}

#[test]
fn rami_commands() {
    let loc = nde4(&["--format", "json", "rami", "locate", "gateway"], None);
    assert_eq!(code(&loc), 0);
    let loci: serde_json::Value = serde_json::from_str(&stdout(&loc)).unwrap();
    let cells = loci[0]["cells"].as_array().unwrap();
    assert!(cells.iter().any(|c| c == "INFORMATION/INST_USE/ENTERPRISE"));
    assert!(!cells.iter().any(|c| c.as_str().unwrap().ends_with("CONNECTED_WORLD")));

    assert_eq!(code(&nde4(&["rami", "locate", "flux-capacitor"], None)), 3);

    let covered = nde4(&["rami", "check", "--scenario", &scenario("supply-chain.scen")], None);
    assert_eq!(code(&covered), 0, "{}", stdout(&covered));
    assert!(stdout(&covered).ends_with("covered\n"));

    let gaps = nde4(
        &[
            "rami",
            "check",
            "--component",
            "orders-bus",
            "--component",
            "gateway",
            "--require",
            "INFORMATION/*/CONNECTED_WORLD",
        ],
        None,
    );
    assert_eq!(code(&gaps), 1);
    assert_eq!(stdout(&gaps).matches("gap ").count(), 4);

    assert_eq!(
        code(&nde4(
            &["rami", "check", "--component", "gateway", "--require", "NOWHERE"],
            None
        )),
        2
    );
}
