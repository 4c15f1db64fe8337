//! The `nde4` command line.
//!
//! Exit codes: 0 ok, 1 findings or gaps, 2 usage error, 3 runtime error.

use std::collections::BTreeSet;
use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use nde4_core::archive::{
    data_dir_from_env, decode_object, Archive, ArchiveError, ChainStatus, DataObject, DATA_DIR_ENV,
};
use nde4_core::plantsim::{run_scenario, RunOutput, ScenarioConfig, SimError};
use nde4_core::rami::{coverage_check, Hierarchy, Layer, Lifecycle, LociTable, RamiCoordinate};
use nde4_core::registry::{validate_manifest, Manifest};
use nde4_core::semantics::{interpret, validate_object, Dictionary, Lookup, Value};
use nde4_core::time::LogicalClock;

pub const EXIT_OK: u8 = 0;
pub const EXIT_FINDINGS: u8 = 1;
pub const EXIT_USAGE: u8 = 2;
pub const EXIT_RUNTIME: u8 = 3;

pub const TRACE_FILE: &str = "run.trace";
pub const REPORT_FILE: &str = "report.json";
pub const DATA_SUBDIR: &str = "data";

/// Exit code plus what goes to stdout and stderr.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CommandResult {
    pub code: u8,
    pub stdout: String,
    pub stderr: String,
}

impl CommandResult {
    fn ok(stdout: String) -> Self {
        Self {
            code: EXIT_OK,
            stdout,
            stderr: String::new(),
        }
    }

    fn with_code(code: u8, stdout: String) -> Self {
        Self {
            code,
            stdout,
            stderr: String::new(),
        }
    }

    fn runtime(msg: impl std::fmt::Display) -> Self {
        Self {
            code: EXIT_RUNTIME,
            stdout: String::new(),
            stderr: format!("error: {msg}\n"),
        }
    }

    fn usage(msg: impl std::fmt::Display) -> Self {
        Self {
            code: EXIT_USAGE,
            stdout: String::new(),
            stderr: format!("error: {msg}\n"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, ValueEnum)]
pub enum Format {
    #[default]
    Text,
    Json,
}

#[derive(Debug, Parser)]
#[command(
    name = "nde4",
    version,
    about = "Run plant scenarios, inspect archives, validate shells and objects"
)]
struct Cli {
    /// Output format.
    #[arg(long, global = true, value_enum, default_value_t = Format::Text)]
    format: Format,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Scenario simulation.
    #[command(subcommand)]
    Sim(SimCommand),
    /// Inspect the archive under $NDE4_DATA_DIR.
    #[command(subcommand)]
    Archive(ArchiveCommand),
    /// Validate a shell manifest or a stored object file.
    #[command(subcommand)]
    Validate(ValidateCommand),
    /// Locate components and check coverage.
    #[command(subcommand)]
    Rami(RamiCommand),
}

#[derive(Debug, Subcommand)]
enum SimCommand {
    /// Run a scenario and write run.trace and report.json.
    Run(SimRun),
}

#[derive(Debug, Args)]
struct SimRun {
    #[arg(long)]
    scenario: PathBuf,
    /// Overrides the seed in the scenario file.
    #[arg(long)]
    seed: u64,
    /// Output directory. Must not already hold a run.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Subcommand)]
enum ArchiveCommand {
    /// Recompute the integrity chain.
    Verify,
    /// Object UIDs in store order.
    Ls,
    /// Decoded elements of one object.
    Dump { uid: String },
}

#[derive(Debug, Subcommand)]
enum ValidateCommand {
    /// A `.aas` shell manifest.
    Shell { path: PathBuf },
    /// A `.ndeo` object file.
    Object { path: PathBuf },
}

#[derive(Debug, Subcommand)]
enum RamiCommand {
    /// Cells of the named components, or of every known one.
    Locate { components: Vec<String> },
    /// Required cells not covered by the components.
    Check(RamiCheck),
}

#[derive(Debug, Args)]
struct RamiCheck {
    /// Take required cells and deployed components from a scenario.
    #[arg(long)]
    scenario: Option<PathBuf>,
    /// LAYER/LIFECYCLE/HIERARCHY; `*` spans an axis.
    #[arg(long = "require", value_name = "CELL")]
    required: Vec<String>,
    #[arg(long = "component", value_name = "NAME")]
    components: Vec<String>,
}

/// Parse `args` (including the program name) and execute.
pub fn run<I, T>(args: I) -> CommandResult
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let text = e.render().to_string();
            return if e.use_stderr() {
                CommandResult {
                    code: EXIT_USAGE,
                    stdout: String::new(),
                    stderr: text,
                }
            } else {
                CommandResult::ok(text)
            };
        }
    };
    match cli.command {
        Command::Sim(SimCommand::Run(args)) => sim_run(&args, cli.format),
        Command::Archive(cmd) => archive(&cmd, &data_dir_from_env(), cli.format),
        Command::Validate(ValidateCommand::Shell { path }) => validate_shell(&path, cli.format),
        Command::Validate(ValidateCommand::Object { path }) => validate_obj(&path, cli.format),
        Command::Rami(RamiCommand::Locate { components }) => rami_locate(&components, cli.format),
        Command::Rami(RamiCommand::Check(args)) => rami_check(&args, cli.format),
    }
}

fn write_run(out: &Path, run: &RunOutput) -> std::io::Result<()> {
    std::fs::write(out.join(TRACE_FILE), run.trace.to_jsonl())?;
    std::fs::write(out.join(REPORT_FILE), run.report.to_json())
}

fn run_summary(cfg: &ScenarioConfig, out: &Path, run: &RunOutput) -> String {
    let r = &run.report;
    let mut s = String::new();
    let _ = writeln!(s, "scenario {} seed {}", cfg.name, cfg.seed);
    let _ = writeln!(
        s,
        "orders {} reported {} rejected {}",
        r.orders_total, r.reported, r.rejected
    );
    let _ = writeln!(s, "chain {}", r.chain_status);
    if r.rami_gaps.is_empty() {
        let _ = writeln!(s, "rami gaps none");
    }
    for g in &r.rami_gaps {
        let _ = writeln!(s, "rami gap {g}");
    }
    let _ = writeln!(s, "audit denies {}", r.audit_denies);
    let _ = writeln!(
        s,
        "trace {} ({} events)",
        out.join(TRACE_FILE).display(),
        run.trace.len()
    );
    s
}

fn sim_run(args: &SimRun, format: Format) -> CommandResult {
    let mut cfg = match ScenarioConfig::load(&args.scenario) {
        Ok(cfg) => cfg,
        Err(e) => return CommandResult::runtime(format!("{}: {e}", args.scenario.display())),
    };
    cfg.seed = args.seed;
    let out = &args.out;
    if out.join(TRACE_FILE).exists() || out.join(DATA_SUBDIR).exists() {
        return CommandResult::runtime(format!("{} already holds a run", out.display()));
    }
    if let Err(e) = std::fs::create_dir_all(out) {
        return CommandResult::runtime(format!("{}: {e}", out.display()));
    }
    let (run, blocked) = match run_scenario(&cfg, &out.join(DATA_SUBDIR)) {
        Ok(run) => (run, Vec::new()),
        Err(SimError::ScenarioDeadlock { blocked, partial }) => (*partial, blocked),
        Err(e) => return CommandResult::runtime(e),
    };
    if let Err(e) = write_run(out, &run) {
        return CommandResult::runtime(format!("{}: {e}", out.display()));
    }
    let stdout = match format {
        Format::Text => run_summary(&cfg, out, &run),
        Format::Json => run.report.to_json(),
    };
    if !blocked.is_empty() {
        let mut stderr = String::from("error: scenario deadlock\n");
        for b in &blocked {
            let _ = writeln!(stderr, "  blocked {b}");
        }
        return CommandResult {
            code: EXIT_RUNTIME,
            stdout,
            stderr,
        };
    }
    let code = if run.report.has_findings() {
        EXIT_FINDINGS
    } else {
        EXIT_OK
    };
    CommandResult::with_code(code, stdout)
}

fn archive(cmd: &ArchiveCommand, dir: &Path, format: Format) -> CommandResult {
    if !dir.is_dir() {
        return CommandResult::runtime(format!(
            "data directory {} does not exist (set {DATA_DIR_ENV})",
            dir.display()
        ));
    }
    let store = match Archive::open(dir, Dictionary::standard(), LogicalClock::new()) {
        Ok(a) => a,
        Err(e) => return CommandResult::runtime(e),
    };
    match cmd {
        ArchiveCommand::Verify => match store.verify_chain() {
            Ok(status) => archive_verify(&status, format),
            Err(e) => CommandResult::runtime(e),
        },
        ArchiveCommand::Ls => {
            let uids = store.list();
            let stdout = match format {
                Format::Text => uids.iter().map(|u| format!("{u}\n")).collect(),
                Format::Json => format!("{}\n", json!(uids)),
            };
            CommandResult::ok(stdout)
        }
        ArchiveCommand::Dump { uid } => match store.fetch(uid) {
            Ok(obj) => CommandResult::ok(dump(store.dictionary(), &obj, format)),
            Err(ArchiveError::UnknownUid(uid)) => {
                CommandResult::runtime(format!("no object {uid} in {}", dir.display()))
            }
            Err(e) => CommandResult::runtime(e),
        },
    }
}

fn archive_verify(status: &ChainStatus, format: Format) -> CommandResult {
    let stdout = match format {
        Format::Text => format!("{status}\n"),
        Format::Json => format!(
            "{}\n",
            json!({ "ok": status.is_ok(), "bad_index": status.bad_index(), "status": status.to_string() })
        ),
    };
    let code = if status.is_ok() { EXIT_OK } else { EXIT_FINDINGS };
    CommandResult::with_code(code, stdout)
}

fn value_text(v: &Value) -> String {
    match v {
        Value::IdStr(s) | Value::Text(s) => s.clone(),
        Value::DateTime(t) => t.to_string(),
        Value::U16(n) => n.to_string(),
        Value::F32Array(xs) => {
            let lo = xs.iter().copied().fold(f32::INFINITY, f32::min);
            let hi = xs.iter().copied().fold(f32::NEG_INFINITY, f32::max);
            if xs.is_empty() {
                "0 values".to_owned()
            } else {
                format!("{} values, min {lo}, max {hi}", xs.len())
            }
        }
        Value::Bytes(b) => format!("{} bytes", b.len()),
    }
}

fn value_json(v: &Value) -> serde_json::Value {
    match v {
        Value::IdStr(s) | Value::Text(s) => json!(s),
        Value::DateTime(t) => json!(t.to_string()),
        Value::U16(n) => json!(n),
        Value::F32Array(xs) => json!(xs),
        Value::Bytes(b) => json!({ "bytes": b.len() }),
    }
}

fn dump(dict: &Dictionary, obj: &DataObject, format: Format) -> String {
    let mut text = String::new();
    let mut rows = Vec::new();
    for el in obj.elements() {
        let (name, value) = match dict.lookup(el.tag) {
            Ok(Lookup::Defined(def)) => (def.name.as_str(), interpret(def, &el.value).ok()),
            Ok(Lookup::Private) => ("private", None),
            Err(_) => ("unknown", None),
        };
        let shown = match &value {
            Some(v) => value_text(v),
            None => match std::str::from_utf8(&el.value) {
                Ok(s) if !s.is_empty() && s.chars().all(|c| !c.is_control()) => s.to_owned(),
                _ => format!("{} bytes", el.value.len()),
            },
        };
        let _ = writeln!(text, "{name} ({}): {shown}", el.tag);
        rows.push(json!({
            "tag": el.tag.to_string(),
            "name": name,
            "value": value.as_ref().map(value_json).unwrap_or_else(|| json!({ "bytes": el.value.len() })),
        }));
    }
    match format {
        Format::Text => text,
        Format::Json => format!("{}\n", serde_json::Value::Array(rows)),
    }
}

fn validate_shell(path: &Path, format: Format) -> CommandResult {
    let text = match std::fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) => return CommandResult::runtime(format!("{}: {e}", path.display())),
    };
    let manifest = match Manifest::from_aas_str(&text) {
        Ok(m) => m,
        Err(e) => return CommandResult::runtime(format!("{}: {e}", path.display())),
    };
    let report = validate_manifest(&Dictionary::standard(), &manifest);
    let failing = report.errors().next().is_some();
    let stdout = match format {
        Format::Text if report.is_empty() => "valid\n".to_owned(),
        Format::Text => report.to_string(),
        Format::Json => format!("{}\n", json!({ "valid": !failing, "findings": report.findings })),
    };
    CommandResult::with_code(if failing { EXIT_FINDINGS } else { EXIT_OK }, stdout)
}

fn validate_obj(path: &Path, format: Format) -> CommandResult {
    let bytes = match std::fs::read(path) {
        Ok(b) => b,
        Err(e) => return CommandResult::runtime(format!("{}: {e}", path.display())),
    };
    let obj = match decode_object(&bytes) {
        Ok(o) => o,
        Err(e) => return CommandResult::runtime(format!("{}: {e}", path.display())),
    };
    let report = validate_object(&Dictionary::standard(), &obj);
    let stdout = match format {
        Format::Text if report.findings.is_empty() => "valid\n".to_owned(),
        Format::Text => report.findings.iter().map(|f| format!("{f}\n")).collect(),
        Format::Json => format!(
            "{}\n",
            json!({ "valid": report.is_valid(), "findings": report.findings })
        ),
    };
    CommandResult::with_code(if report.is_valid() { EXIT_OK } else { EXIT_FINDINGS }, stdout)
}

fn rami_locate(components: &[String], format: Format) -> CommandResult {
    let table = LociTable::standard();
    let names: Vec<String> = if components.is_empty() {
        table.components().map(str::to_owned).collect()
    } else {
        components.to_vec()
    };
    let mut loci = Vec::new();
    for n in &names {
        match table.locate(n) {
            Ok(l) => loci.push(l),
            Err(e) => return CommandResult::runtime(e),
        }
    }
    let stdout = match format {
        Format::Text => {
            let mut s = String::new();
            for l in &loci {
                let _ = writeln!(s, "{} ({} cells)", l.component, l.cells.len());
                for c in &l.cells {
                    let _ = writeln!(s, "  {c}");
                }
            }
            s
        }
        Format::Json => format!("{}\n", json!(loci)),
    };
    CommandResult::ok(stdout)
}

fn axis<T: Copy + std::str::FromStr>(text: &str, all: &[T]) -> Result<Vec<T>, T::Err> {
    if text == "*" {
        Ok(all.to_vec())
    } else {
        Ok(vec![text.parse()?])
    }
}

/// `LAYER/LIFECYCLE/HIERARCHY`, each part an enumerant or `*`.
fn parse_cell_pattern(text: &str) -> Result<BTreeSet<RamiCoordinate>, String> {
    let parts: Vec<&str> = text.split('/').collect();
    let [l, c, h] = parts[..] else {
        return Err(format!("{text:?} is not LAYER/LIFECYCLE/HIERARCHY"));
    };
    let l = axis(l, Layer::ALL).map_err(|e| e.to_string())?;
    let c = axis(c, Lifecycle::ALL).map_err(|e| e.to_string())?;
    let h = axis(h, Hierarchy::ALL).map_err(|e| e.to_string())?;
    Ok(nde4_core::rami::cells(&l, &c, &h))
}

fn rami_check(args: &RamiCheck, format: Format) -> CommandResult {
    let mut required = BTreeSet::new();
    let mut names = args.components.clone();
    if let Some(path) = &args.scenario {
        let cfg = match ScenarioConfig::load(path) {
            Ok(cfg) => cfg,
            Err(e) => return CommandResult::runtime(format!("{}: {e}", path.display())),
        };
        required.extend(cfg.coverage_required());
        if names.is_empty() {
            names = cfg.deployed_loci().into_iter().map(str::to_owned).collect();
        }
    }
    for pattern in &args.required {
        match parse_cell_pattern(pattern) {
            Ok(cells) => required.extend(cells),
            Err(e) => return CommandResult::usage(e),
        }
    }
    if names.is_empty() {
        return CommandResult::usage("name at least one --component, or a --scenario");
    }
    let table = LociTable::standard();
    let mut loci = Vec::new();
    for n in &names {
        match table.locate(n) {
            Ok(l) => loci.push(l),
            Err(e) => return CommandResult::runtime(e),
        }
    }
    let report = coverage_check(&required, &loci);
    let stdout = match format {
        Format::Text => format!(
            "required {} cells, components {}\n{report}",
            required.len(),
            names.join(", ")
        ),
        Format::Json => format!(
            "{}\n",
            json!({ "required": required.len(), "components": names, "gaps": report.gaps })
        ),
    };
    CommandResult::with_code(if report.is_covered() { EXIT_OK } else { EXIT_FINDINGS }, stdout)
}
