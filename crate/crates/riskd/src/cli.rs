//! Command-line front end.
//!
//! Exit codes: 0 success, 1 not found, 2 validation or usage error,
//! 3 analysis failure, 4 storage failure.

use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use chrono::Utc;
use clap::{Args, Parser, Subcommand, ValueEnum};

use riskd_core::cartridge::{
    parse_cartridge, resolve_study, serialize_cartridge, Cartridge, CartridgeError, CartridgeKind, Method,
    ResolveError,
};
use riskd_core::dataset::{generate_synthetic, load_dataset, Dataset, DatasetError, SyntheticSpec};
use riskd_core::provenance::{cartridge_digest, DatasetRecord, ProvenanceStore, QueryFilter, ResultsCartridge, StoreError};
use riskd_core::study::{run_study, StudyError};

use crate::report;
use crate::service::{router, AppState};

pub const EXIT_NOT_FOUND: i32 = 1;
pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_ANALYSIS: i32 = 3;
pub const EXIT_STORAGE: i32 = 4;

const DEFAULT_STORE: &str = "riskd-store.log";

#[derive(Debug, Parser)]
#[command(name = "riskd", version, about = "Disease risk factor studies from cartridges")]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run a study synchronously, print its findings and persist the result.
    Run(RunArgs),
    /// Query stored results.
    Results {
        #[command(subcommand)]
        command: ResultsCommand,
    },
    /// Inspect provenance of stored results.
    Provenance {
        #[command(subcommand)]
        command: ProvenanceCommand,
    },
    /// Synthetic data generation.
    Synth {
        #[command(subcommand)]
        command: SynthCommand,
    },
    /// Cartridge utilities.
    Cartridge {
        #[command(subcommand)]
        command: CartridgeCommand,
    },
    /// Serve the HTTP API.
    Serve(ServeArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Table,
    Json,
}

#[derive(Debug, Args)]
struct StoreArg {
    /// Append-only provenance store file.
    #[arg(long, env = "RISKD_STORE", default_value = DEFAULT_STORE)]
    store: PathBuf,
}

#[derive(Debug, Args)]
struct RunArgs {
    #[arg(long)]
    response: PathBuf,
    #[arg(long)]
    cohort: PathBuf,
    /// Risk-factor cartridge; repeat for several.
    #[arg(long = "factors", required = true)]
    factors: Vec<PathBuf>,
    #[arg(long)]
    workflow: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    dict: PathBuf,
    #[command(flatten)]
    store: StoreArg,
    #[arg(long, value_enum, default_value = "table")]
    format: Format,
}

#[derive(Debug, Subcommand)]
enum ResultsCommand {
    /// List result headers matching all given filters.
    Query {
        #[arg(long)]
        disease: Option<String>,
        #[arg(long)]
        factor: Option<String>,
        #[arg(long)]
        significant_only: bool,
        #[arg(long, value_parser = parse_method)]
        method: Option<Method>,
        #[command(flatten)]
        store: StoreArg,
        #[arg(long, value_enum, default_value = "table")]
        format: Format,
    },
    /// Print one stored result.
    Show {
        id: String,
        #[command(flatten)]
        store: StoreArg,
        #[arg(long, value_enum, default_value = "table")]
        format: Format,
    },
}

#[derive(Debug, Subcommand)]
enum ProvenanceCommand {
    /// Print the input chain of a result.
    Show {
        id: String,
        #[command(flatten)]
        store: StoreArg,
        #[arg(long, value_enum, default_value = "table")]
        format: Format,
    },
    /// Check every stored result's chain.
    Audit {
        #[command(flatten)]
        store: StoreArg,
    },
}

#[derive(Debug, Subcommand)]
enum SynthCommand {
    /// Write `<out>.csv` and `<out>.dictionary.json` from a spec file.
    Generate {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Subcommand)]
enum CartridgeCommand {
    /// Validate cartridge files and print kind, id and digest.
    Validate { files: Vec<PathBuf> },
    /// Print the canonical form of a cartridge file.
    Canonical { file: PathBuf },
}

#[derive(Debug, Args)]
struct ServeArgs {
    #[arg(long, env = "RISKD_ADDR", default_value = "127.0.0.1:8080")]
    addr: String,
    #[command(flatten)]
    store: StoreArg,
    /// Directory of `<name>.csv` + `<name>.dictionary.json` pairs.
    #[arg(long, env = "RISKD_DATASETS")]
    datasets: Option<PathBuf>,
    /// Directory of cartridge files loaded into the store at startup.
    #[arg(long, env = "RISKD_CARTRIDGES")]
    cartridges: Option<PathBuf>,
    #[arg(long, env = "RISKD_WORKERS", default_value_t = 2)]
    workers: usize,
}

fn parse_method(s: &str) -> Result<Method, String> {
    match s {
        "swglm-ewas" => Ok(Method::SwglmEwas),
        "scm" => Ok(Method::Scm),
        _ => Err(format!("unknown method `{s}` (expected swglm-ewas or scm)")),
    }
}

/// A failed command: exit code, pipeline error name and message.
#[derive(Debug)]
pub struct CliError {
    pub exit: i32,
    pub name: String,
    pub message: String,
}

impl CliError {
    fn new(exit: i32, name: impl Into<String>, message: impl Into<String>) -> Self {
        Self { exit, name: name.into(), message: message.into() }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.name, self.message)
    }
}

impl From<CartridgeError> for CliError {
    fn from(e: CartridgeError) -> Self {
        CliError::new(EXIT_VALIDATION, e.code(), e.to_string())
    }
}

impl From<DatasetError> for CliError {
    fn from(e: DatasetError) -> Self {
        CliError::new(EXIT_VALIDATION, e.code(), e.to_string())
    }
}

impl From<ResolveError> for CliError {
    fn from(e: ResolveError) -> Self {
        let exit = if e == ResolveError::EmptyCohort { EXIT_ANALYSIS } else { EXIT_VALIDATION };
        CliError::new(exit, e.code(), e.to_string())
    }
}

impl From<StudyError> for CliError {
    fn from(e: StudyError) -> Self {
        CliError::new(EXIT_ANALYSIS, e.code(), e.to_string())
    }
}

impl From<StoreError> for CliError {
    fn from(e: StoreError) -> Self {
        let exit = if matches!(e, StoreError::NotFound(_)) { EXIT_NOT_FOUND } else { EXIT_STORAGE };
        CliError::new(exit, e.code(), e.to_string())
    }
}

fn read_cartridge(path: &Path) -> Result<Cartridge, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::new(EXIT_VALIDATION, "Io", format!("{}: {e}", path.display())))?;
    parse_cartridge(&text).map_err(|e| {
        let e = CliError::from(e);
        CliError::new(e.exit, e.name, format!("{}: {}", path.display(), e.message))
    })
}

fn expect_kind(path: &Path, kind: CartridgeKind) -> Result<Cartridge, CliError> {
    let c = read_cartridge(path)?;
    if c.kind() != kind {
        return Err(CliError::new(
            EXIT_VALIDATION,
            "WrongCartridgeKind",
            format!("{}: expected a {kind} cartridge, found {}", path.display(), c.kind()),
        ));
    }
    Ok(c)
}

fn open_store(path: &Path) -> Result<ProvenanceStore, CliError> {
    Ok(ProvenanceStore::open(path)?)
}

/// Writes to stdout, ignoring a closed pipe.
fn emit(text: &str) {
    let mut out = std::io::stdout().lock();
    let _ = out.write_all(text.as_bytes()).and_then(|_| out.flush());
}

fn print_json<T: serde::Serialize>(value: &T) {
    emit(&format!("{}\n", serde_json::to_string_pretty(value).expect("output serializes")));
}

fn run(args: RunArgs) -> Result<(), CliError> {
    let Cartridge::Response(response) = expect_kind(&args.response, CartridgeKind::Response)? else { unreachable!() };
    let Cartridge::Cohort(cohort) = expect_kind(&args.cohort, CartridgeKind::Cohort)? else { unreachable!() };
    let Cartridge::Workflow(workflow) = expect_kind(&args.workflow, CartridgeKind::Workflow)? else { unreachable!() };
    let mut factors = Vec::new();
    for path in &args.factors {
        let Cartridge::RiskFactor(f) = expect_kind(path, CartridgeKind::RiskFactor)? else { unreachable!() };
        factors.push(f);
    }
    let ds = load_dataset(&args.data, &args.dict)?;
    let plan = resolve_study(&response, &cohort, &factors, &workflow, &ds)?;
    let findings = run_study(&plan, &ds, |_, _| {})?;
    let result = ResultsCartridge::new(&plan, &ds, findings, Utc::now());

    let mut inputs = vec![Cartridge::Response(response), Cartridge::Cohort(cohort)];
    inputs.extend(factors.into_iter().map(Cartridge::RiskFactor));
    inputs.push(Cartridge::Workflow(workflow));
    let store = open_store(&args.store.store)?;
    let id = store.persist_results(&result, &inputs, Some(&DatasetRecord::of(&ds)))?;
    match args.format {
        Format::Json => print_json(&result),
        Format::Table => {
            emit(&report::result_report(&result));
            emit(&format!("result {id}\n"));
        }
    }
    Ok(())
}

fn results(cmd: ResultsCommand) -> Result<(), CliError> {
    match cmd {
        ResultsCommand::Query { disease, factor, significant_only, method, store, format } => {
            let store = open_store(&store.store)?;
            let headers =
                store.query_results(&QueryFilter { disease_label: disease, factor, significant_only, method });
            match format {
                Format::Json => print_json(&headers),
                Format::Table => emit(&report::headers_table(&headers)),
            }
        }
        ResultsCommand::Show { id, store, format } => {
            let r = open_store(&store.store)?.result(&id)?;
            match format {
                Format::Json => print_json(&r),
                Format::Table => emit(&report::result_report(&r)),
            }
        }
    }
    Ok(())
}

fn provenance(cmd: ProvenanceCommand) -> Result<(), CliError> {
    match cmd {
        ProvenanceCommand::Show { id, store, format } => {
            let chain = open_store(&store.store)?.provenance_chain(&id)?;
            match format {
                Format::Json => print_json(&chain),
                Format::Table => emit(&report::chain_lines(&chain)),
            }
        }
        ProvenanceCommand::Audit { store } => {
            let issues = open_store(&store.store)?.audit();
            for i in &issues {
                emit(&format!("{} {}\n", i.result_id, i.problem));
            }
            if !issues.is_empty() {
                return Err(CliError::new(EXIT_STORAGE, "DanglingRef", format!("{} results fail to resolve", issues.len())));
            }
            emit("all provenance chains resolve\n");
        }
    }
    Ok(())
}

fn synth(cmd: SynthCommand) -> Result<(), CliError> {
    let SynthCommand::Generate { spec, seed, out } = cmd;
    let text = std::fs::read_to_string(&spec)
        .map_err(|e| CliError::new(EXIT_VALIDATION, "Io", format!("{}: {e}", spec.display())))?;
    let spec: SyntheticSpec = serde_json::from_str(&text)
        .map_err(|e| CliError::new(EXIT_VALIDATION, "InvalidSpec", format!("{}: {e}", spec.display())))?;
    let data = generate_synthetic(&spec, seed)?;
    let (csv, dict) = dataset_paths(&out);
    data.dataset.write(&csv, &dict).map_err(|e| CliError::new(EXIT_STORAGE, e.code(), e.to_string()))?;
    emit(&format!(
        "wrote {} and {} ({} rows, fingerprint {})\n",
        csv.display(),
        dict.display(),
        data.dataset.n_rows(),
        data.dataset.fingerprint()
    ));
    Ok(())
}

/// `<prefix>.csv` and `<prefix>.dictionary.json`.
pub fn dataset_paths(prefix: &Path) -> (PathBuf, PathBuf) {
    let base = prefix.as_os_str().to_string_lossy();
    (PathBuf::from(format!("{base}.csv")), PathBuf::from(format!("{base}.dictionary.json")))
}

fn cartridge(cmd: CartridgeCommand) -> Result<(), CliError> {
    match cmd {
        CartridgeCommand::Validate { files } => {
            for f in files {
                let c = read_cartridge(&f)?;
                emit(&format!("{:<12} {:<32} {}\n", c.kind().as_str(), c.id(), cartridge_digest(&c)));
            }
        }
        CartridgeCommand::Canonical { file } => emit(&format!("{}\n", serialize_cartridge(&read_cartridge(&file)?))),
    }
    Ok(())
}

/// Every `<name>.csv` in `dir` that has a `<name>.dictionary.json` beside it.
pub fn load_dataset_dir(dir: &Path) -> Result<Vec<(String, Dataset)>, CliError> {
    let io = |e: std::io::Error| CliError::new(EXIT_VALIDATION, "Io", format!("{}: {e}", dir.display()));
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir).map_err(io)?.filter_map(|e| e.ok().map(|e| e.path())).collect();
    paths.sort();
    let mut out = Vec::new();
    for csv in paths.into_iter().filter(|p| p.extension().is_some_and(|e| e == "csv")) {
        let name = csv.file_stem().unwrap_or_default().to_string_lossy().into_owned();
        let dict = csv.with_file_name(format!("{name}.dictionary.json"));
        if dict.exists() {
            out.push((name, load_dataset(&csv, &dict)?));
        }
    }
    Ok(out)
}

/// Every `*.json` cartridge in `dir`, sorted by file name.
pub fn load_cartridge_dir(dir: &Path) -> Result<Vec<Cartridge>, CliError> {
    let io = |e: std::io::Error| CliError::new(EXIT_VALIDATION, "Io", format!("{}: {e}", dir.display()));
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir).map_err(io)?.filter_map(|e| e.ok().map(|e| e.path())).collect();
    paths.sort();
    paths.iter().filter(|p| p.extension().is_some_and(|e| e == "json")).map(|p| read_cartridge(p)).collect()
}

fn serve(args: ServeArgs) -> Result<(), CliError> {
    let store = Arc::new(open_store(&args.store.store)?);
    if let Some(dir) = &args.cartridges {
        for c in load_cartridge_dir(dir)? {
            store.put_cartridge(&c)?;
        }
    }
    let datasets = match &args.datasets {
        Some(dir) => load_dataset_dir(dir)?,
        None => Vec::new(),
    };
    let runtime = tokio::runtime::Runtime::new()
        .map_err(|e| CliError::new(EXIT_STORAGE, "Runtime", e.to_string()))?;
    runtime.block_on(async move {
        let state = AppState::new(store, args.workers);
        for (name, ds) in datasets {
            let info = state.register_dataset(&name, ds)?;
            eprintln!("dataset {name}: {} rows, id {}", info.n_rows, info.id);
        }
        let listener = tokio::net::TcpListener::bind(&args.addr)
            .await
            .map_err(|e| CliError::new(EXIT_VALIDATION, "Bind", format!("{}: {e}", args.addr)))?;
        eprintln!("listening on http://{}/v1", args.addr);
        axum::serve(listener, router(state))
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await
            .map_err(|e| CliError::new(EXIT_STORAGE, "Serve", e.to_string()))
    })
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_VALIDATION } else { 0 };
        }
    };
    let outcome = match cli.command {
        Command::Run(a) => run(a),
        Command::Results { command } => results(command),
        Command::Provenance { command } => provenance(command),
        Command::Synth { command } => synth(command),
        Command::Cartridge { command } => cartridge(command),
        Command::Serve(a) => serve(a),
    };
    match outcome {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit
        }
    }
}
