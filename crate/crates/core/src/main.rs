use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use serde_json::json;

use socialtv::config::Config;
use socialtv::ids::UserId;
use socialtv::profile::TypeCode;
use socialtv::rules::{default_rules, RuleSet};
use socialtv::sim::{self, DistributionSpec, SeedParams};
use socialtv::store::record::{parse_records, records_to_text};
use socialtv::store::{Location, Store, StoreError};

/// Operator tool for the social TV recommendation service.
#[derive(Parser)]
#[command(name = "socialtv", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic population and optionally load it into a store.
    Seed(SeedArgs),
    /// Spread a recommendation type from seed users and report coverage.
    Simulate(SimulateArgs),
    /// Run the full integrity scan over a store.
    Validate(StoreArg),
    /// Serve the HTTP API.
    Serve(ServeArgs),
    /// Load a record file into a store.
    Import(ImportArgs),
    /// Print every entity of a store as records.
    Export(ExportArgs),
}

#[derive(Args)]
struct StoreArg {
    #[arg(long)]
    store: PathBuf,
}

#[derive(Args)]
struct SeedArgs {
    #[arg(long)]
    population: usize,
    #[arg(long)]
    density: f64,
    /// Distribution spec file; defaults apply to absent sections.
    #[arg(long)]
    distribution: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    random_seed: u64,
    /// Seed file to write.
    #[arg(long)]
    out: PathBuf,
    /// New store to load the population into.
    #[arg(long)]
    store: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    store: PathBuf,
    /// Repeat for several independent runs.
    #[arg(long = "seed-user", required = true)]
    seed_users: Vec<String>,
    #[arg(long)]
    type_code: i64,
    #[arg(long, default_value_t = 3)]
    max_hops: u32,
    #[arg(long)]
    rules: Option<PathBuf>,
    /// Write `user,hop` rows; needs exactly one seed user.
    #[arg(long)]
    report_csv: Option<PathBuf>,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    listen: Option<String>,
    #[arg(long)]
    store_path: Option<PathBuf>,
    #[arg(long)]
    snowball_on_accept: Option<bool>,
    #[arg(long)]
    max_hops: Option<u32>,
    #[arg(long)]
    session_ttl_secs: Option<u64>,
    #[arg(long)]
    rules_path: Option<PathBuf>,
}

#[derive(Args)]
struct ImportArgs {
    #[arg(long)]
    store: PathBuf,
    file: PathBuf,
}

#[derive(Args)]
struct ExportArgs {
    #[arg(long)]
    store: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Bad input from the operator, as opposed to a failed check.
#[derive(Debug)]
struct Usage(String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    Usage(msg.into()).into()
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::from_default_env())
        .with_writer(std::io::stderr)
        .init();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.is::<Usage>() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<ExitCode> {
    match cli.command {
        Command::Seed(a) => seed(a),
        Command::Simulate(a) => simulate(a),
        Command::Validate(a) => validate(&a.store),
        Command::Serve(a) => serve(a),
        Command::Import(a) => import(a),
        Command::Export(a) => export(a),
    }
}

fn print_json(value: &serde_json::Value) -> anyhow::Result<()> {
    let mut out = std::io::stdout().lock();
    serde_json::to_writer(&mut out, value)?;
    writeln!(out)?;
    Ok(())
}

fn open_existing(path: &Path) -> anyhow::Result<Store> {
    if !path.exists() {
        return Err(usage(format!("store {} does not exist", path.display())));
    }
    Ok(Store::open(Location::File(path.to_path_buf()))?)
}

fn load_rules(path: Option<&Path>) -> anyhow::Result<RuleSet> {
    match path {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            RuleSet::parse(&text).map_err(|e| usage(format!("{}: {e}", p.display())))
        }
        None => Ok(default_rules()),
    }
}

fn seed(a: SeedArgs) -> anyhow::Result<ExitCode> {
    let spec = match &a.distribution {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            DistributionSpec::parse(&text).map_err(|e| usage(format!("{}: {e}", p.display())))?
        }
        None => DistributionSpec::default(),
    };
    let records = sim::generate(&SeedParams {
        population: a.population,
        density: a.density,
        random_seed: a.random_seed,
        spec,
    })
    .map_err(|e| usage(e.to_string()))?;
    fs::write(&a.out, records_to_text(&records)).with_context(|| format!("writing {}", a.out.display()))?;

    let users = records.iter().filter(|r| matches!(r, socialtv::store::Record::User(_))).count();
    let arcs = records.iter().filter(|r| matches!(r, socialtv::store::Record::Arc(_))).count();
    if let Some(path) = &a.store {
        if path.exists() {
            return Err(usage(format!("store {} already exists", path.display())));
        }
        let store = Store::open(Location::File(path.clone()))?;
        store.import(records)?;
        store.close()?;
    }
    print_json(&json!({ "users": users, "user_user_arcs": arcs, "seed_file": a.out }))?;
    Ok(ExitCode::SUCCESS)
}

fn simulate(a: SimulateArgs) -> anyhow::Result<ExitCode> {
    let type_code = TypeCode::new(a.type_code).map_err(|e| usage(e.to_string()))?;
    if a.report_csv.is_some() && a.seed_users.len() != 1 {
        return Err(usage("--report-csv needs exactly one --seed-user"));
    }
    let seeds = a
        .seed_users
        .iter()
        .map(|s| UserId::new(s.as_str()).map_err(|e| usage(format!("seed user `{s}`: {e}"))))
        .collect::<anyhow::Result<Vec<_>>>()?;
    let rules = load_rules(a.rules.as_deref())?;
    let store = open_existing(&a.store)?;
    let data = store.snapshot()?;
    store.close()?;
    for s in &seeds {
        if data.user(s).is_none() {
            bail!(usage(format!("unknown user `{s}`")));
        }
    }
    let runs = sim::simulate_many(&data, &seeds, type_code, a.max_hops, &rules);
    for run in runs {
        let run = run?;
        if let Some(path) = &a.report_csv {
            fs::write(path, run.report.to_csv()).with_context(|| format!("writing {}", path.display()))?;
        }
        print_json(&serde_json::to_value(&run)?)?;
    }
    Ok(ExitCode::SUCCESS)
}

fn validate(path: &Path) -> anyhow::Result<ExitCode> {
    if !path.exists() {
        return Err(usage(format!("store {} does not exist", path.display())));
    }
    let issues = match Store::open(Location::File(path.to_path_buf())) {
        Ok(store) => store.validate()?,
        Err(StoreError::Corrupt(issues)) => issues,
        Err(e) => {
            print_json(&json!({ "ok": false, "error": e.to_string() }))?;
            return Ok(ExitCode::from(1));
        }
    };
    let messages: Vec<String> = issues.iter().map(ToString::to_string).collect();
    print_json(&json!({ "ok": issues.is_empty(), "issues": issues, "messages": messages }))?;
    Ok(if issues.is_empty() { ExitCode::SUCCESS } else { ExitCode::from(1) })
}

fn serve(a: ServeArgs) -> anyhow::Result<ExitCode> {
    let mut config = Config::load(a.config.as_deref()).map_err(|e| usage(e.to_string()))?;
    if let Some(v) = a.listen {
        config.listen = v;
    }
    if let Some(v) = a.store_path {
        config.store_path = Some(v);
    }
    if let Some(v) = a.snowball_on_accept {
        config.snowball_on_accept = v;
    }
    if let Some(v) = a.max_hops {
        config.max_hops = v;
    }
    if let Some(v) = a.session_ttl_secs {
        config.session_ttl_secs = v;
    }
    if let Some(v) = a.rules_path {
        config.rules_path = Some(v);
    }
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(socialtv::api::serve_with(config, |addr| {
        let _ = print_json(&json!({ "listening": addr.to_string() }));
    }))?;
    Ok(ExitCode::SUCCESS)
}

fn import(a: ImportArgs) -> anyhow::Result<ExitCode> {
    let text = fs::read_to_string(&a.file).with_context(|| format!("reading {}", a.file.display()))?;
    let records = parse_records(&text).map_err(|(line, msg)| usage(format!("{}:{line}: {msg}", a.file.display())))?;
    let store = Store::open(Location::File(a.store.clone()))?;
    match store.import(records) {
        Ok(n) => {
            store.close()?;
            print_json(&json!({ "imported": n }))?;
            Ok(ExitCode::SUCCESS)
        }
        Err(StoreError::Corrupt(issues)) => {
            let messages: Vec<String> = issues.iter().map(ToString::to_string).collect();
            print_json(&json!({ "ok": false, "issues": issues, "messages": messages }))?;
            Ok(ExitCode::from(1))
        }
        Err(e) => Err(e.into()),
    }
}

fn export(a: ExportArgs) -> anyhow::Result<ExitCode> {
    let store = open_existing(&a.store)?;
    let text = records_to_text(&store.export()?);
    match &a.out {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display()))?,
        None => std::io::stdout().lock().write_all(text.as_bytes())?,
    }
    Ok(ExitCode::SUCCESS)
}
