//! The `argrel` command line.
//!
//! Every invocation resolves its parameters (built-in defaults, then the
//! `--config` TOML file, then explicit flags), creates
//! `<runs-dir>/<timestamp>-<tag>/`, and writes `manifest.json` there with the
//! resolved parameters and digests of the input files. `argrel rerun
//! <manifest>` repeats a run from its manifest.

pub mod args;
mod commands;
pub mod stats;

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::parser::ValueSource;
use clap::{ArgMatches, Args, CommandFactory, FromArgMatches, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use args::*;

#[derive(Parser, Debug)]
#[command(name = "argrel", version, about = "Argument relation prediction with active and transfer learning")]
struct Cli {
    /// TOML file with parameters; keys at the top level apply to every
    /// command, a `[command-name]` table to one command.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Parent of the per-run output directories.
    #[arg(long, global = true, default_value = "runs")]
    runs_dir: PathBuf,
    /// Run directory suffix; the command name when omitted.
    #[arg(long, global = true)]
    tag: Option<String>,
    /// Repeat for more log output on stderr.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Corpus statistics: density, distances, window coverage, markers.
    Stats(StatsArgs),
    /// Generate a synthetic corpus.
    Synth(SynthArgs),
    /// Supervised training of the relation model.
    Train(TrainArgs),
    /// Train the feature-based linear baseline.
    Baseline(BaselineArgs),
    /// Self-supervised pretraining of the encoder.
    Pretrain(PretrainArgs),
    /// Chained fine-tuning over several corpora.
    Transfer(TransferArgs),
    /// One active-learning run.
    AlRun(AlRunArgs),
    /// Active-learning runs for several strategies and seeds.
    AlCompare(AlCompareArgs),
    /// Evaluate a checkpoint or baseline model on a test corpus.
    Eval(EvalArgs),
    /// Annotation service, optionally driving an external-oracle run.
    Serve(ServeArgs),
    /// Repeat a run from its manifest.
    Rerun(RerunArgs),
}

/// A fully resolved command, as recorded in manifests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "command", content = "config", rename_all = "kebab-case")]
pub enum Resolved {
    Stats(StatsArgs),
    Synth(SynthArgs),
    Train(TrainArgs),
    Baseline(BaselineArgs),
    Pretrain(PretrainArgs),
    Transfer(TransferArgs),
    AlRun(AlRunArgs),
    AlCompare(AlCompareArgs),
    Eval(EvalArgs),
    Serve(ServeArgs),
}

impl Resolved {
    pub fn name(&self) -> &'static str {
        match self {
            Resolved::Stats(_) => "stats",
            Resolved::Synth(_) => "synth",
            Resolved::Train(_) => "train",
            Resolved::Baseline(_) => "baseline",
            Resolved::Pretrain(_) => "pretrain",
            Resolved::Transfer(_) => "transfer",
            Resolved::AlRun(_) => "al-run",
            Resolved::AlCompare(_) => "al-compare",
            Resolved::Eval(_) => "eval",
            Resolved::Serve(_) => "serve",
        }
    }
}

/// Bad or missing arguments; reported with exit status 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn usage(message: impl Into<String>) -> anyhow::Error {
    UsageError(message.into()).into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputDigest {
    pub path: PathBuf,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: String,
    pub created: String,
    pub tag: String,
    #[serde(flatten)]
    pub run: Resolved,
    pub inputs: Vec<InputDigest>,
}

/// Per-invocation context handed to the commands.
pub struct RunContext {
    pub dir: PathBuf,
}

impl RunContext {
    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }
}

fn overlay(base: &mut toml::Table, top: toml::Table) {
    for (k, v) in top {
        base.insert(k, v);
    }
}

/// Defaults ← config file (top-level keys, then the command's table) ←
/// flags that were actually given.
fn resolve<T>(name: &str, matches: &ArgMatches, file: Option<&toml::Table>) -> anyhow::Result<T>
where
    T: Args + FromArgMatches + Serialize + DeserializeOwned + Default,
{
    let mut table = toml::Table::try_from(T::default()).context("serializing defaults")?;
    if let Some(file) = file {
        let scalars: toml::Table = file.iter().filter(|(_, v)| !v.is_table()).map(|(k, v)| (k.clone(), v.clone())).collect();
        overlay(&mut table, scalars);
        if let Some(section) = file.get(name) {
            let section = section.as_table().ok_or_else(|| usage(format!("config key `{name}` must be a table")))?;
            overlay(&mut table, section.clone());
        }
    }
    let parsed = T::from_arg_matches(matches).map_err(|e| usage(e.to_string()))?;
    let explicit: toml::Table = toml::Table::try_from(parsed)
        .context("serializing flags")?
        .into_iter()
        .filter(|(k, _)| matches.value_source(k) == Some(ValueSource::CommandLine))
        .collect();
    overlay(&mut table, explicit);
    toml::Value::Table(table).try_into().map_err(|e: toml::de::Error| usage(format!("invalid configuration: {}", e.message())))
}

pub fn sha256_file(path: &Path) -> anyhow::Result<String> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}

fn create_run_dir(root: &Path, tag: &str) -> anyhow::Result<PathBuf> {
    let stamp = chrono::Utc::now().format("%Y%m%dT%H%M%S%.3fZ");
    let base = format!("{stamp}-{tag}");
    for n in 0.. {
        let name = if n == 0 { base.clone() } else { format!("{base}-{n}") };
        let dir = root.join(name);
        match fs::create_dir_all(root).and_then(|_| fs::create_dir(&dir)) {
            Ok(()) => return Ok(dir),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => continue,
            Err(e) => return Err(e).with_context(|| format!("creating {}", dir.display())),
        }
    }
    unreachable!()
}

/// Execute a resolved command in a fresh run directory; returns that directory.
pub fn execute(run: Resolved, runs_dir: &Path, tag: Option<&str>) -> anyhow::Result<PathBuf> {
    let tag = tag.unwrap_or(run.name()).to_string();
    let inputs = commands::inputs(&run)
        .into_iter()
        .map(|p| Ok(InputDigest { sha256: sha256_file(&p)?, path: p }))
        .collect::<anyhow::Result<Vec<_>>>()?;
    let dir = create_run_dir(runs_dir, &tag)?;
    let manifest = Manifest {
        version: env!("CARGO_PKG_VERSION").to_string(),
        created: chrono::Utc::now().to_rfc3339(),
        tag,
        run: run.clone(),
        inputs,
    };
    fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
    let ctx = RunContext { dir: dir.clone() };
    commands::dispatch(run, &ctx)?;
    Ok(dir)
}

/// Repeat the run recorded in `manifest`, warning when an input changed.
pub fn rerun(manifest: &Path, runs_dir: &Path) -> anyhow::Result<PathBuf> {
    let text = fs::read_to_string(manifest).with_context(|| format!("reading {}", manifest.display()))?;
    let m: Manifest = serde_json::from_str(&text).with_context(|| format!("parsing {}", manifest.display()))?;
    for input in &m.inputs {
        let now = sha256_file(&input.path)?;
        if now != input.sha256 {
            tracing::warn!(path = %input.path.display(), "input changed since the recorded run");
        }
    }
    execute(m.run, runs_dir, Some(&m.tag))
}

fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => "warn",
        1 => "info",
        2 => "debug",
        _ => "trace",
    };
    let filter = tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| tracing_subscriber::EnvFilter::new(level));
    let _ = tracing_subscriber::fmt().with_env_filter(filter).with_writer(std::io::stderr).with_target(false).try_init();
}

fn run_inner(matches: &ArgMatches) -> anyhow::Result<()> {
    let cli = Cli::from_arg_matches(matches).map_err(|e| usage(e.to_string()))?;
    init_logging(cli.verbose);
    let file = match &cli.config {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            Some(text.parse::<toml::Table>().map_err(|e| usage(format!("{}: {}", p.display(), e.message())))?)
        }
        None => None,
    };
    let (name, sub) = matches.subcommand().expect("subcommand is required");
    let file = file.as_ref();
    let run = match name {
        "stats" => Resolved::Stats(resolve(name, sub, file)?),
        "synth" => Resolved::Synth(resolve(name, sub, file)?),
        "train" => Resolved::Train(resolve(name, sub, file)?),
        "baseline" => Resolved::Baseline(resolve(name, sub, file)?),
        "pretrain" => Resolved::Pretrain(resolve(name, sub, file)?),
        "transfer" => Resolved::Transfer(resolve(name, sub, file)?),
        "al-run" => Resolved::AlRun(resolve(name, sub, file)?),
        "al-compare" => Resolved::AlCompare(resolve(name, sub, file)?),
        "eval" => Resolved::Eval(resolve(name, sub, file)?),
        "serve" => Resolved::Serve(resolve(name, sub, file)?),
        "rerun" => {
            let r = RerunArgs::from_arg_matches(sub).map_err(|e| usage(e.to_string()))?;
            let dir = rerun(&r.manifest, &cli.runs_dir)?;
            println!("run directory: {}", dir.display());
            return Ok(());
        }
        other => bail!("unhandled command {other}"),
    };
    commands::check(&run)?;
    let dir = execute(run, &cli.runs_dir, cli.tag.as_deref())?;
    println!("run directory: {}", dir.display());
    Ok(())
}

/// Run with `argv` (including the program name); returns the exit status.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let matches = match Cli::command().try_get_matches_from(argv) {
        Ok(m) => m,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match run_inner(&matches) {
        Ok(()) => 0,
        Err(e) => {
            let line = format!("{e:#}").replace('\n', " ");
            eprintln!("error: {line}");
            if e.downcast_ref::<UsageError>().is_some() {
                2
            } else {
                1
            }
        }
    }
}
