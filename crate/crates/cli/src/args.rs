//! Subcommand parameters. Each struct is parsed by clap and is also the
//! resolved configuration: defaults come from the clap defaults, then the
//! config file, then flags given on the command line.

use std::net::SocketAddr;
use std::path::PathBuf;

use argrel::acquire::Strategy;
use argrel::encoder::EncoderConfig;
use argrel::optim::Schedule;
use argrel::pretrain::Objective;
use argrel::relhead::TrainConfig;
use argrel::windowing::{WindowConfig, WindowMode};
use clap::{Args, FromArgMatches};
use serde::{Deserialize, Serialize};

fn parse_mode(s: &str) -> Result<WindowMode, String> {
    match s.replace('-', "_").as_str() {
        "head_given" => Ok(WindowMode::HeadGiven),
        "end_to_end" => Ok(WindowMode::EndToEnd),
        _ => Err(format!("unknown mode `{s}` (expected head-given or end-to-end)")),
    }
}

fn parse_schedule(s: &str) -> Result<Schedule, String> {
    match s {
        "constant" => Ok(Schedule::Constant),
        "linear" => Ok(Schedule::Linear),
        _ => Err(format!("unknown schedule `{s}` (expected constant or linear)")),
    }
}

/// The clap defaults of an argument group, parsed from an empty command line.
pub fn clap_defaults<T: Args + FromArgMatches>() -> T {
    let cmd = T::augment_args(clap::Command::new("defaults").no_binary_name(true));
    let matches = cmd.try_get_matches_from(Vec::<String>::new()).expect("every argument has a default");
    T::from_arg_matches(&matches).expect("defaults parse")
}

macro_rules! clap_default {
    ($($t:ty),*) => {$(
        impl Default for $t {
            fn default() -> Self {
                clap_defaults()
            }
        }
    )*};
}

clap_default!(
    ModelParams,
    StatsArgs,
    SynthArgs,
    TrainArgs,
    BaselineArgs,
    PretrainArgs,
    TransferArgs,
    AlParams,
    AlRunArgs,
    AlCompareArgs,
    EvalArgs,
    ServeArgs
);

#[derive(Args, Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WindowParams {
    /// Propositions considered on each side of a head.
    #[arg(long, default_value_t = 20)]
    pub window: usize,
    /// Token budget of one encoded window.
    #[arg(long, default_value_t = 512)]
    pub max_tokens: usize,
    /// `head-given` pairs gold heads only; `end-to-end` pairs every proposition.
    #[arg(long, value_parser = parse_mode, default_value = "head-given")]
    pub mode: WindowMode,
}

impl Default for WindowParams {
    fn default() -> Self {
        clap_defaults()
    }
}

impl WindowParams {
    pub fn config(&self) -> WindowConfig {
        WindowConfig { window: self.window, max_tokens: self.max_tokens, mode: self.mode }
    }
}

#[derive(Args, Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelParams {
    #[command(flatten)]
    #[serde(flatten)]
    pub window: WindowParams,
    #[arg(long, default_value_t = 64)]
    pub dim: usize,
    #[arg(long, default_value_t = 2)]
    pub layers: usize,
    #[arg(long, default_value_t = 2)]
    pub heads: usize,
    #[arg(long, default_value_t = 4)]
    pub ffn_mult: usize,
    #[arg(long, default_value_t = 0.1)]
    pub dropout: f64,
    #[arg(long, default_value_t = 512)]
    pub max_positions: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 100)]
    pub warmup_steps: usize,
    #[arg(long, value_parser = parse_schedule, default_value = "constant")]
    pub schedule: Schedule,
    #[arg(long, default_value_t = 15)]
    pub epochs: usize,
    #[arg(long, default_value_t = 16)]
    pub batch_size: usize,
    /// Weight the loss by inverse class frequency.
    #[arg(long)]
    pub class_weighting: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

impl ModelParams {
    pub fn window_config(&self) -> WindowConfig {
        self.window.config()
    }

    pub fn encoder_config(&self) -> EncoderConfig {
        EncoderConfig {
            dim: self.dim,
            layers: self.layers,
            heads: self.heads,
            ffn_mult: self.ffn_mult,
            dropout_p: self.dropout,
            max_positions: self.max_positions,
            seed: self.seed,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            lr: self.lr,
            warmup_steps: self.warmup_steps,
            schedule: self.schedule,
            epochs: self.epochs,
            batch_size: self.batch_size,
            seed: self.seed,
            class_weighting: self.class_weighting,
        }
    }
}

#[derive(Args, Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StatsArgs {
    /// Corpus file (one JSON document per line).
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long, default_value_t = 20)]
    pub window: usize,
    /// Marker list replacing the built-in one (one marker per line).
    #[arg(long)]
    pub markers: Option<PathBuf>,
}

#[derive(Args, Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthArgs {
    /// Output corpus; defaults to `corpus.jsonl` in the run directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value_t = 100)]
    pub n_docs: usize,
    #[arg(long, default_value_t = 8)]
    pub props_per_doc: usize,
    #[arg(long, default_value_t = 0.5)]
    pub relation_rate: f64,
    #[arg(long, default_value_t = 0.6)]
    pub distance_skew: f64,
    #[arg(long, default_value_t = 0.5)]
    pub marker_plant_prob: f64,
    #[arg(long, default_value_t = 200)]
    pub vocab_size: usize,
    #[arg(long, default_value_t = 0.0)]
    pub attack_rate: f64,
    #[arg(long, default_value_t = 0.5)]
    pub shared_word_prob: f64,
    #[arg(long, default_value_t = 0)]
    pub vocab_offset: usize,
    #[arg(long, default_value = "synth")]
    pub doc_prefix: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args, Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainArgs {
    #[arg(long)]
    pub train: Option<PathBuf>,
    /// Evaluated after training when given.
    #[arg(long)]
    pub test: Option<PathBuf>,
    /// Checkpoint to fine-tune from.
    #[arg(long)]
    pub init: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    #[serde(flatten)]
    pub model: ModelParams,
}

#[derive(Args, Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BaselineArgs {
    #[arg(long)]
    pub train: Option<PathBuf>,
    #[arg(long)]
    pub test: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Stopword list (one word per line) replacing the built-in one.
    #[arg(long)]
    pub stopwords: Option<PathBuf>,
    #[arg(long, default_value_t = 1e-4)]
    pub reg: f64,
    #[arg(long, default_value_t = 20)]
    pub epochs: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    #[serde(flatten)]
    pub window: WindowParams,
}

#[derive(Args, Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PretrainArgs {
    /// Unlabeled corpus.
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// `mlm` or `context-pert`.
    #[arg(long)]
    pub objective: Option<Objective>,
    /// Replacement propositions for context-pert; defaults to the corpus itself.
    #[arg(long)]
    pub donors: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    #[serde(flatten)]
    pub model: ModelParams,
}

#[derive(Args, Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TransferArgs {
    /// Training corpora fine-tuned in order, each stage starting from the previous one.
    #[arg(long = "stage")]
    pub stages: Vec<PathBuf>,
    /// Starting checkpoint, e.g. a pretrained encoder.
    #[arg(long)]
    pub init: Option<PathBuf>,
    #[arg(long)]
    pub test: Option<PathBuf>,
    #[command(flatten)]
    #[serde(flatten)]
    pub model: ModelParams,
}

#[derive(Args, Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AlParams {
    /// Unlabeled pool; gold relations in it feed the simulated oracle.
    #[arg(long)]
    pub pool: Option<PathBuf>,
    #[arg(long)]
    pub test: Option<PathBuf>,
    #[arg(long, default_value_t = 10)]
    pub iterations: usize,
    /// Propositions per iteration; a tenth of the pool when omitted.
    #[arg(long)]
    pub budget: Option<usize>,
    /// Checkpoint each iteration fine-tunes from.
    #[arg(long)]
    pub warm_start: Option<PathBuf>,
    #[arg(long, default_value_t = 10)]
    pub mc_passes: usize,
    #[command(flatten)]
    #[serde(flatten)]
    pub model: ModelParams,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum OracleKind {
    Simulated,
    External,
}

#[derive(Args, Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AlRunArgs {
    #[arg(long)]
    pub strategy: Option<Strategy>,
    #[arg(long, value_enum, default_value = "simulated")]
    pub oracle: OracleKind,
    /// State file of a suspended run to continue.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    #[command(flatten)]
    #[serde(flatten)]
    pub service: ServiceParams,
    #[command(flatten)]
    #[serde(flatten)]
    pub al: AlParams,
}

#[derive(Args, Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ServiceParams {
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub listen: SocketAddr,
    /// Where accepted labels are logged; labels are kept in memory only when omitted.
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
    /// Two annotators per task, for agreement.
    #[arg(long)]
    pub overlap: bool,
    /// Seconds to wait for a batch before suspending the run.
    #[arg(long, default_value_t = 86400)]
    pub timeout_secs: u64,
}

impl Default for ServiceParams {
    fn default() -> Self {
        clap_defaults()
    }
}

#[derive(Args, Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AlCompareArgs {
    /// Comma-separated strategies.
    #[arg(long, value_delimiter = ',')]
    pub strategies: Vec<Strategy>,
    #[arg(long, value_delimiter = ',', default_value = "0,1,2,3,4")]
    pub seeds: Vec<u64>,
    /// Also run each strategy warm-started from `--warm-start`.
    #[arg(long)]
    pub with_warm_start: bool,
    /// Dataset column of the tables; the pool file stem when omitted.
    #[arg(long)]
    pub dataset: Option<String>,
    #[command(flatten)]
    #[serde(flatten)]
    pub al: AlParams,
}

#[derive(Args, Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalArgs {
    #[arg(long)]
    pub test: Option<PathBuf>,
    /// Relation checkpoint to evaluate.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Feature-baseline model to evaluate instead.
    #[arg(long)]
    pub baseline: Option<PathBuf>,
    #[command(flatten)]
    #[serde(flatten)]
    pub window: WindowParams,
}

#[derive(Args, Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ServeArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub service: ServiceParams,
    /// Start an external-oracle run over this pool; otherwise serve with no active run.
    #[arg(long)]
    pub strategy: Option<Strategy>,
    #[command(flatten)]
    #[serde(flatten)]
    pub al: AlParams,
}

#[derive(Args, Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RerunArgs {
    /// Manifest of the run to repeat.
    pub manifest: PathBuf,
}
