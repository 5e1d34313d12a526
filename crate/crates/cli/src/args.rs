use clap::{Args, Parser, Subcommand, ValueEnum};
use std::path::PathBuf;

#[derive(Debug, Parser)]
#[command(name = "scenariofuzz", version, about = "Scenario-based fuzzing of driving agents")]
pub struct Cli {
    /// Seed for every stochastic step; overrides `rng_seed` in a campaign config.
    #[arg(long, global = true)]
    pub rng_seed: Option<u64>,
    /// Campaign state directory.
    #[arg(long, global = true, env = "SCENARIOFUZZ_STATE")]
    pub state_dir: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = LogLevel::Warn)]
    pub log_level: LogLevel,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum LogLevel {
    Off,
    Error,
    Warn,
    Info,
    Debug,
    Trace,
}

impl LogLevel {
    pub fn filter(self) -> log::LevelFilter {
        match self {
            LogLevel::Off => log::LevelFilter::Off,
            LogLevel::Error => log::LevelFilter::Error,
            LogLevel::Warn => log::LevelFilter::Warn,
            LogLevel::Info => log::LevelFilter::Info,
            LogLevel::Debug => log::LevelFilter::Debug,
            LogLevel::Trace => log::LevelFilter::Trace,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Scenario seed corpora.
    #[command(subcommand)]
    Corpus(CorpusCommand),
    /// Fuzzing campaigns.
    #[command(subcommand)]
    Fuzz(FuzzCommand),
    /// Scenario evaluation model.
    #[command(subcommand)]
    Sem(SemCommand),
    /// Re-run a stored error scenario and compare it with its recorded trace.
    Replay(ReplayArgs),
    /// Error-scenario analysis.
    #[command(subcommand)]
    Analyze(AnalyzeCommand),
    /// Summarize campaigns: error scenarios per misbehavior kind and agent.
    Report(ReportArgs),
    /// Serve a built-in agent over the stdio protocol.
    #[command(hide = true)]
    ServeAgent {
        #[arg(long)]
        agent: String,
    },
}

#[derive(Debug, Subcommand)]
pub enum CorpusCommand {
    /// Build the seed corpus of one map.
    Build(CorpusBuildArgs),
}

#[derive(Debug, Args)]
pub struct CorpusBuildArgs {
    /// OpenDRIVE file, or the name of a bundled map.
    #[arg(long)]
    pub map: String,
    /// Output directory; defaults to `<state-dir>/corpus`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Waypoint spacing in metres.
    #[arg(long)]
    pub spacing: Option<f64>,
    #[arg(long)]
    pub max_hops: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum FuzzCommand {
    /// Run or resume a campaign in the state directory.
    Run(FuzzRunArgs),
}

#[derive(Debug, Args)]
pub struct FuzzRunArgs {
    /// Campaign config (TOML); defaults apply without one.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Built-in agent name, or the name recorded for `--agent-cmd`.
    #[arg(long)]
    pub agent: String,
    /// Run an external agent speaking the stdio protocol.
    #[arg(long)]
    pub agent_cmd: Option<String>,
    #[arg(long, default_value = "1")]
    pub agent_version: String,
    /// Executions (`200`) or wall-clock time (`90s`, `15m`, `2h`).
    #[arg(long)]
    pub budget: Option<String>,
    /// Corpus map name. Also accepts an OpenDRIVE file or bundled map, built on the fly.
    #[arg(long)]
    pub map: Option<String>,
    /// Directory holding prebuilt corpora; defaults to `<state-dir>/corpus`.
    #[arg(long)]
    pub corpus: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum SemCommand {
    /// Train a model on executed scenarios.
    Train(SemTrainArgs),
    /// Evaluate a model on executed scenarios.
    Eval(SemEvalArgs),
}

#[derive(Debug, Args)]
pub struct RecordsArgs {
    /// Campaign journal (`records.jsonl`) or JSON lines of test records.
    #[arg(long)]
    pub records: PathBuf,
    /// Corpus directory; defaults to `corpus/` next to the records file.
    #[arg(long)]
    pub corpus: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SemTrainArgs {
    #[command(flatten)]
    pub input: RecordsArgs,
    /// Model settings (the `[sem]` table of a campaign config).
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Checkpoint path; defaults to `<state-dir>/sem/trained.ckpt`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also write the training report here.
    #[arg(long)]
    pub metrics: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SemEvalArgs {
    #[command(flatten)]
    pub input: RecordsArgs,
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub metrics: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    /// Error id under `<state-dir>/errors/`.
    #[arg(long)]
    pub id: String,
    /// Replay with another built-in agent than the recorded one.
    #[arg(long)]
    pub agent: Option<String>,
}

#[derive(Debug, Subcommand)]
pub enum AnalyzeCommand {
    /// Cluster the crash scenarios of a campaign.
    Cluster(ClusterArgs),
}

#[derive(Debug, Args)]
pub struct ClusterArgs {
    /// State directory; overrides `--state-dir`.
    #[arg(long)]
    pub state: Option<PathBuf>,
    /// Fixed cluster count; chosen by silhouette when absent.
    #[arg(long)]
    pub k: Option<usize>,
    /// Only errors recorded with this agent.
    #[arg(long)]
    pub system: Option<String>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Report path; defaults to `<state>/clusters.json`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Campaign state directories; defaults to `--state-dir`.
    #[arg(long = "state")]
    pub states: Vec<PathBuf>,
    #[arg(long, value_enum, default_value_t = ReportFormat::Markdown)]
    pub format: ReportFormat,
    /// Write `summary.md` and `summary.json` into this directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ReportFormat {
    Markdown,
    Json,
}
