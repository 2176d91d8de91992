use std::path::PathBuf;

use bnsp_core::data::DEFAULT_DT;
use bnsp_core::forecast::{STANDARD_SAMPLES, ULTRA_POSITIONS};
use bnsp_core::simulator::DEFAULT_RADIUS_PX;
use clap::{Args, Parser, Subcommand, ValueEnum};

/// Stochastic social-force trajectory forecasting and crowd simulation.
///
/// Exit codes: 0 success, 2 usage error or missing file, 3 validation
/// failure, 4 numeric failure. Failures print a JSON error record on stderr.
#[derive(Debug, Parser)]
#[command(name = "bnsp", version)]
pub struct Cli {
    /// Cap on worker threads (default: one per core).
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Convert a trajectory file to a scene file.
    Ingest(IngestArgs),
    /// Train a model on one or more scenes.
    Train(TrainArgs),
    /// Forecast every window of a scene.
    Predict(PredictArgs),
    /// Score predictions against a scene.
    Evaluate(EvaluateArgs),
    /// Run a boundary-spawn crowd simulation.
    Simulate(SimulateArgs),
    /// Per-factor force explanations for one window.
    Explain(ExplainArgs),
    /// Re-run the command recorded in a manifest and compare outputs.
    Replay(ReplayArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Ingest(_) => "ingest",
            Command::Train(_) => "train",
            Command::Predict(_) => "predict",
            Command::Evaluate(_) => "evaluate",
            Command::Simulate(_) => "simulate",
            Command::Explain(_) => "explain",
            Command::Replay(_) => "replay",
        }
    }
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    /// Trajectory file: `frame agent x y` per line, world coordinates.
    #[arg(long)]
    pub input: PathBuf,
    /// 3x3 world-to-pixel homography; identity when omitted.
    #[arg(long)]
    pub homography: Option<PathBuf>,
    /// Seconds between consecutive frames.
    #[arg(long, default_value_t = DEFAULT_DT)]
    pub dt: f64,
    /// Scene file to write.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Phase {
    #[value(name = "1")]
    One,
    #[value(name = "2")]
    Two,
    All,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Scene files.
    #[arg(long, required = true, num_args = 1..)]
    pub scenes: Vec<PathBuf>,
    /// `key = value` config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Config override, `key=value`; repeatable.
    #[arg(long = "set")]
    pub set: Vec<String>,
    /// Training phase to run: 1, 2 or all.
    #[arg(long, value_enum, default_value = "all")]
    pub phase: Phase,
    /// Checkpoint to continue from; required for phase 2.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Checkpoint to write.
    #[arg(long)]
    pub out: PathBuf,
    /// RNG seed; same seed and inputs give identical outputs.
    #[arg(long)]
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PredictMode {
    Standard,
    Ultra,
    Deterministic,
}

impl PredictMode {
    pub fn name(&self) -> &'static str {
        match self {
            PredictMode::Standard => "standard",
            PredictMode::Ultra => "ultra",
            PredictMode::Deterministic => "deterministic",
        }
    }
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    /// Checkpoint.
    #[arg(long)]
    pub model: PathBuf,
    /// Scene file.
    #[arg(long)]
    pub scene: PathBuf,
    /// Sampling mode.
    #[arg(long, value_enum, default_value = "standard")]
    pub mode: PredictMode,
    /// Trajectories (standard) or goals (ultra) per window.
    #[arg(long, default_value_t = STANDARD_SAMPLES)]
    pub samples: usize,
    /// Candidate positions per step in ultra mode.
    #[arg(long, default_value_t = ULTRA_POSITIONS)]
    pub positions: usize,
    /// ground_truth, file or endpoint_gaussian.
    #[arg(long, default_value = "ground_truth")]
    pub goal_mode: String,
    /// JSON lines of `{"window_id", "goal"}` for `--goal-mode file`.
    #[arg(long)]
    pub goals_file: Option<PathBuf>,
    /// Only the first N windows.
    #[arg(long)]
    pub limit: Option<usize>,
    /// Predictions file (JSON lines).
    #[arg(long)]
    pub out: PathBuf,
    /// RNG seed; same seed and inputs give identical outputs.
    #[arg(long)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Predictions file.
    #[arg(long)]
    pub pred: PathBuf,
    /// Scene file.
    #[arg(long)]
    pub scene: PathBuf,
    /// Comma-separated: ade, fde, collision.
    #[arg(long, default_value = "ade,fde")]
    pub metrics: String,
    /// Collision radius; 7.5 px, or 0.2 m with --world.
    #[arg(long)]
    pub radius: Option<f64>,
    /// Collision intervals in seconds, e.g. `0-8,4-12`; whole span by default.
    #[arg(long)]
    pub intervals: Option<String>,
    /// Measure in world coordinates via the scene homography.
    #[arg(long)]
    pub world: bool,
    /// Window stride the predictions were made with.
    #[arg(long, default_value_t = 1)]
    pub stride: usize,
    /// Metrics JSON to write.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Checkpoint.
    #[arg(long)]
    pub model: PathBuf,
    /// Scene supplying bounds, obstacles and homography.
    #[arg(long)]
    pub scene: Option<PathBuf>,
    /// Highest number of people present at once.
    #[arg(long, default_value_t = 10)]
    pub hnp: usize,
    /// Seconds.
    #[arg(long, default_value_t = 30.0)]
    pub duration: f64,
    /// Collision intervals in seconds.
    #[arg(long, default_value = "0-8,4-12,8-16")]
    pub intervals: String,
    /// Collision radius, pixels.
    #[arg(long, default_value_t = DEFAULT_RADIUS_PX)]
    pub radius: f64,
    /// Seconds between spawn batches.
    #[arg(long, default_value_t = 1.0)]
    pub spawn_interval: f64,
    /// Preferred walking speed, pixels per second.
    #[arg(long, default_value_t = 30.0)]
    pub speed: f64,
    /// Trajectory file to write.
    #[arg(long)]
    pub out: PathBuf,
    /// Collision report; `<out>.collisions.json` by default.
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// RNG seed; same seed and inputs give identical outputs.
    #[arg(long)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct ExplainArgs {
    /// Checkpoint.
    #[arg(long)]
    pub model: PathBuf,
    /// Scene file.
    #[arg(long)]
    pub scene: PathBuf,
    /// Window index within the scene.
    #[arg(long)]
    pub window: usize,
    /// Grid cells per axis.
    #[arg(long, default_value_t = 32)]
    pub grid: usize,
    /// `std:N` (mean ± N std per factor) or `x0,x1,y0,y1`.
    #[arg(long, default_value = "std:3")]
    pub extent: String,
    /// Explanation JSON to write.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    /// Manifest written by an earlier run.
    #[arg(long)]
    pub manifest: PathBuf,
}
