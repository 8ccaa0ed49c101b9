//! `piste` command-line entry point.

mod commands;

use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand, ValueEnum};

use piste_core::priority::DEFAULT_DELTA;
use piste_core::sim::{DEFAULT_MAX_STEPS, DEFAULT_TAU_CRASH, DEFAULT_TOUCH_DISTANCE};
use piste_core::skills::{DEFAULT_STAGE1_K, DEFAULT_STAGE2_K};
use piste_core::strategy::DEFAULT_SIGMA;
use piste_core::types::{STRIP_LENGTH, WINDOW_FRAMES};

#[derive(Debug, Parser)]
#[command(
    name = "piste",
    version,
    about = "Fencing skill discovery, strategy modeling and touch simulation"
)]
struct Cli {
    /// Emit JSON instead of plain text.
    #[arg(long, global = true)]
    json: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit per-frame homographies and locate both fencers on the strip.
    Calibrate(CalibrateArgs),
    /// Compute standardized window embeddings for the bouts of one manifest role.
    Embed(EmbedArgs),
    /// Two-stage k-means over embeddings; writes a skill model.
    Cluster(ClusterArgs),
    /// Annotate priority modes and write a touches file.
    Annotate(AnnotateArgs),
    /// Fit the priority-aware strategy model.
    Fit(FitArgs),
    /// Run a batch of simulated touches.
    Simulate(SimulateArgs),
    /// Next-action distribution for one context.
    Predict(PredictArgs),
    /// Held-out next-action accuracy and log-likelihood.
    Eval(EvalArgs),
    /// Transition-matrix rows for one priority mode.
    ExportMatrix(ExportArgs),
    /// Start the interactive HTTP service.
    Serve(ServeArgs),
    /// Re-run transcripts and verify every recorded state.
    Replay(ReplayArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Inherit {
    Nearest,
    Previous,
    None,
}

#[derive(Debug, Args)]
struct CalibrateArgs {
    /// Calibration file (JSON).
    input: PathBuf,
    /// How frames without enough lines borrow a homography.
    #[arg(long, value_enum, default_value = "nearest")]
    inherit: Inherit,
    #[arg(long, short)]
    output: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum RoleArg {
    Clustering,
    Training,
    Heldout,
}

#[derive(Debug, Args)]
struct BoutSource {
    /// Manifest listing bout files with roles.
    #[arg(long, env = "PISTE_MANIFEST")]
    manifest: Option<PathBuf>,
    /// Manifest role to read.
    #[arg(long, value_enum)]
    role: Option<RoleArg>,
    /// Bout files given directly instead of a manifest.
    #[arg(long = "bout")]
    bouts: Vec<PathBuf>,
}

#[derive(Debug, Args)]
struct EmbedArgs {
    #[command(flatten)]
    source: BoutSource,
    /// Dimension of per-window external embeddings in the bout files (0 = none).
    #[arg(long, default_value_t = 0)]
    external_dim: usize,
    #[arg(long, short)]
    output: PathBuf,
}

#[derive(Debug, Args)]
struct ClusterArgs {
    /// Embeddings file written by `embed`.
    #[arg(long)]
    embeddings: PathBuf,
    /// First-stage cluster count.
    #[arg(long, default_value_t = DEFAULT_STAGE1_K)]
    k1: usize,
    /// Action vocabulary size (second-stage cluster count).
    #[arg(long, default_value_t = DEFAULT_STAGE2_K)]
    k2: usize,
    /// First-stage clusters to discard as no-action, comma separated.
    #[arg(long, value_delimiter = ',')]
    exclude: Vec<usize>,
    /// Finishing actions, comma separated [default: 5,16,17,22,28 when k2 = 30].
    #[arg(long, value_delimiter = ',')]
    finishing: Option<Vec<u16>>,
    /// Text file with one action label per line.
    #[arg(long)]
    labels: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 300)]
    max_iter: usize,
    #[arg(long, short)]
    output: PathBuf,
}

#[derive(Debug, Args)]
struct AnnotateArgs {
    #[command(flatten)]
    source: BoutSource,
    /// Displacement margin for priority changes, meters.
    #[arg(long, default_value_t = DEFAULT_DELTA)]
    delta: f64,
    #[arg(long, short)]
    output: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Weighting {
    PerCandidate,
    PerContext,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Backoff {
    Marginal,
    Uniform,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Sampling {
    Start,
    Mean,
    End,
}

#[derive(Debug, Args)]
struct FitArgs {
    /// Annotated touches files written by `annotate`.
    #[arg(long = "touches")]
    touches: Vec<PathBuf>,
    /// Bouts to annotate on the fly (used when no touches files are given).
    #[command(flatten)]
    source: BoutSource,
    /// Displacement margin for on-the-fly annotation, meters.
    #[arg(long, default_value_t = DEFAULT_DELTA)]
    delta: f64,
    #[arg(long, env = "PISTE_SKILLS")]
    skills: PathBuf,
    /// Width of the distance weighting, meters.
    #[arg(long, default_value_t = DEFAULT_SIGMA)]
    sigma: f64,
    #[arg(long, value_enum, default_value = "per-candidate")]
    weighting: Weighting,
    #[arg(long, value_enum, default_value = "marginal")]
    backoff: Backoff,
    /// Additive smoothing of raw transition counts.
    #[arg(long, default_value_t = 0.0)]
    laplace: f64,
    /// Which distance within a window is recorded for a transition.
    #[arg(long, value_enum, default_value = "start")]
    distance: Sampling,
    #[arg(long, short)]
    output: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum PolicyArg {
    Model,
    Random,
}

#[derive(Debug, Args)]
struct SimParams {
    /// Crash threshold on the fencer gap, meters.
    #[arg(long, default_value_t = DEFAULT_TAU_CRASH)]
    tau: f64,
    /// Gap under which lights and finishing actions end a touch, meters.
    #[arg(long, default_value_t = DEFAULT_TOUCH_DISTANCE)]
    touch_distance: f64,
    /// Displacement margin for priority changes, meters.
    #[arg(long, default_value_t = DEFAULT_DELTA)]
    delta: f64,
    #[arg(long, default_value_t = DEFAULT_MAX_STEPS)]
    max_steps: usize,
    #[arg(long, default_value_t = 5.0)]
    start_left: f64,
    #[arg(long, default_value_t = 9.0)]
    start_right: f64,
}

#[derive(Debug, Args)]
struct ModelPaths {
    #[arg(long, env = "PISTE_STRATEGY")]
    strategy: PathBuf,
    #[arg(long, env = "PISTE_SKILLS")]
    skills: PathBuf,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[command(flatten)]
    models: ModelPaths,
    #[arg(long, value_enum, default_value = "model")]
    left: PolicyArg,
    #[arg(long, value_enum, default_value = "model")]
    right: PolicyArg,
    /// Number of touches.
    #[arg(long, short, default_value_t = 1)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    params: SimParams,
    /// Transcripts file to write.
    #[arg(long, short)]
    output: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct PredictArgs {
    #[arg(long, env = "PISTE_STRATEGY")]
    strategy: PathBuf,
    /// Skill model, for labels in the output.
    #[arg(long)]
    skills: Option<PathBuf>,
    /// Priority mode from the acting fencer's side: MM, P-NP or NP-P.
    #[arg(long)]
    mode: String,
    /// Acting fencer's previous action.
    #[arg(long)]
    u_prev: Option<usize>,
    /// Opponent's previous action.
    #[arg(long)]
    v_prev: Option<usize>,
    /// Current gap between the fencers, meters.
    #[arg(long, short)]
    d: Option<f64>,
    /// Override the model's distance-weighting width, meters.
    #[arg(long)]
    sigma: Option<f64>,
    /// Only print the most likely actions.
    #[arg(long)]
    top: Option<usize>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[command(flatten)]
    models: ModelPaths,
    /// Held-out touches files.
    #[arg(long = "touches")]
    touches: Vec<PathBuf>,
    #[command(flatten)]
    source: BoutSource,
    #[arg(long, default_value_t = DEFAULT_DELTA)]
    delta: f64,
    /// Accuracy cut-offs, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "1,3,5")]
    k: Vec<usize>,
    #[arg(long, value_enum, default_value = "start")]
    distance: Sampling,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum MatrixFormat {
    Csv,
    Json,
}

#[derive(Debug, Args)]
struct ExportArgs {
    #[arg(long, env = "PISTE_STRATEGY")]
    strategy: PathBuf,
    /// MM, P-NP or NP-P.
    #[arg(long)]
    mode: String,
    #[arg(long, value_enum, default_value = "csv")]
    format: MatrixFormat,
    #[arg(long, short)]
    output: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ServeArgs {
    #[command(flatten)]
    models: ModelPaths,
    #[arg(long, default_value = "127.0.0.1:8080")]
    addr: SocketAddr,
    /// Leave the model's action distribution out of step responses.
    #[arg(long)]
    hide_distribution: bool,
    #[command(flatten)]
    params: SimParams,
}

#[derive(Debug, Args)]
struct ReplayArgs {
    /// Transcripts file.
    input: PathBuf,
}

fn constants_help() -> String {
    format!(
        "Model constants (defaults):\n  \
         window length       {WINDOW_FRAMES} frames\n  \
         actions             {DEFAULT_STAGE2_K} (first stage {DEFAULT_STAGE1_K} clusters)\n  \
         delta               {DEFAULT_DELTA} m  priority displacement margin (--delta)\n  \
         sigma               {DEFAULT_SIGMA} m  distance weighting width (--sigma)\n  \
         tau                 {DEFAULT_TAU_CRASH} m  crash threshold (--tau)\n  \
         touch distance      {DEFAULT_TOUCH_DISTANCE} m\n  \
         max steps           {DEFAULT_MAX_STEPS}\n  \
         strip length        {STRIP_LENGTH} m\n\n\
         Environment: PISTE_MANIFEST, PISTE_SKILLS and PISTE_STRATEGY supply file paths.\n\
         Errors print one line to stderr, `error[<category>]: <message>`, and exit nonzero."
    )
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let parsed = Cli::command()
        .after_help(constants_help())
        .try_get_matches()
        .and_then(|m| Cli::from_arg_matches(&m));
    let cli = match parsed {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("").trim_start_matches("error: ");
            eprintln!("error[usage]: {first}");
            return ExitCode::from(2);
        }
    };
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = e.to_string().replace('\n', " ");
            eprintln!("error[{}]: {msg}", e.category());
            ExitCode::FAILURE
        }
    }
}
