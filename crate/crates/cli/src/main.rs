//! `kprefine`: refine keypoint locations across many views.
//!
//! ```bash
//! kprefine synth --out scene --seed 7
//! kprefine pipeline --keypoints scene/keypoints_perturbed.csv --matches scene/matches.csv \
//!     --flows scene/flows.csv --out run
//! kprefine eval --scene scene --keypoints run/refined.csv --matches scene/matches.csv --out run
//! ```
//!
//! Exit status is 0 on success, 1 on a usage error and 2 on a data error.
//! `KPREFINE_LOG` sets the log filter (for example `info`).

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use kprefine::Mode;

#[derive(Parser)]
#[command(
    name = "kprefine",
    version,
    about = "Multi-view keypoint refinement from local flow fields"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate a flow field for every match from the images.
    Align(Flags),
    /// Separate tracks and split them into bounded components.
    Partition(Flags),
    /// Refine keypoints from precomputed flows.
    Refine(Flags),
    /// Refine query keypoints against 3D-point hypotheses in closed form.
    RefineQuery(Flags),
    /// Generate a synthetic planar scene with oracle flows.
    Synth(Flags),
    /// Score keypoints against a synthetic scene's ground truth.
    Eval(Flags),
    /// Align (when no flows are given), partition and refine.
    Pipeline(Flags),
}

/// Flags shared by every subcommand; each overrides its config-file value.
#[derive(Args, Debug, Clone, Default)]
pub struct Flags {
    /// JSON configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Keypoints CSV (`image_id,kp_id,x,y`); `eval` also accepts a refined CSV.
    #[arg(long)]
    pub keypoints: Option<PathBuf>,
    /// Matches CSV (`image_a,kp_a,image_b,kp_b,similarity`).
    #[arg(long)]
    pub matches: Option<PathBuf>,
    /// Directory holding `{image_id}.pgm`.
    #[arg(long)]
    pub images: Option<PathBuf>,
    /// Flows CSV; for `refine-query`, the hypotheses CSV.
    #[arg(long)]
    pub flows: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Scene dump directory (for `eval` and optionally `pipeline`).
    #[arg(long)]
    pub scene: Option<PathBuf>,
    /// full, no-partition, intra-only or intra-inter.
    #[arg(long)]
    pub mode: Option<Mode>,
    /// L1 bound on keypoint displacement, in pixels.
    #[arg(long = "K")]
    pub bound: Option<f64>,
    #[arg(long)]
    pub cauchy_scale: Option<f64>,
    #[arg(long)]
    pub tukey_scale: Option<f64>,
    #[arg(long)]
    pub max_iterations: Option<usize>,
    #[arg(long)]
    pub grid_spacing: Option<f64>,
    #[arg(long)]
    pub fine_zoom: Option<f64>,
    /// Worker threads; 0 uses every core.
    #[arg(long)]
    pub threads: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Comma-separated pixel thresholds of the accuracy curve.
    #[arg(long, value_delimiter = ',')]
    pub thresholds: Option<Vec<f64>>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("KPREFINE_LOG", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = match cli.command {
        Command::Align(f) => commands::align(&f),
        Command::Partition(f) => commands::partition(&f),
        Command::Refine(f) => commands::refine(&f),
        Command::RefineQuery(f) => commands::refine_query(&f),
        Command::Synth(f) => commands::synth(&f),
        Command::Eval(f) => commands::eval(&f),
        Command::Pipeline(f) => commands::pipeline(&f),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("kprefine: {failure}");
            ExitCode::from(failure.exit_code())
        }
    }
}
