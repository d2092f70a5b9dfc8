mod commands;
mod files;
mod output;
mod protocols;
mod synthetic;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::output::Output;

#[derive(Parser, Debug)]
#[command(
    name = "envlight",
    version,
    about = "Lighting estimation toolkit for equirectangular environment maps"
)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Global {
    /// Seed for every randomised step.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads for per-entry protocol work (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    pub workers: usize,
    /// Directory for result files and run manifests.
    #[arg(long, global = true, default_value = ".")]
    pub output_dir: PathBuf,
    #[arg(long, global = true, value_enum, default_value_t = Format::Json)]
    pub format: Format,
    /// Omit wall-clock timings so outputs are byte-reproducible.
    #[arg(long, global = true)]
    pub no_timing: bool,
    /// More log output (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Csv,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Split an HDR map into an LDR map and a high-intensity map.
    Decompose(commands::DecomposeArgs),
    /// Rebuild an HDR map from an LDR map and a high-intensity map.
    Recompose(commands::RecomposeArgs),
    /// Total luminance, mean intensity and colour temperature of a map.
    Measure(commands::MeasureArgs),
    /// Ambient labels and prompt for a reading or a map.
    Classify(commands::ClassifyArgs),
    /// Observation mask of one or more pinhole views.
    Mask(commands::MaskArgs),
    /// Project camera frames into a partial panorama.
    Stitch(commands::StitchArgs),
    /// Intensity or colour-temperature edits of a map.
    Augment(commands::AugmentArgs),
    /// Adapt an estimated map's colours to an observation.
    Refine(commands::RefineArgs),
    /// Pick the candidate whose palette best matches an observation.
    Select(commands::SelectArgs),
    /// Render diffuse, matte and mirror probe spheres.
    RenderSpheres(commands::RenderSpheresArgs),
    /// Three-sphere evaluation protocol.
    EvalThreeSphere(protocols::ThreeSphereArgs),
    /// Robustness protocol over edited lighting conditions.
    EvalRobustness(protocols::RobustnessArgs),
    /// Full estimate from a partial observation through a backend.
    Estimate(protocols::EstimateArgs),
    /// Serve the backend protocol over HTTP from an oracle or fixture.
    ServeMockBackend(protocols::ServeArgs),
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let out = Output::new(&cli.global)?;
    let g = &cli.global;
    match cli.command {
        Command::Decompose(a) => commands::decompose(a, &out),
        Command::Recompose(a) => commands::recompose(a, &out),
        Command::Measure(a) => commands::measure(a, &out),
        Command::Classify(a) => commands::classify(a, &out),
        Command::Mask(a) => commands::mask(a, g, &out),
        Command::Stitch(a) => commands::stitch(a, &out),
        Command::Augment(a) => commands::augment(a, g, &out),
        Command::Refine(a) => commands::refine(a, &out),
        Command::Select(a) => commands::select(a, g, &out),
        Command::RenderSpheres(a) => commands::render_spheres(a, &out),
        Command::EvalThreeSphere(a) => protocols::eval_three_sphere(a, g, &out),
        Command::EvalRobustness(a) => protocols::eval_robustness(a, g, &out),
        Command::Estimate(a) => protocols::estimate(a, g, &out),
        Command::ServeMockBackend(a) => protocols::serve(a, g, &out),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            output::report_usage_error(&e);
            return ExitCode::from(2);
        }
    };
    let level = match cli.global.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            output::report_error(&e);
            ExitCode::FAILURE
        }
    }
}
