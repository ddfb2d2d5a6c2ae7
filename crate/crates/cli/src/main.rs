mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(
    name = "hpn",
    version,
    about = "Build, check, run and generate hierarchical Petri net controllers"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Assemble a system spec into a net file.
    Build {
        #[arg(long)]
        spec: PathBuf,
        /// Output net file; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Parse and validate a spec or net file.
    Validate(#[command(flatten)] Input),
    /// Page check, safeness and deadlock analysis.
    Analyze {
        #[command(flatten)]
        input: Input,
        /// Maximum number of markings to explore.
        #[arg(long, default_value_t = 1_000_000)]
        budget: usize,
    },
    /// Execute a net with the bundled line-follower functions and world.
    Run(#[command(flatten)] RunArgs),
    /// Simulate the line follower and report on-line statistics.
    Sim {
        #[command(flatten)]
        run: RunArgs,
        /// Simulated seconds, overriding the config.
        #[arg(long)]
        duration: Option<f64>,
        /// Pose log output file.
        #[arg(long)]
        pose_out: Option<PathBuf>,
    },
    /// Generate a standalone controller crate.
    Generate {
        #[command(flatten)]
        input: Input,
        #[arg(long)]
        out: PathBuf,
        /// Transition-function fragments; the bundled line-follower set when omitted.
        #[arg(long)]
        fragments: Option<PathBuf>,
        /// Path of the hpn-core crate the controller links against.
        #[arg(long)]
        runtime: Option<PathBuf>,
        /// World config embedded as the controller's default.
        #[arg(long, env = "HPN_CONFIG")]
        config: Option<PathBuf>,
    },
    /// Export one net, or the flattened net, as Graphviz DOT.
    ExportDot {
        #[command(flatten)]
        input: Input,
        /// Net of the hierarchy to export; the root when omitted.
        #[arg(long, conflicts_with = "ground")]
        subnet: Option<String>,
        /// Export the flattened net.
        #[arg(long)]
        ground: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fit generated line count against net size over a corpus.
    MeasureSize {
        /// Spec (`.spec`) or net files.
        #[arg(required = true)]
        files: Vec<PathBuf>,
    },
}

#[derive(Args, Debug, Clone)]
#[group(required = true, multiple = false)]
pub struct Input {
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long)]
    pub net: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
pub struct RunArgs {
    #[arg(long, conflicts_with = "net")]
    pub spec: Option<PathBuf>,
    #[arg(long)]
    pub net: Option<PathBuf>,
    /// Seeded random scheduling; deterministic lowest-index order when omitted.
    #[arg(long)]
    pub seed: Option<u64>,
    /// World config file.
    #[arg(long, env = "HPN_CONFIG")]
    pub config: Option<PathBuf>,
    /// Alternative track geometry.
    #[arg(long)]
    pub track: Option<PathBuf>,
    #[arg(long)]
    pub trace_out: Option<PathBuf>,
    /// Maximum number of transition firings.
    #[arg(long)]
    pub budget: Option<u64>,
    /// Worker threads; one per subsystem when omitted.
    #[arg(long, env = "HPN_WORKERS")]
    pub workers: Option<usize>,
    /// Execute without the page and safeness checks.
    #[arg(long)]
    pub skip_analysis: bool,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match commands::dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("error: {:#}", failure.error);
            ExitCode::from(failure.code)
        }
    }
}
