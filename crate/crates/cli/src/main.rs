mod output;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use rsmec_core::agents::LearnerKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    Train,
    Eval,
    Sweep,
}

/// System parameter varied by a sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Axis {
    /// IRS elements.
    #[value(name = "K", alias = "k")]
    K,
    /// Per-user power budget, watts.
    #[value(name = "pmax", alias = "p_max")]
    Pmax,
    /// Users.
    #[value(name = "N", alias = "n")]
    N,
    /// BS antennas.
    #[value(name = "M", alias = "m")]
    M,
}

impl Axis {
    pub fn name(self) -> &'static str {
        match self {
            Axis::K => "K",
            Axis::Pmax => "pmax",
            Axis::N => "N",
            Axis::M => "M",
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "rsmec", version = run::VERSION, about = "IRS-assisted uplink RSMA edge-computing simulator")]
pub struct Args {
    /// Flat `key = value` config file; desk defaults when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub mode: Mode,
    #[arg(long, value_enum)]
    pub sweep_axis: Option<Axis>,
    /// Comma-separated axis values.
    #[arg(long, value_delimiter = ',')]
    pub sweep_values: Vec<f64>,
    /// Comma-separated seeds; defaults to the config seed.
    #[arg(long, value_delimiter = ',')]
    pub seeds: Vec<u64>,
    /// Output directory, created if missing.
    #[arg(long)]
    pub out: PathBuf,
    /// Trained agent for eval and sweep, once per learner kind. `{seed}`
    /// and `{value}` are replaced per run.
    #[arg(long)]
    pub checkpoint: Vec<String>,
    /// Learner trained in train mode: `cdeh` (default) or `dqn-only`.
    #[arg(long)]
    pub learner: Option<LearnerKind>,
    /// Training episodes; overrides the config.
    #[arg(long)]
    pub episodes: Option<usize>,
    /// Evaluation episodes per policy.
    #[arg(long, default_value_t = 100)]
    pub eval_episodes: u64,
    /// Comma-separated policy presets.
    #[arg(long, value_delimiter = ',')]
    pub policies: Vec<String>,
    /// Continue training from the latest periodic checkpoint in `--out`.
    #[arg(long)]
    pub resume: bool,
    /// Also write per-slot trace CSVs.
    #[arg(long)]
    pub trace: bool,
    /// Sweep worker threads.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
}

fn main() -> ExitCode {
    let args = Args::parse();
    match run::run(&args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
