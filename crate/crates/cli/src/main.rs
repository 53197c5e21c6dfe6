//! `lmlp` command-line tool.
//!
//! Exit codes: 0 success, 1 usage error, 2 data or configuration error,
//! 3 numerical failure.

mod commands;
mod scan;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "lmlp", version, about = "Train and evaluate lifelong machine-learning potentials")]
pub struct Cli {
    /// Worker threads; 1 runs everything sequentially and reproduces results bit for bit on any machine.
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    /// Suppress progress output on stderr.
    #[arg(long, short, global = true)]
    pub quiet: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Train one model or an ensemble from labelled extended-XYZ data.
    Train(TrainArgs),
    /// Continue training from a checkpoint.
    Resume(ResumeArgs),
    /// Predict energies and forces with uncertainties.
    Predict(PredictArgs),
    /// Error statistics and uncertainty calibration on labelled data.
    Eval(EvalArgs),
    /// Energy along one or two interatomic distances.
    Scan(ScanArgs),
    /// Generate a toy dataset.
    Synth(SynthArgs),
    /// Compare optimizers on a toy task.
    BenchOpt(BenchOptArgs),
    /// Write descriptor vectors as CSV.
    DumpDesc(DumpDescArgs),
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// TOML configuration; defaults apply when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Dataset files; may be repeated.
    #[arg(long, required = true, num_args = 1..)]
    pub data: Vec<PathBuf>,
    /// Output directory for checkpoints, logs and the ensemble manifest.
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides `trainer.seed`; member k uses seed + k.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides `ensemble.members`.
    #[arg(long)]
    pub members: Option<usize>,
    /// Overrides `trainer.epochs`.
    #[arg(long)]
    pub epochs: Option<u64>,
    /// Adds a dataset after a number of epochs, written EPOCH:PATH; may be repeated.
    #[arg(long)]
    pub inject: Vec<String>,
}

#[derive(Args, Debug)]
pub struct ResumeArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Every dataset the checkpoint was trained on, injected files included.
    #[arg(long, required = true, num_args = 1..)]
    pub data: Vec<PathBuf>,
    /// Additional epochs.
    #[arg(long)]
    pub epochs: u64,
    /// Where to write the new checkpoint; defaults to overwriting the input.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Log CSV to append to; defaults to the checkpoint path with extension `log.csv`.
    #[arg(long)]
    pub log: Option<PathBuf>,
    /// Adds a dataset after this many further epochs, written EPOCH:PATH.
    #[arg(long)]
    pub inject: Vec<String>,
}

#[derive(Args, Debug)]
pub struct PredictArgs {
    /// Ensemble manifest written by `train`.
    #[arg(long)]
    pub ensemble: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Per-frame CSV.
    #[arg(long)]
    pub out: PathBuf,
    /// Optional per-atom force CSV.
    #[arg(long)]
    pub forces_out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub ensemble: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Number of uncertainty bands in the calibration report.
    #[arg(long, default_value_t = 4)]
    pub buckets: usize,
    /// Calibration report CSV.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ScanArgs {
    #[arg(long)]
    pub ensemble: PathBuf,
    /// Extended-XYZ file holding the template conformation.
    #[arg(long)]
    pub template: PathBuf,
    /// Frame of the template file to use.
    #[arg(long, default_value_t = 0)]
    pub frame: usize,
    /// Atom kept fixed along the first distance.
    #[arg(long)]
    pub atom_a: usize,
    /// Atom moved along the first distance.
    #[arg(long)]
    pub atom_b: usize,
    /// First distance grid in Å: START END POINTS.
    #[arg(long, num_args = 3, value_names = ["START", "END", "POINTS"])]
    pub range: Vec<String>,
    #[arg(long, requires_all = ["atom_d", "range2"])]
    pub atom_c: Option<usize>,
    #[arg(long, requires_all = ["atom_c", "range2"])]
    pub atom_d: Option<usize>,
    #[arg(long, num_args = 3, value_names = ["START", "END", "POINTS"], requires_all = ["atom_c", "atom_d"])]
    pub range2: Vec<String>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    /// Elements and cluster size, e.g. `H,C,Cl:5`.
    #[arg(long)]
    pub system: String,
    #[arg(long)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    /// Also write a training configuration suited to the system.
    #[arg(long)]
    pub config_out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct BenchOptArgs {
    /// Base configuration; defaults to the toy configuration of `--system`.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value = "H,C,Cl:5")]
    pub system: String,
    #[arg(long, default_value_t = 500)]
    pub frames: usize,
    /// Seed of the generated dataset.
    #[arg(long, default_value_t = 1)]
    pub data_seed: u64,
    /// Comma-separated optimizer names (core, adam, rprop, sgd).
    #[arg(long, default_value = "core,adam,rprop,sgd", value_delimiter = ',')]
    pub optimizers: Vec<String>,
    /// Training seeds 0..k.
    #[arg(long, default_value_t = 3)]
    pub seeds: u64,
    #[arg(long)]
    pub epochs: Option<u64>,
    /// Final errors per optimizer and seed.
    #[arg(long)]
    pub out: PathBuf,
    /// Per-epoch errors of every run.
    #[arg(long)]
    pub log_out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct DumpDescArgs {
    /// Configuration whose descriptor section is used; defaults apply when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
