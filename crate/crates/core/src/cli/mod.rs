//! Command-line front end.
//!
//! Every subcommand returns a [`crate::Result`]; `main` maps errors to exit
//! codes with [`crate::Error::exit_code`]. Human-readable results go to the
//! `out` writer, progress and warnings to the logger.

pub mod config;
mod commands;

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::error::{Error, Result};
use crate::rff_sketch::LawKind;
use crate::trainer::OptimizerKind;

/// Environment variable holding the worker thread count.
pub const THREADS_ENV: &str = "CLGN_THREADS";

#[derive(Debug, Parser)]
#[command(name = "clgn", version, about = "Train generative networks from random Fourier feature sketches")]
pub struct Cli {
    /// Worker threads (overrides CLGN_THREADS; default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic 2-D dataset as CSV.
    Gen(GenArgs),
    /// Sketch a CSV dataset in a single streaming pass.
    Sketch(SketchArgs),
    /// Train a generator against a sketch.
    Train(TrainArgs),
    /// Draw samples from a trained generator.
    Generate(GenerateArgs),
    /// Bin 2-D samples into a histogram.
    Hist(HistArgs),
    /// Total-variation distance between the histograms of two sample files.
    HistCompare(HistCompareArgs),
    /// Compare sketch distances with exact MMD².
    Oracle(OracleArgs),
    /// Check the analytic gradient against finite differences.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum LawArg {
    Gaussian,
    FoldedGaussian,
}

impl From<LawArg> for LawKind {
    fn from(l: LawArg) -> Self {
        match l {
            LawArg::Gaussian => LawKind::Gaussian,
            LawArg::FoldedGaussian => LawKind::FoldedGaussian,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OptimizerArg {
    Sgd,
    Adam,
}

impl From<OptimizerArg> for OptimizerKind {
    fn from(o: OptimizerArg) -> Self {
        match o {
            OptimizerArg::Sgd => OptimizerKind::Sgd,
            OptimizerArg::Adam => OptimizerKind::Adam,
        }
    }
}

#[derive(Debug, Args)]
pub struct GenArgs {
    /// spiral, gmm6 or circle.
    pub dataset: Option<String>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Radial noise (spiral, circle).
    #[arg(long)]
    pub sigma_r: Option<f64>,
    /// Circle radius or distance of the mixture means from the origin.
    #[arg(long, visible_alias = "R")]
    pub radius: Option<f64>,
    /// Per-component standard deviation of the mixture.
    #[arg(long)]
    pub comp_sigma: Option<f64>,
    /// Output CSV (stdout when omitted).
    #[arg(short, long)]
    pub output: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SketchArgs {
    /// Input CSV, or `-` for stdin.
    pub input: PathBuf,
    #[arg(short, long)]
    pub output: PathBuf,
    #[arg(long, value_enum)]
    pub law: Option<LawArg>,
    /// Variance of the frequency law.
    #[arg(long, conflicts_with = "kernel_var")]
    pub sigma2: Option<f64>,
    /// Kernel variance; the frequency variance is its reciprocal (default 1e-3).
    #[arg(long)]
    pub kernel_var: Option<f64>,
    /// Number of frequencies.
    #[arg(long)]
    pub m: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Data dimension to assume when the CSV has no rows.
    #[arg(long, default_value_t = 2)]
    pub dim: usize,
    /// Also write the frequency matrix.
    #[arg(long)]
    pub export_frequencies: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args, Clone, Default)]
pub struct ArchArgs {
    #[arg(long)]
    pub latent_dim: Option<usize>,
    /// Comma-separated hidden widths, e.g. `10,10,10`.
    #[arg(long, value_delimiter = ',')]
    pub hidden: Option<Vec<usize>>,
    /// Leaky ReLU negative slope.
    #[arg(long)]
    pub slope: Option<f64>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Target sketch (CLSK).
    pub sketch: PathBuf,
    /// Output checkpoint (CLGN).
    #[arg(short, long)]
    pub output: PathBuf,
    #[command(flatten)]
    pub arch: ArchArgs,
    #[arg(long)]
    pub n_prime: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long, value_enum)]
    pub optimizer: Option<OptimizerArg>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Draw fresh latents every epoch instead of reusing one pool.
    #[arg(long)]
    pub resample_latents: bool,
    /// Write `<output>.epoch<k>` every k epochs.
    #[arg(long)]
    pub checkpoint_every: Option<usize>,
    /// Per-iteration loss CSV.
    #[arg(long)]
    pub report: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// Generator checkpoint (CLGN).
    pub checkpoint: PathBuf,
    #[arg(long, default_value_t = 50_000)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output CSV (stdout when omitted).
    #[arg(short, long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args, Clone)]
pub struct BinningArgs {
    /// Bins per axis.
    #[arg(long, default_value_t = crate::datasets::DEFAULT_BINS)]
    pub bins: usize,
    /// `xmin,xmax,ymin,ymax`.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub range: Option<Vec<f64>>,
}

#[derive(Debug, Args)]
pub struct HistArgs {
    pub input: PathBuf,
    #[command(flatten)]
    pub binning: BinningArgs,
    /// Bin counts as CSV.
    #[arg(long)]
    pub csv: Option<PathBuf>,
    /// Log-scaled grayscale image.
    #[arg(long)]
    pub pgm: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct HistCompareArgs {
    pub a: PathBuf,
    pub b: PathBuf,
    #[command(flatten)]
    pub binning: BinningArgs,
}

#[derive(Debug, Args)]
pub struct OracleArgs {
    pub x: PathBuf,
    pub y: PathBuf,
    /// Kernel bandwidth parameter σ² in exp(−σ²‖u‖²/2).
    #[arg(long, default_value_t = 1.0)]
    pub sigma2: f64,
    #[arg(long, default_value_t = 1 << 14)]
    pub m: usize,
    /// Number of frequency draws.
    #[arg(long, default_value_t = 20)]
    pub seeds: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Comma-separated prefix sizes of X and Y to time (default: n/8, n/4, n/2, n).
    #[arg(long, value_delimiter = ',')]
    pub timing_sizes: Option<Vec<usize>>,
    #[arg(long, default_value_t = 3)]
    pub timing_reps: usize,
    #[arg(long)]
    pub no_timing: bool,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[command(flatten)]
    pub arch: ArchArgs,
    #[arg(long, default_value_t = 64)]
    pub m: usize,
    #[arg(long, default_value_t = 8)]
    pub batch_size: usize,
    /// Variance of the Gaussian frequency law.
    #[arg(long, default_value_t = 1.0)]
    pub sigma2: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Number of consecutive seeds to check.
    #[arg(long, default_value_t = 1)]
    pub seeds: u64,
    #[arg(long, default_value_t = 1e-6)]
    pub step: f64,
    #[arg(long, default_value_t = 1e-4)]
    pub tol: f64,
}

/// Thread count from the flag, then the environment.
pub fn resolve_threads(flag: Option<usize>) -> Result<Option<usize>> {
    if let Some(t) = flag {
        return Ok(Some(t));
    }
    match std::env::var(THREADS_ENV) {
        Ok(v) if !v.trim().is_empty() => v
            .trim()
            .parse::<usize>()
            .map(Some)
            .map_err(|_| Error::Config(format!("{THREADS_ENV} must be a non-negative integer, got `{v}`"))),
        _ => Ok(None),
    }
}

fn configure_threads(threads: Option<usize>) -> Result<()> {
    let Some(n) = threads else { return Ok(()) };
    #[cfg(feature = "parallel")]
    {
        // A second configuration in the same process is harmless; keep the first.
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            log::debug!("thread pool already configured: {e}");
        }
    }
    #[cfg(not(feature = "parallel"))]
    if n > 1 {
        log::warn!("built without the `parallel` feature; ignoring {n} threads");
    }
    Ok(())
}

/// Runs a parsed command line.
pub fn run(cli: Cli, out: &mut dyn Write) -> Result<()> {
    configure_threads(resolve_threads(cli.threads)?)?;
    match cli.command {
        Command::Gen(a) => commands::gen(a, out),
        Command::Sketch(a) => commands::sketch(a, out),
        Command::Train(a) => commands::train(a, out),
        Command::Generate(a) => commands::generate(a, out),
        Command::Hist(a) => commands::hist(a, out),
        Command::HistCompare(a) => commands::hist_compare(a, out),
        Command::Oracle(a) => commands::oracle(a, out),
        Command::Gradcheck(a) => commands::gradcheck(a, out),
    }
}

/// Parses `args` (including the program name) and runs the command. Usage
/// errors come back as clap errors so the caller can print them verbatim.
pub fn run_from<I, T>(args: I, out: &mut dyn Write) -> std::result::Result<Result<()>, clap::Error>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = Cli::try_parse_from(args)?;
    Ok(run(cli, out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn clap_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn parses_range_with_negatives() {
        let cli = Cli::try_parse_from(["clgn", "hist", "a.csv", "--range", "-2,2,-1.5,1.5"]).unwrap();
        let Command::Hist(h) = cli.command else { panic!() };
        assert_eq!(h.binning.range, Some(vec![-2.0, 2.0, -1.5, 1.5]));
    }

    #[test]
    fn sigma2_and_kernel_var_conflict() {
        let r = Cli::try_parse_from([
            "clgn", "sketch", "a.csv", "-o", "s", "--sigma2", "1", "--kernel-var", "1",
        ]);
        assert!(r.is_err());
    }

    #[test]
    fn hidden_widths_split_on_commas() {
        let cli = Cli::try_parse_from(["clgn", "gradcheck", "--hidden", "4,5,6"]).unwrap();
        let Command::Gradcheck(g) = cli.command else { panic!() };
        assert_eq!(g.arch.hidden, Some(vec![4, 5, 6]));
    }
}
