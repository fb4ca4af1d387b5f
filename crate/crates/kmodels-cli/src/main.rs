//! `kmodels`: cluster time series by fitting one AR / ARMA / ARIMA model
//! per cluster, with portmanteau goodness-of-fit diagnostics and
//! simulation-study harnesses.

mod commands;
mod ingest;
mod manifest;
mod result;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{ArgAction, Args, Parser, Subcommand};

use commands::{
    CalibrateParams, DiagnoseParams, ExportKind, ExportParams, SimulateParams, VanishParams,
};
use manifest::{FormatChoice, InitChoice, LossChoice, RunManifest};

#[derive(Parser)]
#[command(
    name = "kmodels",
    version,
    about = "Model-based time-series clustering with cluster-wide AR/ARMA fits",
    after_help = "Exit codes: 0 success, 1 IO/parse/configuration error, \
                  2 clustering failure or usage error."
)]
struct Cli {
    /// Logging verbosity (-v info, -vv debug, -vvv trace)
    #[arg(short, long, global = true, action = ArgAction::Count)]
    verbose: u8,

    /// Configuration document; defaults to $KMODELS_CONFIG when set
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Cluster a dataset and write a JSON result document
    Cluster(ClusterArgs),
    /// Recompute residual diagnostics for a finished run
    Diagnose(DiagnoseArgs),
    /// Generate a synthetic dataset from a ground-truth design
    Simulate(SimulateArgs),
    /// Monte-Carlo studies
    #[command(subcommand)]
    Study(StudyCommand),
    /// Derive plot-ready tables from result documents
    Export(ExportArgs),
}

/// Flags mirror the run manifest; anything not given falls back to the
/// configuration file, then to defaults.
#[derive(Args)]
struct ClusterArgs {
    /// Input CSV path
    #[arg(long, value_name = "PATH")]
    input: Option<PathBuf>,
    /// Input layout
    #[arg(long, value_enum)]
    format: Option<FormatChoice>,
    /// Subtract each series' mean before fitting
    #[arg(long, num_args = 0..=1, default_missing_value = "true", value_name = "BOOL")]
    center: Option<bool>,
    /// Natural-log transform each series
    #[arg(long, num_args = 0..=1, default_missing_value = "true", value_name = "BOOL")]
    log: Option<bool>,
    /// Smooth each series with a rolling mean of this window
    #[arg(long, value_name = "WINDOW")]
    rolling_mean: Option<usize>,
    /// Differencing order (the I in ARIMA)
    #[arg(long, value_name = "ORDER")]
    d: Option<usize>,
    /// Autoregressive order
    #[arg(long, value_name = "ORDER")]
    p: Option<usize>,
    /// Moving-average order
    #[arg(long, value_name = "ORDER")]
    q: Option<usize>,
    /// Number of clusters
    #[arg(long, value_name = "COUNT")]
    k: Option<usize>,
    /// Cluster seeding method
    #[arg(long, value_enum)]
    init: Option<InitChoice>,
    /// Fitting criterion
    #[arg(long, value_enum)]
    loss: Option<LossChoice>,
    /// Independent restarts; the lowest-loss run wins
    #[arg(long, value_name = "COUNT")]
    restarts: Option<usize>,
    /// Base RNG seed
    #[arg(long, value_name = "SEED")]
    seed: Option<u64>,
    /// Portmanteau lags for the diagnostics report
    #[arg(long, value_name = "LAGS")]
    lags: Option<usize>,
    /// Label column (long format with a header) to score the result against
    #[arg(long, value_name = "COLUMN")]
    labels: Option<String>,
    /// Result path (stdout when omitted)
    #[arg(long, value_name = "PATH")]
    output: Option<PathBuf>,
}

impl ClusterArgs {
    fn merge_into(&self, manifest: &mut RunManifest) {
        if let Some(v) = &self.input {
            manifest.input = Some(v.clone());
        }
        if let Some(v) = self.format {
            manifest.format = v;
        }
        if let Some(v) = self.center {
            manifest.center = v;
        }
        if let Some(v) = self.log {
            manifest.log = v;
        }
        if let Some(v) = self.rolling_mean {
            manifest.rolling_mean = Some(v);
        }
        if let Some(v) = self.d {
            manifest.d = v;
        }
        if let Some(v) = self.p {
            manifest.p = v;
        }
        if let Some(v) = self.q {
            manifest.q = v;
        }
        if let Some(v) = self.k {
            manifest.k = Some(v);
        }
        if let Some(v) = self.init {
            manifest.init = v;
        }
        if let Some(v) = self.loss {
            manifest.loss = v;
        }
        if let Some(v) = self.restarts {
            manifest.restarts = v;
        }
        if let Some(v) = self.seed {
            manifest.seed = v;
        }
        if let Some(v) = self.lags {
            manifest.lags = v;
        }
        if let Some(v) = &self.labels {
            manifest.labels = Some(v.clone());
        }
        if let Some(v) = &self.output {
            manifest.output = Some(v.clone());
        }
    }
}

#[derive(Args)]
struct DiagnoseArgs {
    /// Clustering result document
    #[arg(long, value_name = "PATH")]
    result: PathBuf,
    /// Input data path (defaults to the one recorded in the result)
    #[arg(long, value_name = "PATH")]
    input: Option<PathBuf>,
    /// Portmanteau lags
    #[arg(long, value_name = "LAGS")]
    lags: Option<usize>,
    /// p-value below which a cluster is flagged as badly fitted
    #[arg(long, value_name = "P")]
    flag_threshold: Option<f64>,
    /// Report path (stdout when omitted)
    #[arg(long, value_name = "PATH")]
    output: Option<PathBuf>,
}

#[derive(Args)]
#[command(group(clap::ArgGroup::new("design").required(true).args(["spec", "spec_file", "list"])))]
struct SimulateArgs {
    /// Built-in design name (see --list)
    #[arg(long, value_name = "NAME")]
    spec: Option<String>,
    /// Custom design document (JSON)
    #[arg(long, value_name = "PATH")]
    spec_file: Option<PathBuf>,
    /// List the built-in designs and exit
    #[arg(long)]
    list: bool,
    /// Override the design's data seed
    #[arg(long, value_name = "SEED")]
    seed: Option<u64>,
    /// Output layout; only long can embed the label column
    #[arg(long, value_enum, default_value_t = FormatChoice::Long)]
    format: FormatChoice,
    /// Name of the embedded label column
    #[arg(long, value_name = "COLUMN", default_value = "label")]
    label_column: String,
    /// Omit the ground-truth label column
    #[arg(long)]
    no_labels: bool,
    /// Dataset path (stdout when omitted)
    #[arg(long, value_name = "PATH")]
    output: Option<PathBuf>,
}

#[derive(Subcommand)]
enum StudyCommand {
    /// How many clusters stay alive as k grows, over random replications
    Vanish(VanishArgs),
    /// Null calibration of the grouped portmanteau statistic
    Calibrate(CalibrateArgs),
}

#[derive(Args)]
#[command(group(clap::ArgGroup::new("design").required(true).args(["spec", "spec_file"])))]
struct VanishArgs {
    /// Built-in design name (see `simulate --list`)
    #[arg(long, value_name = "NAME")]
    spec: Option<String>,
    /// Custom design document (JSON)
    #[arg(long, value_name = "PATH")]
    spec_file: Option<PathBuf>,
    /// Cluster counts to test
    #[arg(long, value_name = "K,K,...", value_delimiter = ',',
          default_value = "1,2,3,4,5,6,7,8,9,10")]
    k_values: Vec<usize>,
    /// Cluster seeding method
    #[arg(long, value_enum, default_value_t = InitChoice::Prototype)]
    init: InitChoice,
    /// Fitting criterion
    #[arg(long, value_enum, default_value_t = LossChoice::L2)]
    loss: LossChoice,
    /// Replications per k
    #[arg(long, value_name = "COUNT", default_value_t = 30)]
    replications: usize,
    /// Base seed for the initialization stream
    #[arg(long, value_name = "SEED", default_value_t = 0)]
    seed: u64,
    /// Regenerate the design's data with this seed
    #[arg(long, value_name = "SEED")]
    data_seed: Option<u64>,
    /// Emit a delimited table instead of JSON
    #[arg(long)]
    csv: bool,
    /// Table path (stdout when omitted)
    #[arg(long, value_name = "PATH")]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct CalibrateArgs {
    /// Series per group
    #[arg(long, value_name = "COUNT", default_value_t = 10)]
    n: usize,
    /// Series length
    #[arg(long, value_name = "LEN", default_value_t = 200)]
    t: usize,
    /// Portmanteau lags
    #[arg(long, value_name = "LAGS", default_value_t = 15)]
    lags: usize,
    /// Monte-Carlo replications
    #[arg(long, value_name = "COUNT", default_value_t = 200)]
    replications: usize,
    /// Base RNG seed
    #[arg(long, value_name = "SEED", default_value_t = 0)]
    seed: u64,
    /// Emit a delimited table instead of JSON
    #[arg(long)]
    csv: bool,
    /// Table path (stdout when omitted)
    #[arg(long, value_name = "PATH")]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct ExportArgs {
    /// What to derive from the source document
    #[arg(long, value_enum)]
    kind: ExportKind,
    /// Source document: a clustering result (scatter) or calibration
    /// summary (hist)
    #[arg(long, value_name = "PATH")]
    result: PathBuf,
    /// Input data path override (scatter only)
    #[arg(long, value_name = "PATH")]
    input: Option<PathBuf>,
    /// Table path (stdout when omitted)
    #[arg(long, value_name = "PATH")]
    output: Option<PathBuf>,
}

fn init_logging(verbosity: u8) {
    let level = match verbosity {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        2 => log::LevelFilter::Debug,
        _ => log::LevelFilter::Trace,
    };
    env_logger::Builder::new()
        .filter_level(level)
        .format_timestamp(None)
        .format_target(false)
        .init();
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Cluster(args) => {
            let mut manifest = RunManifest::load(cli.config.as_deref())?;
            args.merge_into(&mut manifest);
            commands::cluster(&manifest)
        }
        Command::Diagnose(args) => commands::diagnose(&DiagnoseParams {
            result: args.result,
            input: args.input,
            lags: args.lags,
            flag_threshold: args.flag_threshold,
            output: args.output,
        }),
        Command::Simulate(args) => commands::simulate(&SimulateParams {
            spec: args.spec,
            spec_file: args.spec_file,
            list: args.list,
            seed: args.seed,
            format: args.format,
            label_column: args.label_column,
            no_labels: args.no_labels,
            output: args.output,
        }),
        Command::Study(StudyCommand::Vanish(args)) => commands::study_vanish(&VanishParams {
            spec: args.spec,
            spec_file: args.spec_file,
            k_values: args.k_values,
            init: args.init,
            loss: args.loss,
            replications: args.replications,
            seed: args.seed,
            data_seed: args.data_seed,
            csv: args.csv,
            output: args.output,
        }),
        Command::Study(StudyCommand::Calibrate(args)) => {
            commands::study_calibrate(&CalibrateParams {
                n: args.n,
                t: args.t,
                lags: args.lags,
                replications: args.replications,
                seed: args.seed,
                csv: args.csv,
                output: args.output,
            })
        }
        Command::Export(args) => commands::export(&ExportParams {
            kind: args.kind,
            result: args.result,
            input: args.input,
            output: args.output,
        }),
    }
}

/// 1 for IO/parse/configuration problems, 2 when the clustering itself
/// failed (no restart produced a usable partition).
fn exit_code_for(error: &anyhow::Error) -> u8 {
    for cause in error.chain() {
        if let Some(k) = cause.downcast_ref::<kmodels::Error>() {
            if matches!(
                k,
                kmodels::Error::ClusteringFailure { .. } | kmodels::Error::Unassignable { .. }
            ) {
                return 2;
            }
        }
    }
    1
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    init_logging(cli.verbose);
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(error) => {
            eprintln!("error: {error:#}");
            ExitCode::from(exit_code_for(&error))
        }
    }
}
