use std::path::{Path, PathBuf};
use std::process::ExitCode;

use blind_unlearn::cli::{self, Config};
use blind_unlearn::masking::SamplingStrategy;
use blind_unlearn::protocol::write_atomic;
use blind_unlearn::unlearn::trace_csv;
use blind_unlearn::{Error, Result};
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "blind-unlearn", version, about = "Information-bottleneck training and blind unlearning")]
struct Args {
    /// Key-value config file; defaults apply to unset keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config seed for every stage.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output file or directory, depending on the command.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the original model; writes model, compressor and loss trace into --out.
    Train,
    /// Write the compressor-only checkpoint of a model file.
    ExportCompressor { model: PathBuf },
    /// Mask and compress erased data into an unlearning request.
    PrepareRequest {
        compressor: PathBuf,
        /// Erased rows as CSV; the configured pipeline's erase set if omitted.
        erase_csv: Option<PathBuf>,
    },
    /// Unlearn a request server-side; writes the model and trace into --out.
    Unlearn { model: PathBuf, request: PathBuf },
    /// Train from scratch on the remaining rows.
    RetrainBaseline,
    /// Metrics CSV for model files; the first one is the original.
    Evaluate {
        #[arg(required = true)]
        models: Vec<PathBuf>,
    },
    /// Print epsilon,delta for a masking configuration.
    DpAccount {
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        sr: Option<f64>,
        #[arg(long)]
        strategy: Option<SamplingStrategy>,
    },
    /// Finite-difference checks of every hand-written gradient.
    Gradcheck {
        #[arg(long, default_value_t = 20)]
        count: u64,
    },
    /// Privacy metrics over the configured beta and sampling-rate grid.
    Sweep,
}

fn required(out: &Option<PathBuf>) -> Result<&Path> {
    out.as_deref().ok_or_else(|| Error::Config("this command needs --out".into()))
}

fn run(args: Args) -> Result<()> {
    let mut config = match &args.config {
        Some(path) => Config::load(path)?,
        None => Config::default(),
    };
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    let out = &args.out;
    match args.command {
        Command::Train => {
            let dir = required(out)?;
            cli::cmd_train(&config, dir)?;
            println!("wrote {}", dir.display());
        }
        Command::ExportCompressor { model } => {
            let ckpt = cli::cmd_export_compressor(&config, &model, required(out)?)?;
            println!("compressor hash {:016x}", ckpt.hash()?);
        }
        Command::PrepareRequest { compressor, erase_csv } => {
            let req = cli::cmd_prepare_request(&config, &compressor, erase_csv.as_deref(), required(out)?)?;
            print!("epsilon,delta\n{},{}\n", req.dp.epsilon, req.dp.delta);
        }
        Command::Unlearn { model, request } => {
            let outcome = cli::cmd_unlearn(&config, &model, &request, required(out)?)?;
            print!("{}", trace_csv(&outcome.trace));
        }
        Command::RetrainBaseline => {
            cli::cmd_retrain_baseline(&config, required(out)?)?;
        }
        Command::Evaluate { models } => {
            let reports = cli::cmd_evaluate(&config, &models, required(out)?)?;
            print!("{}", blind_unlearn::evalkit::reports_to_csv(&reports)?);
        }
        Command::DpAccount { n, sr, strategy } => {
            let (_, text) = cli::cmd_dp_account(
                n.unwrap_or(config.dataset.dim),
                sr.unwrap_or(config.mask.sr),
                strategy.unwrap_or(config.mask.strategy),
            )?;
            print!("{text}");
        }
        Command::Gradcheck { count } => {
            let rows = cli::cmd_gradcheck(config.seed, count)?;
            let text = cli::gradcheck_csv(&rows);
            match out {
                Some(path) => write_atomic(path, text.as_bytes())?,
                None => print!("{text}"),
            }
            let failed = rows.iter().filter(|r| !r.report.passed).count();
            if failed > 0 {
                return Err(Error::InvalidArgument(format!("{failed} gradient checks failed")));
            }
        }
        Command::Sweep => {
            let rows = cli::cmd_sweep(&config, required(out)?)?;
            print!("{}", cli::sweep_csv(&rows));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Args::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
