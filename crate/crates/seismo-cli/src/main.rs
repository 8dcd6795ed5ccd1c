use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use seismo_cli::commands::{
    cmd_evaluate, cmd_generate, cmd_gradcheck, cmd_predict, cmd_train, GradcheckArgs,
};
use seismo_cli::config::RunConfig;
use seismo_cli::CliError;
use seismo_core::network::CellKind;

/// Batch pipeline for SDOF seismic response surrogates: data generation,
/// training, evaluation, prediction, and gradient checking.
#[derive(Parser)]
#[command(name = "seismo", version, about)]
struct Cli {
    /// JSON run configuration; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory (default: the config's paths.run_dir).
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads for simulation and per-sample passes.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate train/val/test datasets from the configuration.
    Generate,
    /// Train the configured model on generated datasets.
    Train {
        /// Directory holding train.sds and val.sds (default: paths.data_dir).
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Evaluate a checkpoint over a dataset and emit metrics files.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
    },
    /// Predict the displacement response for one record and structure.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Ground-motion CSV (two columns time/accel, or one column with a
        /// dt= header).
        #[arg(long)]
        gm: PathBuf,
        /// Stiffness in N/m.
        #[arg(long)]
        stiffness: f64,
        /// Mass in kg.
        #[arg(long)]
        mass: f64,
    },
    /// Finite-difference check of the BPTT gradients on a small model.
    Gradcheck {
        #[arg(long, value_parser = parse_cell, default_value = "mc_gru")]
        cell: CellKind,
        #[arg(long, default_value_t = 2)]
        layers: usize,
        #[arg(long, default_value_t = 8)]
        hidden: usize,
        #[arg(long, default_value_t = 20)]
        seq_len: usize,
        #[arg(long, default_value_t = 1e-6)]
        eps: f64,
    },
}

fn parse_cell(s: &str) -> Result<CellKind, String> {
    match s {
        "mc_gru" | "mcgru" => Ok(CellKind::McGru),
        "gru" => Ok(CellKind::Gru),
        "lstm" => Ok(CellKind::Lstm),
        other => Err(format!("unknown cell '{other}' (mc_gru | gru | lstm)")),
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(threads) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| CliError::Runtime(format!("thread pool: {e}")))?;
    }

    let cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    let cfg = cfg.resolved(cli.seed);

    match cli.command {
        Command::Generate => {
            let out = cli.out.unwrap_or_else(|| PathBuf::from(&cfg.paths.data_dir));
            let outputs = cmd_generate(&cfg, &out)?;
            println!(
                "generate: {} / {} / {} samples -> {}",
                outputs.counts[0],
                outputs.counts[1],
                outputs.counts[2],
                out.display()
            );
            println!("manifest sha256: {}", outputs.manifest_sha256);
        }
        Command::Train { data } => {
            let data = data.unwrap_or_else(|| PathBuf::from(&cfg.paths.data_dir));
            let out = cli.out.unwrap_or_else(|| PathBuf::from(&cfg.paths.run_dir));
            let outputs = cmd_train(&cfg, &data, &out)?;
            println!(
                "train: best epoch {} (val mse {:.3e}) after {} epochs -> {}",
                outputs.best_epoch,
                outputs.best_val_mse,
                outputs.epochs_run,
                outputs.checkpoint_path.display()
            );
        }
        Command::Evaluate {
            checkpoint,
            dataset,
        } => {
            let out = cli.out.unwrap_or_else(|| PathBuf::from(&cfg.paths.run_dir));
            let outputs = cmd_evaluate(&cfg, &checkpoint, &dataset, &out)?;
            let agg = &outputs.report.aggregate;
            println!(
                "evaluate: {} samples, mse {:.6e}, mae {:.6e}, r2 {:.4}",
                agg.n_samples, agg.mse, agg.mae, agg.r2
            );
        }
        Command::Predict {
            checkpoint,
            gm,
            stiffness,
            mass,
        } => {
            let out = cli.out.unwrap_or_else(|| PathBuf::from(&cfg.paths.run_dir));
            let path = cmd_predict(&checkpoint, &gm, stiffness, mass, &out)?;
            println!("predict: wrote {}", path.display());
        }
        Command::Gradcheck {
            cell,
            layers,
            hidden,
            seq_len,
            eps,
        } => {
            cmd_gradcheck(&GradcheckArgs {
                cell,
                num_layers: layers,
                hidden_size: hidden,
                seq_len,
                eps,
                seed: cfg.seed,
            })?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(
        env_logger::Env::new().filter_or("SEISMO_LOG", "info"),
    )
    .format_timestamp(None)
    .init();

    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code())
        }
    }
}
