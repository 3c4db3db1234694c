use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use smfa::cli::{
    cmd_compare, cmd_eval, cmd_gen, cmd_sweep_k, cmd_train, cmd_unlearn, exit_code, parse_k_list,
    ExperimentConfig,
};
use smfa::Result;

#[derive(Parser)]
#[command(name = "smfa", version, about = "Sculpted forgetting adapters on a desk-scale benchmark")]
struct Cli {
    /// Root seed for data, training and unlearning.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Parallel workers for independent runs (sweep-k).
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
    #[arg(long, short, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the benchmark dataset.
    Gen {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fit the original model.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Unlearn the forget set from the original model.
    Unlearn {
        #[arg(long)]
        config: Option<PathBuf>,
        /// smfa, idk, ga-diff, kl-min or manu.
        #[arg(long)]
        method: String,
        #[arg(long)]
        k: Option<f64>,
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long)]
        forget_ratio: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Evaluate a checkpoint.
    Eval {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Fine-tune once and sculpt at several k.
    SweepK {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "0,1,5,25")]
        k: String,
    },
    /// Side-by-side CSV of report JSON files.
    Compare {
        #[arg(required = true)]
        reports: Vec<PathBuf>,
    },
}

fn load(path: Option<&PathBuf>, seed: Option<u64>) -> Result<ExperimentConfig> {
    let cfg = ExperimentConfig::load(path.map(PathBuf::as_path))?;
    let cfg = match seed {
        Some(s) => cfg.with_seed(s),
        None => cfg,
    };
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    let verbose = cli.verbose;
    match cli.command {
        Command::Gen { config, out } => {
            let cfg = load(config.as_ref(), cli.seed)?;
            let path = cmd_gen(&cfg, out.as_deref())?;
            println!("{}", path.display());
        }
        Command::Train { config } => {
            let cfg = load(config.as_ref(), cli.seed)?;
            if verbose {
                eprintln!("{}", cfg.to_json());
            }
            let out = cmd_train(&cfg)?;
            println!(
                "{} epochs: memory exact_match {:.4}, holdout understanding {:.4}",
                out.epochs_run, out.metrics.memory_exact_match, out.metrics.holdout_understanding
            );
            println!("{}", out.checkpoint.display());
        }
        Command::Unlearn {
            config,
            method,
            k,
            alpha,
            forget_ratio,
            seed,
        } => {
            let mut cfg = load(config.as_ref(), seed.or(cli.seed))?;
            if let Some(k) = k {
                cfg.sculpt.k = k;
            }
            if let Some(a) = alpha {
                cfg.manu.alpha = a;
            }
            if let Some(r) = forget_ratio {
                cfg.bench.forget_ratio = r;
            }
            cfg.validate()?;
            let out = cmd_unlearn(&cfg, &method)?;
            if verbose {
                eprintln!("manifest {}", out.manifest.display());
            }
            println!("{}", out.checkpoint.display());
        }
        Command::Eval { config, checkpoint } => {
            let cfg = load(config.as_ref(), cli.seed)?;
            let (report, path) = cmd_eval(&cfg, &checkpoint)?;
            if verbose {
                eprint!("{}", report.to_csv());
            }
            println!("{}", path.display());
        }
        Command::SweepK { config, k } => {
            let cfg = load(config.as_ref(), cli.seed)?;
            let ks = parse_k_list(&k)?;
            print!("{}", cmd_sweep_k(&cfg, &ks, cli.jobs)?);
        }
        Command::Compare { reports } => {
            print!("{}", cmd_compare(&reports)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
