use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use pll_core::harness::{self, RunConfig};
use pll_core::theory::{Fault, VerifyOptions};
use pll_core::PllError;

#[derive(Parser)]
#[command(name = "pll", version, about = "Partial-label learning with contrastive prototypes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct RunArgs {
    /// Config file of `key = value` lines; defaults apply to missing keys.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides `seed` (and `data_seed` for `gen`).
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a train/test dataset pair with a JSON sidecar.
    Gen(RunArgs),
    /// Train and write a run directory.
    Train(RunArgs),
    /// Score a checkpoint on a dataset file.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
    },
    /// Run the theory property checks.
    Verify {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1000)]
        instances: usize,
        /// Corrupt one embedding norm per instance to exercise failure paths.
        #[arg(long)]
        inject_fault: bool,
    },
}

fn load_config(args: &RunArgs, gen: bool) -> Result<RunConfig, PllError> {
    let mut cfg = match &args.config {
        Some(path) => RunConfig::parse(&std::fs::read_to_string(path)?)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = args.seed {
        if gen {
            cfg.data_seed = seed;
        } else {
            cfg.seed = seed;
        }
    }
    if let Some(out) = &args.out {
        cfg.out = out.clone();
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), PllError> {
    match cli.command {
        Command::Gen(args) => {
            let cfg = load_config(&args, true)?;
            let out = harness::cmd_gen(&cfg)?;
            println!("wrote {}", out.train.display());
            println!("wrote {}", out.test.display());
            println!("wrote {}", out.sidecar.display());
        }
        Command::Train(args) => {
            let cfg = load_config(&args, false)?;
            let outcome = harness::cmd_train(&cfg)?;
            let s = &outcome.summary;
            println!(
                "{} epochs: test accuracy {:.4}, pseudo-target accuracy {:.4}, mmc {:.4} ({:.1}s)",
                s.epochs, s.final_test_accuracy, s.final_pseudo_accuracy, s.final_mmc, s.wall_time_secs
            );
            println!("run directory: {}", cfg.out.display());
        }
        Command::Eval { checkpoint, data } => {
            let m = harness::cmd_eval(&checkpoint, &data)?;
            println!("{}", serde_json::to_string_pretty(&m)?);
        }
        Command::Verify {
            seed,
            instances,
            inject_fault,
        } => {
            let report = harness::cmd_verify(&VerifyOptions {
                seed,
                instances,
                fault: inject_fault.then_some(Fault::PerturbEmbeddingNorm),
            });
            print!("{report}");
            if !report.passed() {
                let failed: Vec<&str> = report
                    .checks
                    .iter()
                    .filter(|c| !c.passed)
                    .map(|c| c.name.as_str())
                    .collect();
                return Err(PllError::Verification(failed.join(", ")));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(harness::exit_code(&e) as u8)
        }
    }
}
