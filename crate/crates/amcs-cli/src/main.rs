//! `amcs` — train, run and inspect block-wise compressive-sensing
//! reconstruction models.
//!
//! Exit codes: 0 success, 2 usage/config error, 3 numerical failure.

mod commands;

use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "amcs",
    about = "Block-wise compressive-sensing image reconstruction with fixed or learned measurements",
    version
)]
struct Cli {
    /// Worker threads (default: AMCS_THREADS or all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Single-threaded execution; results are bitwise deterministic
    /// either way, this removes thread-level parallelism entirely.
    #[arg(long, global = true)]
    deterministic: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a reconstruction model on an image manifest or patch cache.
    Train(commands::train::TrainArgs),
    /// Reconstruct an image (or a measurement dump) with a trained model.
    Reconstruct(commands::reconstruct::ReconstructArgs),
    /// Evaluate models over a set of test images and tabulate PSNR.
    Evaluate(commands::evaluate::EvaluateArgs),
    /// Export diagnostics: equivalent matrix, row spectra, feature maps.
    Inspect(commands::inspect::InspectArgs),
    /// Extract training patches from an image manifest into a cache.
    Dataset(commands::dataset::DatasetArgs),
}

fn main() {
    let cli = Cli::parse();

    let threads = if cli.deterministic {
        1
    } else {
        cli.threads
            .or_else(|| {
                std::env::var("AMCS_THREADS")
                    .ok()
                    .and_then(|v| v.parse().ok())
            })
            .unwrap_or(0) // 0 lets rayon pick the core count
    };
    if threads > 0 {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
        {
            eprintln!("amcs: failed to configure thread pool: {e}");
            std::process::exit(2);
        }
    }

    let result = match cli.command {
        Command::Train(args) => commands::train::run(args),
        Command::Reconstruct(args) => commands::reconstruct::run(args),
        Command::Evaluate(args) => commands::evaluate::run(args),
        Command::Inspect(args) => commands::inspect::run(args),
        Command::Dataset(args) => commands::dataset::run(args),
    };

    match result {
        Ok(()) => {}
        Err(e) => {
            eprintln!("amcs: {e}");
            std::process::exit(if e.is_numerical() { 3 } else { 2 });
        }
    }
}
