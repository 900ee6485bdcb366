//! masterlab: run and validate qubit-resonator open-system experiments.

mod config;
mod run;
mod table;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "masterlab", version, about = "Qubit-resonator master-equation experiments")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run an experiment config and write CSV artifacts plus a config echo.
    Run {
        config: PathBuf,
        /// Output directory (overrides config and MASTERLAB_OUT).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Worker threads for sweep rows.
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Parse and resolve a config, printing its fully resolved form.
    Validate { config: PathBuf },
}

fn main() {
    std::process::exit(real_main());
}

fn real_main() -> i32 {
    match Cli::parse().cmd {
        Cmd::Validate { config } => match config::load(&config, None) {
            Ok(cfg) => {
                println!("{}", serde_json::to_string_pretty(&cfg).expect("config serializes"));
                0
            }
            Err(e) => {
                eprintln!("config error: {e:#}");
                2
            }
        },
        Cmd::Run { config, out, jobs } => {
            let cfg = match config::load(&config, out.as_deref()) {
                Ok(c) => c,
                Err(e) => {
                    eprintln!("config error: {e:#}");
                    return 2;
                }
            };
            if let Some(j) = jobs {
                if j == 0 {
                    eprintln!("config error: --jobs must be positive");
                    return 2;
                }
                // a pool may already exist in tests; the default then stands
                let _ = rayon::ThreadPoolBuilder::new().num_threads(j).build_global();
            }
            match run::execute(&cfg) {
                Ok(()) => 0,
                Err(e) => {
                    eprintln!("run failed: {e:#}");
                    3
                }
            }
        }
    }
}
