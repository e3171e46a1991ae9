use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use exclusion_lab::{catalog, default_output_dir, run, ExperimentConfig};

/// Exclusion-process experiment runner.
#[derive(Debug, Parser)]
#[command(name = "exclab", version)]
struct Cli {
    /// Machine-readable output on stdout.
    #[arg(long, global = true)]
    json: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the experiment described by a TOML config.
    Run {
        config: PathBuf,
        /// Results directory (overrides `output_dir` in the config).
        #[arg(long)]
        output_dir: Option<PathBuf>,
        /// Replace the config's master seed.
        #[arg(long)]
        seed_override: Option<u64>,
    },
    /// List experiment kinds and their config fields.
    List,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::List => {
            if cli.json {
                println!("{}", catalog::json());
            } else {
                print!("{}", catalog::text());
            }
            ExitCode::SUCCESS
        }
        Command::Run { config, output_dir, seed_override } => {
            let mut cfg = match ExperimentConfig::load(&config) {
                Ok(c) => c,
                Err(e) => {
                    eprintln!("error: {e}");
                    return ExitCode::from(2);
                }
            };
            if let Some(seed) = seed_override {
                cfg.seed = seed;
            }
            let dir = output_dir.or_else(|| cfg.output_dir.clone()).unwrap_or_else(|| default_output_dir(&cfg));
            let out = match run(&cfg, &dir) {
                Ok(o) => o,
                Err(e) => {
                    eprintln!("error: {e}");
                    return ExitCode::from(2);
                }
            };
            if cli.json {
                print!("{}", out.summary_json);
            } else {
                for a in &out.summary.assertions {
                    println!("{} {}: {}", if a.passed { "PASS" } else { "FAIL" }, a.name, a.detail);
                }
                println!(
                    "{} in {:.1}s, results in {}",
                    if out.summary.passed { "passed" } else { "FAILED" },
                    out.wall_clock_seconds,
                    out.dir.display()
                );
            }
            if out.summary.passed {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
    }
}
