use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use noisy_chaos_cli::{run_file, RunOptions, Status};

#[derive(Parser)]
#[command(name = "noisy-chaos", version, about = "Noise-averaged chaos diagnostics and their Monte Carlo oracle")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a JSON config.
    Run {
        config: PathBuf,
        /// Output directory, overriding `output.dir`.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Worker threads.
        #[arg(long)]
        threads: Option<usize>,
        /// Seed for spectrum sampling and trajectories.
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn main() -> ExitCode {
    let Command::Run { config, out, threads, seed } = Cli::parse().command;
    match run_file(&config, &RunOptions { out, threads, seed }) {
        Ok(summary) => {
            for c in &summary.comparisons {
                eprintln!("J={} {}: max z = {:.3} ({})", c.j, c.series, c.max_z, if c.pass { "pass" } else { "fail" });
            }
            for c in &summary.identities {
                eprintln!("J={} {} identity: max diff = {:.3e} ({})", c.j, c.series, c.max_abs_diff, if c.pass { "pass" } else { "fail" });
            }
            for n in &summary.notes {
                eprintln!("note: {n}");
            }
            let status = match summary.status {
                Status::Pass => "pass",
                Status::Fail => "fail",
                Status::None => "done",
            };
            println!("{status}: {} files", summary.files.len());
            ExitCode::from(summary.exit_code() as u8)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
