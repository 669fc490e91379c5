mod config;
mod experiments;

use std::fs::File;
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde_json::json;

use config::FileConfig;
use experiments::Report;

#[derive(Parser)]
#[command(name = "pdegp", about = "Sparse-Cholesky Gaussian-process PDE experiment harness")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment from a JSON config and write a CSV report.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Cap the worker-thread count (default: all cores).
        #[arg(long)]
        workers: Option<usize>,
        /// Report path; overrides `output_path` in the config. `-` = stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

const EXIT_CONFIG: u8 = 1;
const EXIT_NUMERICAL: u8 = 2;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let Command::Run { config, workers, out } = cli.command;

    if let Some(k) = workers {
        if k == 0 {
            eprintln!("error: --workers must be >= 1");
            return ExitCode::from(EXIT_CONFIG);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(k).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_CONFIG);
        }
    }

    let raw = match std::fs::read_to_string(&config) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: cannot read {}: {e}", config.display());
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    let file_cfg: FileConfig = match serde_json::from_str(&raw) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: invalid config: {e}");
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    let cfg = match file_cfg.resolve() {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: invalid config: {e}");
            return ExitCode::from(EXIT_CONFIG);
        }
    };

    let out_path = out
        .filter(|p| p.as_os_str() != "-")
        .or_else(|| cfg.output_path.as_ref().map(PathBuf::from));
    let sink: Box<dyn Write> = match &out_path {
        Some(p) => match File::create(p) {
            Ok(f) => Box::new(f),
            Err(e) => {
                eprintln!("error: cannot create {}: {e}", p.display());
                return ExitCode::from(EXIT_CONFIG);
            }
        },
        None => Box::new(std::io::stdout()),
    };

    let mut report = match Report::new(sink, cfg.experiment.name()) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    match experiments::run(&cfg, &mut report) {
        Ok(summary) => {
            eprintln!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            // Flush a failure marker so partial reports are self-describing.
            let _ = report.row(&json!({ "error": e.to_string() }), "failed", 1.0);
            eprintln!("error: {e}");
            ExitCode::from(EXIT_NUMERICAL)
        }
    }
}
