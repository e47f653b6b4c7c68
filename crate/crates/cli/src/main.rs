use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use relaxdamp_cli::artifacts::ArtifactDir;
use relaxdamp_cli::config::Config;
use relaxdamp_cli::error::{CliError, EXIT_CONFIG, EXIT_OK, EXIT_UNCERTIFIED};
use relaxdamp_cli::pipeline::{output_dir, run, Command};
use serde_json::json;

/// Damping certificates for shock profiles of relaxation systems.
#[derive(Debug, Parser)]
#[command(name = "relaxdamp", version)]
struct Args {
    #[arg(value_enum)]
    command: Command,
    /// JSON configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `output.dir`.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let args = Args::parse();
    let cfg = match Config::load(&args.config) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("relaxdamp: {e}");
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    let dir = output_dir(&cfg, args.out.as_deref());
    match run(args.command, &cfg, &dir) {
        Ok(outcome) => {
            for p in &outcome.artifacts {
                println!("{}", p.display());
            }
            if outcome.certified {
                ExitCode::from(EXIT_OK)
            } else {
                eprintln!("relaxdamp: not certified");
                ExitCode::from(EXIT_UNCERTIFIED)
            }
        }
        Err(e) => {
            eprintln!("relaxdamp: {e}");
            report_error(&dir, &e);
            ExitCode::from(e.exit_code())
        }
    }
}

fn report_error(dir: &std::path::Path, e: &CliError) {
    let stage = match e {
        CliError::Core { stage, .. } => Some(*stage),
        _ => None,
    };
    let body = json!({
        "kind": e.kind(),
        "message": e.to_string(),
        "exit_code": e.exit_code(),
        "stage": stage,
    });
    if let Ok(mut out) = ArtifactDir::create(dir) {
        if let Err(w) = out.write_json("error.json", &body) {
            eprintln!("relaxdamp: {w}");
        }
    }
}
