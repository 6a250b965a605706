mod args;
mod commands;
mod manifest;
mod svg;

use clap::Parser;
use std::process::ExitCode;

/// Worker threads for sweeps; all cores when unset.
const WORKERS_ENV: &str = "VIS_WORKERS";

/// Command line without the output directory, so manifests from different
/// directories compare equal.
fn recorded_args() -> Vec<String> {
    let mut out = vec![];
    let mut skip = false;
    for a in std::env::args().skip(1) {
        if skip {
            skip = false;
        } else if a == "--out" {
            skip = true;
        } else if !a.starts_with("--out=") {
            out.push(a);
        }
    }
    out
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = args::Cli::parse();
    if let Ok(v) = std::env::var(WORKERS_ENV) {
        match v.parse::<usize>() {
            Ok(n) if n > 0 => {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
            _ => {
                eprintln!("usage error: {WORKERS_ENV}={v} is not a positive integer");
                return ExitCode::from(2);
            }
        }
    }
    let name = match &cli.command {
        args::Command::Simulate(_) => "simulate",
        args::Command::Cct(_) => "cct",
        args::Command::Sweep(_) => "sweep",
        args::Command::Dataset(_) => "dataset",
        args::Command::Train(_) => "train",
        args::Command::Dispatch(_) => "dispatch",
        args::Command::Robust(_) => "robust",
        args::Command::Risk(_) => "risk",
        args::Command::Eigen(_) => "eigen",
        args::Command::CaseStudy(_) => "case-study",
    };
    let result = commands::load_case(&cli.case).and_then(|(_, digest)| {
        let mut run = manifest::Run::new(&cli.out, name, recorded_args(), &cli.case, digest, cli.seed, cli.tol)
            .map_err(|e| commands::CliError::Domain(format!("--out {}: {e}", cli.out.display())))?;
        let r = commands::run(&cli, &mut run);
        // A partial run still documents what it wrote.
        run.finish().map_err(|e| commands::CliError::Domain(e.to_string()))?;
        r
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.code() as u8)
        }
    }
}
