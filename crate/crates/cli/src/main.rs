//! `hetsolve` experiment driver.

mod commands;
mod config;

use std::process::ExitCode;

use clap::parser::ValueSource;
use clap::{CommandFactory, FromArgMatches};

use commands::{Context, Failure};
use config::Cli;

fn threads(cli_threads: usize) -> Result<usize, Failure> {
    match std::env::var("HETSOLVE_THREADS") {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| Failure::Validation(format!("HETSOLVE_THREADS = {v:?} is not a positive integer"))),
        Err(_) if cli_threads > 0 => Ok(cli_threads),
        Err(_) => Err(Failure::Validation("--threads must be positive".into())),
    }
}

fn resolve() -> Result<Cli, ExitCode> {
    let matches = match Cli::command().try_get_matches() {
        Ok(m) => m,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return Err(ExitCode::from(code));
        }
    };
    let mut cli = Cli::from_arg_matches(&matches).map_err(|e| {
        let _ = e.print();
        ExitCode::from(1)
    })?;
    if let Some(path) = cli.from_config.clone() {
        let text = std::fs::read_to_string(&path).map_err(|e| {
            eprintln!("cannot read {}: {e}", path.display());
            ExitCode::from(1)
        })?;
        let mut loaded: Cli = toml::from_str(&text).map_err(|e| {
            eprintln!("malformed config {}: {e}", path.display());
            ExitCode::from(1)
        })?;
        if matches.value_source("out") == Some(ValueSource::CommandLine) {
            loaded.out = cli.out.clone();
        }
        if matches.value_source("threads") == Some(ValueSource::CommandLine) {
            loaded.threads = cli.threads;
        }
        if cli.command.is_some() {
            eprintln!("--from-config cannot be combined with a subcommand");
            return Err(ExitCode::from(1));
        }
        cli = loaded;
    }
    if cli.command.is_none() {
        let _ = Cli::command().write_long_help(&mut std::io::stderr());
        return Err(ExitCode::from(1));
    }
    Ok(cli)
}

fn main() -> ExitCode {
    let mut cli = match resolve() {
        Ok(c) => c,
        Err(code) => return code,
    };
    let outcome = threads(cli.threads).and_then(|n| {
        cli.threads = n;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::Solver(e.to_string()))?;
        let command = cli.command.clone().expect("checked above");
        let ctx = Context { out: cli.out.clone(), config: cli };
        commands::run(&command, &ctx)
    });
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("hetsolve: {f}");
            ExitCode::from(match f {
                Failure::Validation(_) => 1,
                Failure::Solver(_) => 2,
            })
        }
    }
}
