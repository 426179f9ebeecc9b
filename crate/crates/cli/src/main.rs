mod args;
mod commands;
mod config;
mod manifest;

use std::ffi::OsString;
use std::io::Write;
use std::process::ExitCode;

use anyhow::Result;
use clap::Parser;
use genmix_core::attacks::AttackError;
use genmix_core::defense::DefenseError;
use genmix_core::eval::EvalError;
use genmix_core::nn::NnError;

use args::{Cli, Command};

/// 2 for numeric failures (divergence, non-finite gradients), else 1.
fn exit_code(err: &anyhow::Error) -> u8 {
    let numeric = err.chain().any(|cause| {
        if let Some(e) = cause.downcast_ref::<DefenseError>() {
            return e.is_numeric();
        }
        if let Some(e) = cause.downcast_ref::<EvalError>() {
            return matches!(e, EvalError::Nn(NnError::NonFiniteGradient(_)) | EvalError::Attack(AttackError::NonFiniteGradient(_)));
        }
        matches!(cause.downcast_ref::<AttackError>(), Some(AttackError::NonFiniteGradient(_)))
            || matches!(cause.downcast_ref::<NnError>(), Some(NnError::NonFiniteGradient(_)))
    });
    if numeric {
        2
    } else {
        1
    }
}

/// Appends every data file path opened to `$GENMIX_TRACE_FILE`.
fn install_trace_hook() {
    let Some(trace) = std::env::var_os("GENMIX_TRACE_FILE") else { return };
    genmix_core::data::set_open_hook(move |path| {
        if let Ok(mut f) = std::fs::OpenOptions::new().create(true).append(true).open(&trace) {
            let _ = writeln!(f, "{}", path.display());
        }
    });
}

fn parse() -> Result<Cli, clap::Error> {
    let raw: Vec<OsString> = std::env::args_os().collect();
    let cli = Cli::try_parse_from(&raw)?;
    let Some(path) = &cli.config else { return Ok(cli) };
    let entries = config::load(path).map_err(|e| clap::Error::raw(clap::error::ErrorKind::Io, format!("{e:#}\n")))?;
    let at = raw
        .iter()
        .position(|a| a.to_str().is_some_and(|s| Command::NAMES.contains(&s)))
        .expect("subcommand parsed above");
    Cli::try_parse_from(config::merge(&raw, &entries, at))
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Pretrain(a) => commands::pretrain(a),
        Command::TrainDefense(a) => commands::train_defense_cmd(a),
        Command::Evaluate(a) => commands::evaluate(a),
        Command::AttackBench(a) => commands::attack_bench(a),
    }
}

fn main() -> ExitCode {
    let cli = match parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    install_trace_hook();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("genmix {}: {e:#}", cli.command.name());
            ExitCode::from(exit_code(&e))
        }
    }
}
