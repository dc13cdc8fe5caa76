//! `nicg-lab`: one binary driving the full pipeline — synthetic data,
//! training, attacks, and efficiency reports.

mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use nicg_core::attacks::NormKind;
use nicg_core::Error;

/// Environment variable naming the default output root; `--out` falls back
/// to `$NICG_LAB_OUT/<command>` when unset.
pub const OUT_ROOT_ENV: &str = "NICG_LAB_OUT";

const EXIT_USAGE: u8 = 2;
const EXIT_NUMERIC: u8 = 3;
const EXIT_IO: u8 = 4;

#[derive(Parser)]
#[command(
    name = "nicg-lab",
    version,
    about = "efficiency-robustness lab for a toy image captioner"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic shape dataset.
    GenData(commands::gen_data::Args),
    /// Train the victim captioner on a generated dataset.
    Train(commands::train::Args),
    /// Attack test images with one of the seven methods.
    Attack(commands::attack::Args),
    /// Build efficiency reports and comparison tables from attack results.
    Report(commands::report::Args),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodArg {
    Slowdown,
    Pgd,
    Cw,
    Quantize,
    Gaussian,
    Jpeg,
    Tvm,
}

impl MethodArg {
    pub fn to_core(self) -> nicg_core::attacks::AttackMethod {
        use nicg_core::attacks::AttackMethod as M;
        match self {
            MethodArg::Slowdown => M::Slowdown,
            MethodArg::Pgd => M::Pgd,
            MethodArg::Cw => M::Cw,
            MethodArg::Quantize => M::Quantize,
            MethodArg::Gaussian => M::Gaussian,
            MethodArg::Jpeg => M::JpegLike,
            MethodArg::Tvm => M::Tvm,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum NormArg {
    L2,
    Linf,
}

impl NormArg {
    pub fn to_core(self) -> NormKind {
        match self {
            NormArg::L2 => NormKind::L2,
            NormArg::Linf => NormKind::Linf,
        }
    }
}

/// Resolve `--out`: explicit flag wins, then `$NICG_LAB_OUT/<command>`.
pub fn resolve_out(explicit: Option<PathBuf>, command: &str) -> Result<PathBuf, Error> {
    if let Some(path) = explicit {
        return Ok(path);
    }
    match std::env::var_os(OUT_ROOT_ENV) {
        Some(root) => Ok(PathBuf::from(root).join(command)),
        None => Err(Error::Config(format!(
            "--out is required (or set {OUT_ROOT_ENV})"
        ))),
    }
}

/// Refuse to clobber existing outputs unless `--force` was given.
pub fn guard_overwrite(dir: &std::path::Path, files: &[&str], force: bool) -> Result<(), Error> {
    if force {
        return Ok(());
    }
    for name in files {
        let path = dir.join(name);
        if path.exists() {
            return Err(Error::Io(std::io::Error::new(
                std::io::ErrorKind::AlreadyExists,
                format!("{} exists; pass --force to overwrite", path.display()),
            )));
        }
    }
    Ok(())
}

fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::Config(_) => EXIT_USAGE,
        Error::Io(_) | Error::Format(_) | Error::Checksum(_) | Error::Json(_) => EXIT_IO,
        Error::Shape(_)
        | Error::Domain(_)
        | Error::Contract(_)
        | Error::NonFinite(_)
        | Error::Numeric(_)
        | Error::Measurement(_) => EXIT_NUMERIC,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenData(args) => commands::gen_data::run(args),
        Command::Train(args) => commands::train::run(args),
        Command::Attack(args) => commands::attack::run(args),
        Command::Report(args) => commands::report::run(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code_for(&err))
        }
    }
}
