mod args;
mod commands;
mod summary;

use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::Parser;

use args::Cli;

/// An error caused by the invocation rather than by the computation.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn is_user_error(err: &anyhow::Error) -> bool {
    use roomembed::Error as E;
    err.chain().any(|cause| {
        if cause.is::<UsageError>() {
            return true;
        }
        match cause.downcast_ref::<E>() {
            Some(e) => matches!(
                e,
                E::Config(_)
                    | E::Format { .. }
                    | E::InvalidTemperature(_)
                    | E::SampleRateMismatch { .. }
                    | E::RoomOverlap(..)
                    | E::InsufficientCorpus(_)
                    | E::TaskMismatch(_)
                    | E::UnknownMaterial(_)
                    | E::Json(_)
                    | E::Io { .. }
            ),
            None => false,
        }
    })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp_secs()
        .init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(if is_user_error(&e) { 1 } else { 2 })
        }
    }
}
