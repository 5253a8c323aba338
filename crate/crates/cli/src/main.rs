mod args;
mod commands;
mod output;

use std::process::ExitCode;

use clap::Parser;

use groundrl::error::{DataError, GrpoError};

const EXIT_USAGE: u8 = 2;
const EXIT_DATA: u8 = 3;
const EXIT_NUMERIC: u8 = 4;

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<groundrl::Error>() {
            return match e {
                groundrl::Error::Data(_) => EXIT_DATA,
                groundrl::Error::Grpo(GrpoError::NonFiniteGradient { .. }) => EXIT_NUMERIC,
                _ => EXIT_USAGE,
            };
        }
        if cause.is::<DataError>() || cause.is::<std::io::Error>() {
            return EXIT_DATA;
        }
        if let Some(GrpoError::NonFiniteGradient { .. }) = cause.downcast_ref::<GrpoError>() {
            return EXIT_NUMERIC;
        }
    }
    EXIT_USAGE
}

fn main() -> ExitCode {
    let cli = args::Cli::parse();
    let result = match cli.command {
        args::Command::Reward(c) => commands::reward(c),
        args::Command::Score(c) => commands::score(c),
        args::Command::Train(c) => commands::train(c),
        args::Command::Sweep(c) => commands::sweep(c),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
