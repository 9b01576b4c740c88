mod commands;

use std::process::ExitCode;

use clap::Parser;
use permurank::Error;

use commands::Cli;

/// Exit status for malformed or incompatible input files.
const EXIT_DATA: u8 = 2;
/// Exit status for diverged training or failed gradient checks.
const EXIT_NUMERICAL: u8 = 3;
const EXIT_USAGE: u8 = 1;

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Numerical { .. } => EXIT_NUMERICAL,
        e if e.is_data_error() => EXIT_DATA,
        _ => EXIT_USAGE,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match commands::run(cli) {
        Ok(commands::Status::Success(summary)) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Ok(commands::Status::Failed(summary)) => {
            println!("{summary}");
            ExitCode::from(EXIT_NUMERICAL)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
