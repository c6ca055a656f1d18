use std::process::ExitCode;

use clap::Parser;

fn main() -> ExitCode {
    let cli = nep::cli::Cli::parse();
    match nep::cli::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => match nep::cli::exit_code(&e) {
            0 => ExitCode::SUCCESS,
            code => {
                eprintln!("error: {e}");
                ExitCode::from(code)
            }
        },
    }
}
