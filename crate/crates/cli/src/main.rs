use std::io;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::Parser;
use cownter_cli::args::Cli;
use cownter_cli::error::CliError;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            eprintln!("{}", CliError::usage(e.to_string().trim()).to_json_line());
            return ExitCode::from(1);
        }
    };
    let mut out = io::stdout().lock();
    match cownter_cli::run(cli, &mut out) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json_line());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
