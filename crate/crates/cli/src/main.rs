use std::process::ExitCode;

use atm_cli::{run, Cli, CliError};
use clap::Parser;

fn report(err: &CliError) {
    let msg = serde_json::json!({ "error": err.kind(), "message": err.to_string() });
    eprintln!("{msg}");
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            report(&e);
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
