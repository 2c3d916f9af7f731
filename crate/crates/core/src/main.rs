use std::process::ExitCode;

use clap::Parser;

use biaslens::cli;

fn main() -> ExitCode {
    // Parse errors (and --help/--version) exit here with clap's own codes.
    let invocation = cli::Cli::parse();
    match cli::run(invocation) {
        Ok(code) => ExitCode::from(code),
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(cli::EXIT_RUNTIME)
        }
    }
}
