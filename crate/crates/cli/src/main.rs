use std::process::ExitCode;

use clap::Parser;
use gaitforge_cli::args::{Cli, Command};
use gaitforge_cli::{commands, CliError};

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Usage("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Usage(e.to_string()))?;
    }
    match &cli.command {
        Command::Passive(a) => commands::passive(a),
        Command::Continue(a) => commands::continue_run(a),
        Command::Compare(a) => commands::compare_bases(a),
        Command::Verify(a) => commands::verify(a),
        Command::Export(a) => commands::export(a),
    }
}

fn main() -> ExitCode {
    // clap exits with status 2 on usage errors.
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
