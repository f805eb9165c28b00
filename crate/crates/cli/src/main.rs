use std::process::ExitCode;

use anyhow::Context;
use clap::error::ErrorKind;
use clap::Parser;
use softdistill_cli::{error_line, execute, Cli, CliError, OUT_ENV};

fn run() -> anyhow::Result<()> {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            e.exit();
        }
        Err(e) => {
            let msg = e.to_string();
            let first = msg
                .lines()
                .next()
                .unwrap_or("invalid arguments")
                .trim_start_matches("error: ");
            return Err(CliError::Usage(first.to_string()).into());
        }
    };
    let summary = execute(&cli, std::env::var_os(OUT_ENV).map(Into::into))
        .with_context(|| format!("{} failed", cli.command.name()))?;
    println!("{summary}");
    Ok(())
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let cli_err = e.downcast_ref::<CliError>();
            let kind = cli_err.map_or("internal", CliError::kind);
            let code = cli_err.map_or(1, CliError::exit_code);
            eprintln!("{}", error_line(kind, &format!("{e:#}")));
            ExitCode::from(code as u8)
        }
    }
}
