mod args;
mod commands;
mod output;

use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::Parser;

use args::{Cli, Command};
use output::{merge_config, CliError, CliResult};

fn thread_count(flag: Option<usize>) -> CliResult<Option<usize>> {
    if flag.is_some() {
        return Ok(flag);
    }
    match std::env::var("QSTRAT_THREADS") {
        Ok(v) => v.trim().parse::<usize>().map(Some).map_err(|_| {
            CliError::Usage(format!(
                "QSTRAT_THREADS must be a positive integer, got {v:?}"
            ))
        }),
        Err(_) => Ok(None),
    }
}

fn run() -> CliResult<()> {
    let argv = merge_config(std::env::args_os().collect())?;
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            let _ = e.print();
            return Ok(());
        }
        Err(e) => return Err(CliError::Usage(e.to_string().trim_end().to_string())),
    };
    if let Some(n) = thread_count(cli.threads)? {
        if n == 0 {
            return Err(CliError::Usage("thread count must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Usage(e.to_string()))?;
    }
    match &cli.command {
        Command::Metric(a) => commands::metric(a),
        Command::MakeField(a) => commands::make_field(a, &cli),
        Command::Minimize(a) => commands::minimize_cmd(a, &cli),
        Command::Frequency(a) => commands::frequency_cmd(a, &cli),
        Command::Dk(a) => commands::dk_cmd(a, &cli),
        Command::Stratify(a) => commands::stratify(a, &cli),
        Command::Minkowski(a) => commands::minkowski_cmd(a, &cli),
        Command::Verify(a) => commands::verify(a, &cli),
        Command::TheoremA(a) => commands::theorem_a(a, &cli),
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
