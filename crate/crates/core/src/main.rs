use std::io::Write;
use std::process::ExitCode;

use clap::Parser;

use walkaudit::cli::{run, Cli};

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(out) => {
            let _ = std::io::stdout().write_all(out.as_bytes());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("walkaudit: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
