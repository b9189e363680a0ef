use std::panic::{self, AssertUnwindSafe};
use std::process::ExitCode;

use clap::Parser;
use tinylm_cli::{run, Cli};

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("TINYLM_LOG", "info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    match panic::catch_unwind(AssertUnwindSafe(|| run(&cli))) {
        Ok(Ok(())) => ExitCode::SUCCESS,
        Ok(Err(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
        Err(_) => ExitCode::from(2),
    }
}
