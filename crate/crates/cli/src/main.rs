use std::process::ExitCode;

use clap::Parser;
use xtalkgst::Cli;

fn main() -> ExitCode {
    match xtalkgst::run(Cli::parse()) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code as u8)
        }
    }
}
