use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(betashape::cli::run(std::env::args()) as u8)
}
