use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(comprf::cli::main_with(std::env::args_os()) as u8)
}
