use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(desklm_cli::dispatch(std::env::args_os()) as u8)
}
