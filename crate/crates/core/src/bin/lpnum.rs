use std::process::ExitCode;

fn main() -> ExitCode {
    lpnum::cli::main_with_args(std::env::args_os())
}
