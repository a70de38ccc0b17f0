use std::process::ExitCode;

fn main() -> ExitCode {
    rankdrift::cli::main_with_args(std::env::args_os())
}
