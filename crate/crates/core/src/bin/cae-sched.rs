use std::process::ExitCode;

fn main() -> ExitCode {
    cae_sched::cli::main_with_args(std::env::args_os())
}
