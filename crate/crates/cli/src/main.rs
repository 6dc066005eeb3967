use std::process::ExitCode;

fn main() -> ExitCode {
    cdkf_sched_cli::main_with_args(std::env::args_os())
}
