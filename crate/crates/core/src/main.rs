use std::process::ExitCode;

fn main() -> ExitCode {
    taxopolicy::cli::run(std::env::args_os())
}
