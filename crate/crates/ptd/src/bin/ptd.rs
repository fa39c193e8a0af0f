use std::process::ExitCode;

fn main() -> ExitCode {
    ptd::cli::main()
}
