use std::process::ExitCode;

fn main() -> ExitCode {
    ftbrain::cli::main()
}
