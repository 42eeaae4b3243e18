use std::process::ExitCode;

fn main() -> ExitCode {
    xattn_cli::cli_main()
}
