fn main() -> std::process::ExitCode {
    clmn_cli::cli::main_with(std::env::args_os())
}
