fn main() -> std::process::ExitCode {
    relabel::cli::main_with_args(std::env::args_os())
}
