fn main() -> std::process::ExitCode {
    fireseg::cli::main_with_args(std::env::args_os())
}
