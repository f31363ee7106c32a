fn main() -> std::process::ExitCode {
    raicl::cli::main_with(std::env::args_os())
}
