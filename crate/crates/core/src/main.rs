fn main() {
    std::process::exit(tiode::cli::main_with_args(std::env::args_os()));
}
