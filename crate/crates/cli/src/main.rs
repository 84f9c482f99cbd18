fn main() {
    std::process::exit(cycloid_cli::run_from(std::env::args_os()));
}
