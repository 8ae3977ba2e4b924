fn main() {
    std::process::exit(lfbm::cli::run_cli(std::env::args_os()));
}
