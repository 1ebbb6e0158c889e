fn main() {
    std::process::exit(cowqkd_cli::run(std::env::args_os()));
}
