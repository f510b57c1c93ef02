fn main() {
    std::process::exit(repospd_cli::run(std::env::args_os()));
}
