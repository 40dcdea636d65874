fn main() {
    std::process::exit(kcheck_cli::run(std::env::args_os()));
}
