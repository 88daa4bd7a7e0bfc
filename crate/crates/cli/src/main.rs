fn main() {
    std::process::exit(romt_cli::run(std::env::args_os()));
}
