fn main() {
    std::process::exit(mcic::cli::run(std::env::args_os()));
}
