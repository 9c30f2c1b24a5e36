fn main() {
    std::process::exit(tsemos::cli::run(std::env::args_os()));
}
