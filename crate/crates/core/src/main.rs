fn main() {
    std::process::exit(catrisk::cli::run(std::env::args_os()));
}
