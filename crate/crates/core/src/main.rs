fn main() {
    std::process::exit(cpsp::cli::run(std::env::args_os()));
}
