fn main() {
    std::process::exit(attribench::cli::run(std::env::args_os()));
}
