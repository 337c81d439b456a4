fn main() {
    std::process::exit(diffail::cli::run(std::env::args_os()));
}
