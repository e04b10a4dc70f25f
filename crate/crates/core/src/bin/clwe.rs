fn main() {
    std::process::exit(clwe::cli::run(std::env::args_os()));
}
