fn main() {
    std::process::exit(citecast::cli::run(std::env::args_os()));
}
