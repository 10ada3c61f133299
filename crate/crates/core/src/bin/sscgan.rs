fn main() {
    std::process::exit(sscgan::cli::run(std::env::args_os()));
}
