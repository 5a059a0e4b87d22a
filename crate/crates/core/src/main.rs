fn main() {
    std::process::exit(deepsoft::cli::run_from(std::env::args_os()));
}
