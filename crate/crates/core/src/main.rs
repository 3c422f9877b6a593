fn main() {
    std::process::exit(cafo_core::cli::run(std::env::args_os()));
}
