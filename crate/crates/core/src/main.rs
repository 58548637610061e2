fn main() {
    std::process::exit(tvcast::cli::run_from(std::env::args_os()));
}
