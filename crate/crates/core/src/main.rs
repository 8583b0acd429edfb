fn main() {
    std::process::exit(llc::cli::run(std::env::args_os()));
}
