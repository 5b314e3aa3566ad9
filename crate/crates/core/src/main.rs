fn main() {
    std::process::exit(cbdi::cli::run(std::env::args_os()));
}
