fn main() {
    std::process::exit(cdx_hedge::cli::run(std::env::args_os()));
}
