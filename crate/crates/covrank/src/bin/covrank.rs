fn main() {
    std::process::exit(covrank::cli::cli_main(std::env::args()));
}
