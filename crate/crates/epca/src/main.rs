fn main() {
    let argv: Vec<String> = std::env::args().collect();
    std::process::exit(epca::cli::cli_dispatch(&argv));
}
