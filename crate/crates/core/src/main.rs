fn main() {
    std::process::exit(topostat::cli::cli_main(std::env::args()));
}
