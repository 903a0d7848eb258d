fn main() {
    std::process::exit(pilotgen_cli::run(std::env::args_os()));
}
