fn main() {
    std::process::exit(overem_cli::run(std::env::args_os()));
}
