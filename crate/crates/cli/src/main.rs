fn main() {
    std::process::exit(dlmbir_cli::run(std::env::args_os()));
}
