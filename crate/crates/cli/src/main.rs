fn main() {
    std::process::exit(deepocta_cli::run(std::env::args_os()));
}
