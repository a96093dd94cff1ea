fn main() {
    std::process::exit(heml_cli::run(std::env::args_os()));
}
