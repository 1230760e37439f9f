fn main() {
    std::process::exit(infarct_cli::run(std::env::args_os()));
}
