fn main() {
    std::process::exit(advsal_cli::run(std::env::args_os()));
}
