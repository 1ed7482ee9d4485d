fn main() {
    let code = lotsize::cli::run_cli(std::env::args_os());
    std::process::exit(code);
}
