fn main() {
    std::process::exit(acelab::cli::run(std::env::args_os()).code());
}
