fn main() {
    std::process::exit(coda::cli::main_with_args(std::env::args_os()));
}
