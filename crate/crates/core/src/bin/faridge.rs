fn main() {
    std::process::exit(faridge::cli::main_with_args(std::env::args_os()));
}
