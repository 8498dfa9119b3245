fn main() {
    std::process::exit(promptforge::cli::main_with_args(std::env::args_os()));
}
