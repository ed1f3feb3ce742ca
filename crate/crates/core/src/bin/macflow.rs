fn main() {
    std::process::exit(macflow::cli::main_with_args(std::env::args_os()));
}
