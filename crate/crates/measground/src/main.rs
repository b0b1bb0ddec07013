fn main() {
    std::process::exit(measground::cli::main_with_args(std::env::args_os()));
}
