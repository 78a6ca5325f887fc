fn main() {
    std::process::exit(ffsim::cli::main_with_args(std::env::args_os()));
}
