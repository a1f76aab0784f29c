fn main() {
    std::process::exit(thinhom::cli::main_with_args(std::env::args_os()));
}
