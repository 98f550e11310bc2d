fn main() {
    std::process::exit(kmn::cli::main_with_args(std::env::args_os()));
}
