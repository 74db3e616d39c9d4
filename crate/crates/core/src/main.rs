fn main() {
    std::process::exit(nvmlmc::cli::main_with_args(std::env::args_os()));
}
