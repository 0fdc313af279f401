fn main() {
    std::process::exit(layout_prior::cli::main_with_args(std::env::args_os()));
}
