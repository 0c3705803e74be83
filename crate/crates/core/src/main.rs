fn main() {
    std::process::exit(acgd_kit::cli::main_with_args(std::env::args_os()));
}
