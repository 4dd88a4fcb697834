fn main() {
    std::process::exit(banach_sa::cli::main_with_args(std::env::args_os()));
}
