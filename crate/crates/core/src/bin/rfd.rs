fn main() {
    std::process::exit(rfd_core::cli::main_with_args(std::env::args_os()));
}
